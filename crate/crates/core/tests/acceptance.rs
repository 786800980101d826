//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line reaches stdout. The process
//! exits non-zero on any failure not listed in `KNOWN_FAILURES`.

use std::path::Path;
use std::time::{Duration, Instant};

use causal_sfda::data::{generate_domain_pair, AuditedSet, DomainPair, SyntheticDomainSpec};
use causal_sfda::evaluation::{harmonic_mean, invariance_study, DEFAULT_INVARIANCE_LEVELS};
use causal_sfda::gradcheck::{gradient_suite, Fault, GRAD_SEED, MAX_REL_ERROR};
use causal_sfda::mi_oracle::{
    lemma1_sweep, mutual_information, push_forward, random_bottleneck_pair, theorem1_sweep, AlphabetMap, Axis,
    DiscreteJoint, SWEEP_SEED,
};
use causal_sfda::models::{init_prompt, TargetModel, ToyVilConfig, ToyVilEncoder, VilEncoder};
use causal_sfda::objectives::{pmi_loss, DiagCovariance, LogitBatch};
use causal_sfda::trainer::{
    adapt, make_pseudo_labels, phase1_step, phase2_step, train_source, AdaptationConfig, Phase1State, Phase2State,
    SourceTrainConfig,
};
use causal_sfda::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    /// Fails for a reason recorded alongside the suite; still printed as FAIL.
    KnownFail(String),
}

use Outcome::*;

const KNOWN_FAILURES: &[usize] = &[1];

fn fixture() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/published_scores.results")
}

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let code = causal_sfda::cli::run(std::iter::once("causal-sfda").chain(args.iter().copied()), &mut o, &mut e);
    (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
}

fn within(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (code, out, err) = run_cli(&["report", fixture().to_str().unwrap()]);
    let elapsed = start.elapsed();
    if code != 0 {
        return Fail(format!("report exited {code}: {err}"));
    }
    // h_all, h_wrg, then loso in closed, generalized, open, partial, sf-oodg order
    let published: [(&str, [f64; 7]); 3] = [
        ("DIFO", [74.7, 12.1, 72.3, 73.3, 74.4, 72.0, 81.6]),
        ("ProDe", [77.7, 5.77, 75.5, 76.0, 76.6, 76.2, 84.6]),
        ("CausalDA", [79.1, 1.38, 77.5, 77.6, 77.9, 77.1, 85.5]),
    ];
    let names = ["H_all", "H_wrg", "H_loso w/o closed", "H_loso w/o generalized", "H_loso w/o open", "H_loso w/o partial", "H_loso w/o sf-oodg"];
    let csv = &out[out.find("method,h_all").expect("csv block")..];
    let mut misses = Vec::new();
    for (method, want) in published {
        let line = csv.lines().find(|l| l.starts_with(&format!("{method},"))).expect("row");
        let got: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        for (i, (g, w)) in got.iter().zip(want).enumerate() {
            // table values carry one decimal (two for H_wrg); half-way cells sit on the edge
            if !within(*g, w, 0.05 + 1e-9) {
                misses.push(format!("{method} {} = {g:.4} vs published {w}", names[i]));
            }
        }
    }
    if elapsed >= Duration::from_secs(1) {
        return Fail(format!("runtime {elapsed:?}"));
    }
    let summary = format!("{}/21 cells within ±0.05, {elapsed:.2?}", 21 - misses.len());
    match misses.as_slice() {
        [] => Pass(summary),
        [only] if only.starts_with("ProDe H_all") => KnownFail(format!(
            "{summary}; {only}: the published per-setting scores average to 77.8, so the published 77.7 is unreachable"
        )),
        _ => Fail(format!("{summary}; {}", misses.join("; "))),
    }
}

fn criterion_2() -> Outcome {
    let h = harmonic_mean(98.1, 59.2);
    if !within(h, 73.8, 0.05) {
        return Fail(format!("H(98.1, 59.2) = {h}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let (a, b) = (rng.random_range(0.0..=100.0), rng.random_range(0.0..=100.0));
        let h = harmonic_mean(a, b);
        if !(a.min(b) - 1e-12 <= h && h <= a.max(b) + 1e-12) {
            return Fail(format!("H({a}, {b}) = {h} outside [min, max]"));
        }
    }
    Pass(format!("H(98.1, 59.2) = {h:.4}; min ≤ H ≤ max on 10000 pairs"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let r = lemma1_sweep(1000, SWEEP_SEED);
    let elapsed = start.elapsed();
    if !r.all_passed() || r.trials != 1000 {
        return Fail(format!("{}/{} trials hold", r.passed, r.trials));
    }
    if elapsed >= Duration::from_secs(10) {
        return Fail(format!("runtime {elapsed:?}"));
    }
    Pass(format!("compression bound holds in 1000/1000 trials, {elapsed:.2?}"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let r = theorem1_sweep(1000, SWEEP_SEED);
    let elapsed = start.elapsed();
    if !r.all_passed() || r.trials != 1000 {
        return Fail(format!("{}/{} trials hold", r.passed, r.trials));
    }
    if elapsed >= Duration::from_secs(10) {
        return Fail(format!("runtime {elapsed:?}"));
    }
    // bijections relabel Z' without losing information
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (z, zp, y) = (rng.random_range(2..=8), rng.random_range(2..=8), rng.random_range(2..=8));
        let (_, j_zy): (DiscreteJoint, DiscreteJoint) = random_bottleneck_pair(z, zp, y, &mut rng);
        let m = AlphabetMap::random_bijection(zp, &mut rng);
        let relabeled = push_forward(&j_zy, &m, Axis::First).unwrap();
        worst = worst.max((mutual_information(&relabeled) - mutual_information(&j_zy)).abs());
    }
    if worst > 1e-10 {
        return Fail(format!("bijection changed MI by {worst:e}"));
    }
    Pass(format!("bound holds in 1000/1000 trials, {elapsed:.2?}; bijection MI gap ≤ {worst:.1e}"))
}

fn criterion_5() -> Outcome {
    let r = gradient_suite(50, GRAD_SEED, Fault::None);
    if let Some(c) = r.checks.iter().find(|c| c.trials < 50) {
        return Fail(format!("{}/{} ran only {} trials", c.loss, c.argument, c.trials));
    }
    if !r.all_passed() {
        let bad: Vec<String> = r.failures().map(|c| format!("{}/{} {:e}", c.loss, c.argument, c.max_rel_error)).collect();
        return Fail(bad.join("; "));
    }
    Pass(format!("{} gradient checks × 50 inputs, worst relative error {:.2e} < {MAX_REL_ERROR:e}", r.checks.len(), r.worst()))
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize, c: usize) -> causal_sfda::objectives::ProbBatch {
    let data = (0..n * c).map(|_| rng.random_range(-3.0..3.0)).collect();
    LogitBatch::new(Matrix::from_vec(n, c, data).unwrap()).unwrap().softmax()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, c) = (rng.random_range(1..=40), rng.random_range(2..=8));
        let (a, b) = (random_probs(&mut rng, n, c), random_probs(&mut rng, n, c));
        let mut joint = vec![0.0; c * c];
        for i in 0..n {
            for x in 0..c {
                for y in 0..c {
                    let v = a.values().get(i, x) * b.values().get(i, y) + a.values().get(i, y) * b.values().get(i, x);
                    joint[x * c + y] += v / (2.0 * n as f64);
                }
            }
        }
        let total: f64 = joint.iter().sum();
        joint.iter_mut().for_each(|v| *v /= total);
        let oracle = mutual_information(&DiscreteJoint::new(c, c, joint).unwrap());
        let loss = pmi_loss(&a, &b).unwrap().value;
        worst = worst.max((oracle - loss).abs());
    }
    if worst > 1e-10 {
        return Fail(format!("max |pmi − oracle| = {worst:e}"));
    }
    Pass(format!("100 batches, max |pmi − oracle| = {worst:.1e}"))
}

struct DefaultRun {
    pair: DomainPair,
    source: TargetModel,
    encoder: ToyVilEncoder,
    cfg: AdaptationConfig,
}

fn default_run(spec: SyntheticDomainSpec, seed: u64) -> DefaultRun {
    let pair = generate_domain_pair(&spec, seed).unwrap();
    let init = TargetModel::new(spec.dim, &[64], spec.classes, seed).unwrap();
    let source = train_source(&init, &pair.source, &SourceTrainConfig::default()).unwrap();
    let encoder =
        ToyVilEncoder::from_prototypes(&pair.target_means, pair.target.class_names.clone(), ToyVilConfig::default(), seed)
            .unwrap();
    DefaultRun { pair, source, encoder, cfg: AdaptationConfig::default() }
}

fn criterion_7() -> Outcome {
    let r = default_run(SyntheticDomainSpec::default(), 0);
    let names = r.pair.target.class_names.clone();
    let view = AuditedSet::new(&r.pair.target);
    let h = adapt(&r.source, &view, &r.encoder, &r.cfg).unwrap();
    let log = view.log();
    if log.optimization_reads != 0 {
        return Fail(format!("{} optimization label reads", log.optimization_reads));
    }
    let zeroed = r.pair.target.with_zeroed_labels();
    let hz = adapt(&r.source, &AuditedSet::new(&zeroed), &r.encoder, &r.cfg).unwrap();
    let (a, b) = (h.checkpoint(0, names.clone()).to_text(), hz.checkpoint(0, names).to_text());
    if a != b {
        return Fail("checkpoint differs when target labels are zeroed".into());
    }
    Pass(format!(
        "0 optimization reads ({} logging reads); zeroed-label checkpoint identical ({} bytes)",
        log.logging_reads,
        a.len()
    ))
}

/// Measured on the default run (seed 0) before the suite was written:
/// source 0.0%, adapted 99.6%.
const ADAPTATION_MARGIN: f64 = 50.0;

fn read_metrics(dir: &Path) -> Vec<(f64, f64)> {
    std::fs::read_to_string(dir.join("metrics.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
            (f[0], f[1])
        })
        .collect()
}

fn criterion_8(dir: &Path) -> Outcome {
    let start = Instant::now();
    let (code, _, err) = run_cli(&["adapt", "--seed", "0", "--out", dir.to_str().unwrap()]);
    let elapsed = start.elapsed();
    if code != 0 {
        return Fail(format!("adapt exited {code}: {err}"));
    }
    let rows = read_metrics(dir);
    let (before, after) = (rows[0].0, rows[rows.len() - 1].0);
    if after - before < ADAPTATION_MARGIN {
        return Fail(format!("source {before:.1}% -> adapted {after:.1}%, margin below {ADAPTATION_MARGIN}"));
    }
    if elapsed >= Duration::from_secs(300) {
        return Fail(format!("runtime {elapsed:?}"));
    }
    Pass(format!("source {before:.1}% -> adapted {after:.1}% (margin ≥ {ADAPTATION_MARGIN}), {elapsed:.2?}"))
}

fn criterion_9() -> Outcome {
    let r = default_run(SyntheticDomainSpec::default(), 0);
    let enc_hash = r.encoder.parameter_hash();
    let h = adapt(&r.source, &AuditedSet::new(&r.pair.target), &r.encoder, &r.cfg).unwrap();
    if h.encoder_hash_start != enc_hash || h.encoder_hash_end != enc_hash || r.encoder.parameter_hash() != enc_hash {
        return Fail("encoder parameters changed during the run".into());
    }

    let target = &r.pair.target.features;
    let prompt = init_prompt(&r.cfg.template, r.cfg.prompt_len, r.encoder.embed_dim(), 0).unwrap();
    let mut p1 = Phase1State::new(prompt, DiagCovariance::identity(r.pair.target.num_classes()), r.cfg.momentum);
    let mut p2 = Phase2State::new(r.source.clone(), r.cfg.momentum);
    let (mut steps, mut p1_moved, mut p2_moved) = (0, 0, 0);
    let idx: Vec<usize> = (0..target.rows()).collect();
    for chunk in idx.chunks(r.cfg.batch_size) {
        let batch = target.select_rows(chunk);
        let model_before = p2.model.parameter_hash();
        let p1_before = p1.hash();
        phase1_step(&batch, &mut p1, &p2.model, &r.encoder, &r.cfg, 1.0).unwrap();
        if p2.model.parameter_hash() != model_before {
            return Fail(format!("phase 1 changed the target model at step {steps}"));
        }
        p1_moved += usize::from(p1.hash() != p1_before);
        let pseudo = make_pseudo_labels(&batch, &p1.prompt, &r.encoder).unwrap();
        let p1_mid = p1.hash();
        phase2_step(&batch, &pseudo, &mut p2, &r.cfg, 1.0).unwrap();
        if p1.hash() != p1_mid {
            return Fail(format!("phase 2 changed the prompt or covariance at step {steps}"));
        }
        p2_moved += usize::from(p2.model.parameter_hash() != model_before);
        steps += 1;
    }
    if p1_moved == 0 || p2_moved == 0 {
        return Fail(format!("phases did not update their own state ({p1_moved}, {p2_moved} of {steps})"));
    }
    Pass(format!(
        "encoder hash fixed over {} iterations; {steps} paired steps respect phase freezing",
        h.iterations.len()
    ))
}

/// Default run, seed 0: pseudo-label accuracy 99.1% before adaptation, 99.3% after.
const PSEUDO_LABEL_BASELINE: (f64, f64) = (99.1, 99.3);

fn criterion_10(dir: &Path) -> Outcome {
    let text = std::fs::read_to_string(dir.join("dynamics.csv")).unwrap();
    let series: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let (first, last) = (series[0], series[series.len() - 1]);
    if last < first {
        return Fail(format!("pseudo-label accuracy fell {first:.2}% -> {last:.2}%"));
    }
    if !within(first, PSEUDO_LABEL_BASELINE.0, 0.05) || !within(last, PSEUDO_LABEL_BASELINE.1, 0.05) {
        return Fail(format!("{first:.2}% -> {last:.2}% departs from baseline {PSEUDO_LABEL_BASELINE:?}"));
    }
    Pass(format!("pseudo-label accuracy {first:.1}% (epoch 0) -> {last:.1}% (epoch {})", series.len() - 1))
}

/// Baseline drops from k=8 to k=20 (percentage points) on the study scenario, seed 0.
const INVARIANCE_BASELINE: (f64, f64) = (8.4, 7.4);

fn criterion_11() -> Outcome {
    // a mild shift keeps the source model informative; the wide input leaves
    // most corruption in directions the classes do not use
    let spec = SyntheticDomainSpec { dim: 64, rotation: 0.3, ..Default::default() };
    let r = default_run(spec, 0);
    let report = invariance_study(&r.source, &r.pair.target, &r.encoder, &r.cfg, &DEFAULT_INVARIANCE_LEVELS, 5).unwrap();
    let (s, a) = (report.source_drop(), report.adapted_drop());
    let line = format!(
        "source {:?} (drop {s:.1}), adapted {:?} (drop {a:.1})",
        report.source_accuracy.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
        report.adapted_accuracy.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>()
    );
    if a >= s {
        return Fail(line);
    }
    if !within(s, INVARIANCE_BASELINE.0, 0.05) || !within(a, INVARIANCE_BASELINE.1, 0.05) {
        return Fail(format!("{line}; departs from baseline {INVARIANCE_BASELINE:?}"));
    }
    Pass(line)
}

fn criterion_12(first: &Path, second: &Path) -> Outcome {
    let (code, _, err) = run_cli(&["adapt", "--seed", "0", "--out", second.to_str().unwrap()]);
    if code != 0 {
        return Fail(format!("adapt exited {code}: {err}"));
    }
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    if read(first) != read(second) {
        return Fail("metrics.csv differs between identical runs".into());
    }
    Pass(format!("metrics.csv identical across two seeded runs ({} bytes)", read(first).len()))
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let (run_a, run_b) = (tmp.path().join("run-a"), tmp.path().join("run-b"));
    let outcomes: Vec<(usize, &str, Outcome)> = vec![
        (1, "unification metrics on the published fixture", criterion_1()),
        (2, "harmonic mean", criterion_2()),
        (3, "compression oracle", criterion_3()),
        (4, "bottleneck bound oracle", criterion_4()),
        (5, "gradient suite", criterion_5()),
        (6, "batch-joint MI equals oracle", criterion_6()),
        (7, "source-free audit", criterion_7()),
        (8, "desk-scale adaptation", criterion_8(&run_a)),
        (9, "frozen encoder and phase freezing", criterion_9()),
        (10, "pseudo-label dynamics", criterion_10(&run_a)),
        (11, "corruption invariance", criterion_11()),
        (12, "determinism", criterion_12(&run_a, &run_b)),
    ];
    let mut unexpected = 0;
    for (n, name, outcome) in &outcomes {
        match outcome {
            Pass(d) => println!("PASS criterion {n:>2} ({name}): {d}"),
            Fail(d) => {
                unexpected += 1;
                println!("FAIL criterion {n:>2} ({name}): {d}");
            }
            KnownFail(d) => {
                if !KNOWN_FAILURES.contains(n) {
                    unexpected += 1;
                }
                println!("FAIL criterion {n:>2} ({name}): {d}");
            }
        }
    }
    let passed = outcomes.iter().filter(|o| matches!(o.2, Pass(_))).count();
    println!("acceptance: {passed}/{} passed, {unexpected} unexpected failures", outcomes.len());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
