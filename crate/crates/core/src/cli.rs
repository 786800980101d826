//! The `causal-sfda` command line: `synth`, `adapt`, `verify`, `eval`, `report`.
//!
//! Exit codes: 0 success, 1 runtime or verification failure, 2 input or
//! configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{RunConfig, ScenarioDescriptor, DESCRIPTOR_VERSION};
use crate::data::{
    build_scenario, generate_domain_pair, generate_domain_sequence, load_manifest, write_manifest, AuditedSet,
    LabeledSet, ScenarioSpec, Setting,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    continual_protocol, evaluate_scenario, format_scores, format_unification, pseudo_label_dynamics,
    unification_csv, unification_metrics, ContinualSetup, EvalOptions, ResultsFile,
};
use crate::gradcheck::{gradient_suite, Fault, GRAD_SEED, MAX_REL_ERROR, TRIALS_PER_LOSS};
use crate::matrix::Matrix;
use crate::mi_oracle::{lemma1_sweep, theorem1_sweep, SWEEP_SEED};
use crate::models::{Checkpoint, TargetModel, ToyVilEncoder, VilEncoder};
use crate::trainer::{adapt, seed_override, train_source};

/// Settings compared by `report`, in column order.
pub const UNIFICATION_SETTINGS: [&str; 5] = ["closed", "generalized", "open", "partial", "sf-oodg"];

#[derive(Debug, Parser)]
#[command(name = "causal-sfda", version, about = "Source-free domain adaptation with causal factor discovery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic source/target pair as manifests plus a scenario descriptor.
    Synth(SynthArgs),
    /// Train (or load) a source model and adapt it to the target domain.
    Adapt(AdaptArgs),
    /// Run the information-theoretic sweeps and gradient checks.
    Verify(VerifyArgs),
    /// Print score tables from run directories or results files.
    Eval(ReportArgs),
    /// Print cross-setting unification metrics from results files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Run configuration supplying the [synthetic] and [scenario] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "synth")]
    pub out: PathBuf,
    #[arg(long)]
    pub setting: Option<Setting>,
    /// Comma-separated target class indices.
    #[arg(long, value_delimiter = ',')]
    pub target_classes: Option<Vec<usize>>,
    /// Comma-separated source class indices.
    #[arg(long, value_delimiter = ',')]
    pub source_classes: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory (overrides `output` from the configuration).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub setting: Option<Setting>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    None,
    FlipVmiGradSign,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Trials per information-theoretic sweep.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write per-trial rows as CSV; theorem-1 rows go to a sibling `.theorem1.csv` file.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[arg(long, hide = true, value_enum, default_value_t = FaultArg::None)]
    pub inject_fault: FaultArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results files, or directories whose `*.results` files are read.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Also write the plot-ready CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl std::str::FromStr for FaultArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    let mut text = String::new();
    let code = match cmd {
        Command::Synth(a) => cmd_synth(&a, &mut text)?,
        Command::Adapt(a) => cmd_adapt(&a, &mut text)?,
        Command::Verify(a) => cmd_verify(&a, &mut text)?,
        Command::Eval(a) => cmd_eval(&a, &mut text)?,
        Command::Report(a) => cmd_report(&a, &mut text)?,
    };
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
    Ok(code)
}

/// Seed precedence: command-line flag, then the environment, then the file.
fn resolve_seed(flag: Option<u64>, file: u64) -> Result<u64> {
    Ok(match flag {
        Some(s) => s,
        None => seed_override()?.unwrap_or(file),
    })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_synth(a: &SynthArgs, out: &mut String) -> Result<i32> {
    let mut cfg = load_config(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, cfg.seed)?;
    if let Some(s) = a.setting {
        cfg.scenario.setting = s;
    }
    if let Some(t) = &a.target_classes {
        cfg.scenario.target_classes = t.clone();
    }
    if let Some(s) = &a.source_classes {
        cfg.scenario.source_classes = s.clone();
    }
    let pair = generate_domain_pair(&cfg.synthetic, seed)?;
    let spec = cfg
        .scenario
        .resolve(pair.source.num_classes(), pair.target.num_classes(), seed)?;
    // fail early on a scenario the pair cannot form
    build_scenario(&pair.source, &pair.target, &spec)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_manifest(&pair.source, &a.out.join("source.tsv"))?;
    write_manifest(&pair.target, &a.out.join("target.tsv"))?;
    let known: Vec<usize> = (0..pair.source.num_classes()).collect();
    let descriptor = ScenarioDescriptor {
        format_version: DESCRIPTOR_VERSION,
        seed,
        source_manifest: "source.tsv".into(),
        target_manifest: "target.tsv".into(),
        class_names: pair.source.class_names.clone(),
        vil_prototypes: pair.target_means.select_rows(&known).row_iter().map(<[f64]>::to_vec).collect(),
        scenario: spec.clone(),
        synthetic: Some(cfg.synthetic.clone()),
    };
    write_file(&a.out.join("scenario.toml"), &descriptor.to_text())?;
    for w in &pair.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    let _ = writeln!(
        out,
        "wrote {} source and {} target samples ({} setting, C_s={:?}, C_t={:?}) to {}",
        pair.source.len(),
        pair.target.len(),
        spec.setting,
        spec.source_classes,
        spec.target_classes,
        a.out.display()
    );
    Ok(0)
}

/// Source set, target set and encoder prototypes for a run.
struct RunData {
    source: LabeledSet,
    target: LabeledSet,
    prototypes: Matrix,
    /// Scenario recorded in a descriptor.
    scenario: Option<ScenarioSpec>,
}

fn load_run_data(cfg: &RunConfig) -> Result<RunData> {
    match &cfg.data.descriptor {
        Some(path) => {
            let d = ScenarioDescriptor::load(path)?;
            let source = load_manifest(&d.source_manifest)?;
            let target = load_manifest(&d.target_manifest)?;
            if source.class_names != d.class_names {
                return Err(Error::Validation(format!(
                    "{}: class names differ from the descriptor",
                    d.source_manifest.display()
                )));
            }
            Ok(RunData {
                source,
                target,
                prototypes: Matrix::from_rows(&d.vil_prototypes)?,
                scenario: Some(d.scenario),
            })
        }
        None => {
            let pair = generate_domain_pair(&cfg.synthetic, cfg.seed)?;
            let known: Vec<usize> = (0..pair.source.num_classes()).collect();
            Ok(RunData {
                prototypes: pair.target_means.select_rows(&known),
                source: pair.source,
                target: pair.target,
                scenario: None,
            })
        }
    }
}

pub fn cmd_adapt(a: &AdaptArgs, out: &mut String) -> Result<i32> {
    let cfg = load_config(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, cfg.seed)?;
    let mut cfg = cfg.with_seed(seed);
    if let Some(s) = a.setting {
        cfg.scenario.setting = s;
    }
    if let Some(o) = &a.out {
        cfg.output = o.clone();
    }
    let data = load_run_data(&cfg)?;
    let spec = match (&data.scenario, a.setting) {
        (Some(recorded), None) => recorded.clone(),
        _ => cfg
            .scenario
            .resolve(data.source.num_classes(), data.target.num_classes(), seed)?,
    };
    let scenario = build_scenario(&data.source, &data.target, &spec)?;
    let classes = data.source.num_classes();
    let class_names = data.source.class_names.clone();

    let source_model = match &cfg.model.checkpoint {
        Some(p) => Checkpoint::load(p)?.model,
        None => {
            let init = TargetModel::new(data.source.dim(), &cfg.model.hidden, classes, seed)?;
            train_source(&init, &scenario.source_train, &cfg.source)?
        }
    };
    let enc = ToyVilEncoder::from_prototypes(&data.prototypes, class_names.clone(), cfg.vil, seed)?;
    let history = adapt(&source_model, &AuditedSet::new(scenario.target()), &enc, &cfg.adapt)?;

    let opts = EvalOptions {
        open_threshold: cfg.scenario.open_threshold,
    };
    let mut results = ResultsFile::default();
    results.metadata.insert("seed".into(), seed.to_string());
    results.metadata.insert("open_threshold".into(), opts.open_threshold.to_string());
    results.metadata.insert(
        "open_metric".into(),
        "known-class accuracy with max-probability rejection; hos = harmonic mean with unknown recall".into(),
    );
    for (method, model) in [("source", &source_model), (cfg.method.as_str(), &history.final_model)] {
        let scores = evaluate_scenario(model, &scenario, opts)?;
        for (setting, v) in scores.records(spec.setting) {
            results.push(method, &setting, v);
        }
    }

    let dir = &cfg.output;
    history.write_run_dir(dir, &cfg.to_text(), &history.checkpoint(seed, class_names))?;
    write_file(&dir.join("dynamics.csv"), &pseudo_label_dynamics(&history).to_csv())?;

    if !cfg.continual.rotations.is_empty() {
        let domains: Vec<(LabeledSet, Matrix)> =
            generate_domain_sequence(&cfg.synthetic, &cfg.continual.rotations, seed)?;
        let sets: Vec<LabeledSet> = domains.iter().map(|d| d.0.clone()).collect();
        let init = TargetModel::new(cfg.synthetic.dim, &cfg.model.hidden, cfg.synthetic.classes, seed)?;
        let names = sets[0].class_names.clone();
        let vil = cfg.vil;
        let factory = |i: usize| -> Result<Box<dyn VilEncoder>> {
            Ok(Box::new(ToyVilEncoder::from_prototypes(&domains[i].1, names.clone(), vil, seed)?))
        };
        let report = continual_protocol(
            &sets,
            &ContinualSetup {
                initial_model: &init,
                source: &cfg.source,
                adapt: &cfg.adapt,
                encoder_for: &factory,
                split_seed: seed,
            },
        )?;
        write_file(&dir.join("continual.txt"), &report.to_text())?;
        for (d, drop) in report.domains.iter().zip(&report.drops) {
            if let Some(v) = drop {
                results.metadata.insert(format!("continual_drop.{d}"), format!("{v:?}"));
            }
        }
        let _ = write!(out, "{}", report.to_text());
    }
    results.save(&dir.join("scores.results"))?;

    let _ = writeln!(
        out,
        "{} setting: source {:.1}% -> adapted {:.1}% on target ({} iterations, {:.2}s)",
        spec.setting,
        history.initial_target_accuracy,
        history.final_target_accuracy(),
        history.iterations.len(),
        history.wall_clock.as_secs_f64()
    );
    let _ = write!(out, "{}", format_scores(&results.table()?));
    let _ = writeln!(out, "run directory: {}", dir.display());
    Ok(0)
}

pub fn cmd_verify(a: &VerifyArgs, out: &mut String) -> Result<i32> {
    if a.trials == 0 {
        return Err(Error::Validation("--trials must be >= 1".into()));
    }
    let seed = a.seed.unwrap_or(SWEEP_SEED);
    let l1 = lemma1_sweep(a.trials, seed);
    let t1 = theorem1_sweep(a.trials, seed);
    let fault = match a.inject_fault {
        FaultArg::None => Fault::None,
        FaultArg::FlipVmiGradSign => Fault::FlipVmiGradSign,
    };
    let grads = gradient_suite(TRIALS_PER_LOSS, a.seed.unwrap_or(GRAD_SEED), fault);
    if let Some(path) = &a.dump {
        write_file(path, &l1.to_csv())?;
        write_file(&sibling(path, "theorem1"), &t1.to_csv())?;
    }
    let grad_summary = if grads.all_passed() {
        format!("all < {MAX_REL_ERROR:e}")
    } else {
        format!(
            "{}/{} checks failed (worst {:.3e})",
            grads.failures().count(),
            grads.checks.len(),
            grads.worst()
        )
    };
    let _ = writeln!(
        out,
        "lemma1: {}/{}, theorem1: {}/{}, grad: {grad_summary}",
        l1.passed, l1.trials, t1.passed, t1.trials
    );
    let ok = l1.all_passed() && t1.all_passed() && grads.all_passed();
    if !ok {
        for r in l1.failures() {
            let _ = writeln!(out, "FAIL lemma1 trial {}: lhs {} < rhs {}", r.trial, r.lhs, r.rhs);
        }
        for r in t1.failures() {
            let _ = writeln!(out, "FAIL theorem1 trial {}: lhs {} rhs {}", r.trial, r.lhs, r.rhs);
        }
        for c in grads.failures() {
            let _ = writeln!(
                out,
                "FAIL grad {} wrt {}: max relative error {:.3e}",
                c.loss, c.argument, c.max_rel_error
            );
        }
    }
    Ok(if ok { 0 } else { 1 })
}

/// `runs/x.csv` → `runs/x.<tag>.csv`.
fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn collect_results(inputs: &[PathBuf]) -> Result<ResultsFile> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "results"))
                .collect();
            if found.is_empty() {
                return Err(Error::Validation(format!("{}: no .results files", p.display())));
            }
            found.sort();
            for f in found {
                files.push(ResultsFile::load(&f)?);
            }
        } else {
            files.push(ResultsFile::load(p)?);
        }
    }
    let merged = ResultsFile::merge(&files)?;
    if merged.records.is_empty() {
        return Err(Error::Validation("no score records in the inputs".into()));
    }
    Ok(merged)
}

fn write_metadata(results: &ResultsFile, out: &mut String) {
    for (k, v) in &results.metadata {
        let _ = writeln!(out, "# {k}: {v}");
    }
}

fn long_csv(results: &ResultsFile) -> String {
    let mut csv = String::from("method,setting,score\n");
    for r in &results.records {
        let _ = writeln!(csv, "{},{},{}", r.method, r.setting, r.score);
    }
    csv
}

pub fn cmd_eval(a: &ReportArgs, out: &mut String) -> Result<i32> {
    let results = collect_results(&a.inputs)?;
    write_metadata(&results, out);
    let _ = write!(out, "{}", format_scores(&results.table()?));
    for p in &a.inputs {
        let c = p.join("continual.txt");
        if p.is_dir() && c.is_file() {
            let text = std::fs::read_to_string(&c).map_err(|e| Error::io(&c, e))?;
            let _ = write!(out, "\ncontinual ({}):\n{text}", p.display());
        }
    }
    let csv = long_csv(&results);
    let _ = write!(out, "\n{csv}");
    if let Some(path) = &a.out {
        write_file(path, &csv)?;
    }
    Ok(0)
}

pub fn cmd_report(a: &ReportArgs, out: &mut String) -> Result<i32> {
    let results = collect_results(&a.inputs)?;
    let table = results
        .table()?
        .select_settings(&UNIFICATION_SETTINGS.map(String::from))?;
    let rows = unification_metrics(&table)?;
    write_metadata(&results, out);
    let _ = write!(out, "{}", format_unification(&table, &rows));
    let csv = unification_csv(&table, &rows);
    let _ = write!(out, "\n{csv}");
    if let Some(path) = &a.out {
        write_file(path, &csv)?;
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("causal-sfda").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("a/b.csv"), "theorem1"), PathBuf::from("a/b.theorem1.csv"));
        assert_eq!(sibling(Path::new("dump"), "theorem1"), PathBuf::from("dump.theorem1"));
    }

    #[test]
    fn verify_small_and_faulted() {
        let (code, out, _) = run_capture(&["verify", "--trials", "10"]);
        assert_eq!(code, 0, "{out}");
        assert!(out.starts_with("lemma1: 10/10, theorem1: 10/10, grad: all < 1e-4"), "{out}");
        let (code, out, _) = run_capture(&["verify", "--trials", "10", "--inject-fault", "flip-vmi-grad-sign"]);
        assert_eq!(code, 1);
        assert!(out.contains("FAIL grad vmi"), "{out}");
    }

    #[test]
    fn bad_arguments_exit_two() {
        assert_eq!(run_capture(&["verify", "--trials", "x"]).0, 2);
        assert_eq!(run_capture(&["report"]).0, 2);
        let (code, _, err) = run_capture(&["report", "/nonexistent/file.results"]);
        assert_eq!(code, 2);
        assert!(err.contains("/nonexistent/file.results"));
    }
}
