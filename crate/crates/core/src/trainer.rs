//! Supervised source training and the alternating two-phase adaptation loop.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AuditLog, AuditedSet, LabelPurpose, LabeledSet};
use crate::error::{Error, Result};
use crate::evaluation::accuracy;
use crate::matrix::{softmax_row_backward, Matrix};
use crate::models::{init_prompt, vil_class_logits, Checkpoint, PromptContext, TargetModel, VilEncoder, DEFAULT_TEMPLATE};
use crate::objectives::{ec_objective, grad, ic_objective_weighted, DiagCovariance, EcSigns, LossValue, ProbBatch};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "CAUSAL_SFDA_SEED";

/// Reads [`SEED_ENV`], if set.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Validation(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Stop after this many epochs without a train-accuracy improvement.
    pub patience: usize,
    /// Set from the run seed, not from configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SourceTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 64,
            patience: 5,
            seed: 0,
        }
    }
}

/// How the per-sample entropies in the phase-2 objective are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyReduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptationConfig {
    /// Weight of the variational term in the phase-1 objective.
    pub alpha: f64,
    /// Weight of the pseudo-label cross-entropy in the phase-2 objective.
    pub sigma_w: f64,
    /// Weight of the class-balance term in the phase-2 objective.
    pub tau: f64,
    pub entropy: EntropyReduction,
    pub lr_prompt: f64,
    pub lr_cov: f64,
    pub lr_model: f64,
    pub momentum: f64,
    pub cosine_decay: bool,
    pub batch_size: usize,
    pub epochs: usize,
    /// Set from the run seed, not from configuration files.
    #[serde(skip)]
    pub seed: u64,
    pub signs: EcSigns,
    /// Number of prompt context tokens.
    pub prompt_len: usize,
    pub template: String,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.003,
            sigma_w: 0.4,
            tau: 1.0,
            entropy: EntropyReduction::Mean,
            lr_prompt: 0.3,
            lr_cov: 1e-3,
            lr_model: 1e-2,
            momentum: 0.9,
            cosine_decay: true,
            batch_size: 64,
            epochs: 15,
            seed: 0,
            signs: EcSigns::default(),
            prompt_len: 4,
            template: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("alpha", self.alpha),
            ("sigma_w", self.sigma_w),
            ("tau", self.tau),
            ("lr_prompt", self.lr_prompt),
            ("lr_cov", self.lr_cov),
            ("lr_model", self.lr_model),
        ];
        if let Some((k, v)) = nonneg.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Validation(format!("{k} = {v} must be finite and >= 0")));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Validation(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 || self.prompt_len == 0 {
            return Err(Error::Validation("batch_size and prompt_len must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning-rate multiplier at `iteration` of `total`.
    pub fn schedule(&self, iteration: usize, total: usize) -> f64 {
        if !self.cosine_decay || total == 0 {
            return 1.0;
        }
        0.5 * (1.0 + (PI * iteration as f64 / total as f64).cos())
    }
}

/// Heavy-ball momentum: `v ← μ v + g`, `p ← p − lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum {
    mu: f64,
    velocity: Vec<Vec<f64>>,
}

impl Momentum {
    pub fn new(mu: f64, shapes: impl IntoIterator<Item = usize>) -> Self {
        Self {
            mu,
            velocity: shapes.into_iter().map(|n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>], lr: f64) {
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.mu * *vi + gi;
                *pi -= lr * *vi;
            }
        }
    }
}

/// Cross-entropy value and its logit gradient for hard labels.
fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = logits.rows() as f64;
    let mut g = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = crate::matrix::softmax_row(logits.row(i));
        loss -= p[y].max(1e-300).ln() / n;
        let row = g.row_mut(i);
        row.copy_from_slice(&p);
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n);
    }
    (loss, g)
}

/// Supervised cross-entropy training from `init`; stops at the epoch cap,
/// at 100% train accuracy, or after `patience` epochs without improvement.
pub fn train_source(init: &TargetModel, source: &LabeledSet, cfg: &SourceTrainConfig) -> Result<TargetModel> {
    if source.num_classes() > init.num_classes() || source.dim() != init.input_dim() {
        return Err(Error::Validation(format!(
            "model {}→{} cannot fit source set {}→{}",
            init.input_dim(),
            init.num_classes(),
            source.dim(),
            source.num_classes()
        )));
    }
    let mut model = init.clone();
    let mut opt = Momentum::new(cfg.momentum, model.params().iter().map(|p| p.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..source.len()).collect();
    let (mut best, mut stale) = (f64::NEG_INFINITY, 0);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let x = source.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| source.labels[i]).collect();
            let cache = model.forward(&x)?;
            let (loss, g) = cross_entropy(&cache.logits, &y);
            if !loss.is_finite() {
                return Err(Error::Aborted {
                    iteration: epoch,
                    source: Box::new(Error::NonFinite(format!("source cross-entropy {loss}"))),
                });
            }
            let grads = model.backward(&cache, &g);
            opt.step(model.params_mut(), &grads.0, cfg.lr);
        }
        let acc = accuracy(&model.logits(&source.features)?.softmax(), &source.labels)?;
        if acc >= 100.0 {
            break;
        }
        if acc > best {
            (best, stale) = (acc, 0);
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(model)
}

/// Learnable phase-1 state: prompt context, covariance, and their optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase1State {
    pub prompt: PromptContext,
    pub cov: DiagCovariance,
    opt_tokens: Momentum,
    opt_cov: Momentum,
}

impl Phase1State {
    pub fn new(prompt: PromptContext, cov: DiagCovariance, momentum: f64) -> Self {
        Self {
            opt_tokens: Momentum::new(momentum, [prompt.tokens.as_slice().len()]),
            opt_cov: Momentum::new(momentum, [cov.dim()]),
            prompt,
            cov,
        }
    }

    pub fn hash(&self) -> String {
        crate::models::hash_slices([self.prompt.tokens.as_slice(), self.cov.as_slice()])
    }
}

/// Target model and its optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase2State {
    pub model: TargetModel,
    opt: Momentum,
}

impl Phase2State {
    pub fn new(model: TargetModel, momentum: f64) -> Self {
        let opt = Momentum::new(momentum, model.params().iter().map(|p| p.len()));
        Self { model, opt }
    }
}

/// Outcome of one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub loss: LossValue,
    /// The gradient was non-finite and no update was applied.
    pub skipped: bool,
}

/// One descent step on the external-causality objective with respect to the
/// prompt tokens and covariance; `target` is read only.
pub fn phase1_step(
    batch: &Matrix,
    state: &mut Phase1State,
    target: &TargetModel,
    enc: &dyn VilEncoder,
    cfg: &AdaptationConfig,
    lr_scale: f64,
) -> Result<StepRecord> {
    let target_logits = target.logits(batch)?;
    let vil_logits = vil_class_logits(enc, batch, &state.prompt)?;
    let loss = ec_objective(&vil_logits, &target_logits, &state.cov, cfg.alpha, cfg.signs)?;
    let g_tokens = enc.context_grad(batch, &state.prompt, &loss.grads[grad::VIL_LOGITS])?;
    let g_cov = loss.grads[grad::COV].as_slice().to_vec();
    if !loss.value.is_finite() || !g_tokens.is_finite() || g_cov.iter().any(|v| !v.is_finite()) {
        return Ok(StepRecord { loss, skipped: true });
    }
    state
        .opt_tokens
        .step(vec![state.prompt.tokens.as_mut_slice()], &[g_tokens.into_vec()], cfg.lr_prompt * lr_scale);
    state.opt_cov.step(vec![state.cov.as_mut_slice()], &[g_cov], cfg.lr_cov * lr_scale);
    state.cov.clamp();
    Ok(StepRecord { loss, skipped: false })
}

/// Soft pseudo-labels: the encoder's class distribution under the current prompt.
pub fn make_pseudo_labels(batch: &Matrix, prompt: &PromptContext, enc: &dyn VilEncoder) -> Result<ProbBatch> {
    Ok(vil_class_logits(enc, batch, prompt)?.softmax())
}

/// One descent step on the internal-causality objective with respect to the target model.
pub fn phase2_step(
    batch: &Matrix,
    pseudo: &ProbBatch,
    state: &mut Phase2State,
    cfg: &AdaptationConfig,
    lr_scale: f64,
) -> Result<StepRecord> {
    let cache = state.model.forward(batch)?;
    let probs = ProbBatch::unchecked(
        crate::objectives::LogitBatch::new(cache.logits.clone())?.softmax().values().clone(),
    );
    let entropy_weight = match cfg.entropy {
        EntropyReduction::Sum => 1.0,
        EntropyReduction::Mean => 1.0 / probs.n() as f64,
    };
    let loss = ic_objective_weighted(&probs, pseudo, cfg.tau, cfg.sigma_w, entropy_weight)?;
    let g_probs = &loss.grads[grad::TARGET_PROBS];
    let mut g_logits = Matrix::zeros(probs.n(), probs.classes());
    for i in 0..probs.n() {
        let g = softmax_row_backward(probs.values().row(i), g_probs.row(i));
        g_logits.row_mut(i).copy_from_slice(&g);
    }
    let grads = state.model.backward(&cache, &g_logits);
    if !loss.value.is_finite() || !grads.is_finite() {
        return Ok(StepRecord { loss, skipped: true });
    }
    state.opt.step(state.model.params_mut(), &grads.0, cfg.lr_model * lr_scale);
    Ok(StepRecord { loss, skipped: false })
}

/// Losses logged at one adaptation iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub epoch: usize,
    pub batch: usize,
    pub ec: f64,
    pub pmi: f64,
    pub vmi: f64,
    pub ic: f64,
    pub un: f64,
    pub sce: f64,
    pub phase1_skipped: bool,
    pub phase2_skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub target_accuracy: f64,
    pub pseudo_label_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub iterations: Vec<IterationLog>,
    pub epochs: Vec<EpochLog>,
    pub batches_per_epoch: usize,
    /// Accuracy of the unadapted model on the target set.
    pub initial_target_accuracy: f64,
    /// Accuracy of pseudo-labels under the initial prompt.
    pub initial_pseudo_accuracy: f64,
    pub wall_clock: Duration,
    pub final_model: TargetModel,
    pub final_prompt: PromptContext,
    pub final_cov: DiagCovariance,
    pub audit: AuditLog,
    pub encoder_hash_start: String,
    pub encoder_hash_end: String,
}

fn set_accuracy(probs: ProbBatch, target: &AuditedSet<'_>) -> Result<f64> {
    accuracy(&probs, target.labels(LabelPurpose::Logging))
}

/// Alternating adaptation: per batch, one prompt/covariance step, fresh
/// pseudo-labels, then one target-model step. Target labels are read only
/// for per-epoch logging.
pub fn adapt(
    source_model: &TargetModel,
    target: &AuditedSet<'_>,
    enc: &dyn VilEncoder,
    cfg: &AdaptationConfig,
) -> Result<RunHistory> {
    cfg.validate()?;
    let c = source_model.num_classes();
    if enc.num_classes() != c {
        return Err(Error::Validation(format!(
            "encoder has {} classes, model has {c}",
            enc.num_classes()
        )));
    }
    if target.features().cols() != source_model.input_dim() || target.features().cols() != enc.input_dim() {
        return Err(Error::shape(
            format!("target features of width {}", source_model.input_dim()),
            format!("{}", target.features().cols()),
        ));
    }
    let start = Instant::now();
    let encoder_hash_start = enc.parameter_hash();
    let prompt = init_prompt(&cfg.template, cfg.prompt_len, enc.embed_dim(), cfg.seed)?;
    let mut p1 = Phase1State::new(prompt, DiagCovariance::identity(c), cfg.momentum);
    let mut p2 = Phase2State::new(source_model.clone(), cfg.momentum);
    let all = target.features();

    let initial_target_accuracy = set_accuracy(p2.model.logits(all)?.softmax(), target)?;
    let initial_pseudo_accuracy = set_accuracy(make_pseudo_labels(all, &p1.prompt, enc)?, target)?;

    let n = target.len();
    let bs = cfg.batch_size.min(n);
    let batches_per_epoch = n.div_ceil(bs);
    let total = batches_per_epoch * cfg.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut iterations = Vec::with_capacity(total);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(bs).enumerate() {
            let it = iterations.len();
            let abort = |e: Error| Error::Aborted { iteration: it, source: Box::new(e) };
            let lr_scale = cfg.schedule(it, total);
            let x = all.select_rows(chunk);
            let s1 = phase1_step(&x, &mut p1, &p2.model, enc, cfg, lr_scale).map_err(abort)?;
            let pseudo = make_pseudo_labels(&x, &p1.prompt, enc).map_err(abort)?;
            let s2 = phase2_step(&x, &pseudo, &mut p2, cfg, lr_scale).map_err(abort)?;
            let term = |l: &LossValue, k: &str| l.term(k).unwrap_or(f64::NAN);
            iterations.push(IterationLog {
                epoch,
                batch: b,
                ec: s1.loss.value,
                pmi: term(&s1.loss, "pmi"),
                vmi: term(&s1.loss, "vmi"),
                ic: s2.loss.value,
                un: term(&s2.loss, "un"),
                sce: term(&s2.loss, "sce"),
                phase1_skipped: s1.skipped,
                phase2_skipped: s2.skipped,
            });
        }
        epochs.push(EpochLog {
            epoch,
            target_accuracy: set_accuracy(p2.model.logits(all)?.softmax(), target)?,
            pseudo_label_accuracy: set_accuracy(make_pseudo_labels(all, &p1.prompt, enc)?, target)?,
        });
    }
    Ok(RunHistory {
        iterations,
        epochs,
        batches_per_epoch,
        initial_target_accuracy,
        initial_pseudo_accuracy,
        wall_clock: start.elapsed(),
        final_model: p2.model,
        final_prompt: p1.prompt,
        final_cov: p1.cov,
        audit: target.log(),
        encoder_hash_start,
        encoder_hash_end: enc.parameter_hash(),
    })
}

impl RunHistory {
    pub fn final_target_accuracy(&self) -> f64 {
        self.epochs.last().map_or(self.initial_target_accuracy, |e| e.target_accuracy)
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iteration,epoch,batch,l_ec,l_pmi,l_vmi,l_ic,l_un,l_sce,phase1_skipped,phase2_skipped\n");
        for (i, r) in self.iterations.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
                r.epoch, r.batch, r.ec, r.pmi, r.vmi, r.ic, r.un, r.sce, r.phase1_skipped as u8, r.phase2_skipped as u8
            );
        }
        out
    }

    /// Per-epoch accuracies; row 0 is the state before adaptation.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,target_accuracy,pseudo_label_accuracy\n");
        let _ = writeln!(out, "0,{:?},{:?}", self.initial_target_accuracy, self.initial_pseudo_accuracy);
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:?},{:?}", e.epoch + 1, e.target_accuracy, e.pseudo_label_accuracy);
        }
        out
    }

    pub fn checkpoint(&self, seed: u64, class_names: Vec<String>) -> Checkpoint {
        Checkpoint {
            seed,
            class_names,
            model: self.final_model.clone(),
            prompt: Some(self.final_prompt.clone()),
            cov: Some(self.final_cov.clone()),
        }
    }

    /// Writes `config.toml`, `loss.csv`, `metrics.csv`, `final.ckpt` and `timing.txt` into `dir`.
    pub fn write_run_dir(&self, dir: &Path, config_text: &str, checkpoint: &Checkpoint) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: &str| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        write("config.toml", config_text)?;
        write("loss.csv", &self.loss_csv())?;
        write("metrics.csv", &self.metrics_csv())?;
        write("final.ckpt", &checkpoint.to_text())?;
        write(
            "timing.txt",
            &format!(
                "wall_clock_seconds {:.3}\niterations {}\nlabel_reads_optimization {}\nlabel_reads_logging {}\n",
                self.wall_clock.as_secs_f64(),
                self.iterations.len(),
                self.audit.optimization_reads,
                self.audit.logging_reads
            ),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_domain_pair, SyntheticDomainSpec};
    use crate::models::{ToyVilConfig, ToyVilEncoder};

    fn setup() -> (TargetModel, LabeledSet, ToyVilEncoder) {
        let spec = SyntheticDomainSpec {
            samples_per_class: 40,
            ..Default::default()
        };
        let pair = generate_domain_pair(&spec, 7).unwrap();
        let init = TargetModel::new(16, &[32], 5, 1).unwrap();
        let model = train_source(&init, &pair.source, &SourceTrainConfig::default()).unwrap();
        let enc = ToyVilEncoder::from_prototypes(&pair.target_means, pair.target.class_names.clone(), ToyVilConfig::default(), 3).unwrap();
        (model, pair.target, enc)
    }

    #[test]
    fn source_training_separates_two_classes() {
        let spec = SyntheticDomainSpec {
            classes: 2,
            samples_per_class: 100,
            spread: 0.3,
            ..Default::default()
        };
        let pair = generate_domain_pair(&spec, 2).unwrap();
        let init = TargetModel::new(16, &[16], 2, 0).unwrap();
        let cfg = SourceTrainConfig::default();
        let m = train_source(&init, &pair.source, &cfg).unwrap();
        let acc = accuracy(&m.logits(&pair.source.features).unwrap().softmax(), &pair.source.labels).unwrap();
        assert!(acc >= 99.0, "{acc}");
        assert_eq!(m, train_source(&init, &pair.source, &cfg).unwrap());
        let zero = SourceTrainConfig { epochs: 0, ..cfg };
        assert_eq!(train_source(&init, &pair.source, &zero).unwrap(), init);
    }

    #[test]
    fn zero_learning_rates_freeze_everything() {
        let (model, target, enc) = setup();
        let cfg = AdaptationConfig { lr_prompt: 0.0, lr_cov: 0.0, lr_model: 0.0, ..Default::default() };
        let x = target.features.select_rows(&(0..32).collect::<Vec<_>>());
        let prompt = init_prompt(&cfg.template, 4, enc.embed_dim(), 0).unwrap();
        let mut p1 = Phase1State::new(prompt, DiagCovariance::identity(5), 0.9);
        let before = p1.hash();
        phase1_step(&x, &mut p1, &model, &enc, &cfg, 1.0).unwrap();
        assert_eq!(p1.hash(), before);
        let pseudo = make_pseudo_labels(&x, &p1.prompt, &enc).unwrap();
        let mut p2 = Phase2State::new(model.clone(), 0.9);
        phase2_step(&x, &pseudo, &mut p2, &cfg, 1.0).unwrap();
        assert_eq!(p2.model, model);
    }

    #[test]
    fn small_steps_descend() {
        let (model, target, enc) = setup();
        let x = target.features.select_rows(&(0..64).collect::<Vec<_>>());
        let base = AdaptationConfig::default();
        let prompt = init_prompt(&base.template, 4, enc.embed_dim(), 0).unwrap();
        let cov = DiagCovariance::identity(5);
        let eval1 = |p: &Phase1State| {
            ec_objective(&vil_class_logits(&enc, &x, &p.prompt).unwrap(), &model.logits(&x).unwrap(), &p.cov, base.alpha, base.signs)
                .unwrap()
                .value
        };
        let start = Phase1State::new(prompt.clone(), cov.clone(), 0.0);
        let descended = [1e-2, 1e-3, 1e-4].iter().any(|&lr| {
            let cfg = AdaptationConfig { lr_prompt: lr, lr_cov: lr, ..base.clone() };
            let mut s = start.clone();
            phase1_step(&x, &mut s, &model, &enc, &cfg, 1.0).unwrap();
            eval1(&s) < eval1(&start)
        });
        assert!(descended);

        let pseudo = make_pseudo_labels(&x, &prompt, &enc).unwrap();
        let eval2 = |m: &TargetModel| {
            let p = ProbBatch::unchecked(m.logits(&x).unwrap().softmax().values().clone());
            ic_objective_weighted(&p, &pseudo, base.tau, base.sigma_w, 1.0 / 64.0).unwrap().value
        };
        let descended = [1e-2, 1e-3, 1e-4].iter().any(|&lr| {
            let cfg = AdaptationConfig { lr_model: lr, ..base.clone() };
            let mut s = Phase2State::new(model.clone(), 0.0);
            phase2_step(&x, &pseudo, &mut s, &cfg, 1.0).unwrap();
            eval2(&s.model) < eval2(&model)
        });
        assert!(descended);
    }

    #[test]
    fn pseudo_labels_at_anchors_are_confident() {
        let (_, target, enc) = setup();
        let prompt = init_prompt(DEFAULT_TEMPLATE, 4, enc.embed_dim(), 0).unwrap();
        let uniform = ToyVilEncoder::from_parts(
            Matrix::filled(16, enc.embed_dim(), 0.0),
            Matrix::filled(5, enc.embed_dim(), 1.0),
            10.0,
            target.class_names.clone(),
        )
        .unwrap();
        let q = make_pseudo_labels(&target.features.select_rows(&[0, 1]), &prompt, &uniform).unwrap();
        for row in q.values().row_iter() {
            for v in row {
                assert!((v - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adapt_history_is_complete_and_source_free() {
        let (model, target, enc) = setup();
        let cfg = AdaptationConfig { epochs: 2, ..Default::default() };
        let h = adapt(&model, &AuditedSet::new(&target), &enc, &cfg).unwrap();
        assert_eq!(h.epochs.len(), 2);
        assert_eq!(h.iterations.len(), 2 * h.batches_per_epoch);
        assert_eq!(h.audit.optimization_reads, 0);
        assert_eq!(h.encoder_hash_start, h.encoder_hash_end);
        let zeroed = target.with_zeroed_labels();
        let h0 = adapt(&model, &AuditedSet::new(&zeroed), &enc, &cfg).unwrap();
        assert_eq!(h0.final_model, h.final_model);
    }

    #[test]
    fn mismatched_encoder_is_rejected() {
        let (model, target, _) = setup();
        let enc = ToyVilEncoder::random(16, vec!["a".into(), "b".into()], ToyVilConfig::default(), 0).unwrap();
        let err = adapt(&model, &AuditedSet::new(&target), &enc, &AdaptationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }
}
