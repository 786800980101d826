//! Accuracy, harmonic mean, cross-setting unification metrics, scenario and
//! continual protocols, and the results file format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::{LabeledSet, Scenario, Setting};
use crate::error::{Error, Result};
use crate::models::{TargetModel, VilEncoder};
use crate::objectives::{argmax, ProbBatch};
use crate::trainer::{adapt, train_source, AdaptationConfig, RunHistory, SourceTrainConfig};
use crate::data::AuditedSet;

/// Percent of rows whose argmax (ties to the lowest index) equals the label.
pub fn accuracy(preds: &ProbBatch, truth: &[usize]) -> Result<f64> {
    accuracy_of_labels(&preds.argmax(), truth)
}

pub fn accuracy_of_labels(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(
            format!("{} predictions", truth.len()),
            format!("{}", pred.len()),
        ));
    }
    if truth.is_empty() {
        return Err(Error::Validation("accuracy of an empty set".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

/// `2 A_s A_t / (A_s + A_t)`, defined as 0 when both are 0.
pub fn harmonic_mean(a_s: f64, a_t: f64) -> f64 {
    if a_s + a_t == 0.0 {
        0.0
    } else {
        2.0 * a_s * a_t / (a_s + a_t)
    }
}

/// Methods × settings score matrix, in percent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SettingScoreTable {
    pub methods: Vec<String>,
    pub settings: Vec<String>,
    scores: Vec<Vec<Option<f64>>>,
}

impl SettingScoreTable {
    pub fn new(methods: Vec<String>, settings: Vec<String>) -> Self {
        let scores = vec![vec![None; settings.len()]; methods.len()];
        Self {
            methods,
            settings,
            scores,
        }
    }

    /// Builds a complete table from rows of scores.
    pub fn from_rows(settings: &[&str], rows: &[(&str, &[f64])]) -> Result<Self> {
        let mut t = Self::new(
            rows.iter().map(|r| r.0.to_string()).collect(),
            settings.iter().map(|s| s.to_string()).collect(),
        );
        for (m, (method, vals)) in rows.iter().enumerate() {
            if vals.len() != settings.len() {
                return Err(Error::shape(
                    format!("{} scores for {method}", settings.len()),
                    format!("{}", vals.len()),
                ));
            }
            for (s, &v) in vals.iter().enumerate() {
                t.set_at(m, s, v)?;
            }
        }
        Ok(t)
    }

    fn set_at(&mut self, m: usize, s: usize, v: f64) -> Result<()> {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::Validation(format!(
                "score {v} for {}/{} outside [0, 100]",
                self.methods[m], self.settings[s]
            )));
        }
        self.scores[m][s] = Some(v);
        Ok(())
    }

    /// Inserts a score, adding the method or setting if new.
    pub fn set(&mut self, method: &str, setting: &str, v: f64) -> Result<()> {
        let m = match self.methods.iter().position(|x| x == method) {
            Some(m) => m,
            None => {
                self.methods.push(method.to_string());
                self.scores.push(vec![None; self.settings.len()]);
                self.methods.len() - 1
            }
        };
        let s = match self.settings.iter().position(|x| x == setting) {
            Some(s) => s,
            None => {
                self.settings.push(setting.to_string());
                self.scores.iter_mut().for_each(|r| r.push(None));
                self.settings.len() - 1
            }
        };
        self.set_at(m, s, v)
    }

    pub fn get(&self, method: &str, setting: &str) -> Option<f64> {
        let m = self.methods.iter().position(|x| x == method)?;
        let s = self.settings.iter().position(|x| x == setting)?;
        self.scores[m][s]
    }

    pub fn row(&self, m: usize) -> &[Option<f64>] {
        &self.scores[m]
    }

    /// Restricts the columns to `settings`, in that order.
    pub fn select_settings(&self, settings: &[String]) -> Result<Self> {
        let idx = settings
            .iter()
            .map(|s| {
                self.settings
                    .iter()
                    .position(|x| x == s)
                    .ok_or_else(|| Error::Validation(format!("no scores for setting {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            methods: self.methods.clone(),
            settings: settings.to_vec(),
            scores: self
                .scores
                .iter()
                .map(|r| idx.iter().map(|&i| r[i]).collect())
                .collect(),
        })
    }

    /// Best score per setting across methods.
    pub fn column_best(&self) -> Result<Vec<f64>> {
        (0..self.settings.len())
            .map(|s| {
                let mut best = f64::NEG_INFINITY;
                for (m, row) in self.scores.iter().enumerate() {
                    let v = row[s].ok_or_else(|| {
                        Error::Validation(format!(
                            "missing score for {} / {}",
                            self.methods[m], self.settings[s]
                        ))
                    })?;
                    best = best.max(v);
                }
                Ok(best)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnificationRow {
    pub method: String,
    /// Mean score over all settings.
    pub h_all: f64,
    /// Worst relative shortfall against the per-setting best, × 100.
    pub h_wrg: f64,
    /// Mean over the remaining settings with each setting left out, in table order.
    pub h_loso: Vec<f64>,
}

pub fn unification_metrics(t: &SettingScoreTable) -> Result<Vec<UnificationRow>> {
    if t.methods.is_empty() || t.settings.len() < 2 {
        return Err(Error::Validation(
            "unification metrics need at least one method and two settings".into(),
        ));
    }
    let best = t.column_best()?;
    let k = t.settings.len() as f64;
    Ok(t.methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let x: Vec<f64> = t.scores[m].iter().map(|v| v.unwrap_or(0.0)).collect();
            let total: f64 = x.iter().sum();
            let h_wrg = x
                .iter()
                .zip(&best)
                .map(|(&v, &b)| if b > 0.0 { (b - v) / b } else { 0.0 })
                .fold(0.0, f64::max);
            UnificationRow {
                method: method.clone(),
                h_all: total / k,
                h_wrg: 100.0 * h_wrg,
                h_loso: x.iter().map(|v| (total - v) / (k - 1.0)).collect(),
            }
        })
        .collect())
}

/// Plain-text unification table with one decimal place (two for `H_wrg`).
pub fn format_unification(t: &SettingScoreTable, rows: &[UnificationRow]) -> String {
    let heads: Vec<String> = t.settings.iter().map(|s| format!("H_loso w/o {s}")).collect();
    let mut out = String::new();
    let _ = write!(out, "{:<14}{:>8}{:>8}", "method", "H_all", "H_wrg");
    for h in &heads {
        let _ = write!(out, "  {h}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:<14}{:>8.1}{:>8.2}", r.method, r.h_all, r.h_wrg);
        for (v, h) in r.h_loso.iter().zip(&heads) {
            let _ = write!(out, "  {v:>w$.1}", w = h.len());
        }
        out.push('\n');
    }
    out
}

/// Plot-ready CSV at full precision.
pub fn unification_csv(t: &SettingScoreTable, rows: &[UnificationRow]) -> String {
    let mut out = String::from("method,h_all,h_wrg");
    for s in &t.settings {
        let _ = write!(out, ",h_loso_{s}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{}", r.method, r.h_all, r.h_wrg);
        for v in &r.h_loso {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn format_scores(t: &SettingScoreTable) -> String {
    let width = |s: &str| s.len().max(12) + 2;
    let first = t.methods.iter().map(|m| m.len()).max().unwrap_or(0).max(6) + 2;
    let mut out = format!("{:<first$}", "method");
    for s in &t.settings {
        let _ = write!(out, "{s:>w$}", w = width(s));
    }
    out.push('\n');
    for (m, method) in t.methods.iter().enumerate() {
        let _ = write!(out, "{method:<first$}");
        for (v, s) in t.scores[m].iter().zip(&t.settings) {
            let w = width(s);
            match v {
                Some(v) => {
                    let _ = write!(out, "{v:>w$.1}");
                }
                None => {
                    let _ = write!(out, "{:>w$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

pub const RESULTS_FORMAT: &str = "causal-sfda-results/1";

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub method: String,
    pub setting: String,
    pub score: f64,
}

/// Metadata block plus one method-setting-score record per line.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsFile {
    pub metadata: BTreeMap<String, String>,
    pub records: Vec<ScoreRecord>,
}

impl ResultsFile {
    pub fn push(&mut self, method: &str, setting: &str, score: f64) {
        self.records.push(ScoreRecord {
            method: method.into(),
            setting: setting.into(),
            score,
        });
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("@format={RESULTS_FORMAT}\n");
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "@{k}={v}");
        }
        for r in &self.records {
            let _ = writeln!(out, "{}\t{}\t{:?}", r.method, r.setting, r.score);
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut out = Self::default();
        let mut saw_format = false;
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(meta) = line.strip_prefix('@') {
                let (k, v) = meta
                    .split_once('=')
                    .ok_or_else(|| err(ln, format!("malformed metadata line {line:?}")))?;
                if k == "format" {
                    if v != RESULTS_FORMAT {
                        return Err(err(ln, format!("unsupported results format {v:?}")));
                    }
                    saw_format = true;
                } else {
                    out.metadata.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            if !saw_format {
                return Err(err(ln, format!("record before @format={RESULTS_FORMAT} header")));
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(err(ln, format!("expected 3 tab-separated fields, found {}", cols.len())));
            }
            let score: f64 = cols[2]
                .trim()
                .parse()
                .map_err(|_| err(ln, format!("bad score {:?}", cols[2])))?;
            if !(0.0..=100.0).contains(&score) {
                return Err(err(ln, format!("score {score} outside [0, 100]")));
            }
            out.push(cols[0].trim(), cols[1].trim(), score);
        }
        if !saw_format {
            return Err(err(1, format!("missing @format={RESULTS_FORMAT} header")));
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Union of records; a (method, setting) pair given two different scores is an error.
    pub fn merge(files: &[ResultsFile]) -> Result<Self> {
        let mut out = Self::default();
        let mut seen: BTreeMap<(String, String), f64> = BTreeMap::new();
        for f in files {
            for (k, v) in &f.metadata {
                out.metadata.entry(k.clone()).or_insert_with(|| v.clone());
            }
            for r in &f.records {
                match seen.get(&(r.method.clone(), r.setting.clone())) {
                    Some(&s) if s != r.score => {
                        return Err(Error::Validation(format!(
                            "conflicting scores for {} / {}: {s} vs {}",
                            r.method, r.setting, r.score
                        )))
                    }
                    Some(_) => {}
                    None => {
                        seen.insert((r.method.clone(), r.setting.clone()), r.score);
                        out.records.push(r.clone());
                    }
                }
            }
        }
        Ok(out)
    }

    /// Score table in first-appearance order of methods and settings.
    pub fn table(&self) -> Result<SettingScoreTable> {
        let mut t = SettingScoreTable::default();
        for r in &self.records {
            t.set(&r.method, &r.setting, r.score)?;
        }
        Ok(t)
    }
}

/// Options for [`evaluate_scenario`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Open-set rejection: a sample is rejected as unknown when its maximum
    /// class probability falls below this value.
    pub open_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { open_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenSetScores {
    pub threshold: f64,
    /// Accuracy over known-class samples; rejected samples count as errors.
    pub known_accuracy: f64,
    /// Share of unknown-class samples rejected.
    pub unknown_recall: f64,
    /// Harmonic mean of the two.
    pub hos: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioScores {
    Closed { accuracy: f64 },
    Partial { accuracy: f64 },
    Open(OpenSetScores),
    Generalized { source: f64, target: f64, h: f64 },
    SfOodg { per_variant: Vec<(String, f64)>, mean: f64 },
}

impl ScenarioScores {
    /// Headline number for the setting.
    pub fn headline(&self) -> f64 {
        match self {
            ScenarioScores::Closed { accuracy } | ScenarioScores::Partial { accuracy } => *accuracy,
            ScenarioScores::Open(o) => o.known_accuracy,
            ScenarioScores::Generalized { h, .. } => *h,
            ScenarioScores::SfOodg { mean, .. } => *mean,
        }
    }

    /// Records for a results file: the headline under the setting name plus labeled details.
    pub fn records(&self, setting: Setting) -> Vec<(String, f64)> {
        let s = setting.as_str();
        let mut out = vec![(s.to_string(), self.headline())];
        match self {
            ScenarioScores::Open(o) => {
                out.push((format!("{s}.unknown_recall"), o.unknown_recall));
                out.push((format!("{s}.hos"), o.hos));
            }
            ScenarioScores::Generalized { source, target, .. } => {
                out.push((format!("{s}.source"), *source));
                out.push((format!("{s}.target"), *target));
            }
            ScenarioScores::SfOodg { per_variant, .. } => {
                out.extend(per_variant.iter().map(|(n, v)| (format!("{s}.{n}"), *v)));
            }
            _ => {}
        }
        out
    }
}

pub fn open_set_scores(probs: &ProbBatch, truth: &[usize], threshold: f64) -> Result<OpenSetScores> {
    let c = probs.classes();
    if probs.n() != truth.len() {
        return Err(Error::shape(format!("{} predictions", truth.len()), format!("{}", probs.n())));
    }
    let (mut known, mut known_hit, mut unknown, mut rejected) = (0usize, 0usize, 0usize, 0usize);
    for (row, &y) in probs.values().row_iter().zip(truth) {
        let pred = argmax(row);
        let reject = row[pred] < threshold;
        if y < c {
            known += 1;
            known_hit += usize::from(!reject && pred == y);
        } else {
            unknown += 1;
            rejected += usize::from(reject);
        }
    }
    if known == 0 {
        return Err(Error::Validation("open-set target has no known-class samples".into()));
    }
    let known_accuracy = 100.0 * known_hit as f64 / known as f64;
    let unknown_recall = if unknown == 0 {
        0.0
    } else {
        100.0 * rejected as f64 / unknown as f64
    };
    Ok(OpenSetScores {
        threshold,
        known_accuracy,
        unknown_recall,
        hos: harmonic_mean(known_accuracy, unknown_recall),
    })
}

pub fn evaluate_scenario(model: &TargetModel, scenario: &Scenario, opts: EvalOptions) -> Result<ScenarioScores> {
    let known = scenario.known_classes();
    if let Some(&c) = known.iter().find(|&&c| c >= model.num_classes()) {
        return Err(Error::Validation(format!(
            "model has {} classes, scenario needs class {c}",
            model.num_classes()
        )));
    }
    let acc = |set: &LabeledSet| -> Result<f64> {
        accuracy(&model.logits(&set.features)?.softmax(), &set.labels)
    };
    Ok(match scenario.spec.setting {
        Setting::Closed => ScenarioScores::Closed {
            accuracy: acc(scenario.target())?,
        },
        Setting::Partial => ScenarioScores::Partial {
            accuracy: acc(scenario.target())?,
        },
        Setting::Open => {
            let t = scenario.target();
            ScenarioScores::Open(open_set_scores(
                &model.logits(&t.features)?.softmax(),
                &t.labels,
                opts.open_threshold,
            )?)
        }
        Setting::Generalized => {
            let test = scenario
                .source_test
                .as_ref()
                .ok_or_else(|| Error::Validation("generalized scenario lacks a source test split".into()))?;
            let (source, target) = (acc(test)?, acc(scenario.target())?);
            ScenarioScores::Generalized {
                source,
                target,
                h: harmonic_mean(source, target),
            }
        }
        Setting::SfOodg => {
            let per_variant = scenario
                .targets
                .iter()
                .map(|t| Ok((t.domain.clone(), acc(t)?)))
                .collect::<Result<Vec<_>>>()?;
            let mean = per_variant.iter().map(|v| v.1).sum::<f64>() / per_variant.len() as f64;
            ScenarioScores::SfOodg { per_variant, mean }
        }
    })
}

/// Test accuracy of every intermediate model on every domain, with forgetting drops.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinualReport {
    pub domains: Vec<String>,
    /// `grid[step][domain]`; step 0 is the source model, step `i` follows adaptation to domain `i`.
    pub grid: Vec<Vec<f64>>,
    /// Mean over later steps of (accuracy when first seen − accuracy at that step); `None` for the last domain.
    pub drops: Vec<Option<f64>>,
}

impl ContinualReport {
    pub fn from_grid(domains: Vec<String>, grid: Vec<Vec<f64>>) -> Result<Self> {
        let k = domains.len();
        if grid.len() != k || grid.iter().any(|r| r.len() != k) {
            return Err(Error::shape(format!("{k}×{k} grid"), "ragged grid"));
        }
        let drops = (0..k)
            .map(|d| {
                let later: Vec<f64> = (d + 1..k).map(|s| grid[d][d] - grid[s][d]).collect();
                (!later.is_empty()).then(|| later.iter().sum::<f64>() / later.len() as f64)
            })
            .collect();
        Ok(Self { domains, grid, drops })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<10}", "step");
        for d in &self.domains {
            let _ = write!(out, "{d:>10}");
        }
        out.push('\n');
        for (s, row) in self.grid.iter().enumerate() {
            let _ = write!(out, "{:<10}", self.domains[s]);
            for v in row {
                let _ = write!(out, "{v:>10.1}");
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<10}", "drop");
        for d in &self.drops {
            match d {
                Some(v) => {
                    let _ = write!(out, "{v:>10.1}");
                }
                None => {
                    let _ = write!(out, "{:>10}", "-");
                }
            }
        }
        out.push('\n');
        out
    }
}

/// Everything the continual protocol needs besides the domains themselves.
pub struct ContinualSetup<'a> {
    pub initial_model: &'a TargetModel,
    pub source: &'a SourceTrainConfig,
    pub adapt: &'a AdaptationConfig,
    /// Builds the vision-language encoder used while adapting to domain `i`.
    pub encoder_for: &'a dyn Fn(usize) -> Result<Box<dyn VilEncoder>>,
    /// Seed for the per-domain 90/10 train/test split.
    pub split_seed: u64,
}

/// Trains on domain 0, adapts along the rest of the sequence, and evaluates
/// every intermediate model on each domain's held-out 10% split.
pub fn continual_protocol(domains: &[LabeledSet], setup: &ContinualSetup<'_>) -> Result<ContinualReport> {
    if domains.len() < 2 {
        return Err(Error::Validation("continual protocol needs at least 2 domains".into()));
    }
    let splits = domains
        .iter()
        .enumerate()
        .map(|(i, d)| d.split(9, 1, setup.split_seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let eval = |m: &TargetModel| -> Result<Vec<f64>> {
        splits
            .iter()
            .map(|(_, test)| accuracy(&m.logits(&test.features)?.softmax(), &test.labels))
            .collect()
    };
    let mut model = train_source(setup.initial_model, &splits[0].0, setup.source)?;
    let mut grid = vec![eval(&model)?];
    for (i, (train, _)) in splits.iter().enumerate().skip(1) {
        let enc = (setup.encoder_for)(i)?;
        let history = adapt(&model, &AuditedSet::new(train), enc.as_ref(), setup.adapt)?;
        model = history.final_model;
        grid.push(eval(&model)?);
    }
    ContinualReport::from_grid(domains.iter().map(|d| d.domain.clone()).collect(), grid)
}

/// Per-epoch pseudo-label and adapted-model accuracy, with the pre-adaptation values at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSeries {
    pub pseudo_label_accuracy: Vec<f64>,
    pub model_accuracy: Vec<f64>,
}

impl PseudoLabelSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,pseudo_label_accuracy,model_accuracy\n");
        for (e, (p, m)) in self.pseudo_label_accuracy.iter().zip(&self.model_accuracy).enumerate() {
            let _ = writeln!(out, "{e},{p},{m}");
        }
        out
    }
}

pub fn pseudo_label_dynamics(history: &RunHistory) -> PseudoLabelSeries {
    let mut pseudo = vec![history.initial_pseudo_accuracy];
    pseudo.extend(history.epochs.iter().map(|e| e.pseudo_label_accuracy));
    let mut model = vec![history.initial_target_accuracy];
    model.extend(history.epochs.iter().map(|e| e.target_accuracy));
    PseudoLabelSeries {
        pseudo_label_accuracy: pseudo,
        model_accuracy: model,
    }
}

pub const DEFAULT_INVARIANCE_LEVELS: [f64; 4] = [8.0, 12.0, 16.0, 20.0];

/// Source and adapted accuracy on a target corrupted at increasing levels.
#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub levels: Vec<f64>,
    pub source_accuracy: Vec<f64>,
    pub adapted_accuracy: Vec<f64>,
}

impl InvarianceReport {
    /// Accuracy at the first level minus accuracy at the last.
    pub fn source_drop(&self) -> f64 {
        self.source_accuracy[0] - self.source_accuracy[self.source_accuracy.len() - 1]
    }

    pub fn adapted_drop(&self) -> f64 {
        self.adapted_accuracy[0] - self.adapted_accuracy[self.adapted_accuracy.len() - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,source_accuracy,adapted_accuracy\n");
        for ((k, s), a) in self.levels.iter().zip(&self.source_accuracy).zip(&self.adapted_accuracy) {
            let _ = writeln!(out, "{k},{s},{a}");
        }
        out
    }
}

/// For each level, corrupts the target, adapts the source model on the
/// corrupted copy, and scores both models on it.
pub fn invariance_study(
    source_model: &TargetModel,
    target: &LabeledSet,
    encoder: &dyn VilEncoder,
    cfg: &AdaptationConfig,
    levels: &[f64],
    corruption_seed: u64,
) -> Result<InvarianceReport> {
    if levels.len() < 2 {
        return Err(Error::Validation("invariance study needs at least 2 corruption levels".into()));
    }
    let mut source_accuracy = Vec::with_capacity(levels.len());
    let mut adapted_accuracy = Vec::with_capacity(levels.len());
    for &k in levels {
        let noisy = crate::data::corrupt(target, k, corruption_seed)?;
        source_accuracy.push(accuracy(&source_model.logits(&noisy.features)?.softmax(), &noisy.labels)?);
        let history = adapt(source_model, &AuditedSet::new(&noisy), encoder, cfg)?;
        adapted_accuracy.push(history.final_target_accuracy());
    }
    Ok(InvarianceReport {
        levels: levels.to_vec(),
        source_accuracy,
        adapted_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SETTINGS: [&str; 5] = ["closed", "generalized", "open", "partial", "sf-oodg"];

    fn published_scores() -> SettingScoreTable {
        SettingScoreTable::from_rows(
            &SETTINGS,
            &[
                ("DIFO", &[84.5, 80.5, 75.9, 85.6, 47.2]),
                ("ProDe", &[86.8, 84.8, 82.6, 84.2, 50.6]),
                ("CausalDA", &[85.6, 85.2, 84.0, 87.1, 53.7]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let p = ProbBatch::from_rows(&[[0.9, 0.1], [0.2, 0.8]]).unwrap();
        assert_eq!(accuracy(&p, &[0, 1]).unwrap(), 100.0);
        let u = ProbBatch::uniform(4, 2);
        assert_eq!(accuracy(&u, &[0, 0, 1, 1]).unwrap(), 50.0);
        assert!(accuracy(&u, &[0]).is_err());
        let p = ProbBatch::from_rows(&[[0.3, 0.7], [0.6, 0.4], [0.1, 0.9], [0.5, 0.5], [0.8, 0.2]]).unwrap();
        // argmax 1, 0, 1, 0 (tie), 0 against truth 1, 1, 1, 0, 1: three hits
        assert!((accuracy(&p, &[1, 1, 1, 0, 1]).unwrap() - 60.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_mean_examples() {
        assert!((harmonic_mean(98.1, 59.2) - 73.8).abs() < 0.05);
        assert!((harmonic_mean(86.1, 84.3) - 85.2).abs() < 0.05);
        assert_eq!(harmonic_mean(42.0, 42.0), 42.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    #[test]
    fn unification_reproduction() {
        let rows = unification_metrics(&published_scores()).unwrap();
        // row means of the score table; the middle value is 389.0 / 5
        let h_all = [74.74, 77.8, 79.12];
        let h_wrg = [12.1, 5.77, 1.38];
        let loso = [
            [72.3, 73.3, 74.4, 72.0, 81.6],
            [75.5, 76.0, 76.6, 76.2, 84.6],
            [77.5, 77.6, 77.9, 77.1, 85.5],
        ];
        for (i, r) in rows.iter().enumerate() {
            assert!((r.h_all - h_all[i]).abs() <= 1e-9, "{r:?}");
            assert!((r.h_wrg - h_wrg[i]).abs() <= 0.05, "{r:?}");
            for s in 0..5 {
                assert!((r.h_loso[s] - loso[i][s]).abs() <= 0.05 + 1e-9, "{r:?}");
            }
        }
    }

    #[test]
    fn single_method_has_zero_shortfall() {
        let t = SettingScoreTable::from_rows(&SETTINGS, &[("only", &[10.0, 20.0, 30.0, 40.0, 50.0])]).unwrap();
        assert_eq!(unification_metrics(&t).unwrap()[0].h_wrg, 0.0);
    }

    #[test]
    fn missing_cell_is_an_error() {
        let mut t = published_scores();
        t.set("Extra", "closed", 50.0).unwrap();
        assert!(unification_metrics(&t).is_err());
    }

    #[test]
    fn results_file_round_trip_and_merge() {
        let mut a = ResultsFile::default();
        a.metadata.insert("source".into(), "test".into());
        a.push("DIFO", "closed", 84.5);
        let parsed = ResultsFile::parse(&a.to_text(), "a").unwrap();
        assert_eq!(parsed, a);
        let mut b = ResultsFile::default();
        b.push("ProDe", "closed", 86.8);
        b.push("DIFO", "closed", 84.5);
        let m = ResultsFile::merge(&[a.clone(), b]).unwrap();
        assert_eq!(m.records.len(), 2);
        let mut c = ResultsFile::default();
        c.push("DIFO", "closed", 80.0);
        assert!(ResultsFile::merge(&[a, c]).is_err());

        let bad = format!("@format={RESULTS_FORMAT}\nDIFO\tclosed\n");
        assert!(matches!(ResultsFile::parse(&bad, "x"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(ResultsFile::parse("DIFO\tclosed\t1\n", "x"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn continual_drops_use_later_steps_only() {
        let grid = vec![
            vec![90.0, 40.0, 30.0],
            vec![80.0, 85.0, 50.0],
            vec![70.0, 75.0, 88.0],
        ];
        let r = ContinualReport::from_grid(vec!["a".into(), "b".into(), "c".into()], grid).unwrap();
        assert_eq!(r.drops, vec![Some(15.0), Some(10.0), None]);
    }

    #[test]
    fn open_set_threshold_zero_never_rejects() {
        let p = ProbBatch::from_rows(&[[0.4, 0.6], [0.7, 0.3], [0.55, 0.45]]).unwrap();
        let s = open_set_scores(&p, &[1, 0, 2], 0.0).unwrap();
        assert_eq!(s.known_accuracy, 100.0);
        assert_eq!(s.unknown_recall, 0.0);
        let s = open_set_scores(&p, &[1, 0, 2], 0.6).unwrap();
        assert_eq!(s.known_accuracy, 100.0 * 2.0 / 2.0);
        assert_eq!(s.unknown_recall, 100.0);
    }

    proptest! {
        #[test]
        fn harmonic_mean_is_bounded(a in 0.01f64..100.0, b in 0.01f64..100.0) {
            let h = harmonic_mean(a, b);
            prop_assert!(h >= a.min(b) - 1e-12 && h <= a.max(b) + 1e-12);
        }

        #[test]
        fn shortfall_invariant_under_column_rescale(k in 0.1f64..1.0, col in 0usize..5) {
            let t = published_scores();
            let mut scaled = t.clone();
            for m in &t.methods {
                let v = t.get(m, SETTINGS[col]).unwrap();
                scaled.set(m, SETTINGS[col], v * k).unwrap();
            }
            let (a, b) = (unification_metrics(&t).unwrap(), unification_metrics(&scaled).unwrap());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.h_wrg - y.h_wrg).abs() < 1e-9);
            }
        }

        #[test]
        fn loso_recovers_h_all(rows in proptest::collection::vec(0.0f64..100.0, 5)) {
            let t = SettingScoreTable::from_rows(&SETTINGS, &[("m", &rows)]).unwrap();
            let r = &unification_metrics(&t).unwrap()[0];
            let back: f64 = r.h_loso.iter().zip(&rows).map(|(l, x)| (l * 4.0 + x) / 5.0).sum::<f64>() / 5.0;
            prop_assert!((back - r.h_all).abs() < 1e-9);
        }
    }
}
