//! Labeled feature sets, synthetic covariate shift, SFDA scenario
//! construction, corruption, and the tab-separated manifest format.

use std::cell::Cell;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub domain: String,
}

impl LabeledSet {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
        domain: impl Into<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Validation("labeled set has no samples".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::shape(
                format!("{} feature rows", labels.len()),
                format!("{}", features.rows()),
            ));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Validation(format!(
                "label {l} outside {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            class_names,
            domain: domain.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Subset by row index, keeping the label space.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::new(
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
            self.class_names.clone(),
            self.domain.clone(),
        )
    }

    /// Keeps only samples whose label is in `classes`.
    pub fn filter_classes(&self, classes: &[usize]) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        self.select(&idx)
    }

    /// Seeded shuffle split into `train : test` proportions; train gets
    /// `floor(n · train / (train + test))` samples.
    pub fn split(&self, train: usize, test: usize, seed: u64) -> Result<(Self, Self)> {
        if train == 0 || test == 0 {
            return Err(Error::Validation(format!("split ratio {train}:{test}")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = self.len() * train / (train + test);
        let (a, b) = idx.split_at(n_train);
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort_unstable();
        b.sort_unstable();
        Ok((self.select(&a)?, self.select(&b)?))
    }

    /// Distinct labels present, ascending.
    pub fn observed_classes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_classes()];
        self.labels.iter().for_each(|&l| seen[l] = true);
        (0..seen.len()).filter(|&c| seen[c]).collect()
    }

    /// Copy with every label set to 0, for source-free audits.
    pub fn with_zeroed_labels(&self) -> Self {
        Self {
            labels: vec![0; self.len()],
            ..self.clone()
        }
    }
}

/// Purpose declared when reading labels through an [`AuditedSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPurpose {
    Optimization,
    Logging,
}

/// Label-read counts by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditLog {
    pub optimization_reads: usize,
    pub logging_reads: usize,
}

/// Read-only view of a target set that counts every label access.
pub struct AuditedSet<'a> {
    set: &'a LabeledSet,
    optimization: Cell<usize>,
    logging: Cell<usize>,
}

impl<'a> AuditedSet<'a> {
    pub fn new(set: &'a LabeledSet) -> Self {
        Self {
            set,
            optimization: Cell::new(0),
            logging: Cell::new(0),
        }
    }

    pub fn features(&self) -> &Matrix {
        &self.set.features
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn labels(&self, purpose: LabelPurpose) -> &[usize] {
        let counter = match purpose {
            LabelPurpose::Optimization => &self.optimization,
            LabelPurpose::Logging => &self.logging,
        };
        counter.set(counter.get() + 1);
        &self.set.labels
    }

    pub fn log(&self) -> AuditLog {
        AuditLog {
            optimization_reads: self.optimization.get(),
            logging_reads: self.logging.get(),
        }
    }
}

/// Class-conditional Gaussians on a circle, with a target domain produced by
/// an in-plane anisotropic scale, a rotation, and additive noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticDomainSpec {
    pub classes: usize,
    pub dim: usize,
    /// Radius of the circle carrying the class means.
    pub radius: f64,
    /// Within-class standard deviation.
    pub spread: f64,
    /// In-plane rotation of the target domain, radians.
    pub rotation: f64,
    /// Target scale along the first in-plane axis.
    pub scale: f64,
    /// Std of additive target noise.
    pub noise: f64,
    pub samples_per_class: usize,
    /// Extra target-only classes placed at radius `1.5 · radius` (open set).
    pub open_classes: usize,
}

impl Default for SyntheticDomainSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            dim: 16,
            radius: 3.0,
            spread: 0.6,
            rotation: PI / 2.0,
            scale: 1.0,
            noise: 0.0,
            samples_per_class: 200,
            open_classes: 0,
        }
    }
}

impl SyntheticDomainSpec {
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.classes < 2 {
            return Err(Error::Validation(format!("need >= 2 classes, got {}", self.classes)));
        }
        if self.dim < 2 {
            return Err(Error::Validation(format!("need dim >= 2, got {}", self.dim)));
        }
        if !(self.noise >= 0.0) || !(self.spread >= 0.0) {
            return Err(Error::Validation("noise and spread must be >= 0".into()));
        }
        if !(self.scale > 0.0) || !self.rotation.is_finite() {
            return Err(Error::Validation(format!(
                "domain transform not invertible (scale {}, rotation {})",
                self.scale, self.rotation
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Validation("samples_per_class must be >= 1".into()));
        }
        if self.radius == 0.0 {
            warnings.push("radius 0: all class means coincide".to_string());
        }
        Ok(warnings)
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes)
            .map(|c| format!("class{c}"))
            .chain((0..self.open_classes).map(|k| format!("unknown{k}")))
            .collect()
    }
}

/// Geometry shared by every domain drawn from one spec and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub spec: SyntheticDomainSpec,
    /// Orthonormal in-plane axes `u`, `v` as a `2 × D` matrix.
    pub plane: Matrix,
    /// Class means, known classes first, then open-set classes.
    pub means: Matrix,
    seed: u64,
}

impl SyntheticWorld {
    pub fn new(spec: SyntheticDomainSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.dim;
        let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut u);
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let p = dot(&u, &v);
        v.iter_mut().zip(&u).for_each(|(a, b)| *a -= p * b);
        normalize(&mut v);
        let c = spec.classes;
        let mut means = Matrix::zeros(c + spec.open_classes, d);
        let place = |means: &mut Matrix, row: usize, angle: f64, r: f64| {
            for k in 0..d {
                means.set(row, k, r * (angle.cos() * u[k] + angle.sin() * v[k]));
            }
        };
        for k in 0..c {
            place(&mut means, k, 2.0 * PI * k as f64 / c as f64, spec.radius);
        }
        for k in 0..spec.open_classes {
            let angle = 2.0 * PI * (k as f64 + 0.5) / c as f64;
            place(&mut means, c + k, angle, 1.5 * spec.radius);
        }
        Ok(Self {
            spec,
            plane: Matrix::from_rows(&[u, v])?,
            means,
            seed,
        })
    }

    /// In-plane anisotropic scale followed by rotation; identity off-plane.
    pub fn transform(&self, x: &mut [f64], rotation: f64, scale: f64) {
        let (u, v) = (self.plane.row(0), self.plane.row(1));
        let a = dot(x, u);
        let b = dot(x, v);
        let a_scaled = scale * a;
        let (s, c) = rotation.sin_cos();
        let a_new = c * a_scaled - s * b;
        let b_new = s * a_scaled + c * b;
        for k in 0..x.len() {
            x[k] += (a_new - a) * u[k] + (b_new - b) * v[k];
        }
    }

    /// Class means after the domain transform.
    pub fn transformed_means(&self, rotation: f64, scale: f64) -> Matrix {
        let mut m = self.means.clone();
        for i in 0..m.rows() {
            self.transform(m.row_mut(i), rotation, scale);
        }
        m
    }

    /// Samples one domain. `classes` limits which means are sampled.
    pub fn sample(
        &self,
        domain: &str,
        classes: usize,
        rotation: f64,
        scale: f64,
        noise: f64,
        stream: u64,
    ) -> Result<LabeledSet> {
        let spec = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let n = classes * spec.samples_per_class;
        let mut features = Matrix::zeros(n, spec.dim);
        let mut labels = Vec::with_capacity(n);
        for c in 0..classes {
            for _ in 0..spec.samples_per_class {
                let row = labels.len();
                let x = features.row_mut(row);
                for (k, xk) in x.iter_mut().enumerate() {
                    *xk = self.means.get(c, k) + spec.spread * rng.sample::<f64, _>(StandardNormal);
                }
                self.transform(x, rotation, scale);
                if noise > 0.0 {
                    for xk in x.iter_mut() {
                        *xk += noise * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                labels.push(c);
            }
        }
        LabeledSet::new(features, labels, spec.class_names(), domain)
    }
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub source: LabeledSet,
    pub target: LabeledSet,
    /// Untransformed class means (`C × D`, known classes only).
    pub source_means: Matrix,
    /// Transformed class means, including open-set classes.
    pub target_means: Matrix,
    pub warnings: Vec<String>,
}

/// Draws a covariate-shifted source/target pair, deterministic in `seed`.
pub fn generate_domain_pair(spec: &SyntheticDomainSpec, seed: u64) -> Result<DomainPair> {
    let warnings = spec.validate()?;
    let world = SyntheticWorld::new(spec.clone(), seed)?;
    let c = spec.classes;
    let mut source = world.sample("source", c, 0.0, 1.0, 0.0, 1)?;
    // the source never holds open-set classes
    source.class_names.truncate(c);
    let target = world.sample(
        "target",
        c + spec.open_classes,
        spec.rotation,
        spec.scale,
        spec.noise,
        2,
    )?;
    Ok(DomainPair {
        source,
        target,
        source_means: world.means.select_rows(&(0..c).collect::<Vec<_>>()),
        target_means: world.transformed_means(spec.rotation, spec.scale),
        warnings,
    })
}

/// One domain per rotation angle, all sharing the class geometry of `seed`.
/// Returns each set with its transformed known-class means.
pub fn generate_domain_sequence(
    spec: &SyntheticDomainSpec,
    rotations: &[f64],
    seed: u64,
) -> Result<Vec<(LabeledSet, Matrix)>> {
    let world = SyntheticWorld::new(spec.clone(), seed)?;
    let known: Vec<usize> = (0..spec.classes).collect();
    rotations
        .iter()
        .enumerate()
        .map(|(i, &rot)| {
            let mut set = world.sample(&format!("domain{i}"), spec.classes, rot, spec.scale, spec.noise, 10 + i as u64)?;
            set.class_names.truncate(spec.classes);
            let means = world.transformed_means(rot, spec.scale).select_rows(&known);
            Ok((set, means))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    Closed,
    Open,
    Partial,
    Generalized,
    SfOodg,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::Closed,
        Setting::Generalized,
        Setting::Open,
        Setting::Partial,
        Setting::SfOodg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Closed => "closed",
            Setting::Open => "open",
            Setting::Partial => "partial",
            Setting::Generalized => "generalized",
            Setting::SfOodg => "sf-oodg",
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown setting {s:?}")))
    }
}

/// Default SF-OODG variants: corruption levels applied to the shifted target.
pub const DEFAULT_OODG_LEVELS: [f64; 4] = [0.0, 8.0, 14.0, 20.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub setting: Setting,
    pub source_classes: Vec<usize>,
    pub target_classes: Vec<usize>,
    #[serde(default = "default_split")]
    pub split: (usize, usize),
    #[serde(default = "default_oodg_levels")]
    pub oodg_levels: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_split() -> (usize, usize) {
    (9, 1)
}

fn default_oodg_levels() -> Vec<f64> {
    DEFAULT_OODG_LEVELS.to_vec()
}

impl ScenarioSpec {
    /// Same class set on both sides.
    pub fn shared(setting: Setting, classes: usize) -> Self {
        let all: Vec<usize> = (0..classes).collect();
        Self {
            setting,
            source_classes: all.clone(),
            target_classes: all,
            split: default_split(),
            oodg_levels: default_oodg_levels(),
            seed: 0,
        }
    }

    pub fn with_classes(setting: Setting, source: Vec<usize>, target: Vec<usize>) -> Self {
        Self {
            setting,
            source_classes: source,
            target_classes: target,
            ..Self::shared(setting, 0)
        }
    }

    /// Checks the source/target class relation required by the setting.
    pub fn validate(&self) -> Result<()> {
        let subset = |a: &[usize], b: &[usize]| a.iter().all(|x| b.contains(x));
        let (s, t) = (&self.source_classes, &self.target_classes);
        let mut s_sorted = s.clone();
        s_sorted.sort_unstable();
        s_sorted.dedup();
        let mut t_sorted = t.clone();
        t_sorted.sort_unstable();
        t_sorted.dedup();
        if s_sorted.len() != s.len() || t_sorted.len() != t.len() || s.is_empty() || t.is_empty() {
            return Err(Error::Validation("class sets must be non-empty and duplicate-free".into()));
        }
        let ok = match self.setting {
            Setting::Closed | Setting::Generalized | Setting::SfOodg => s_sorted == t_sorted,
            Setting::Open => subset(s, t) && t.len() > s.len(),
            Setting::Partial => subset(t, s) && s.len() > t.len(),
        };
        if !ok {
            let rel = match self.setting {
                Setting::Open => "C_s ⊂ C_t",
                Setting::Partial => "C_s ⊃ C_t",
                _ => "C_s = C_t",
            };
            return Err(Error::Validation(format!(
                "{} setting requires {rel}, got C_s={s:?}, C_t={t:?}",
                self.setting
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub source_train: LabeledSet,
    /// Held-out source split (generalized setting only).
    pub source_test: Option<LabeledSet>,
    /// Adaptation target; SF-OODG variants follow at indices `1..`.
    pub targets: Vec<LabeledSet>,
}

impl Scenario {
    pub fn target(&self) -> &LabeledSet {
        &self.targets[0]
    }

    pub fn known_classes(&self) -> &[usize] {
        &self.spec.source_classes
    }
}

pub fn build_scenario(source: &LabeledSet, target: &LabeledSet, spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    if let Some(&c) = spec.source_classes.iter().find(|&&c| c >= source.num_classes()) {
        return Err(Error::Validation(format!("source class {c} not in source label space")));
    }
    if let Some(&c) = spec.target_classes.iter().find(|&&c| c >= target.num_classes()) {
        return Err(Error::Validation(format!("target class {c} not in target label space")));
    }
    let src = source.filter_classes(&spec.source_classes)?;
    let tgt = target.filter_classes(&spec.target_classes)?;
    let (source_train, source_test) = match spec.setting {
        Setting::Generalized => {
            let (a, b) = src.split(spec.split.0, spec.split.1, spec.seed)?;
            (a, Some(b))
        }
        _ => (src, None),
    };
    let targets = match spec.setting {
        Setting::SfOodg => spec
            .oodg_levels
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let mut v = corrupt(&tgt, k, spec.seed.wrapping_add(i as u64))?;
                v.domain = format!("{}-k{k}", tgt.domain);
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?,
        _ => vec![tgt],
    };
    Ok(Scenario {
        spec: spec.clone(),
        source_train,
        source_test,
        targets,
    })
}

/// Pooled feature standard deviation: root mean of per-column variances.
pub fn feature_std(features: &Matrix) -> f64 {
    let (n, d) = features.shape();
    if n == 0 || d == 0 {
        return 0.0;
    }
    let mut var = 0.0;
    for j in 0..d {
        let mean = (0..n).map(|i| features.get(i, j)).sum::<f64>() / n as f64;
        var += (0..n).map(|i| (features.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
    }
    (var / d as f64).sqrt()
}

/// Additive Gaussian corruption with std `level/20 · feature_std`; level 0 is the identity.
pub fn corrupt(set: &LabeledSet, level: f64, seed: u64) -> Result<LabeledSet> {
    if !(level >= 0.0) {
        return Err(Error::Validation(format!("corruption level {level} < 0")));
    }
    if level == 0.0 {
        return Ok(set.clone());
    }
    let std = level / 20.0 * feature_std(&set.features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = set.features.clone();
    for v in features.as_mut_slice() {
        *v += std * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(LabeledSet {
        features,
        ..set.clone()
    })
}

pub const MANIFEST_MAGIC: &str = "#causal-sfda-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Serializes a set in the manifest format: one header line, then one record per sample.
pub fn manifest_text(set: &LabeledSet) -> Result<String> {
    if let Some(bad) = set
        .class_names
        .iter()
        .find(|n| n.is_empty() || n.contains([',', '\t', '\n']))
    {
        return Err(Error::Validation(format!("class name {bad:?} not representable")));
    }
    if set.domain.contains(['\t', '\n']) || set.domain.is_empty() {
        return Err(Error::Validation(format!("domain tag {:?} not representable", set.domain)));
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MANIFEST_MAGIC}\tversion={MANIFEST_VERSION}\tdim={}\tclasses={}\tnames={}",
        set.dim(),
        set.num_classes(),
        set.class_names.join(",")
    );
    for (i, (row, &label)) in set.features.row_iter().zip(&set.labels).enumerate() {
        let _ = write!(out, "{}-{i}\t{}\t{}", set.domain, set.domain, set.class_names[label]);
        for v in row {
            let _ = write!(out, "\t{v:?}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(set: &LabeledSet, path: &Path) -> Result<()> {
    std::fs::write(path, manifest_text(set)?).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<LabeledSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, &path.display().to_string())
}

pub fn parse_manifest(text: &str, origin: &str) -> Result<LabeledSet> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "no records".into()))?;
    let mut fields = header.split('\t');
    if fields.next() != Some(MANIFEST_MAGIC) {
        return Err(err(1, "missing manifest header".into()));
    }
    let (mut version, mut dim, mut classes, mut names) = (None, None, None, None);
    for f in fields {
        let (k, v) = f
            .split_once('=')
            .ok_or_else(|| err(1, format!("malformed header field {f:?}")))?;
        match k {
            "version" => version = Some(v.to_string()),
            "dim" => dim = Some(v.parse::<usize>().map_err(|e| err(1, format!("dim: {e}")))?),
            "classes" => {
                classes = Some(v.parse::<usize>().map_err(|e| err(1, format!("classes: {e}")))?)
            }
            "names" => names = Some(v.split(',').map(str::to_string).collect::<Vec<_>>()),
            _ => return Err(err(1, format!("unknown header field {k:?}"))),
        }
    }
    let version = version.ok_or_else(|| err(1, "header lacks version".into()))?;
    if version != MANIFEST_VERSION.to_string() {
        return Err(err(1, format!("unsupported manifest version {version}")));
    }
    let dim = dim.ok_or_else(|| err(1, "header lacks dim".into()))?;
    let names = names.ok_or_else(|| err(1, "header lacks names".into()))?;
    if classes.is_some_and(|c| c != names.len()) {
        return Err(err(1, format!("classes={} but {} names", classes.unwrap_or(0), names.len())));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut domain: Option<String> = None;
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 + dim {
            return Err(err(ln, format!("expected {} fields, found {}", 3 + dim, cols.len())));
        }
        match &domain {
            None => domain = Some(cols[1].to_string()),
            Some(d) if d != cols[1] => {
                return Err(err(ln, format!("mixed domain tags {d:?} and {:?}", cols[1])))
            }
            _ => {}
        }
        let label = names
            .iter()
            .position(|n| n == cols[2])
            .ok_or_else(|| err(ln, format!("unknown label {:?}", cols[2])))?;
        labels.push(label);
        for tok in &cols[3..] {
            data.push(
                tok.parse::<f64>()
                    .map_err(|_| err(ln, format!("bad feature value {tok:?}")))?,
            );
        }
    }
    if labels.is_empty() {
        return Err(Error::Validation(format!("{origin}: no records")));
    }
    LabeledSet::new(
        Matrix::from_vec(labels.len(), dim, data)?,
        labels,
        names,
        domain.unwrap_or_default(),
    )
}
