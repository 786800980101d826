//! Run configuration and scenario descriptors, both stored as TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ScenarioSpec, Setting, SyntheticDomainSpec, DEFAULT_OODG_LEVELS};
use crate::error::{Error, Result};
use crate::models::ToyVilConfig;
use crate::trainer::{AdaptationConfig, SourceTrainConfig};

pub const CONFIG_VERSION: u32 = 1;
pub const DESCRIPTOR_VERSION: u32 = 1;

fn version_one() -> u32 {
    1
}

/// Declarative description of one adaptation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(default = "version_one")]
    pub format_version: u32,
    pub seed: u64,
    pub output: PathBuf,
    /// Method label used in results files.
    pub method: String,
    pub data: DataConfig,
    pub synthetic: SyntheticDomainSpec,
    pub scenario: ScenarioConfig,
    pub vil: ToyVilConfig,
    pub model: ModelConfig,
    pub source: SourceTrainConfig,
    pub adapt: AdaptationConfig,
    pub continual: ContinualConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_VERSION,
            seed: 0,
            output: PathBuf::from("runs/default"),
            method: "causal-sfda".into(),
            data: DataConfig::default(),
            synthetic: SyntheticDomainSpec::default(),
            scenario: ScenarioConfig::default(),
            vil: ToyVilConfig::default(),
            model: ModelConfig::default(),
            source: SourceTrainConfig::default(),
            adapt: AdaptationConfig::default(),
            continual: ContinualConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Scenario descriptor written by `synth`; when absent the `[synthetic]`
    /// generator is used directly.
    pub descriptor: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub setting: Setting,
    /// Empty means every source class.
    pub source_classes: Vec<usize>,
    /// Empty means the setting's default (see [`ScenarioConfig::resolve`]).
    pub target_classes: Vec<usize>,
    pub split_train: usize,
    pub split_test: usize,
    pub oodg_levels: Vec<f64>,
    pub open_threshold: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            setting: Setting::Closed,
            source_classes: Vec::new(),
            target_classes: Vec::new(),
            split_train: 9,
            split_test: 1,
            oodg_levels: DEFAULT_OODG_LEVELS.to_vec(),
            open_threshold: 0.5,
        }
    }
}

impl ScenarioConfig {
    /// Fills empty class lists: all known classes for the source; for the
    /// target, known plus unknown classes (open), the lower half (partial),
    /// or all known classes.
    pub fn resolve(&self, known: usize, total_target: usize, seed: u64) -> Result<ScenarioSpec> {
        let source = if self.source_classes.is_empty() {
            (0..known).collect()
        } else {
            self.source_classes.clone()
        };
        let target = if !self.target_classes.is_empty() {
            self.target_classes.clone()
        } else {
            match self.setting {
                Setting::Open => (0..total_target).collect(),
                Setting::Partial => (0..(source.len() / 2).max(1)).map(|i| source[i]).collect(),
                _ => source.clone(),
            }
        };
        let spec = ScenarioSpec {
            setting: self.setting,
            source_classes: source,
            target_classes: target,
            split: (self.split_train, self.split_test),
            oodg_levels: self.oodg_levels.clone(),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    /// Source checkpoint to load instead of training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            checkpoint: None,
        }
    }
}

/// Optional continual run over synthetic domains at increasing rotations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinualConfig {
    /// One domain per angle (radians); empty disables the protocol.
    pub rotations: Vec<f64>,
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::Parse {
            path: origin.to_string(),
            line,
            message: e.message().to_string(),
        }
    })
}

fn check_version(found: u32, supported: u32, origin: &str) -> Result<()> {
    if found != supported {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 1,
            message: format!("unsupported format_version {found} (expected {supported})"),
        });
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text, origin)?;
        check_version(cfg.format_version, CONFIG_VERSION, origin)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        // relative data paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(d) = &cfg.data.descriptor {
            cfg.data.descriptor = Some(base.join(d));
        }
        if let Some(c) = &cfg.model.checkpoint {
            cfg.model.checkpoint = Some(base.join(c));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.adapt.validate()?;
        if self.method.is_empty() || self.method.contains(['\t', '\n']) {
            return Err(Error::Validation(format!("method label {:?} not usable", self.method)));
        }
        if !(0.0..=1.0).contains(&self.scenario.open_threshold) {
            return Err(Error::Validation(format!(
                "open_threshold {} outside [0, 1]",
                self.scenario.open_threshold
            )));
        }
        Ok(())
    }

    /// Pushes the run seed into every component that consumes one.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.source.seed = seed;
        self.adapt.seed = seed;
        self
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Written by `synth`: where the manifests are, which scenario they form,
/// and the class prototypes that parameterize the toy vision-language encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDescriptor {
    pub format_version: u32,
    pub seed: u64,
    pub source_manifest: PathBuf,
    pub target_manifest: PathBuf,
    /// Source label space.
    pub class_names: Vec<String>,
    /// One row per source class, in input space.
    pub vil_prototypes: Vec<Vec<f64>>,
    pub scenario: ScenarioSpec,
    pub synthetic: Option<SyntheticDomainSpec>,
}

impl ScenarioDescriptor {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("descriptor serializes")
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let d: Self = parse_toml(text, origin)?;
        check_version(d.format_version, DESCRIPTOR_VERSION, origin)?;
        d.scenario.validate()?;
        if d.vil_prototypes.len() != d.class_names.len() {
            return Err(Error::Validation(format!(
                "{origin}: {} prototypes for {} classes",
                d.vil_prototypes.len(),
                d.class_names.len()
            )));
        }
        Ok(d)
    }

    /// Loads a descriptor; manifest paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut d = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        d.source_manifest = base.join(&d.source_manifest);
        d.target_manifest = base.join(&d.target_manifest);
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::parse(&cfg.to_text(), "cfg").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.adapt.alpha, 0.003);
        assert_eq!(cfg.adapt.sigma_w, 0.4);
        assert_eq!(cfg.adapt.tau, 1.0);
        assert_eq!((cfg.adapt.batch_size, cfg.adapt.epochs), (64, 15));
        assert_eq!(cfg.adapt.momentum, 0.9);
    }

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = RunConfig::parse("format_version = 1\nseed = 4\n[adapt]\nepochs = 3\n", "cfg").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.adapt.epochs, 3);
        assert_eq!(cfg.adapt.batch_size, 64);
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let e = RunConfig::parse("format_version = 1\n[adapt]\nlearning_rate = 1\n", "cfg").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = RunConfig::parse("format_version = 2\n", "cfg").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
    }

    #[test]
    fn scenario_defaults_follow_setting() {
        let mut sc = ScenarioConfig { setting: Setting::Partial, ..Default::default() };
        assert_eq!(sc.resolve(5, 5, 0).unwrap().target_classes, vec![0, 1]);
        sc.setting = Setting::Open;
        assert_eq!(sc.resolve(5, 7, 0).unwrap().target_classes.len(), 7);
        assert!(sc.resolve(5, 5, 0).is_err());
    }
}
