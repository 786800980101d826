//! Source-free domain adaptation by alternating discovery of external and
//! internal causal factors.
//!
//! A frozen vision-language encoder with a learnable prompt context supplies
//! pseudo-labels (phase 1, a self-supervised information bottleneck between
//! its logits and the target model's logits); the target model is then
//! trained against them with an information-maximization objective (phase 2).
//!
//! Module map:
//!
//! | module | contents |
//! |---|---|
//! | [`mi_oracle`] | exact discrete entropy / mutual information and data-processing checks |
//! | [`objectives`] | VMI, PMI, reweighting, UN, SCE losses with analytic gradients |
//! | [`gradcheck`] | finite-difference verification of every loss gradient |
//! | [`models`] | prompt context, vision-language encoder trait, toy encoder, target MLP |
//! | [`data`] | synthetic domain shift, SFDA scenarios, corruption, manifests |
//! | [`trainer`] | source training and the alternating adaptation loop |
//! | [`evaluation`] | accuracy, harmonic mean, unification metrics, protocols |
//! | [`config`] / [`cli`] | run configuration and the `causal-sfda` command line |

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod matrix;
pub mod mi_oracle;
pub mod models;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
