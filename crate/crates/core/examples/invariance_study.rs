//! Accuracy of the source and adapted models as the target is corrupted
//! with increasing Gaussian noise.

use causal_sfda::data::{generate_domain_pair, SyntheticDomainSpec};
use causal_sfda::evaluation::{invariance_study, DEFAULT_INVARIANCE_LEVELS};
use causal_sfda::models::{TargetModel, ToyVilConfig, ToyVilEncoder};
use causal_sfda::trainer::{train_source, AdaptationConfig, SourceTrainConfig};

fn main() -> causal_sfda::Result<()> {
    let spec = SyntheticDomainSpec { dim: 64, rotation: 0.3, ..Default::default() };
    let pair = generate_domain_pair(&spec, 0)?;
    let init = TargetModel::new(spec.dim, &[64], spec.classes, 0)?;
    let source_model = train_source(&init, &pair.source, &SourceTrainConfig::default())?;
    let enc = ToyVilEncoder::from_prototypes(&pair.target_means, pair.target.class_names.clone(), ToyVilConfig::default(), 0)?;
    let report = invariance_study(&source_model, &pair.target, &enc, &AdaptationConfig::default(), &DEFAULT_INVARIANCE_LEVELS, 5)?;
    print!("{}", report.to_csv());
    println!("drop from k=8 to k=20: source {:.1}, adapted {:.1}", report.source_drop(), report.adapted_drop());
    Ok(())
}
