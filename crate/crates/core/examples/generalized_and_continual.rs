//! Generalized adaptation (keep the source, gain the target) and continual
//! adaptation along a sequence of increasingly rotated domains.

use causal_sfda::data::{
    build_scenario, generate_domain_pair, AuditedSet, generate_domain_sequence, ScenarioSpec, Setting, SyntheticDomainSpec,
};
use causal_sfda::evaluation::{continual_protocol, evaluate_scenario, ContinualSetup, EvalOptions};
use causal_sfda::models::{TargetModel, ToyVilConfig, ToyVilEncoder, VilEncoder};
use causal_sfda::trainer::{adapt, train_source, AdaptationConfig, SourceTrainConfig};

fn main() -> causal_sfda::Result<()> {
    // a moderate shift, so the source domain is not simply overwritten
    let spec = SyntheticDomainSpec { rotation: 0.4, ..Default::default() };
    let pair = generate_domain_pair(&spec, 0)?;
    let scenario = build_scenario(&pair.source, &pair.target, &ScenarioSpec::shared(Setting::Generalized, spec.classes))?;
    let init = TargetModel::new(spec.dim, &[64], spec.classes, 0)?;
    let source_model = train_source(&init, &scenario.source_train, &SourceTrainConfig::default())?;
    let enc = ToyVilEncoder::from_prototypes(&pair.target_means, pair.target.class_names.clone(), ToyVilConfig::default(), 0)?;
    let history = adapt(&source_model, &AuditedSet::new(scenario.target()), &enc, &AdaptationConfig::default())?;
    for (name, model) in [("source", &source_model), ("adapted", &history.final_model)] {
        let scores = evaluate_scenario(model, &scenario, EvalOptions::default())?;
        println!("{name:<8} {:?}", scores.records(Setting::Generalized));
    }

    let domains = generate_domain_sequence(&spec, &[0.0, 0.4, 0.8, 1.2], 0)?;
    let names = domains[0].0.class_names.clone();
    let encoder_for = |i: usize| -> causal_sfda::Result<Box<dyn VilEncoder>> {
        Ok(Box::new(ToyVilEncoder::from_prototypes(&domains[i].1, names.clone(), ToyVilConfig::default(), 0)?))
    };
    let sets: Vec<_> = domains.iter().map(|d| d.0.clone()).collect();
    let report = continual_protocol(
        &sets,
        &ContinualSetup {
            initial_model: &init,
            source: &SourceTrainConfig::default(),
            adapt: &AdaptationConfig::default(),
            encoder_for: &encoder_for,
            split_seed: 0,
        },
    )?;
    print!("\n{}", report.to_text());
    Ok(())
}
