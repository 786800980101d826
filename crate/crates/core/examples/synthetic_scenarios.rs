//! One synthetic shift, five adaptation settings, one score table.

use causal_sfda::data::{build_scenario, generate_domain_pair, AuditedSet, ScenarioSpec, Setting, SyntheticDomainSpec};
use causal_sfda::evaluation::{evaluate_scenario, format_scores, EvalOptions, ResultsFile};
use causal_sfda::models::{TargetModel, ToyVilConfig, ToyVilEncoder};
use causal_sfda::trainer::{adapt, train_source, AdaptationConfig, SourceTrainConfig};

fn main() -> causal_sfda::Result<()> {
    let spec = SyntheticDomainSpec { open_classes: 2, ..Default::default() };
    let pair = generate_domain_pair(&spec, 0)?;
    let known: Vec<usize> = (0..spec.classes).collect();
    let everything: Vec<usize> = (0..spec.classes + spec.open_classes).collect();
    let enc = ToyVilEncoder::from_prototypes(
        &pair.target_means.select_rows(&known),
        pair.source.class_names.clone(),
        ToyVilConfig::default(),
        0,
    )?;

    let mut results = ResultsFile::default();
    for setting in Setting::ALL {
        let scenario_spec = match setting {
            Setting::Open => ScenarioSpec::with_classes(setting, known.clone(), everything.clone()),
            Setting::Partial => ScenarioSpec::with_classes(setting, known.clone(), vec![0, 1, 2]),
            _ => ScenarioSpec::shared(setting, spec.classes),
        };
        let scenario = build_scenario(&pair.source, &pair.target, &scenario_spec)?;
        let init = TargetModel::new(spec.dim, &[64], spec.classes, 0)?;
        let source_model = train_source(&init, &scenario.source_train, &SourceTrainConfig::default())?;
        let history = adapt(&source_model, &AuditedSet::new(scenario.target()), &enc, &AdaptationConfig::default())?;
        println!(
            "{setting:<12} source {:>5} samples, target {:>5} samples",
            scenario.source_train.len(),
            scenario.target().len()
        );
        let opts = EvalOptions::default();
        for (method, model) in [("source", &source_model), ("adapted", &history.final_model)] {
            for (label, score) in evaluate_scenario(model, &scenario, opts)?.records(setting) {
                results.push(method, &label, score);
            }
        }
    }
    print!("\n{}", format_scores(&results.table()?));
    Ok(())
}
