//! Cross-setting unification metrics from a table of per-setting scores.

use causal_sfda::evaluation::{format_unification, harmonic_mean, unification_csv, unification_metrics, SettingScoreTable};

fn main() -> causal_sfda::Result<()> {
    let table = SettingScoreTable::from_rows(
        &["closed", "generalized", "open", "partial", "sf-oodg"],
        &[
            ("DIFO", &[84.5, 80.5, 75.9, 85.6, 47.2]),
            ("ProDe", &[86.8, 84.8, 82.6, 84.2, 50.6]),
            ("CausalDA", &[85.6, 85.2, 84.0, 87.1, 53.7]),
        ],
    )?;
    let rows = unification_metrics(&table)?;
    print!("{}", format_unification(&table, &rows));
    print!("\n{}", unification_csv(&table, &rows));
    println!("\nharmonic mean of 98.1 (source) and 59.2 (target): {:.1}", harmonic_mean(98.1, 59.2));
    Ok(())
}
