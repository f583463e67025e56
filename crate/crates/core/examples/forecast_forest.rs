//! Train a regression forest to forecast the ESS-raise-to-DPV ratio from
//! weather and market features, then save and reload the model.
//!
//!     cargo run --release --example forecast_forest

use gridsec::forecast::{
    build_samples, evaluate, split_dataset, train_forest, FeatureSet, ForestModel, ForestParams, Target,
    DEFAULT_TRAIN_FRACTION,
};
use gridsec::freqsim::SimConfig;
use gridsec::market_data::{filter_min_dpv, DEFAULT_DPV_FLOOR_MW};
use gridsec::synthetic::demo_year;

fn main() -> gridsec::Result<()> {
    let seed = 7;
    let records = filter_min_dpv(&demo_year(seed).joined(), DEFAULT_DPV_FLOOR_MW);
    let config = SimConfig::default();
    let params = ForestParams { n_trees: 60, ..ForestParams::default() };

    for target in [Target::EssRaiseDpv, Target::RocofControl] {
        let samples = build_samples(&records, FeatureSet::WEATHER_MARKET, target, &config)?;
        let (train, test) = split_dataset(&samples, DEFAULT_TRAIN_FRACTION, seed)?;
        let model = train_forest(&train, &params, seed)?;
        let eval = evaluate(&model, &test)?;
        println!(
            "\n{}: {} train / {} test, R2 = {:.3}, MAE = {:.4}",
            target.name(),
            train.len(),
            test.len(),
            eval.r_squared.unwrap_or(f64::NAN),
            eval.mean_abs_error
        );
        let mut ranked: Vec<_> = model.feature_names.iter().zip(&model.importance).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(a.1));
        for (name, share) in ranked {
            println!("  {name:<22} {:>6.1}%", 100.0 * share);
        }

        let mut saved = Vec::new();
        model.write_to(&mut saved)?;
        let reloaded = ForestModel::read_from(saved.as_slice())?;
        assert_eq!(reloaded.predict(&test[0].features)?, model.predict(&test[0].features)?);
        println!("  model file: {} bytes, reload reproduces predictions", saved.len());
    }
    Ok(())
}
