//! The detector's default model, trained on labelled window rows from a
//! seeded collection run of the simulator.

use super::{raw_features, ControllerMode, DetectError, DetectorConfig, FasaController, FlowRow};
use crate::anfis::{fit, train::init_for, AnfisModel, TrainConfig, TrainReport};
use crate::preprocess::{fit_scaler, Dataset};
use crate::traffic::{run_scenario, ScenarioConfig};

/// Window features the default model uses, in input order.
pub const SIM_FEATURES: [&str; 3] = ["syn_ratio", "ack_ratio", "log_src_ip_fanout"];

/// Collection run used for training: a different seed and a weaker flood
/// than the default evaluation scenario.
pub fn training_scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        duration_s: 90.0,
        attack_start_s: 40.0,
        attack_rate_pps: 250.0,
        seed,
        ..ScenarioConfig::default()
    }
}

/// Runs `scenario` with a forwarding-only controller and labels every window
/// row from ground truth.
pub fn collect_training_rows(
    scenario: &ScenarioConfig,
) -> Result<(Vec<FlowRow>, Vec<u8>), DetectError> {
    let detector = DetectorConfig {
        collection_interval_s: scenario.collection_interval_s,
        ..DetectorConfig::default()
    };
    let placeholder = AnfisModel::init_grid(1, 2, &[(0.0, 1.0)])?;
    let mut ctrl = FasaController::new(placeholder, detector, ControllerMode::CollectOnly)?;
    let outcome = run_scenario(scenario, scenario.topology()?, &mut ctrl)?;
    let rows: Vec<FlowRow> = ctrl.collected.into_iter().flat_map(|w| w.rows).collect();
    let labels = rows
        .iter()
        .map(|r| outcome.truth.label(r.first_packet).unwrap_or(0))
        .collect();
    Ok((rows, labels))
}

/// Fits a min-max scaler and an ANFIS model on the named features of `rows`.
pub fn train_detector(
    rows: &[FlowRow],
    labels: &[u8],
    features: &[String],
    config: &TrainConfig,
) -> Result<(AnfisModel, TrainReport), DetectError> {
    let raw = rows
        .iter()
        .map(|r| raw_features(r, features))
        .collect::<Result<Vec<_>, _>>()?;
    let ds = Dataset::new(features.to_vec(), raw, labels.to_vec());
    let scaler = fit_scaler(&ds);
    let x: Vec<Vec<f64>> = ds.rows.iter().map(|r| scaler.transform_row(r)).collect();
    let mut model = init_for(&x, config)?;
    let report = fit(&mut model, &x, labels, config)?;
    model.set_feature_names(features.to_vec())?;
    model.set_scaler(Some(scaler))?;
    Ok((model, report))
}

/// Model shipped with the detector, rebuilt deterministically from `seed`.
pub fn default_model(seed: u64) -> Result<AnfisModel, DetectError> {
    let (rows, labels) = collect_training_rows(&training_scenario(seed))?;
    let features: Vec<String> = SIM_FEATURES.iter().map(|s| s.to_string()).collect();
    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let (model, report) = train_detector(&rows, &labels, &features, &config)?;
    log::info!(
        "default detector trained on {} rows ({} attack), final loss {:.4}",
        rows.len(),
        labels.iter().filter(|&&l| l == 1).count(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(model)
}
