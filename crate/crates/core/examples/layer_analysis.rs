//! Per-layer INT vs FP errors under each error metric, as written by
//! `mofq analyze`.
//!
//! cargo run --example layer_analysis

use mofq::cli::{collect_activations, generate, GenConfig};
use mofq::metrics::ErrorMetricKind;
use mofq::selector::{mofq_select, SelectionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (model, calib_inputs, _) = generate(&GenConfig { seed: 3, ..Default::default() })?;
    let calib = collect_activations(&model, &calib_inputs)?;
    for w_only in [true, false] {
        for metric in [ErrorMetricKind::TensorMse, ErrorMetricKind::LayerOutputMse, ErrorMetricKind::ModelOutputMse] {
            let cfg = SelectionConfig::new(w_only, SelectionConfig::default_candidates(4)?)?.with_metric(metric);
            let sel = mofq_select(&model, &calib, &cfg)?;
            println!("{} / {metric} metric", if w_only { "W4" } else { "W4A4" });
            println!("{}", sel.report);
        }
    }
    Ok(())
}
