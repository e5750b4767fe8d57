//! Weight-and-activation 8-bit mixture of formats chosen on model-output
//! error, evaluated against uniform INT8 and FP8 on held-out inputs.
//!
//! cargo run --release --example mofq_w8a8

use mofq::cli::{collect_activations, evaluate, generate, GenConfig};
use mofq::metrics::ErrorMetricKind;
use mofq::qmodel::QuantizedModel;
use mofq::selector::{mofq_select, quantize_uniform, Selection, SelectionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = GenConfig { seed: 803, width: 32, batch: 64, calib_batches: 8, ..Default::default() };
    let (model, calib_inputs, eval_inputs) = generate(&cfg)?;
    let calib = collect_activations(&model, &calib_inputs)?;
    let report = |label: &str, sel: Selection| -> Result<(), Box<dyn std::error::Error>> {
        let qm = QuantizedModel::from_configs(&model, &sel.configs, false)?;
        let (mse, nsr) = evaluate(&model, &qm, &eval_inputs)?;
        println!("{label:<6} mse {mse:.4e}  nsr {nsr:.4e}  fp {:>5.1}%", 100.0 * qm.fp_fraction());
        Ok(())
    };
    let metric = ErrorMetricKind::ModelOutputMse;
    report("int8", quantize_uniform(&model, &calib, "int8".parse()?, false, metric)?)?;
    report("fp8", quantize_uniform(&model, &calib, "fp8_e4m3".parse()?, false, metric)?)?;
    let sel_cfg = SelectionConfig::new(false, SelectionConfig::default_candidates(8)?)?;
    let sel = mofq_select(&model, &calib, &sel_cfg)?;
    println!("{}", sel.report);
    report("mofq8", sel)?;
    Ok(())
}
