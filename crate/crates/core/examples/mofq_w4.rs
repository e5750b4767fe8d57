//! Weight-only 4-bit mixture of formats against uniform INT4 and FP4.
//!
//! cargo run --example mofq_w4

use mofq::cli::{collect_activations, evaluate, generate, GenConfig};
use mofq::metrics::ErrorMetricKind;
use mofq::qmodel::QuantizedModel;
use mofq::selector::{mofq_select, quantize_uniform, Selection, SelectionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (model, calib_inputs, eval_inputs) = generate(&GenConfig { seed: 11, ..Default::default() })?;
    let calib = collect_activations(&model, &calib_inputs)?;
    let report = |label: &str, sel: Selection| -> Result<(), Box<dyn std::error::Error>> {
        let qm = QuantizedModel::from_configs(&model, &sel.configs, true)?;
        let (mse, nsr) = evaluate(&model, &qm, &eval_inputs)?;
        println!("{label:<6} mse {mse:.4e}  nsr {nsr:.4e}  fp {:>5.1}%", 100.0 * qm.fp_fraction());
        Ok(())
    };
    let metric = ErrorMetricKind::TensorMse;
    report("int4", quantize_uniform(&model, &calib, "int4".parse()?, true, metric)?)?;
    report("fp4", quantize_uniform(&model, &calib, "fp4_e2m1".parse()?, true, metric)?)?;
    let sel = mofq_select(&model, &calib, &SelectionConfig::new(true, SelectionConfig::default_candidates(4)?)?)?;
    println!("MoFQ4 picks {:?}", sel.formats.iter().map(|f| f.name()).collect::<Vec<_>>());
    report("mofq4", sel)?;
    Ok(())
}
