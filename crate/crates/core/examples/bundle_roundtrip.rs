//! Saving and loading model, calibration and quantized bundles.
//!
//! cargo run --example bundle_roundtrip

use mofq::cli::{collect_activations, generate, GenConfig};
use mofq::qmodel::QuantizedModel;
use mofq::selector::{mofq_select, SelectionConfig};
use mofq::tensorio::{load_calib, load_model, load_quantized, save_bundle, Bundle};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("mofq-bundle-example-{}", std::process::id()));
    let (model, calib_inputs, _) = generate(&GenConfig { layers: 3, width: 8, ..Default::default() })?;
    let calib = collect_activations(&model, &calib_inputs)?;

    save_bundle(&Bundle::Model(model.clone()), &dir.join("model"))?;
    save_bundle(&Bundle::Calib(calib.clone()), &dir.join("calib"))?;
    assert_eq!(load_model(&dir.join("model"))?, model);
    assert_eq!(load_calib(&dir.join("calib"))?, calib);

    let cfg = SelectionConfig::new(false, SelectionConfig::default_candidates(8)?)?;
    let sel = mofq_select(&model, &calib, &cfg)?;
    let qm = QuantizedModel::from_configs(&model, &sel.configs, false)?;
    save_bundle(&Bundle::Quantized(qm.clone()), &dir.join("quantized"))?;
    assert_eq!(load_quantized(&dir.join("quantized"))?, qm);

    println!("{}", std::fs::read_to_string(dir.join("quantized/manifest.json"))?);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
