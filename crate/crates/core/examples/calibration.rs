//! Activation scales from a stream of batches: the running max equals the
//! max over all batches together, in any order.
//!
//! cargo run --example calibration

use mofq::quant::{calibrate, compute_scales, Calibrator, QuantScheme};
use mofq::tensorio::{gen_synthetic, DistSpec};
use mofq::Tensor;

fn main() -> mofq::Result<()> {
    let dist: DistSpec = "student_t(3)".parse()?;
    let batches: Vec<Tensor> = (0..5).map(|i| gen_synthetic(&dist, &[16, 8], 100 + i)).collect::<Result<_, _>>()?;
    let scheme = QuantScheme::per_tensor("fp8_e4m3".parse()?);

    let mut cal = Calibrator::new(scheme);
    for (i, b) in batches.iter().enumerate() {
        cal.observe(b)?;
        println!("after batch {i}: running max {:?}, scale {:?}", cal.running_max(), cal.scales()?.as_slice());
    }
    let whole = Tensor::concat_rows(&batches)?;
    assert_eq!(cal.scales()?, compute_scales(&whole, &scheme)?);

    let mut reversed = batches.clone();
    reversed.reverse();
    assert_eq!(calibrate(&reversed, &scheme)?, cal.scales()?);

    let per_column = QuantScheme::per_channel("int8".parse()?, 1);
    println!("per-column int8 scales {:?}", calibrate(&batches, &per_column)?.as_slice());
    Ok(())
}
