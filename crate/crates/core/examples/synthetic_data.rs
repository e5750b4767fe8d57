//! Seeded synthetic tensors: summary statistics per distribution, and the
//! generated model/input set used by the `gen` subcommand.
//!
//! cargo run --example synthetic_data

use mofq::cli::{generate, GenConfig};
use mofq::tensorio::{gen_synthetic, DistSpec};

fn main() -> mofq::Result<()> {
    for spec in ["uniform(-1,1)", "gaussian(0,1)", "student_t(3)", "lognormal(0,2)"] {
        let d: DistSpec = spec.parse()?;
        let t = gen_synthetic(&d, &[10_000], 42)?;
        let mut mags: Vec<f32> = t.data().iter().map(|x| x.abs()).collect();
        mags.sort_by(f32::total_cmp);
        let median = mags[mags.len() / 2];
        println!("{spec:<16} median |x| {median:>9.4}  max |x| {:>11.4}  max/median {:>9.1}", t.max_abs(), t.max_abs() / median);
    }

    let cfg = GenConfig { seed: 1, layers: 3, width: 16, ..Default::default() };
    let (model, calib, eval) = generate(&cfg)?;
    for l in model.layers() {
        println!("{} {:?} {} max |w| {:.3}", l.name(), l.weight().shape(), l.nonlinearity(), l.weight().max_abs());
    }
    println!("{} calibration and {} evaluation batches", calib.batches.len(), eval.batches.len());
    Ok(())
}
