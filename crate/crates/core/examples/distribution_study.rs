//! Which grid fits which distribution: INT8 vs FP8 on uniform and
//! heavy-tailed data, and reallocated vs IEEE FP4 on gaussian weights.
//!
//! cargo run --example distribution_study

use mofq::metrics::mse;
use mofq::quant::{compute_scales, fake_quant, QuantScheme};
use mofq::tensorio::{gen_synthetic, DistSpec};
use mofq::NumberFormat;

fn main() -> mofq::Result<()> {
    let formats: Vec<NumberFormat> =
        ["int4", "fp4_e2m1", "fp4_e2m1_ieee", "int8", "fp8_e4m3", "fp8_e5m2"].iter().map(|n| n.parse()).collect::<Result<_, _>>()?;
    print!("{:<16}", "distribution");
    for f in &formats {
        print!("{:>15}", f.name());
    }
    println!();
    for spec in ["uniform(-1,1)", "gaussian(0,1)", "student_t(3)", "lognormal(0,2)"] {
        let t = gen_synthetic(&spec.parse::<DistSpec>()?, &[64, 256], 9)?;
        print!("{spec:<16}");
        for f in &formats {
            let s = QuantScheme::per_tensor(*f);
            let err = mse(&t, &fake_quant(&t, &s, &compute_scales(&t, &s)?)?)?;
            print!("{err:>15.3e}");
        }
        println!();
    }
    Ok(())
}
