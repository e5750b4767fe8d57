//! Every code of the FP4 variants, and how a few values round in each format.
//!
//! cargo run --example formats_table

use mofq::NumberFormat;

fn main() -> mofq::Result<()> {
    let realloc: NumberFormat = "fp4_e2m1".parse()?;
    let ieee: NumberFormat = "fp4_e2m1_ieee".parse()?;
    println!("code  bits  {:>10}  {:>14}", realloc.name(), ieee.name());
    for ((code, a), (_, b)) in realloc.enumerate_values().into_iter().zip(ieee.enumerate_values()) {
        println!("{:>4}  {:04b}  {:>10}  {:>14}", code.0, code.0, a.to_string(), b.to_string());
    }

    println!();
    let formats: Vec<NumberFormat> =
        ["int4", "fp4_e2m1", "int8", "fp8_e4m3", "fp8_e5m2"].iter().map(|n| n.parse()).collect::<Result<_, _>>()?;
    print!("{:>8}", "x");
    for f in &formats {
        print!("{:>12}", f.name());
    }
    println!();
    for x in [0.26, 2.5, 5.0, 50.8, 100.0, 464.0] {
        print!("{x:>8}");
        for f in &formats {
            print!("{:>12}", f.decode(f.encode(x)?).to_string());
        }
        println!();
    }
    Ok(())
}
