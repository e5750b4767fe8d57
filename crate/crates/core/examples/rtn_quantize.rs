//! Round-to-nearest quantization of a weight matrix with per-channel
//! max-abs scales, comparing INT and FP grids.
//!
//! cargo run --example rtn_quantize

use mofq::metrics::mse;
use mofq::quant::{compute_scales, dequantize, quantize, QuantScheme};
use mofq::Tensor;

fn main() -> mofq::Result<()> {
    let w = Tensor::from_rows(&[&[0.9, -0.05, 0.02, -0.4], &[12.0, 0.3, -0.1, 1.5], &[0.0, 0.0, 0.0, 0.0]])?;
    for name in ["int4", "fp4_e2m1", "int8", "fp8_e4m3"] {
        let scheme = QuantScheme::per_channel(name.parse()?, 0);
        let scales = compute_scales(&w, &scheme)?;
        let q = quantize(&w, &scheme, &scales)?;
        let back = dequantize(&q);
        println!("{name}: scales {:?}", scales.as_slice());
        println!("  codes {:?}", q.codes().iter().map(|c| c.0).collect::<Vec<_>>());
        println!("  dequantized {:?}", back.data());
        println!("  mse {:e}", mse(&w, &back)?);
    }
    Ok(())
}
