//! Bundle container I/O and synthetic tensor generation.

mod container;
pub mod rng;
mod synth;

pub use container::{
    load_batches, load_bundle, load_calib, load_model, load_quantized, save_bundle, write_atomic, BatchSet, Bundle,
    CalibBundle, MAGIC, MANIFEST, VERSION,
};
pub use synth::{gen_synthetic, DistSpec};
