//! Software-emulated low-bit quantization with layer-wise format selection.
//!
//! The crate emulates INT and minifloat formats bit-exactly ([`formats`]),
//! quantizes tensors with max-abs scales and round-to-nearest ([`quant`]),
//! measures quantization error ([`metrics`]), simulates sequential linear
//! models in full precision or with fake quantization ([`simgraph`]), and
//! picks the lowest-error format per layer from equal-width INT and FP
//! candidates ([`selector`]). Models, calibration data and quantized models
//! are stored as directory bundles ([`tensorio`]).
//!
//! ```
//! use mofq::formats::NumberFormat;
//!
//! let fp4: NumberFormat = "fp4_e2m1".parse().unwrap();
//! assert_eq!(fp4.max_finite(), 6.0);
//! let code = fp4.encode(2.5).unwrap();
//! assert_eq!(fp4.decode(code).finite(), Some(2.0));
//! ```

pub mod cli;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod qmodel;
pub mod quant;
pub mod selector;
pub mod simgraph;
pub mod tensor;
pub mod tensorio;

pub use error::{Error, Result};
pub use formats::{Code, Decoded, NumberFormat};
pub use tensor::Tensor;
