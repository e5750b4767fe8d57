//! Quantization-error metrics.
//!
//! Sums are accumulated in `f64` with Neumaier compensation so results do
//! not depend on accumulation order beyond the last ulp.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which quantity the format selector minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetricKind {
    /// MSE of the quantized tensors against the originals.
    #[serde(alias = "tensor")]
    TensorMse,
    /// MSE of one layer's output with only that layer quantized.
    #[serde(alias = "layer")]
    LayerOutputMse,
    /// MSE of the final model output.
    #[serde(alias = "model")]
    ModelOutputMse,
}

impl fmt::Display for ErrorMetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorMetricKind::TensorMse => "tensor",
            ErrorMetricKind::LayerOutputMse => "layer",
            ErrorMetricKind::ModelOutputMse => "model",
        })
    }
}

impl FromStr for ErrorMetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tensor" | "tensor_mse" => Ok(Self::TensorMse),
            "layer" | "layer_output_mse" => Ok(Self::LayerOutputMse),
            "model" | "model_output_mse" => Ok(Self::ModelOutputMse),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}` (tensor|layer|model)"))),
        }
    }
}

/// Reduction applied to a (reference, quantized) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMeasure {
    Mse,
    Nsr,
}

impl ErrorMeasure {
    pub fn apply(self, reference: &Tensor, noisy: &Tensor) -> Result<f64> {
        match self {
            ErrorMeasure::Mse => mse(reference, noisy),
            ErrorMeasure::Nsr => nsr(reference, noisy),
        }
    }
}

#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.c
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sum_sq_diff(a: &Tensor, b: &Tensor) -> f64 {
    let mut acc = CompensatedSum::default();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        acc.add(d * d);
    }
    acc.total()
}

/// Mean squared elementwise difference.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b)?;
    Ok(sum_sq_diff(a, b) / a.len() as f64)
}

/// Noise-to-signal power ratio `sum((ref - noisy)^2) / sum(ref^2)`.
///
/// Not symmetric: the reference comes first.
pub fn nsr(reference: &Tensor, noisy: &Tensor) -> Result<f64> {
    same_shape(reference, noisy)?;
    let mut signal = CompensatedSum::default();
    for &x in reference.data() {
        signal.add(x as f64 * x as f64);
    }
    let signal = signal.total();
    if signal == 0.0 {
        return Err(Error::UndefinedNsr);
    }
    Ok(sum_sq_diff(reference, noisy) / signal)
}
