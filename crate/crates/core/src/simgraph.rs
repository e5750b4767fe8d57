//! Sequential linear-layer model with reference and fake-quantized forward
//! passes.
//!
//! Each layer computes `A_out = act(A_in · Wᵀ)` for `A_in: [batch, in]` and
//! `W: [out, in]`. Products are accumulated in `f64` and rounded to `f32`
//! once per output element.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ErrorMeasure;
use crate::quant::{fake_quant, QuantScheme, ScaleSet};
use crate::tensor::Tensor;

/// `sqrt(2 / pi)` for the tanh form of GELU.
const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    #[default]
    None,
    Relu,
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`
    Gelu,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::None => x,
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Gelu => 0.5 * x * (1.0 + (GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh()),
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Nonlinearity::None => "none",
            Nonlinearity::Relu => "relu",
            Nonlinearity::Gelu => "gelu",
        })
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "relu" => Ok(Self::Relu),
            "gelu" => Ok(Self::Gelu),
            other => Err(Error::InvalidArgument(format!("unknown nonlinearity `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    name: String,
    weight: Tensor,
    nonlinearity: Nonlinearity,
}

impl LinearLayer {
    pub fn new(name: impl Into<String>, weight: Tensor, nonlinearity: Nonlinearity) -> Result<Self> {
        weight.dims2()?;
        Ok(Self { name: name.into(), weight, nonlinearity })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    layers: Vec<LinearLayer>,
}

impl ModelGraph {
    /// Fails unless every layer's input width equals the previous output width.
    pub fn new(layers: Vec<LinearLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::LayerChain {
                    prev: pair[0].name.clone(),
                    next: pair[1].name.clone(),
                    out_dim: pair[0].out_dim(),
                    in_dim: pair[1].in_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }
}

/// A scheme together with the scales it is applied with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorQuant {
    pub scheme: QuantScheme,
    pub scales: ScaleSet,
}

impl TensorQuant {
    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        fake_quant(t, &self.scheme, &self.scales)
    }
}

/// Activation quantization; `scales` is `None` until calibrated.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationQuant {
    pub scheme: QuantScheme,
    pub scales: Option<ScaleSet>,
}

/// How one layer runs. Both parts absent means the layer is unquantized.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerQuantConfig {
    pub weight: Option<TensorQuant>,
    pub activation: Option<ActivationQuant>,
}

impl LayerQuantConfig {
    pub fn unquantized() -> Self {
        Self::default()
    }

    pub fn weight_only(weight: TensorQuant) -> Self {
        Self { weight: Some(weight), activation: None }
    }

    /// Weight and input activation in one format.
    pub fn weight_activation(weight: TensorQuant, activation: TensorQuant) -> Result<Self> {
        if weight.scheme.format != activation.scheme.format {
            return Err(Error::InvalidScheme(format!(
                "weight format {} and activation format {} differ within a layer",
                weight.scheme.format, activation.scheme.format
            )));
        }
        Ok(Self {
            weight: Some(weight),
            activation: Some(ActivationQuant { scheme: activation.scheme, scales: Some(activation.scales) }),
        })
    }

    pub fn is_unquantized(&self) -> bool {
        self.weight.is_none() && self.activation.is_none()
    }
}

/// Final output and every layer's output, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub layer_outputs: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        self.layer_outputs.last().expect("model has at least one layer")
    }

    pub fn into_output(mut self) -> Tensor {
        self.layer_outputs.pop().expect("model has at least one layer")
    }
}

/// `act(x · wᵀ)`.
pub fn linear(x: &Tensor, weight: &Tensor, nonlinearity: Nonlinearity) -> Result<Tensor> {
    let (batch, in_dim) = x.dims2()?;
    let (out_dim, w_in) = weight.dims2()?;
    if in_dim != w_in {
        return Err(Error::ShapeMismatch(format!(
            "input width {in_dim} does not match weight shape {:?}",
            weight.shape()
        )));
    }
    let mut out = Vec::with_capacity(batch * out_dim);
    for b in 0..batch {
        let row = x.row(b);
        for o in 0..out_dim {
            let acc = row
                .iter()
                .zip(weight.row(o))
                .fold(0.0f64, |acc, (&a, &w)| acc + a as f64 * w as f64);
            out.push(nonlinearity.apply(acc) as f32);
        }
    }
    Tensor::new(vec![batch, out_dim], out)
}

/// A model with its weights already fake-quantized, ready for repeated runs.
pub struct PreparedModel<'a> {
    layers: Vec<PreparedLayer<'a>>,
}

struct PreparedLayer<'a> {
    name: &'a str,
    weight: Cow<'a, Tensor>,
    nonlinearity: Nonlinearity,
    activation: Option<TensorQuant>,
}

impl<'a> PreparedModel<'a> {
    pub fn new(model: &'a ModelGraph, configs: &[LayerQuantConfig]) -> Result<Self> {
        if configs.len() != model.len() {
            return Err(Error::InvalidArgument(format!(
                "{} layer configs for a {}-layer model",
                configs.len(),
                model.len()
            )));
        }
        let layers = model
            .layers
            .iter()
            .zip(configs)
            .map(|(layer, cfg)| {
                let weight = match &cfg.weight {
                    Some(wq) => Cow::Owned(wq.apply(&layer.weight)?),
                    None => Cow::Borrowed(&layer.weight),
                };
                let activation = match &cfg.activation {
                    None => None,
                    Some(ActivationQuant { scheme, scales: Some(scales) }) => {
                        Some(TensorQuant { scheme: *scheme, scales: scales.clone() })
                    }
                    Some(ActivationQuant { scales: None, .. }) => {
                        return Err(Error::NotCalibrated(layer.name.clone()))
                    }
                };
                Ok(PreparedLayer { name: &layer.name, weight, nonlinearity: layer.nonlinearity, activation })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn run(&self, x: &Tensor) -> Result<ForwardTrace> {
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = outputs.last().unwrap_or(x);
            let input = match &layer.activation {
                Some(aq) => Cow::Owned(aq.apply(input)?),
                None => Cow::Borrowed(input),
            };
            let out = linear(&input, &layer.weight, layer.nonlinearity)
                .map_err(|e| annotate(layer.name, e))?;
            outputs.push(out);
        }
        Ok(ForwardTrace { layer_outputs: outputs })
    }
}

fn annotate(layer: &str, e: Error) -> Error {
    match e {
        Error::ShapeMismatch(msg) => Error::ShapeMismatch(format!("layer {layer}: {msg}")),
        other => other,
    }
}

/// Full-precision forward pass.
pub fn forward_fp(model: &ModelGraph, x: &Tensor) -> Result<ForwardTrace> {
    let configs = vec![LayerQuantConfig::unquantized(); model.len()];
    forward_quant(model, &configs, x)
}

/// Forward pass with per-layer fake quantization of weights and inputs.
pub fn forward_quant(model: &ModelGraph, configs: &[LayerQuantConfig], x: &Tensor) -> Result<ForwardTrace> {
    PreparedModel::new(model, configs)?.run(x)
}

/// Error of one layer's output, quantized against full precision, averaged
/// with equal weight over the given input batches.
pub fn layer_output_error(
    layer: &LinearLayer,
    weight: Option<&TensorQuant>,
    activation: Option<&TensorQuant>,
    batches: &[Tensor],
    measure: ErrorMeasure,
) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::EmptyBatches);
    }
    let qweight = match weight {
        Some(wq) => Cow::Owned(wq.apply(&layer.weight)?),
        None => Cow::Borrowed(&layer.weight),
    };
    let mut total = 0.0;
    for batch in batches {
        let reference = linear(batch, &layer.weight, layer.nonlinearity)?;
        let input = match activation {
            Some(aq) => Cow::Owned(aq.apply(batch)?),
            None => Cow::Borrowed(batch),
        };
        let quantized = linear(&input, &qweight, layer.nonlinearity)?;
        total += measure.apply(&reference, &quantized)?;
    }
    Ok(total / batches.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::NumberFormat;
    use crate::quant::compute_scales;

    fn m(rows: &[&[f32]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn single(w: Tensor, nl: Nonlinearity) -> ModelGraph {
        ModelGraph::new(vec![LinearLayer::new("l0", w, nl).unwrap()]).unwrap()
    }

    #[test]
    fn identity_layer() {
        let model = single(m(&[&[1.0, 0.0], &[0.0, 1.0]]), Nonlinearity::None);
        let out = forward_fp(&model, &m(&[&[3.0, 4.0]])).unwrap();
        assert_eq!(out.output().data(), &[3.0, 4.0]);
    }

    #[test]
    fn relu_clamps() {
        let model = single(m(&[&[-1.0, 0.0], &[0.0, -1.0]]), Nonlinearity::Relu);
        let out = forward_fp(&model, &m(&[&[1.0, 1.0]])).unwrap();
        assert_eq!(out.output().data(), &[0.0, 0.0]);
    }

    #[test]
    fn gelu_reference_points() {
        let g = Nonlinearity::Gelu;
        assert_eq!(g.apply(0.0), 0.0);
        assert!((g.apply(1.0) - 0.841_191_990_608_276_8).abs() < 1e-12);
        assert!((g.apply(-1.0) + 0.158_808_009_391_723_2).abs() < 1e-12);
    }

    #[test]
    fn chain_mismatch_names_both_layers() {
        let a = LinearLayer::new("a", Tensor::zeros(vec![3, 2]).unwrap(), Nonlinearity::None).unwrap();
        let b = LinearLayer::new("b", Tensor::zeros(vec![2, 4]).unwrap(), Nonlinearity::None).unwrap();
        match ModelGraph::new(vec![a, b]) {
            Err(Error::LayerChain { prev, next, .. }) => assert_eq!((prev.as_str(), next.as_str()), ("a", "b")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn input_width_mismatch() {
        let model = single(m(&[&[1.0, 0.0]]), Nonlinearity::None);
        assert!(matches!(forward_fp(&model, &m(&[&[1.0, 2.0, 3.0]])), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn uncalibrated_activation_is_an_error() {
        let model = single(m(&[&[1.0]]), Nonlinearity::None);
        let fmt: NumberFormat = "int8".parse().unwrap();
        let cfg = LayerQuantConfig {
            weight: None,
            activation: Some(ActivationQuant { scheme: QuantScheme::per_tensor(fmt), scales: None }),
        };
        assert!(matches!(forward_quant(&model, &[cfg], &m(&[&[1.0]])), Err(Error::NotCalibrated(l)) if l == "l0"));
    }

    #[test]
    fn scalar_int4_weight() {
        let model = single(m(&[&[1.1]]), Nonlinearity::None);
        let fmt: NumberFormat = "int4".parse().unwrap();
        let scheme = QuantScheme::per_channel(fmt, 0);
        let scales = compute_scales(model.layers()[0].weight(), &scheme).unwrap();
        assert_eq!(scales.as_slice(), &[(1.1f32 as f64 / 7.0) as f32]);
        let cfg = LayerQuantConfig::weight_only(TensorQuant { scheme, scales: scales.clone() });
        let out = forward_quant(&model, &[cfg], &m(&[&[1.0]])).unwrap();
        // 1.1 sits exactly on the top grid point, 7 * scale
        let expected = (7.0 * scales.as_slice()[0] as f64) as f32;
        assert_eq!(out.output().data(), &[expected]);
    }

    #[test]
    fn mixed_format_layer_is_rejected() {
        let s = ScaleSet::new(vec![1.0]).unwrap();
        let w = TensorQuant { scheme: QuantScheme::per_channel("int8".parse().unwrap(), 0), scales: s.clone() };
        let a = TensorQuant { scheme: QuantScheme::per_tensor("fp8_e4m3".parse().unwrap()), scales: s };
        assert!(LayerQuantConfig::weight_activation(w, a).is_err());
    }

    #[test]
    fn unquantized_layer_error_is_zero() {
        let layer = LinearLayer::new("l", m(&[&[0.3, -0.2]]), Nonlinearity::Gelu).unwrap();
        let batch = m(&[&[1.0, 2.0], &[-0.5, 0.25]]);
        assert_eq!(layer_output_error(&layer, None, None, &[batch], ErrorMeasure::Mse).unwrap(), 0.0);
        assert!(matches!(layer_output_error(&layer, None, None, &[], ErrorMeasure::Mse), Err(Error::EmptyBatches)));
    }
}
