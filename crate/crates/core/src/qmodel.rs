//! Deployable form of a quantized model: integer codes plus scales per layer.

use crate::error::{Error, Result};
use crate::formats::NumberFormat;
use crate::quant::{dequantize, quantize, QuantizedTensor};
use crate::simgraph::{
    ActivationQuant, ForwardTrace, LayerQuantConfig, LinearLayer, ModelGraph, Nonlinearity, PreparedModel,
    TensorQuant,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum QuantizedWeight {
    Codes(QuantizedTensor),
    /// Layer left in full precision.
    Full(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub name: String,
    pub nonlinearity: Nonlinearity,
    pub weight: QuantizedWeight,
    pub activation: Option<TensorQuant>,
}

impl QuantizedLayer {
    pub fn format(&self) -> Option<NumberFormat> {
        match &self.weight {
            QuantizedWeight::Codes(q) => Some(q.scheme().format),
            QuantizedWeight::Full(_) => self.activation.as_ref().map(|a| a.scheme.format),
        }
    }

    fn weight_shape(&self) -> &[usize] {
        match &self.weight {
            QuantizedWeight::Codes(q) => q.shape(),
            QuantizedWeight::Full(t) => t.shape(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub w_only: bool,
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedModel {
    /// Encodes each layer's weight under its config.
    pub fn from_configs(model: &ModelGraph, configs: &[LayerQuantConfig], w_only: bool) -> Result<Self> {
        if configs.len() != model.len() {
            return Err(Error::InvalidArgument(format!(
                "{} layer configs for a {}-layer model",
                configs.len(),
                model.len()
            )));
        }
        let layers = model
            .layers()
            .iter()
            .zip(configs)
            .map(|(layer, cfg)| {
                let weight = match &cfg.weight {
                    Some(wq) => QuantizedWeight::Codes(quantize(layer.weight(), &wq.scheme, &wq.scales)?),
                    None => QuantizedWeight::Full(layer.weight().clone()),
                };
                let activation = match &cfg.activation {
                    None => None,
                    Some(ActivationQuant { scheme, scales: Some(scales) }) => {
                        Some(TensorQuant { scheme: *scheme, scales: scales.clone() })
                    }
                    Some(ActivationQuant { scales: None, .. }) => return Err(Error::NotCalibrated(layer.name().into())),
                };
                Ok(QuantizedLayer { name: layer.name().into(), nonlinearity: layer.nonlinearity(), weight, activation })
            })
            .collect::<Result<_>>()?;
        Ok(Self { w_only, layers })
    }

    /// Model with dequantized weights plus the activation configs that go
    /// with it.
    pub fn dequantized(&self) -> Result<(ModelGraph, Vec<LayerQuantConfig>)> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut configs = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let w = match &l.weight {
                QuantizedWeight::Codes(q) => dequantize(q),
                QuantizedWeight::Full(t) => t.clone(),
            };
            layers.push(LinearLayer::new(l.name.clone(), w, l.nonlinearity)?);
            configs.push(LayerQuantConfig {
                weight: None,
                activation: l
                    .activation
                    .as_ref()
                    .map(|a| ActivationQuant { scheme: a.scheme, scales: Some(a.scales.clone()) }),
            });
        }
        Ok((ModelGraph::new(layers)?, configs))
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardTrace> {
        let (graph, configs) = self.dequantized()?;
        PreparedModel::new(&graph, &configs)?.run(x)
    }

    /// Fails unless layer names and weight shapes match `model`.
    pub fn check_matches(&self, model: &ModelGraph) -> Result<()> {
        if self.layers.len() != model.len() {
            return Err(Error::ShapeMismatch(format!(
                "quantized model has {} layers, reference has {}",
                self.layers.len(),
                model.len()
            )));
        }
        for (q, l) in self.layers.iter().zip(model.layers()) {
            if q.name != l.name() || q.weight_shape() != l.weight().shape() {
                return Err(Error::ShapeMismatch(format!(
                    "quantized layer {} {:?} does not match reference layer {} {:?}",
                    q.name,
                    q.weight_shape(),
                    l.name(),
                    l.weight().shape()
                )));
            }
        }
        Ok(())
    }

    pub fn fp_fraction(&self) -> f64 {
        let fp = self.layers.iter().filter(|l| l.format().is_some_and(|f| f.is_fp())).count();
        fp as f64 / self.layers.len() as f64
    }
}
