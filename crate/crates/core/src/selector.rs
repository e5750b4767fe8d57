//! Mixture-of-formats selection: for every layer, quantize with each
//! candidate format of a common bit-width and keep the one with the lowest
//! error under the chosen metric.
//!
//! Candidates are visited in tie-break order and a candidate replaces the
//! incumbent only when its error is strictly lower, so exact ties go to the
//! earlier candidate.
//!
//! Under [`IsolationPolicy::Isolated`] (the default) every candidate is
//! scored with all other layers in full precision. Layers are then
//! independent and are evaluated in parallel. [`IsolationPolicy::Sequential`]
//! keeps already-selected layers quantized while scoring later ones.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::NumberFormat;
use crate::metrics::{mse, ErrorMetricKind};
use crate::quant::{calibrate, compute_scales, QuantScheme};
use crate::simgraph::{layer_output_error, LayerQuantConfig, LinearLayer, ModelGraph, PreparedModel, TensorQuant};
use crate::tensor::Tensor;
use crate::tensorio::CalibBundle;

pub const REPORT_VERSION: u32 = 1;

/// Precedence among candidates when their errors are exactly equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    IntFirst,
    FpFirst,
    /// The order the candidates were given in.
    CandidateOrder,
}

impl FromStr for TieBreak {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int-first" | "int_first" => Ok(Self::IntFirst),
            "fp-first" | "fp_first" => Ok(Self::FpFirst),
            "candidate-order" | "candidate_order" => Ok(Self::CandidateOrder),
            other => Err(Error::InvalidArgument(format!("unknown tie-break `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IsolationPolicy {
    #[default]
    Isolated,
    Sequential,
}

impl FromStr for IsolationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isolated" => Ok(Self::Isolated),
            "sequential" => Ok(Self::Sequential),
            other => Err(Error::InvalidArgument(format!("unknown isolation policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub w_only: bool,
    pub candidates: Vec<NumberFormat>,
    pub bit_width: u32,
    pub metric: ErrorMetricKind,
    #[serde(default)]
    pub tie_break: TieBreak,
    #[serde(default)]
    pub policy: IsolationPolicy,
}

impl SelectionConfig {
    /// Bit-width is taken from the first candidate; the metric defaults to
    /// tensor MSE for weight-only and model-output MSE otherwise.
    pub fn new(w_only: bool, candidates: Vec<NumberFormat>) -> Result<Self> {
        let bit_width = candidates.first().ok_or(Error::EmptyCandidates)?.bits();
        Ok(Self {
            w_only,
            candidates,
            bit_width,
            metric: Self::default_metric(w_only),
            tie_break: TieBreak::default(),
            policy: IsolationPolicy::default(),
        })
    }

    pub fn default_metric(w_only: bool) -> ErrorMetricKind {
        if w_only {
            ErrorMetricKind::TensorMse
        } else {
            ErrorMetricKind::ModelOutputMse
        }
    }

    /// `{int4, fp4_e2m1}` or `{int8, fp8_e4m3}`.
    pub fn default_candidates(bits: u32) -> Result<Vec<NumberFormat>> {
        let names: &[&str] = match bits {
            4 => &["int4", "fp4_e2m1"],
            8 => &["int8", "fp8_e4m3"],
            other => return Err(Error::InvalidArgument(format!("no default candidates for {other}-bit"))),
        };
        names.iter().map(|n| n.parse()).collect()
    }

    pub fn with_metric(mut self, metric: ErrorMetricKind) -> Self {
        self.metric = metric;
        self
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    pub fn with_policy(mut self, policy: IsolationPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        for c in &self.candidates {
            if c.bits() != self.bit_width {
                return Err(Error::CandidateBitWidth { format: c.name(), expected: self.bit_width, found: c.bits() });
            }
        }
        Ok(())
    }

    /// Candidates in the order they are tried.
    pub fn ordered_candidates(&self) -> Vec<NumberFormat> {
        let mut c = self.candidates.clone();
        match self.tie_break {
            TieBreak::IntFirst => c.sort_by_key(|f| f.family()),
            TieBreak::FpFirst => c.sort_by_key(|f| std::cmp::Reverse(f.family())),
            TieBreak::CandidateOrder => {}
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateError {
    pub format: NumberFormat,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSelection {
    pub index: usize,
    pub name: String,
    pub chosen: NumberFormat,
    /// In the order the candidates were tried.
    pub errors: Vec<CandidateError>,
}

impl LayerSelection {
    pub fn chosen_error(&self) -> f64 {
        self.errors.iter().find(|c| c.format == self.chosen).map(|c| c.error).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub version: u32,
    pub config: SelectionConfig,
    pub layers: Vec<LayerSelection>,
    pub fp_fraction: f64,
    /// False when selection stopped early on an error.
    pub complete: bool,
    /// Not part of the serialized report, which stays reproducible.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl SelectionReport {
    fn new(config: SelectionConfig, layers: Vec<LayerSelection>, complete: bool, started: Instant) -> Self {
        let fp = layers.iter().filter(|l| l.chosen.is_fp()).count();
        let fp_fraction = if layers.is_empty() { 0.0 } else { fp as f64 / layers.len() as f64 };
        Self {
            version: REPORT_VERSION,
            config,
            layers,
            fp_fraction,
            complete,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        }
    }

    pub fn chosen_formats(&self) -> Vec<NumberFormat> {
        self.layers.iter().map(|l| l.chosen).collect()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// One row per layer and candidate.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer_index", "layer", "candidate", "family", "error", "chosen"])?;
        for l in &self.layers {
            for c in &l.errors {
                w.write_record([
                    l.index.to_string(),
                    l.name.clone(),
                    c.format.name(),
                    c.format.family().to_string(),
                    format!("{:e}", c.error),
                    (c.format == l.chosen).to_string(),
                ])?;
            }
        }
        w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

/// Quantization configs for every layer plus the report that chose them.
#[derive(Debug, Clone)]
pub struct Selection {
    pub formats: Vec<NumberFormat>,
    pub configs: Vec<LayerQuantConfig>,
    pub report: SelectionReport,
}

/// Selection stopped at a layer; `report` holds the layers finished before it.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct SelectFailure {
    pub report: Box<SelectionReport>,
    #[source]
    pub error: Error,
}

/// Config quantizing `layer` in `format`: weights per output channel with
/// max-abs scales; in weight+activation mode also the input per tensor with
/// scales calibrated on `batches`.
pub fn layer_config(
    layer: &LinearLayer,
    batches: Option<&[Tensor]>,
    format: NumberFormat,
    w_only: bool,
) -> Result<LayerQuantConfig> {
    let w_scheme = QuantScheme::per_channel(format, 0);
    let weight = TensorQuant { scheme: w_scheme, scales: compute_scales(layer.weight(), &w_scheme)? };
    if w_only {
        return Ok(LayerQuantConfig::weight_only(weight));
    }
    let batches = batches.ok_or_else(|| Error::NotCalibrated(layer.name().into()))?;
    let a_scheme = QuantScheme::per_tensor(format);
    let activation = TensorQuant { scheme: a_scheme, scales: calibrate(batches, &a_scheme)? };
    LayerQuantConfig::weight_activation(weight, activation)
}

struct Evaluator<'a> {
    model: &'a ModelGraph,
    calib: &'a CalibBundle,
    cfg: &'a SelectionConfig,
    /// Model inputs and full-precision outputs, for model-output error.
    reference: Option<(&'a [Tensor], Vec<Tensor>)>,
}

impl<'a> Evaluator<'a> {
    fn new(model: &'a ModelGraph, calib: &'a CalibBundle, cfg: &'a SelectionConfig) -> Result<Self> {
        let reference = if cfg.metric == ErrorMetricKind::ModelOutputMse {
            let first = &model.layers()[0];
            let inputs = calib.get(first.name()).ok_or_else(|| Error::NotCalibrated(first.name().into()))?;
            let fp = PreparedModel::new(model, &vec![LayerQuantConfig::unquantized(); model.len()])?;
            let outputs = inputs.iter().map(|x| fp.run(x).map(|t| t.into_output())).collect::<Result<_>>()?;
            Some((inputs, outputs))
        } else {
            None
        };
        Ok(Self { model, calib, cfg, reference })
    }

    fn batches(&self, layer: &LinearLayer) -> Result<&'a [Tensor]> {
        self.calib.get(layer.name()).ok_or_else(|| Error::NotCalibrated(layer.name().into()))
    }

    fn error(&self, k: usize, cfg: &LayerQuantConfig, others: &[LayerQuantConfig]) -> Result<f64> {
        let layer = &self.model.layers()[k];
        let act = cfg.activation.as_ref().map(|a| TensorQuant {
            scheme: a.scheme,
            scales: a.scales.clone().expect("layer_config calibrates activations"),
        });
        match self.cfg.metric {
            ErrorMetricKind::TensorMse => {
                let mut err = match &cfg.weight {
                    Some(wq) => mse(layer.weight(), &wq.apply(layer.weight())?)?,
                    None => 0.0,
                };
                if let Some(aq) = &act {
                    let batches = self.batches(layer)?;
                    let mut total = 0.0;
                    for b in batches {
                        total += mse(b, &aq.apply(b)?)?;
                    }
                    err += total / batches.len() as f64;
                }
                Ok(err)
            }
            ErrorMetricKind::LayerOutputMse => layer_output_error(
                layer,
                cfg.weight.as_ref(),
                act.as_ref(),
                self.batches(layer)?,
                crate::metrics::ErrorMeasure::Mse,
            ),
            ErrorMetricKind::ModelOutputMse => {
                let (inputs, refs) = self.reference.as_ref().expect("built for model metric");
                let mut configs = others.to_vec();
                configs[k] = cfg.clone();
                let prepared = PreparedModel::new(self.model, &configs)?;
                let mut total = 0.0;
                for (x, r) in inputs.iter().zip(refs) {
                    total += mse(r, prepared.run(x)?.output())?;
                }
                Ok(total / inputs.len() as f64)
            }
        }
    }

    /// Scores every candidate for layer `k` and keeps the argmin.
    fn select_layer(
        &self,
        k: usize,
        candidates: &[NumberFormat],
        others: &[LayerQuantConfig],
    ) -> Result<(LayerSelection, LayerQuantConfig)> {
        let layer = &self.model.layers()[k];
        let batches = self.calib.get(layer.name());
        let mut best: Option<(f64, NumberFormat, LayerQuantConfig)> = None;
        let mut errors = Vec::with_capacity(candidates.len());
        for &format in candidates {
            let cfg = layer_config(layer, batches, format, self.cfg.w_only)?;
            let error = self.error(k, &cfg, others).map_err(|e| match e {
                e @ Error::NotCalibrated(_) => e,
                other => Error::MetricEvaluation { layer: layer.name().into(), source: Box::new(other) },
            })?;
            errors.push(CandidateError { format, error });
            if best.as_ref().is_none_or(|(min, _, _)| error < *min) {
                best = Some((error, format, cfg));
            }
        }
        let (_, chosen, cfg) = best.ok_or(Error::EmptyCandidates)?;
        Ok((LayerSelection { index: k, name: layer.name().into(), chosen, errors }, cfg))
    }
}

/// Chooses a format for every layer of `model`.
pub fn mofq_select(
    model: &ModelGraph,
    calib: &CalibBundle,
    cfg: &SelectionConfig,
) -> std::result::Result<Selection, SelectFailure> {
    let started = Instant::now();
    let fail = |layers: Vec<LayerSelection>, error: Error| SelectFailure {
        report: Box::new(SelectionReport::new(cfg.clone(), layers, false, started)),
        error,
    };
    cfg.validate().map_err(|e| fail(Vec::new(), e))?;
    let evaluator = Evaluator::new(model, calib, cfg).map_err(|e| fail(Vec::new(), e))?;
    let candidates = cfg.ordered_candidates();
    let unquantized = vec![LayerQuantConfig::unquantized(); model.len()];

    let outcomes: Vec<Result<(LayerSelection, LayerQuantConfig)>> = match cfg.policy {
        IsolationPolicy::Isolated => (0..model.len())
            .into_par_iter()
            .map(|k| evaluator.select_layer(k, &candidates, &unquantized))
            .collect(),
        IsolationPolicy::Sequential => {
            let mut fixed = unquantized.clone();
            let mut out = Vec::with_capacity(model.len());
            for k in 0..model.len() {
                let r = evaluator.select_layer(k, &candidates, &fixed);
                let failed = r.is_err();
                if let Ok((_, c)) = &r {
                    fixed[k] = c.clone();
                }
                out.push(r);
                if failed {
                    break;
                }
            }
            out
        }
    };

    let mut layers = Vec::with_capacity(model.len());
    let mut configs = Vec::with_capacity(model.len());
    for outcome in outcomes {
        match outcome {
            Ok((sel, c)) => {
                layers.push(sel);
                configs.push(c);
            }
            Err(e) => return Err(fail(layers, e)),
        }
    }
    let report = SelectionReport::new(cfg.clone(), layers, true, started);
    Ok(Selection { formats: report.chosen_formats(), configs, report })
}

/// Single-format baseline through the same pipeline.
pub fn quantize_uniform(
    model: &ModelGraph,
    calib: &CalibBundle,
    format: NumberFormat,
    w_only: bool,
    metric: ErrorMetricKind,
) -> std::result::Result<Selection, SelectFailure> {
    let cfg = SelectionConfig {
        w_only,
        candidates: vec![format],
        bit_width: format.bits(),
        metric,
        tie_break: TieBreak::CandidateOrder,
        policy: IsolationPolicy::Isolated,
    };
    mofq_select(model, calib, &cfg)
}

impl fmt::Display for SelectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.layers {
            write!(f, "{:>4} {:<16} -> {:<10}", l.index, l.name, l.chosen.name())?;
            for c in &l.errors {
                write!(f, "  {}={:e}", c.format, c.error)?;
            }
            writeln!(f)?;
        }
        write!(f, "fp fraction: {:.1}%", 100.0 * self.fp_fraction)
    }
}
