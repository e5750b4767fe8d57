//! Symmetric max-abs scaled round-to-nearest quantization.
//!
//! A group's scale is `max|x| / max_finite(format)`; an all-zero group gets
//! scale 1. Elements are divided by their group scale (in `f64`), encoded,
//! and dequantized as `decode(code) * scale`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{Code, NumberFormat};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Granularity {
    PerTensor,
    /// One scale per index along `axis`.
    PerChannel { axis: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantScheme {
    pub format: NumberFormat,
    pub granularity: Granularity,
}

impl QuantScheme {
    pub fn per_tensor(format: NumberFormat) -> Self {
        Self { format, granularity: Granularity::PerTensor }
    }

    pub fn per_channel(format: NumberFormat, axis: usize) -> Self {
        Self { format, granularity: Granularity::PerChannel { axis } }
    }

    fn grouping(&self, shape: &[usize]) -> Result<Grouping> {
        match self.granularity {
            Granularity::PerTensor => Ok(Grouping { stride: 1, count: 1 }),
            Granularity::PerChannel { axis } => {
                if axis >= shape.len() {
                    return Err(Error::InvalidScheme(format!(
                        "channel axis {axis} out of range for shape {shape:?}"
                    )));
                }
                Ok(Grouping { stride: shape[axis + 1..].iter().product(), count: shape[axis] })
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Grouping {
    stride: usize,
    count: usize,
}

impl Grouping {
    #[inline]
    fn group(&self, flat: usize) -> usize {
        (flat / self.stride) % self.count
    }
}

/// Strictly positive, finite scales; one per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct ScaleSet(Vec<f32>);

impl ScaleSet {
    pub fn new(scales: Vec<f32>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::InvalidScales("no scales".into()));
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidScales(format!("scale {s} is not positive and finite")));
        }
        Ok(Self(scales))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f32>> for ScaleSet {
    type Error = Error;

    fn try_from(v: Vec<f32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ScaleSet> for Vec<f32> {
    fn from(s: ScaleSet) -> Self {
        s.0
    }
}

/// Max-abs scale for one group.
pub fn scale_for_max(max_abs: f32, format: &NumberFormat) -> f32 {
    if max_abs == 0.0 {
        return 1.0;
    }
    let s = (max_abs as f64 / format.max_finite()) as f32;
    if s > 0.0 {
        s
    } else {
        // max_abs so small that the ratio underflows f32
        f32::from_bits(1)
    }
}

fn group_max_abs(t: &Tensor, grouping: Grouping, maxes: &mut [f32]) {
    for (i, x) in t.data().iter().enumerate() {
        let g = grouping.group(i);
        maxes[g] = maxes[g].max(x.abs());
    }
}

pub fn compute_scales(t: &Tensor, scheme: &QuantScheme) -> Result<ScaleSet> {
    let grouping = scheme.grouping(t.shape())?;
    let mut maxes = vec![0.0f32; grouping.count];
    group_max_abs(t, grouping, &mut maxes);
    ScaleSet::new(maxes.into_iter().map(|m| scale_for_max(m, &scheme.format)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    codes: Vec<Code>,
    shape: Vec<usize>,
    scheme: QuantScheme,
    scales: ScaleSet,
}

impl QuantizedTensor {
    /// Checks that every code decodes to a finite value and the scales fit
    /// the scheme.
    pub fn from_parts(codes: Vec<Code>, shape: Vec<usize>, scheme: QuantScheme, scales: ScaleSet) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != codes.len() || n == 0 {
            return Err(Error::ShapeMismatch(format!("{} codes for shape {shape:?}", codes.len())));
        }
        let grouping = scheme.grouping(&shape)?;
        if grouping.count != scales.len() {
            return Err(Error::InvalidScales(format!(
                "{} scales for {} groups",
                scales.len(),
                grouping.count
            )));
        }
        let limit = scheme.format.code_count();
        if let Some(c) = codes
            .iter()
            .find(|c| c.0 as usize >= limit || scheme.format.decode(**c).finite().is_none())
        {
            return Err(Error::InvalidCode { code: c.0, format: scheme.format.name() });
        }
        Ok(Self { codes, shape, scheme, scales })
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn scheme(&self) -> &QuantScheme {
        &self.scheme
    }

    pub fn scales(&self) -> &ScaleSet {
        &self.scales
    }
}

fn check_scales(t: &Tensor, scheme: &QuantScheme, scales: &ScaleSet) -> Result<Grouping> {
    let grouping = scheme.grouping(t.shape())?;
    if grouping.count != scales.len() {
        return Err(Error::InvalidScales(format!(
            "{} scales supplied for {} groups of shape {:?}",
            scales.len(),
            grouping.count,
            t.shape()
        )));
    }
    Ok(grouping)
}

pub fn quantize(t: &Tensor, scheme: &QuantScheme, scales: &ScaleSet) -> Result<QuantizedTensor> {
    let grouping = check_scales(t, scheme, scales)?;
    let s = scales.as_slice();
    let codes = t
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| scheme.format.encode(x as f64 / s[grouping.group(i)] as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedTensor { codes, shape: t.shape().to_vec(), scheme: *scheme, scales: scales.clone() })
}

pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    let grouping = q.scheme.grouping(&q.shape).expect("validated at construction");
    let s = q.scales.as_slice();
    let data = q
        .codes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let v = q.scheme.format.decode(c).finite().expect("validated at construction");
            (v * s[grouping.group(i)] as f64) as f32
        })
        .collect();
    Tensor::new(q.shape.clone(), data).expect("dequantized values are finite")
}

/// `dequantize(quantize(t))`.
pub fn fake_quant(t: &Tensor, scheme: &QuantScheme, scales: &ScaleSet) -> Result<Tensor> {
    Ok(dequantize(&quantize(t, scheme, scales)?))
}

/// Streaming max-abs observer.
///
/// Not synchronized: share across workers by giving each its own
/// calibrator and combining them with [`Calibrator::merge`].
#[derive(Debug, Clone)]
pub struct Calibrator {
    scheme: QuantScheme,
    running_max: Vec<f32>,
    tail_shape: Option<Vec<usize>>,
    batches: usize,
}

impl Calibrator {
    pub fn new(scheme: QuantScheme) -> Self {
        Self { scheme, running_max: Vec::new(), tail_shape: None, batches: 0 }
    }

    pub fn observe(&mut self, batch: &Tensor) -> Result<()> {
        let tail = batch.shape()[1..].to_vec();
        if let Some(prev) = &self.tail_shape {
            if *prev != tail {
                return Err(Error::ShapeMismatch(format!(
                    "batch shape {:?} inconsistent with earlier batches {prev:?}",
                    batch.shape()
                )));
            }
        }
        if let Granularity::PerChannel { axis: 0 } = self.scheme.granularity {
            return Err(Error::InvalidScheme("cannot calibrate per channel along the batch axis".into()));
        }
        let grouping = self.scheme.grouping(batch.shape())?;
        if self.running_max.is_empty() {
            self.running_max = vec![0.0; grouping.count];
        }
        group_max_abs(batch, grouping, &mut self.running_max);
        self.tail_shape = Some(tail);
        self.batches += 1;
        Ok(())
    }

    /// Elementwise max with another calibrator over the same scheme.
    pub fn merge(&mut self, other: &Calibrator) -> Result<()> {
        if other.batches == 0 {
            return Ok(());
        }
        if self.batches == 0 {
            *self = other.clone();
            return Ok(());
        }
        if self.scheme != other.scheme || self.tail_shape != other.tail_shape {
            return Err(Error::ShapeMismatch("cannot merge calibrators of different shape or scheme".into()));
        }
        for (a, b) in self.running_max.iter_mut().zip(&other.running_max) {
            *a = a.max(*b);
        }
        self.batches += other.batches;
        Ok(())
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    pub fn running_max(&self) -> &[f32] {
        &self.running_max
    }

    pub fn scales(&self) -> Result<ScaleSet> {
        if self.batches == 0 {
            return Err(Error::EmptyBatches);
        }
        ScaleSet::new(self.running_max.iter().map(|&m| scale_for_max(m, &self.scheme.format)).collect())
    }
}

/// Scales from the largest magnitudes seen across all batches.
pub fn calibrate(batches: &[Tensor], scheme: &QuantScheme) -> Result<ScaleSet> {
    let mut cal = Calibrator::new(*scheme);
    for b in batches {
        cal.observe(b)?;
    }
    cal.scales()
}
