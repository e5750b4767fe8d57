//! Directory container: `manifest.json` plus one headerless blob per tensor.
//!
//! `f32le` blobs hold row-major little-endian `f32`; `u8` blobs hold one
//! quantization code per byte. The manifest carries a magic string, a schema
//! version and a `kind` tag selecting which body fields are present.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{Code, NumberFormat};
use crate::qmodel::{QuantizedLayer, QuantizedModel, QuantizedWeight};
use crate::quant::{Granularity, QuantScheme, QuantizedTensor, ScaleSet};
use crate::simgraph::{LinearLayer, ModelGraph, Nonlinearity, TensorQuant};
use crate::tensor::Tensor;

pub const MAGIC: &str = "mofq-bundle";
pub const VERSION: u64 = 1;
pub const MANIFEST: &str = "manifest.json";

/// Per-layer input-activation batches, keyed by layer name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibBundle {
    pub batches: BTreeMap<String, Vec<Tensor>>,
}

impl CalibBundle {
    pub fn get(&self, layer: &str) -> Option<&[Tensor]> {
        self.batches.get(layer).map(Vec::as_slice).filter(|b| !b.is_empty())
    }

    /// Every layer has at least one batch of width `in_dim`.
    pub fn validate_for(&self, model: &ModelGraph) -> Result<()> {
        for layer in model.layers() {
            let batches = self.get(layer.name()).ok_or_else(|| Error::NotCalibrated(layer.name().into()))?;
            for b in batches {
                let (_, w) = b.dims2()?;
                if w != layer.in_dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "calibration batch for layer {} has width {w}, layer expects {}",
                        layer.name(),
                        layer.in_dim()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An ordered list of model-input batches.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchSet {
    pub batches: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bundle {
    Model(ModelGraph),
    Calib(CalibBundle),
    Batches(BatchSet),
    Quantized(QuantizedModel),
}

impl Bundle {
    fn kind(&self) -> &'static str {
        match self {
            Bundle::Model(_) => "model",
            Bundle::Calib(_) => "calib",
            Bundle::Batches(_) => "batches",
            Bundle::Quantized(_) => "quantized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Dtype {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "u8")]
    U8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    file: String,
    shape: Vec<usize>,
    dtype: Dtype,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    magic: String,
    version: u64,
    #[serde(flatten)]
    body: Body,
    tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Body {
    Model { layers: Vec<ModelLayerEntry> },
    Calib { batches: BTreeMap<String, Vec<String>> },
    Batches { batches: Vec<String> },
    Quantized { w_only: bool, layers: Vec<QuantLayerEntry> },
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelLayerEntry {
    name: String,
    weight: String,
    nonlinearity: Nonlinearity,
}

#[derive(Debug, Serialize, Deserialize)]
struct QuantLayerEntry {
    name: String,
    nonlinearity: Nonlinearity,
    weight: QuantWeightEntry,
    activation: Option<SchemeEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "storage", rename_all = "snake_case")]
enum QuantWeightEntry {
    Codes { codes: String, scheme: SchemeEntry },
    Full { tensor: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemeEntry {
    format: NumberFormat,
    granularity: Granularity,
    scales: String,
}

/// Collects blobs while a manifest body is being built.
#[derive(Default)]
struct BlobWriter {
    entries: BTreeMap<String, TensorEntry>,
    blobs: Vec<(String, Vec<u8>)>,
}

impl BlobWriter {
    fn file_name(&self, name: &str) -> String {
        let clean: String =
            name.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect();
        format!("t{:04}_{clean}.bin", self.entries.len())
    }

    fn add_f32(&mut self, name: String, t: &Tensor) -> String {
        let bytes = t.data().iter().flat_map(|x| x.to_le_bytes()).collect();
        self.add(name, t.shape().to_vec(), Dtype::F32Le, bytes)
    }

    fn add_codes(&mut self, name: String, q: &QuantizedTensor) -> String {
        let bytes = q.codes().iter().map(|c| c.0).collect();
        self.add(name, q.shape().to_vec(), Dtype::U8, bytes)
    }

    fn add_scales(&mut self, name: String, s: &ScaleSet) -> String {
        let bytes = s.as_slice().iter().flat_map(|x| x.to_le_bytes()).collect();
        self.add(name, vec![s.len()], Dtype::F32Le, bytes)
    }

    fn add(&mut self, name: String, shape: Vec<usize>, dtype: Dtype, bytes: Vec<u8>) -> String {
        let file = self.file_name(&name);
        self.blobs.push((file.clone(), bytes));
        self.entries.insert(name.clone(), TensorEntry { file, shape, dtype });
        name
    }

    fn add_scheme(&mut self, prefix: &str, tq: &TensorQuant) -> SchemeEntry {
        SchemeEntry {
            format: tq.scheme.format,
            granularity: tq.scheme.granularity,
            scales: self.add_scales(format!("{prefix}.scales"), &tq.scales),
        }
    }
}

fn build_manifest(bundle: &Bundle) -> (Manifest, Vec<(String, Vec<u8>)>) {
    let mut w = BlobWriter::default();
    let body = match bundle {
        Bundle::Model(model) => Body::Model {
            layers: model
                .layers()
                .iter()
                .map(|l| ModelLayerEntry {
                    name: l.name().into(),
                    weight: w.add_f32(format!("{}.weight", l.name()), l.weight()),
                    nonlinearity: l.nonlinearity(),
                })
                .collect(),
        },
        Bundle::Calib(calib) => Body::Calib {
            batches: calib
                .batches
                .iter()
                .map(|(layer, ts)| {
                    let names = ts.iter().enumerate().map(|(i, t)| w.add_f32(format!("{layer}.batch{i}"), t)).collect();
                    (layer.clone(), names)
                })
                .collect(),
        },
        Bundle::Batches(set) => Body::Batches {
            batches: set.batches.iter().enumerate().map(|(i, t)| w.add_f32(format!("batch{i}"), t)).collect(),
        },
        Bundle::Quantized(qm) => Body::Quantized {
            w_only: qm.w_only,
            layers: qm
                .layers
                .iter()
                .map(|l| {
                    let weight = match &l.weight {
                        QuantizedWeight::Codes(q) => {
                            let tq = TensorQuant { scheme: *q.scheme(), scales: q.scales().clone() };
                            QuantWeightEntry::Codes {
                                codes: w.add_codes(format!("{}.weight.codes", l.name), q),
                                scheme: w.add_scheme(&format!("{}.weight", l.name), &tq),
                            }
                        }
                        QuantizedWeight::Full(t) => {
                            QuantWeightEntry::Full { tensor: w.add_f32(format!("{}.weight", l.name), t) }
                        }
                    };
                    let activation = l.activation.as_ref().map(|a| w.add_scheme(&format!("{}.act", l.name), a));
                    QuantLayerEntry { name: l.name.clone(), nonlinearity: l.nonlinearity, weight, activation }
                })
                .collect(),
        },
    };
    let manifest = Manifest { magic: MAGIC.into(), version: VERSION, body, tensors: w.entries };
    (manifest, w.blobs)
}

/// Serialized manifest bytes; identical bundles give identical bytes.
fn manifest_bytes(m: &Manifest) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(m)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Writes the bundle into directory `dir`, replacing an existing bundle
/// there. The directory is assembled next to `dir` and renamed into place.
pub fn save_bundle(bundle: &Bundle, dir: &Path) -> Result<()> {
    if dir.exists() {
        let is_bundle = dir.join(MANIFEST).is_file()
            || fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_none();
        if !is_bundle {
            return Err(Error::InvalidArgument(format!(
                "refusing to replace {}: not a bundle directory",
                dir.display()
            )));
        }
    }
    let (manifest, blobs) = build_manifest(bundle);
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = temp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    for (file, bytes) in &blobs {
        let p = tmp.join(file);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }
    let p = tmp.join(MANIFEST);
    fs::write(&p, manifest_bytes(&manifest)?).map_err(|e| Error::io(&p, e))?;

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
}

struct BlobReader<'a> {
    dir: &'a Path,
    entries: &'a BTreeMap<String, TensorEntry>,
}

impl BlobReader<'_> {
    fn raw(&self, name: &str, dtype: Dtype) -> Result<(&TensorEntry, Vec<u8>)> {
        let entry = self.entries.get(name).ok_or_else(|| Error::MissingBlob(name.into()))?;
        if entry.dtype != dtype {
            return Err(Error::Manifest(format!("tensor {name} has dtype {:?}, expected {dtype:?}", entry.dtype)));
        }
        let path = self.dir.join(&entry.file);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingBlob(name.into())),
            Err(e) => return Err(Error::io(path, e)),
        };
        let width = match dtype {
            Dtype::F32Le => 4,
            Dtype::U8 => 1,
        };
        let expected = entry.shape.iter().product::<usize>() * width;
        if bytes.len() != expected {
            return Err(Error::BlobSizeMismatch { name: name.into(), expected, found: bytes.len() });
        }
        Ok((entry, bytes))
    }

    fn f32s(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let (entry, bytes) = self.raw(name, Dtype::F32Le)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok((entry.shape.clone(), data))
    }

    fn tensor(&self, name: &str) -> Result<Tensor> {
        let (shape, data) = self.f32s(name)?;
        Tensor::new(shape, data).map_err(|e| Error::Manifest(format!("tensor {name}: {e}")))
    }

    fn scales(&self, name: &str) -> Result<ScaleSet> {
        ScaleSet::new(self.f32s(name)?.1)
    }

    fn tensor_quant(&self, s: &SchemeEntry) -> Result<TensorQuant> {
        Ok(TensorQuant {
            scheme: QuantScheme { format: s.format, granularity: s.granularity },
            scales: self.scales(&s.scales)?,
        })
    }
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let path = dir.join(MANIFEST);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_slice(&text)?;
    let magic = value.get("magic").and_then(|m| m.as_str()).unwrap_or("");
    if magic != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC.into(), found: magic.into() });
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != VERSION {
        return Err(Error::VersionMismatch { expected: VERSION, found: version });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| Error::Manifest(e.to_string()))?;
    let r = BlobReader { dir, entries: &manifest.tensors };

    Ok(match &manifest.body {
        Body::Model { layers } => {
            let layers = layers
                .iter()
                .map(|l| LinearLayer::new(l.name.clone(), r.tensor(&l.weight)?, l.nonlinearity))
                .collect::<Result<Vec<_>>>()?;
            Bundle::Model(ModelGraph::new(layers)?)
        }
        Body::Calib { batches } => Bundle::Calib(CalibBundle {
            batches: batches
                .iter()
                .map(|(layer, names)| Ok((layer.clone(), names.iter().map(|n| r.tensor(n)).collect::<Result<_>>()?)))
                .collect::<Result<_>>()?,
        }),
        Body::Batches { batches } => {
            Bundle::Batches(BatchSet { batches: batches.iter().map(|n| r.tensor(n)).collect::<Result<_>>()? })
        }
        Body::Quantized { w_only, layers } => {
            let layers = layers
                .iter()
                .map(|l| {
                    let weight = match &l.weight {
                        QuantWeightEntry::Codes { codes, scheme } => {
                            let (entry, bytes) = r.raw(codes, Dtype::U8)?;
                            let tq = r.tensor_quant(scheme)?;
                            QuantizedWeight::Codes(QuantizedTensor::from_parts(
                                bytes.into_iter().map(Code).collect(),
                                entry.shape.clone(),
                                tq.scheme,
                                tq.scales,
                            )?)
                        }
                        QuantWeightEntry::Full { tensor } => QuantizedWeight::Full(r.tensor(tensor)?),
                    };
                    let activation = l.activation.as_ref().map(|a| r.tensor_quant(a)).transpose()?;
                    Ok(QuantizedLayer { name: l.name.clone(), nonlinearity: l.nonlinearity, weight, activation })
                })
                .collect::<Result<Vec<_>>>()?;
            let qm = QuantizedModel { w_only: *w_only, layers };
            // shape chain check on the dequantized graph
            qm.dequantized()?;
            Bundle::Quantized(qm)
        }
    })
}

fn wrong_kind(dir: &Path, expected: &str, found: &Bundle) -> Error {
    Error::Manifest(format!("{} holds a {} bundle, expected {expected}", dir.display(), found.kind()))
}

pub fn load_model(dir: &Path) -> Result<ModelGraph> {
    match load_bundle(dir)? {
        Bundle::Model(m) => Ok(m),
        other => Err(wrong_kind(dir, "model", &other)),
    }
}

pub fn load_calib(dir: &Path) -> Result<CalibBundle> {
    match load_bundle(dir)? {
        Bundle::Calib(c) => Ok(c),
        other => Err(wrong_kind(dir, "calib", &other)),
    }
}

pub fn load_batches(dir: &Path) -> Result<BatchSet> {
    match load_bundle(dir)? {
        Bundle::Batches(b) => Ok(b),
        other => Err(wrong_kind(dir, "batches", &other)),
    }
}

pub fn load_quantized(dir: &Path) -> Result<QuantizedModel> {
    match load_bundle(dir)? {
        Bundle::Quantized(q) => Ok(q),
        other => Err(wrong_kind(dir, "quantized", &other)),
    }
}
