//! `mofq` command-line front end.
//!
//! Every subcommand except `formats` also takes `--config <json>`: a JSON
//! object with the same keys as the long flags (in snake_case). Flags given
//! on the command line win over the file. The fully resolved configuration
//! is written next to the outputs so any run can be replayed from it.
//!
//! Exit codes: 0 success, 2 argument or parse error, 3 data or validation
//! error, 4 algorithm failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::formats::NumberFormat;
use crate::metrics::{mse, nsr, ErrorMetricKind};
use crate::qmodel::QuantizedModel;
use crate::selector::{mofq_select, IsolationPolicy, SelectionConfig, SelectionReport, TieBreak};
use crate::simgraph::{forward_fp, LinearLayer, ModelGraph, Nonlinearity};
use crate::tensor::Tensor;
use crate::tensorio::rng::SplitMix64;
use crate::tensorio::{
    gen_synthetic, load_batches, load_calib, load_model, load_quantized, save_bundle, write_atomic, BatchSet, Bundle,
    CalibBundle, DistSpec,
};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_ALGORITHM: i32 = 4;

/// Formats listed by `formats --all`.
pub const STANDARD_FORMATS: [&str; 6] = ["int4", "int8", "fp4_e2m1", "fp4_e2m1_ieee", "fp8_e4m3", "fp8_e5m2"];

#[derive(Debug, Parser)]
#[command(name = "mofq", version, about = "Low-bit INT/FP quantization with per-layer format selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List every code of a format with its value.
    Formats(FormatsArgs),
    /// Generate a synthetic model with calibration and evaluation inputs.
    Gen(GenArgs),
    /// Record each layer's full-precision input activations.
    Calibrate(CalibrateArgs),
    /// Per-layer, per-format quantization errors.
    Analyze(SelectArgs),
    /// Choose a format per layer and write the quantized model.
    Select(SelectArgs),
    /// Compare quantized models against full precision on held-out inputs.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct FormatsArgs {
    /// Format name, e.g. fp4_e2m1, int8, fp8_e5m2.
    name: Option<String>,
    #[arg(long, conflicts_with = "name")]
    all: bool,
    /// Write the table here as CSV (plus a .json twin) instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct GenArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Number of linear layers.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    layers: Option<usize>,
    /// Width of every layer unless --dims is given.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    width: Option<usize>,
    /// Explicit widths `in,h1,...,out` (overrides --layers/--width).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    dims: Option<Vec<usize>>,
    /// Rows per batch.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    calib_batches: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eval_batches: Option<usize>,
    /// `mixed` or a distribution such as `gaussian(0,1)`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_dist: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    input_dist: Option<String>,
    /// Nonlinearity after every layer but the last.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    nonlinearity: Option<String>,
    /// Weight rows per layer amplified by --outlier-scale.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    outlier_channels: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    outlier_scale: Option<f64>,
    /// Zero out this layer's weights.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    zero_layer: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct CalibrateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    /// Batches bundle of model inputs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    inputs: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SelectArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    calib: Option<PathBuf>,
    #[arg(long, value_parser = ["4", "8"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    bits: Option<String>,
    #[arg(long, value_parser = ["w-only", "wa"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[arg(long, value_parser = ["tensor", "layer", "model"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    metric: Option<String>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    candidates: Option<Vec<String>>,
    #[arg(long, value_parser = ["int-first", "fp-first", "candidate-order"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    tie_break: Option<String>,
    #[arg(long, value_parser = ["isolated", "sequential"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    policy: Option<String>,
    /// Accepted for uniformity; selection itself is deterministic.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    /// Quantized bundle as `label=path` or `path`; repeatable.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    quantized: Option<Vec<String>>,
    /// Batches bundle of held-out model inputs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    inputs: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub layers: usize,
    pub width: usize,
    pub dims: Option<Vec<usize>>,
    pub batch: usize,
    pub calib_batches: usize,
    pub eval_batches: usize,
    pub weight_dist: String,
    pub input_dist: DistSpec,
    pub nonlinearity: Nonlinearity,
    pub outlier_channels: usize,
    pub outlier_scale: f64,
    pub zero_layer: Option<usize>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            out: None,
            seed: 0,
            layers: 6,
            width: 64,
            dims: None,
            batch: 32,
            calib_batches: 4,
            eval_batches: 4,
            weight_dist: "mixed".into(),
            input_dist: DistSpec::StudentT { df: 3.0 },
            nonlinearity: Nonlinearity::Gelu,
            outlier_channels: 2,
            outlier_scale: 8.0,
            zero_layer: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub model: Option<PathBuf>,
    pub inputs: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "w-only")]
    WOnly,
    #[serde(rename = "wa")]
    Wa,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub model: Option<PathBuf>,
    pub calib: Option<PathBuf>,
    #[serde(with = "bits_str")]
    pub bits: u32,
    pub mode: Mode,
    pub metric: Option<ErrorMetricKind>,
    pub candidates: Option<Vec<NumberFormat>>,
    pub tie_break: TieBreak,
    pub policy: IsolationPolicy,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            model: None,
            calib: None,
            bits: 4,
            mode: Mode::WOnly,
            metric: None,
            candidates: None,
            tie_break: TieBreak::IntFirst,
            policy: IsolationPolicy::Isolated,
            seed: 0,
            out: None,
        }
    }
}

impl SelectConfig {
    pub fn selection(&self) -> crate::Result<SelectionConfig> {
        let w_only = self.mode == Mode::WOnly;
        let candidates = match &self.candidates {
            Some(c) => c.clone(),
            None => SelectionConfig::default_candidates(self.bits)?,
        };
        if let Some(c) = candidates.iter().find(|c| c.bits() != self.bits) {
            return Err(Error::CandidateBitWidth { format: c.name(), expected: self.bits, found: c.bits() });
        }
        let mut cfg = SelectionConfig::new(w_only, candidates)?
            .with_tie_break(self.tie_break)
            .with_policy(self.policy);
        if let Some(m) = self.metric {
            cfg = cfg.with_metric(m);
        }
        Ok(cfg)
    }
}

mod bits_str {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u32, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u32, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Bits {
            N(u32),
            S(String),
        }
        match Bits::deserialize(d)? {
            Bits::N(n) => Ok(n),
            Bits::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub model: Option<PathBuf>,
    pub quantized: Vec<String>,
    pub inputs: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// An error tagged with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

trait ExitCode<T> {
    fn exit(self, code: i32) -> CliResult<T>;
}

impl<T, E: Into<Error>> ExitCode<T> for std::result::Result<T, E> {
    fn exit(self, code: i32) -> CliResult<T> {
        self.map_err(|e| CliError { code, error: e.into() })
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError { code: EXIT_USAGE, error: Error::InvalidArgument(msg.into()) }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Formats(a) => cmd_formats(a),
        Command::Gen(a) => resolve(a.config.clone(), &a).and_then(|c| cmd_gen(&c)),
        Command::Calibrate(a) => resolve(a.config.clone(), &a).and_then(|c| cmd_calibrate(&c)),
        Command::Analyze(a) => resolve(a.config.clone(), &a).and_then(|c| cmd_analyze(&c)),
        Command::Select(a) => resolve(a.config.clone(), &a).and_then(|c| cmd_select(&c)),
        Command::Eval(a) => resolve(a.config.clone(), &a).and_then(|c| cmd_eval(&c)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

/// Config file values overlaid with explicitly given flags.
fn resolve<A: Serialize, C: DeserializeOwned>(config: Option<PathBuf>, flags: &A) -> CliResult<C> {
    let mut base = match &config {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| CliError { code: EXIT_USAGE, error: Error::io(p, e) })?;
            serde_json::from_slice::<serde_json::Value>(&bytes).exit(EXIT_USAGE)?
        }
        None => serde_json::Value::Object(Default::default()),
    };
    let obj = base.as_object_mut().ok_or_else(|| usage("--config must hold a JSON object"))?;
    if let serde_json::Value::Object(flags) = serde_json::to_value(flags).exit(EXIT_USAGE)? {
        obj.extend(flags);
    }
    serde_json::from_value(base).map_err(|e| usage(format!("invalid configuration: {e}")))
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    p.as_deref().ok_or_else(|| usage(format!("missing --{flag}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_atomic(path, bytes)
}

fn json_bytes<T: Serialize>(v: &T) -> crate::Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

// ---- formats ----

#[derive(Serialize)]
struct FormatRow {
    format: String,
    code: u8,
    bits: String,
    value: String,
}

fn format_rows(format: &NumberFormat) -> Vec<FormatRow> {
    format
        .enumerate_values()
        .into_iter()
        .map(|(code, value)| FormatRow {
            format: format.name(),
            code: code.0,
            bits: format!("{:0width$b}", code.0, width = format.bits() as usize),
            value: value.to_string(),
        })
        .collect()
}

fn rows_csv(rows: &[FormatRow]) -> crate::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn cmd_formats(a: FormatsArgs) -> CliResult<()> {
    let names: Vec<String> = match (&a.name, a.all) {
        (Some(n), _) => vec![n.clone()],
        (None, true) => STANDARD_FORMATS.iter().map(|s| s.to_string()).collect(),
        (None, false) => return Err(usage("give a format name or --all")),
    };
    let mut rows = Vec::new();
    for n in &names {
        let f: NumberFormat = n.parse().exit(EXIT_USAGE)?;
        rows.extend(format_rows(&f));
    }
    let csv = rows_csv(&rows).exit(EXIT_DATA)?;
    match &a.out {
        Some(out) => {
            write_file(out, &csv).exit(EXIT_DATA)?;
            write_file(&out.with_extension("json"), &json_bytes(&rows).exit(EXIT_DATA)?).exit(EXIT_DATA)?;
        }
        None => print!("{}", String::from_utf8_lossy(&csv)),
    }
    Ok(())
}

// ---- gen ----

/// Synthetic model, calibration inputs and evaluation inputs for `cfg`.
pub fn generate(cfg: &GenConfig) -> crate::Result<(ModelGraph, BatchSet, BatchSet)> {
    let dims = match &cfg.dims {
        Some(d) if d.len() >= 2 => d.clone(),
        Some(_) => return Err(Error::InvalidArgument("--dims needs at least two widths".into())),
        None => vec![cfg.width; cfg.layers + 1],
    };
    if dims.contains(&0) || cfg.batch == 0 || cfg.calib_batches == 0 || cfg.eval_batches == 0 {
        return Err(Error::InvalidArgument("dimensions and batch counts must be positive".into()));
    }
    let mixed = [
        DistSpec::Gaussian { mu: 0.0, sigma: 1.0 },
        DistSpec::Uniform { lo: -1.0, hi: 1.0 },
        DistSpec::StudentT { df: 4.0 },
    ];
    let fixed: Option<DistSpec> = match cfg.weight_dist.as_str() {
        "mixed" => None,
        s => Some(s.parse()?),
    };
    let n_layers = dims.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for k in 0..n_layers {
        let (fan_in, fan_out) = (dims[k], dims[k + 1]);
        let dist = fixed.unwrap_or(mixed[k % mixed.len()]);
        let w = gen_synthetic(&dist, &[fan_out, fan_in], SplitMix64::derive(cfg.seed, 100 + k as u64).next_u64())?;
        let mut data = w.into_data();
        let norm = 1.0 / (fan_in as f32).sqrt();
        data.iter_mut().for_each(|x| *x *= norm);
        let mut pick = SplitMix64::derive(cfg.seed, 200 + k as u64);
        for _ in 0..cfg.outlier_channels.min(fan_out) {
            let row = (pick.next_u64() % fan_out as u64) as usize;
            data[row * fan_in..(row + 1) * fan_in].iter_mut().for_each(|x| *x *= cfg.outlier_scale as f32);
        }
        if cfg.zero_layer == Some(k) {
            data.iter_mut().for_each(|x| *x = 0.0);
        }
        let nl = if k + 1 == n_layers { Nonlinearity::None } else { cfg.nonlinearity };
        layers.push(LinearLayer::new(format!("layer{k}"), Tensor::new(vec![fan_out, fan_in], data)?, nl)?);
    }
    let model = ModelGraph::new(layers)?;
    let batches = |count: usize, stream: u64| -> crate::Result<BatchSet> {
        let batches = (0..count)
            .map(|i| {
                let seed = SplitMix64::derive(cfg.seed, stream + i as u64).next_u64();
                gen_synthetic(&cfg.input_dist, &[cfg.batch, dims[0]], seed)
            })
            .collect::<crate::Result<_>>()?;
        Ok(BatchSet { batches })
    };
    Ok((model, batches(cfg.calib_batches, 1000)?, batches(cfg.eval_batches, 2000)?))
}

fn cmd_gen(cfg: &GenConfig) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let (model, calib, eval) = generate(cfg).exit(EXIT_USAGE)?;
    save_bundle(&Bundle::Model(model), &out.join("model")).exit(EXIT_DATA)?;
    save_bundle(&Bundle::Batches(calib), &out.join("calib_inputs")).exit(EXIT_DATA)?;
    save_bundle(&Bundle::Batches(eval), &out.join("eval_inputs")).exit(EXIT_DATA)?;
    write_file(&out.join("gen_config.json"), &json_bytes(cfg).exit(EXIT_DATA)?).exit(EXIT_DATA)?;
    println!("wrote {}", out.display());
    Ok(())
}

// ---- calibrate ----

/// Each layer's full-precision input activations over `inputs`.
pub fn collect_activations(model: &ModelGraph, inputs: &BatchSet) -> crate::Result<CalibBundle> {
    if inputs.batches.is_empty() {
        return Err(Error::EmptyBatches);
    }
    let mut calib = CalibBundle::default();
    for x in &inputs.batches {
        let trace = forward_fp(model, x)?;
        let mut input = x.clone();
        for (layer, out) in model.layers().iter().zip(trace.layer_outputs) {
            calib.batches.entry(layer.name().to_string()).or_default().push(input);
            input = out;
        }
    }
    Ok(calib)
}

fn cmd_calibrate(cfg: &CalibrateConfig) -> CliResult<()> {
    let model = load_model(required(&cfg.model, "model")?).exit(EXIT_DATA)?;
    let inputs = load_batches(required(&cfg.inputs, "inputs")?).exit(EXIT_DATA)?;
    let out = required(&cfg.out, "out")?;
    let calib = collect_activations(&model, &inputs).exit(EXIT_DATA)?;
    for layer in model.layers() {
        let batches = calib.get(layer.name()).unwrap_or_default();
        let max = batches.iter().map(Tensor::max_abs).fold(0.0f32, f32::max);
        println!("{:<16} batches={} max_abs={max}", layer.name(), batches.len());
    }
    save_bundle(&Bundle::Calib(calib), out).exit(EXIT_DATA)?;
    Ok(())
}

// ---- analyze / select ----

fn load_selection_inputs(cfg: &SelectConfig) -> CliResult<(ModelGraph, CalibBundle, SelectionConfig)> {
    let sel = cfg.selection().exit(EXIT_USAGE)?;
    let model = load_model(required(&cfg.model, "model")?).exit(EXIT_DATA)?;
    let calib = match &cfg.calib {
        Some(p) => load_calib(p).exit(EXIT_DATA)?,
        None if sel.w_only && sel.metric == ErrorMetricKind::TensorMse => CalibBundle::default(),
        None => return Err(usage("missing --calib")),
    };
    Ok((model, calib, sel))
}

fn write_report(report: &SelectionReport, csv_path: &Path, json_path: &Path) -> crate::Result<()> {
    write_file(csv_path, &report.to_csv()?)?;
    write_file(json_path, &report.to_json()?)
}

fn cmd_analyze(cfg: &SelectConfig) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let (model, calib, sel) = load_selection_inputs(cfg)?;
    let selection = mofq_select(&model, &calib, &sel).map_err(|f| {
        let _ = write_report(&f.report, out, &out.with_extension("json"));
        CliError { code: EXIT_ALGORITHM, error: f.error }
    })?;
    write_report(&selection.report, out, &out.with_extension("json")).exit(EXIT_DATA)?;
    println!("{}", selection.report);
    Ok(())
}

#[derive(Serialize)]
struct Timing {
    wall_clock_seconds: f64,
}

fn cmd_select(cfg: &SelectConfig) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let (model, calib, sel) = load_selection_inputs(cfg)?;
    let write_all = |report: &SelectionReport| -> crate::Result<()> {
        write_report(report, &out.join("report.csv"), &out.join("report.json"))?;
        write_file(&out.join("timing.json"), &json_bytes(&Timing { wall_clock_seconds: report.wall_clock_seconds })?)?;
        write_file(&out.join("run_config.json"), &json_bytes(cfg)?)
    };
    let selection = match mofq_select(&model, &calib, &sel) {
        Ok(s) => s,
        Err(f) => {
            let _ = write_all(&f.report);
            return Err(CliError { code: EXIT_ALGORITHM, error: f.error });
        }
    };
    let qm = QuantizedModel::from_configs(&model, &selection.configs, sel.w_only).exit(EXIT_ALGORITHM)?;
    save_bundle(&Bundle::Quantized(qm), &out.join("quantized")).exit(EXIT_DATA)?;
    write_all(&selection.report).exit(EXIT_DATA)?;
    println!("{}", selection.report);
    Ok(())
}

// ---- eval ----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub label: String,
    pub mse: f64,
    pub nsr: f64,
    pub fp_fraction: f64,
}

/// Final-output MSE and NSR of `quantized` against `model`, over all of
/// `inputs` taken as one tensor.
pub fn evaluate(model: &ModelGraph, quantized: &QuantizedModel, inputs: &BatchSet) -> crate::Result<(f64, f64)> {
    quantized.check_matches(model)?;
    if inputs.batches.is_empty() {
        return Err(Error::EmptyBatches);
    }
    let mut refs = Vec::with_capacity(inputs.batches.len());
    let mut outs = Vec::with_capacity(inputs.batches.len());
    for x in &inputs.batches {
        refs.push(forward_fp(model, x)?.into_output());
        outs.push(quantized.forward(x)?.into_output());
    }
    let reference = Tensor::concat_rows(&refs)?;
    let output = Tensor::concat_rows(&outs)?;
    Ok((mse(&reference, &output)?, nsr(&reference, &output)?))
}

fn cmd_eval(cfg: &EvalConfig) -> CliResult<()> {
    let model = load_model(required(&cfg.model, "model")?).exit(EXIT_DATA)?;
    let inputs = load_batches(required(&cfg.inputs, "inputs")?).exit(EXIT_DATA)?;
    let out = required(&cfg.out, "out")?;
    if cfg.quantized.is_empty() {
        return Err(usage("give at least one --quantized bundle"));
    }
    let mut rows = Vec::new();
    for spec in &cfg.quantized {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let label = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| spec.clone());
                (label, p)
            }
        };
        let qm = load_quantized(&path).exit(EXIT_DATA)?;
        let (mse, nsr) = evaluate(&model, &qm, &inputs).exit(EXIT_DATA)?;
        rows.push(EvalRow { label, mse, nsr, fp_fraction: qm.fp_fraction() });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "mse", "nsr", "fp_fraction"]).exit(EXIT_DATA)?;
    for r in &rows {
        w.write_record([r.label.clone(), format!("{:e}", r.mse), format!("{:e}", r.nsr), r.fp_fraction.to_string()])
            .exit(EXIT_DATA)?;
        println!("{:<16} mse={:e} nsr={:e} fp={:.1}%", r.label, r.mse, r.nsr, 100.0 * r.fp_fraction);
    }
    let csv = w.into_inner().map_err(|e| usage(e.to_string()))?;
    write_file(out, &csv).exit(EXIT_DATA)?;
    #[derive(Serialize)]
    struct EvalJson<'a> {
        version: u32,
        rows: &'a [EvalRow],
    }
    write_file(&out.with_extension("json"), &json_bytes(&EvalJson { version: 1, rows: &rows }).exit(EXIT_DATA)?)
        .exit(EXIT_DATA)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg_path = tmp.path().join("c.json");
        fs::write(&cfg_path, r#"{"bits": "8", "mode": "wa", "metric": "layer_output_mse", "seed": 3}"#).unwrap();
        let cli = Cli::try_parse_from(["mofq", "select", "--config", cfg_path.to_str().unwrap(), "--metric", "model"])
            .unwrap();
        let Command::Select(a) = cli.command else { panic!() };
        let c: SelectConfig = resolve(a.config.clone(), &a).unwrap();
        assert_eq!(c.bits, 8);
        assert_eq!(c.mode, Mode::Wa);
        assert_eq!(c.metric, Some(ErrorMetricKind::ModelOutputMse));
        assert_eq!(c.seed, 3);
        let sel = c.selection().unwrap();
        assert_eq!(sel.candidates, SelectionConfig::default_candidates(8).unwrap());
        assert!(!sel.w_only);
    }

    #[test]
    fn default_four_bit_candidates() {
        let c = SelectConfig::default().selection().unwrap();
        let names: Vec<String> = c.candidates.iter().map(|f| f.name()).collect();
        assert_eq!(names, ["int4", "fp4_e2m1"]);
        assert!(c.w_only);
        assert_eq!(c.metric, ErrorMetricKind::TensorMse);
    }

    #[test]
    fn candidate_width_must_match_bits() {
        let c = SelectConfig { candidates: Some(vec!["int8".parse().unwrap()]), ..Default::default() };
        assert!(matches!(c.selection(), Err(Error::CandidateBitWidth { .. })));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.json");
        fs::write(&p, r#"{"bitz": 4}"#).unwrap();
        let flags = serde_json::json!({});
        let r: CliResult<SelectConfig> = resolve(Some(p), &flags);
        assert_eq!(r.unwrap_err().code, EXIT_USAGE);
    }

    #[test]
    fn generated_model_is_deterministic() {
        let cfg = GenConfig { layers: 3, width: 8, batch: 4, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 3);
        assert_eq!(a.1.batches.len(), 4);
    }

    #[test]
    fn activations_follow_the_reference_pass() {
        let cfg = GenConfig { layers: 2, width: 4, batch: 3, calib_batches: 2, ..Default::default() };
        let (model, inputs, _) = generate(&cfg).unwrap();
        let calib = collect_activations(&model, &inputs).unwrap();
        calib.validate_for(&model).unwrap();
        let l1 = calib.get("layer1").unwrap();
        assert_eq!(l1.len(), 2);
        assert_eq!(l1[0], forward_fp(&model, &inputs.batches[0]).unwrap().layer_outputs[0]);
    }
}
