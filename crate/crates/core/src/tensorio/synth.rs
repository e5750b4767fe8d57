use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::rng::SplitMix64;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Distribution of synthetic tensor elements.
///
/// Written and parsed as `uniform(lo,hi)`, `gaussian(mu,sigma)`,
/// `lognormal(mu,sigma)` or `student_t(df)`. Lognormal samples get a
/// uniformly random sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DistSpec {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mu: f64, sigma: f64 },
    LogNormal { mu: f64, sigma: f64 },
    StudentT { df: f64 },
}

impl DistSpec {
    // Negated comparisons also reject NaN parameters.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDistribution(m));
        match *self {
            DistSpec::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                bad(format!("uniform needs finite lo < hi, got ({lo}, {hi})"))
            }
            DistSpec::Gaussian { sigma, .. } | DistSpec::LogNormal { sigma, .. } if !(sigma > 0.0) => {
                bad(format!("sigma must be positive, got {sigma}"))
            }
            DistSpec::Gaussian { mu, .. } | DistSpec::LogNormal { mu, .. } if !mu.is_finite() => {
                bad(format!("mu must be finite, got {mu}"))
            }
            DistSpec::StudentT { df } if !(df > 0.0 && df.is_finite()) => {
                bad(format!("df must be positive, got {df}"))
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut SplitMix64) -> f64 {
        match *self {
            DistSpec::Uniform { lo, hi } => lo + (hi - lo) * rng.next_f64(),
            DistSpec::Gaussian { mu, sigma } => mu + sigma * rng.next_normal(),
            DistSpec::LogNormal { mu, sigma } => {
                let mag = (mu + sigma * rng.next_normal()).exp();
                if rng.next_bool() {
                    -mag
                } else {
                    mag
                }
            }
            DistSpec::StudentT { df } => {
                let z = rng.next_normal();
                let chi2 = 2.0 * rng.next_gamma(df / 2.0);
                z / (chi2 / df).sqrt()
            }
        }
    }
}

impl fmt::Display for DistSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistSpec::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
            DistSpec::Gaussian { mu, sigma } => write!(f, "gaussian({mu},{sigma})"),
            DistSpec::LogNormal { mu, sigma } => write!(f, "lognormal({mu},{sigma})"),
            DistSpec::StudentT { df } => write!(f, "student_t({df})"),
        }
    }
}

impl FromStr for DistSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidDistribution(format!("cannot parse `{s}`"));
        let s = s.trim();
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args = rest.strip_suffix(')').ok_or_else(bad)?;
        let args: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let spec = match (name.trim(), args.as_slice()) {
            ("uniform", [lo, hi]) => DistSpec::Uniform { lo: *lo, hi: *hi },
            ("gaussian" | "normal", [mu, sigma]) => DistSpec::Gaussian { mu: *mu, sigma: *sigma },
            ("lognormal", [mu, sigma]) => DistSpec::LogNormal { mu: *mu, sigma: *sigma },
            ("student_t" | "t", [df]) => DistSpec::StudentT { df: *df },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<String> for DistSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DistSpec> for String {
    fn from(d: DistSpec) -> Self {
        d.to_string()
    }
}

/// Deterministic tensor of i.i.d. samples drawn from a SplitMix64 stream
/// seeded with `seed`.
pub fn gen_synthetic(spec: &DistSpec, shape: &[usize], seed: u64) -> Result<Tensor> {
    spec.validate()?;
    let n: usize = shape.iter().product();
    let mut rng = SplitMix64::new(seed);
    let data: Vec<f32> = (0..n).map(|_| spec.sample(&mut rng) as f32).collect();
    Tensor::new(shape.to_vec(), data).map_err(|e| match e {
        Error::InvalidTensor(m) => Error::InvalidDistribution(format!("{spec} produced a non-finite sample: {m}")),
        other => other,
    })
}
