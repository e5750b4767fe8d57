//! Low-bit integer and minifloat number formats.
//!
//! Every format here fits in at most 8 bits, so a [`Code`] is a single byte
//! and each format can be enumerated exhaustively. Minifloats carry a sign
//! bit, `exp_bits` exponent bits and `man_bits` mantissa bits; exponent field
//! zero holds subnormals. What the all-ones exponent means is decided by the
//! [`SpecialPolicy`].
//!
//! Encoding is round-to-nearest with ties to the value whose lowest
//! mantissa (or integer) bit is zero, saturating at the largest finite
//! magnitude. Zero always encodes to the `+0` code.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How a minifloat uses its all-ones exponent field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpecialPolicy {
    /// All-ones exponent is Inf (zero mantissa) or NaN.
    Ieee,
    /// All-ones exponent holds ordinary normal numbers; no Inf, no NaN.
    Reallocated,
    /// Only all-ones exponent with all-ones mantissa is NaN; no Inf.
    FnSingleNan,
}

/// A sign + exponent + mantissa minifloat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FpFormat {
    exp_bits: u32,
    man_bits: u32,
    exp_bias: i32,
    policy: SpecialPolicy,
}

/// A signed, symmetric integer grid `[-(2^(bits-1) - 1), 2^(bits-1) - 1]`.
///
/// The most negative two's-complement code is never produced by `encode`
/// and decodes to [`Decoded::Unused`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IntFormat {
    bits: u32,
}

/// Which family a format belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Int,
    Fp,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Int => "int",
            Family::Fp => "fp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NumberFormat {
    Int(IntFormat),
    Fp(FpFormat),
}

/// A raw bit pattern, `< 2^bits` of its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Code(pub u8);

/// Meaning of a code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoded {
    Finite(f64),
    Infinity { negative: bool },
    NaN,
    /// The most negative integer code, outside the symmetric grid.
    Unused,
}

impl Decoded {
    pub fn finite(self) -> Option<f64> {
        match self {
            Decoded::Finite(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Decoded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decoded::Finite(v) => write!(f, "{v}"),
            Decoded::Infinity { negative: false } => f.write_str("Inf"),
            Decoded::Infinity { negative: true } => f.write_str("-Inf"),
            Decoded::NaN => f.write_str("NaN"),
            Decoded::Unused => f.write_str("unused"),
        }
    }
}

const MAX_BITS: u32 = 8;

impl FpFormat {
    /// Builds a format with the standard bias `2^(exp_bits-1) - 1`.
    pub fn new(exp_bits: u32, man_bits: u32, policy: SpecialPolicy) -> Result<Self> {
        if exp_bits == 0 || exp_bits > 6 {
            return Err(Error::FormatParse {
                token: format!("e{exp_bits}"),
                reason: "exponent bits must be in 1..=6".into(),
            });
        }
        let bias = (1i32 << (exp_bits - 1)) - 1;
        Self::with_bias(exp_bits, man_bits, bias, policy)
    }

    pub fn with_bias(exp_bits: u32, man_bits: u32, exp_bias: i32, policy: SpecialPolicy) -> Result<Self> {
        if exp_bits == 0 {
            return Err(Error::FormatParse {
                token: format!("e{exp_bits}"),
                reason: "at least one exponent bit is required".into(),
            });
        }
        if man_bits == 0 {
            return Err(Error::FormatParse {
                token: format!("m{man_bits}"),
                reason: "at least one mantissa bit is required".into(),
            });
        }
        if 1 + exp_bits + man_bits > MAX_BITS {
            return Err(Error::FormatParse {
                token: format!("e{exp_bits}m{man_bits}"),
                reason: format!("formats wider than {MAX_BITS} bits are not supported"),
            });
        }
        Ok(Self { exp_bits, man_bits, exp_bias, policy })
    }

    pub fn bits(&self) -> u32 {
        1 + self.exp_bits + self.man_bits
    }

    pub fn exp_bits(&self) -> u32 {
        self.exp_bits
    }

    pub fn man_bits(&self) -> u32 {
        self.man_bits
    }

    pub fn exp_bias(&self) -> i32 {
        self.exp_bias
    }

    pub fn policy(&self) -> SpecialPolicy {
        self.policy
    }

    fn exp_field_max(&self) -> u32 {
        (1 << self.exp_bits) - 1
    }

    fn man_mask(&self) -> u32 {
        (1 << self.man_bits) - 1
    }

    /// Largest magnitude code (sign bit clear) that decodes to a finite value.
    fn max_magnitude_code(&self) -> u32 {
        let top = (self.exp_field_max() << self.man_bits) | self.man_mask();
        match self.policy {
            SpecialPolicy::Reallocated => top,
            SpecialPolicy::FnSingleNan => top - 1,
            SpecialPolicy::Ieee => (self.exp_field_max() << self.man_bits) - 1,
        }
    }

    fn magnitude_value(&self, mag: u32) -> f64 {
        let e = mag >> self.man_bits;
        let m = mag & self.man_mask();
        let frac = m as f64 / (1u64 << self.man_bits) as f64;
        if e == 0 {
            frac * pow2(1 - self.exp_bias)
        } else {
            (1.0 + frac) * pow2(e as i32 - self.exp_bias)
        }
    }

    pub fn max_finite(&self) -> f64 {
        self.magnitude_value(self.max_magnitude_code())
    }

    fn decode(&self, code: u8) -> Decoded {
        let code = code as u32;
        let negative = code >> (self.exp_bits + self.man_bits) & 1 == 1;
        let mag = code & ((1 << (self.exp_bits + self.man_bits)) - 1);
        let e = mag >> self.man_bits;
        let m = mag & self.man_mask();
        if e == self.exp_field_max() {
            match self.policy {
                SpecialPolicy::Ieee if m == 0 => return Decoded::Infinity { negative },
                SpecialPolicy::Ieee => return Decoded::NaN,
                SpecialPolicy::FnSingleNan if m == self.man_mask() => return Decoded::NaN,
                _ => {}
            }
        }
        let v = self.magnitude_value(mag);
        Decoded::Finite(if negative { -v } else { v })
    }

    fn encode(&self, x: f64) -> u8 {
        let a = x.abs();
        let mag = if a >= self.max_finite() {
            self.max_magnitude_code()
        } else {
            let min_normal_exp = 1 - self.exp_bias;
            let exp = if a < pow2(min_normal_exp) {
                min_normal_exp
            } else {
                binade(a)
            };
            let quantum = pow2(exp - self.man_bits as i32);
            // Integer significand; its parity is the mantissa LSB, so
            // ties-to-even here is ties-to-even-mantissa.
            let q = (a / quantum).round_ties_even() as u32;
            if a < pow2(min_normal_exp) {
                // Subnormal codes are the significand itself; q == 2^M carries
                // into the smallest normal code.
                q
            } else {
                let e_field = (exp + self.exp_bias) as u32;
                (e_field << self.man_bits) + q - (1 << self.man_bits)
            }
        };
        if mag == 0 {
            0
        } else if x < 0.0 {
            (mag | (1 << (self.exp_bits + self.man_bits))) as u8
        } else {
            mag as u8
        }
    }

    fn default_policy(bits: u32, exp_bits: u32, man_bits: u32) -> SpecialPolicy {
        match (bits, exp_bits, man_bits) {
            (4, _, _) => SpecialPolicy::Reallocated,
            (8, 4, 3) => SpecialPolicy::FnSingleNan,
            _ => SpecialPolicy::Ieee,
        }
    }
}

impl IntFormat {
    pub fn new(bits: u32) -> Result<Self> {
        if !(2..=MAX_BITS).contains(&bits) {
            return Err(Error::FormatParse {
                token: format!("int{bits}"),
                reason: format!("integer width must be in 2..={MAX_BITS}"),
            });
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn qmax(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }

    fn decode(&self, code: u8) -> Decoded {
        let raw = code as i32;
        let v = if raw >= 1 << (self.bits - 1) { raw - (1 << self.bits) } else { raw };
        if v < -self.qmax() {
            Decoded::Unused
        } else {
            Decoded::Finite(v as f64)
        }
    }

    fn encode(&self, x: f64) -> u8 {
        let q = self.qmax() as f64;
        let r = x.round_ties_even().clamp(-q, q) as i32;
        (r & ((1 << self.bits) - 1)) as u8
    }
}

impl NumberFormat {
    pub fn int(bits: u32) -> Result<Self> {
        Ok(NumberFormat::Int(IntFormat::new(bits)?))
    }

    pub fn fp(exp_bits: u32, man_bits: u32, policy: SpecialPolicy) -> Result<Self> {
        Ok(NumberFormat::Fp(FpFormat::new(exp_bits, man_bits, policy)?))
    }

    pub fn bits(&self) -> u32 {
        match self {
            NumberFormat::Int(f) => f.bits(),
            NumberFormat::Fp(f) => f.bits(),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            NumberFormat::Int(_) => Family::Int,
            NumberFormat::Fp(_) => Family::Fp,
        }
    }

    pub fn is_fp(&self) -> bool {
        self.family() == Family::Fp
    }

    pub fn code_count(&self) -> usize {
        1 << self.bits()
    }

    /// Largest finite representable magnitude.
    pub fn max_finite(&self) -> f64 {
        match self {
            NumberFormat::Int(f) => f.qmax() as f64,
            NumberFormat::Fp(f) => f.max_finite(),
        }
    }

    /// Round-to-nearest-even encoding with saturation.
    pub fn encode(&self, x: f64) -> Result<Code> {
        if !x.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        Ok(Code(match self {
            NumberFormat::Int(f) => f.encode(x),
            NumberFormat::Fp(f) => f.encode(x),
        }))
    }

    /// Decodes any code below `2^bits`; higher bits are ignored.
    pub fn decode(&self, code: Code) -> Decoded {
        let code = code.0 & (self.code_count() - 1) as u8;
        match self {
            NumberFormat::Int(f) => f.decode(code),
            NumberFormat::Fp(f) => f.decode(code),
        }
    }

    /// Every code of the format in ascending code order with its meaning.
    pub fn enumerate_values(&self) -> Vec<(Code, Decoded)> {
        (0..self.code_count())
            .map(|c| {
                let code = Code(c as u8);
                (code, self.decode(code))
            })
            .collect()
    }

    /// Canonical name; parses back to the same format.
    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for NumberFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumberFormat::Int(i) => write!(f, "int{}", i.bits),
            NumberFormat::Fp(p) => {
                write!(f, "fp{}_e{}m{}", p.bits(), p.exp_bits, p.man_bits)?;
                if p.policy != FpFormat::default_policy(p.bits(), p.exp_bits, p.man_bits) {
                    f.write_str(match p.policy {
                        SpecialPolicy::Ieee => "_ieee",
                        SpecialPolicy::FnSingleNan => "_fn",
                        SpecialPolicy::Reallocated => "_realloc",
                    })?;
                }
                let std_bias = (1i32 << (p.exp_bits - 1)) - 1;
                if p.exp_bias != std_bias {
                    write!(f, "_b{}", p.exp_bias)?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for NumberFormat {
    type Err = Error;

    /// Accepts `int<bits>` and `fp<bits>_e<E>m<M>[_ieee|_fn|_realloc][_b<bias>]`.
    fn from_str(s: &str) -> Result<Self> {
        let name = s.trim().to_ascii_lowercase();
        let bad = |reason: &str| Error::FormatParse { token: s.to_string(), reason: reason.to_string() };

        if let Some(rest) = name.strip_prefix("int") {
            let bits: u32 = rest.parse().map_err(|_| bad("expected int<bits>"))?;
            return NumberFormat::int(bits).map_err(|_| bad("integer width must be in 2..=8"));
        }
        let rest = name.strip_prefix("fp").ok_or_else(|| bad("unknown format family"))?;
        let mut parts = rest.split('_');
        let bits: u32 = parts
            .next()
            .and_then(|b| b.parse().ok())
            .ok_or_else(|| bad("expected fp<bits>_e<E>m<M>"))?;
        let em = parts.next().ok_or_else(|| bad("missing e<E>m<M> field"))?;
        let (e, m) = em
            .strip_prefix('e')
            .and_then(|x| x.split_once('m'))
            .ok_or_else(|| bad("expected e<E>m<M>"))?;
        let exp_bits: u32 = e.parse().map_err(|_| bad("bad exponent width"))?;
        let man_bits: u32 = m.parse().map_err(|_| bad("bad mantissa width"))?;
        if 1 + exp_bits + man_bits != bits {
            return Err(bad(&format!("1 + {exp_bits} + {man_bits} does not equal {bits} bits")));
        }
        let mut policy = FpFormat::default_policy(bits, exp_bits, man_bits);
        let mut bias = None;
        for suffix in parts {
            match suffix {
                "ieee" => policy = SpecialPolicy::Ieee,
                "fn" => policy = SpecialPolicy::FnSingleNan,
                "realloc" => policy = SpecialPolicy::Reallocated,
                b if b.starts_with('b') => {
                    bias = Some(b[1..].parse::<i32>().map_err(|_| bad("bad bias suffix"))?);
                }
                other => return Err(bad(&format!("unknown suffix `{other}`"))),
            }
        }
        let fmt = match bias {
            None => FpFormat::new(exp_bits, man_bits, policy),
            Some(b) => FpFormat::with_bias(exp_bits, man_bits, b, policy),
        }
        .map_err(|e| match e {
            Error::FormatParse { reason, .. } => bad(&reason),
            other => other,
        })?;
        if fmt.max_finite() <= 0.0 {
            return Err(bad("format has no positive finite value"));
        }
        Ok(NumberFormat::Fp(fmt))
    }
}

impl serde::Serialize for NumberFormat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> serde::Deserialize<'de> for NumberFormat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

/// `floor(log2(a))` for a positive normal f64, read off the exponent bits.
fn binade(a: f64) -> i32 {
    ((a.to_bits() >> 52) & 0x7ff) as i32 - 1023
}
