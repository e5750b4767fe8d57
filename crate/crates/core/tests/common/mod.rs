//! Helpers shared by the integration tests: an independent brute-force
//! encoder and seeded input generators.

#![allow(dead_code)]

use mofq::tensorio::rng::SplitMix64;
use mofq::tensorio::{gen_synthetic, DistSpec};
use mofq::{Code, Decoded, NumberFormat, Tensor};

pub const ORACLE_FORMATS: [&str; 6] = ["int4", "int8", "fp4_e2m1", "fp4_e2m1_ieee", "fp8_e4m3", "fp8_e5m2"];

pub fn fmt(name: &str) -> NumberFormat {
    name.parse().unwrap()
}

/// Finite values an encoder may produce: every finite code except -0.
pub fn finite_codes(f: &NumberFormat) -> Vec<(Code, f64)> {
    f.enumerate_values()
        .into_iter()
        .filter_map(|(c, d)| match d {
            Decoded::Finite(v) if !(v == 0.0 && v.is_sign_negative()) => Some((c, v)),
            _ => None,
        })
        .collect()
}

/// Nearest finite value by exhaustive search; exact ties go to the code
/// with an even least significant bit.
pub fn oracle_encode(table: &[(Code, f64)], x: f64) -> Code {
    let mut best = table[0];
    let mut best_d = (x - best.1).abs();
    for &(c, v) in &table[1..] {
        let d = (x - v).abs();
        if d < best_d || (d == best_d && c.0 & 1 == 0 && best.0 .0 & 1 == 1) {
            best = (c, v);
            best_d = d;
        }
    }
    best.0
}

/// Smallest positive finite value of the format.
pub fn min_positive(table: &[(Code, f64)]) -> f64 {
    table.iter().map(|&(_, v)| v).filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min)
}

/// Inputs mixing log-uniform magnitudes from well below the smallest
/// subnormal to beyond saturation, exact midpoints between neighbouring
/// values, and exactly representable values, all with random sign.
pub fn oracle_inputs(table: &[(Code, f64)], max_finite: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut sorted: Vec<f64> = table.iter().map(|&(_, v)| v).collect();
    sorted.sort_by(f64::total_cmp);
    let lo = (min_positive(table) / 8.0).ln();
    let hi = (max_finite * 4.0).ln();
    (0..n)
        .map(|_| {
            let pick = rng.next_f64();
            let x = if pick < 0.6 {
                (lo + (hi - lo) * rng.next_f64()).exp()
            } else if pick < 0.9 {
                let i = (rng.next_u64() % (sorted.len() as u64 - 1)) as usize;
                0.5 * (sorted[i] + sorted[i + 1])
            } else {
                sorted[(rng.next_u64() % sorted.len() as u64) as usize]
            };
            if rng.next_bool() {
                -x
            } else {
                x
            }
        })
        .collect()
}

pub fn gaussian(shape: &[usize], seed: u64) -> Tensor {
    gen_synthetic(&DistSpec::Gaussian { mu: 0.0, sigma: 1.0 }, shape, seed).unwrap()
}

pub fn sample(spec: &str, shape: &[usize], seed: u64) -> Tensor {
    gen_synthetic(&spec.parse().unwrap(), shape, seed).unwrap()
}

/// Seed `i` of the pinned stream `stream`.
pub fn seed(stream: u64, i: u64) -> u64 {
    SplitMix64::derive(stream, i).next_u64()
}
