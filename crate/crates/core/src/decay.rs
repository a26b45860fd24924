//! Long-term decay analysis of rotary attention scores.
//!
//! Three independent views of `q . (R_m k)` as a function of the relative
//! distance `m`:
//!
//! - the summation-by-parts bound `|sum h_i e^{i m theta_i}| <=
//!   max|h_{i+1} - h_i| * sum |S_{i+1}|` ([`abel_bound_check`]),
//! - the exact expectation `mu_q . (R_m mu_k)` for `q ~ N(mu_q, I)`,
//!   `k ~ N(mu_k, I)` written as `sum A_i cos(m theta_i) + B_i sin(m theta_i)`
//!   ([`expected_dot_closed_form`]),
//! - a seeded Monte Carlo estimate of the same expectation
//!   ([`monte_carlo_expected_dot`], [`decay_profile`]).

use std::io::{self, Write};
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, stream_rng};
use crate::rope::{rope_frequencies, HeadVector, RopeConfig, Rotation};
use crate::{Error, Execution, Result};

/// Samples drawn per random stream. Fixed so estimates do not depend on the
/// number of worker threads.
pub const SAMPLES_PER_CHUNK: usize = 4096;

/// Mean of a shifted normal query or key distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeanVector(HeadVector);

impl MeanVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        HeadVector::new(values).map(Self)
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self(HeadVector::filled(dim, value))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(HeadVector::zeros(dim))
    }

    pub fn as_head(&self) -> &HeadVector {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<HeadVector> for MeanVector {
    fn from(v: HeadVector) -> Self {
        Self(v)
    }
}

/// Named mean-vector families accepted on the command line.
///
/// Text forms: `zeros`, `ones:<c>` (every entry `c`), `alt:<c>` (entries
/// `c, -c, c, ...`), `values:<v0>,<v1>,...`.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanPreset {
    Zeros,
    Constant(f64),
    Alternating(f64),
    Values(Vec<f64>),
}

impl MeanPreset {
    pub fn materialize(&self, dim: usize) -> Result<MeanVector> {
        match self {
            MeanPreset::Zeros => Ok(MeanVector::zeros(dim)),
            MeanPreset::Constant(c) => MeanVector::new(vec![*c; dim]),
            MeanPreset::Alternating(c) => MeanVector::new(
                (0..dim)
                    .map(|i| if i % 2 == 0 { *c } else { -*c })
                    .collect(),
            ),
            MeanPreset::Values(v) => {
                if v.len() != dim {
                    return Err(Error::DimMismatch {
                        expected: dim,
                        actual: v.len(),
                    });
                }
                MeanVector::new(v.clone())
            }
        }
    }
}

impl FromStr for MeanPreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s == "zeros" {
            return Ok(MeanPreset::Zeros);
        }
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| format!("unknown mean preset {s:?}"))?;
        let scalar = || {
            arg.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("invalid scalar in mean preset {s:?}"))
        };
        match kind {
            "ones" | "const" => Ok(MeanPreset::Constant(scalar()?)),
            "alt" => Ok(MeanPreset::Alternating(scalar()?)),
            "values" => arg
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(MeanPreset::Values),
            _ => Err(format!("unknown mean preset {s:?}")),
        }
    }
}

/// Outcome of the summation-by-parts bound at one relative distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbelReport {
    pub relative_distance: u64,
    /// `|sum_i h_i e^{i delta theta_i}|` with `h_i = conj(q_i) k_i` over complex pairs.
    pub lhs_magnitude: f64,
    /// `q . (R_delta k)`, the real part of the complex sum, from the rotation path.
    pub real_dot: f64,
    /// `max_i |h_{i+1} - h_i| * sum_i |S_{i+1}|`.
    pub bound_value: f64,
    /// `(1 / (d/2)) * sum_j |S_j|`.
    pub partial_sum_mean: f64,
}

impl AbelReport {
    pub fn holds(&self) -> bool {
        self.lhs_magnitude <= self.bound_value + 1e-9
            && self.real_dot.abs() <= self.lhs_magnitude + 1e-9
    }
}

fn partial_sums(delta: u64, frequencies: &[f64]) -> Vec<Complex64> {
    let m = delta as f64;
    frequencies
        .iter()
        .scan(Complex64::new(0.0, 0.0), |acc, &t| {
            *acc += Complex64::from_polar(1.0, m * t);
            Some(*acc)
        })
        .collect()
}

/// `|S_j|` for `j = 1..=d/2`, where `S_j = sum_{i<j} e^{i delta theta_i}`.
pub fn abel_partial_sums(delta: u64, config: &RopeConfig) -> Vec<f64> {
    partial_sums(delta, &rope_frequencies(config))
        .into_iter()
        .map(|s| s.norm())
        .collect()
}

/// `(1 / (d/2)) * sum_{j=1}^{d/2} |S_j|`.
pub fn partial_sum_mean(delta: u64, config: &RopeConfig) -> f64 {
    let sums = abel_partial_sums(delta, config);
    sums.iter().sum::<f64>() / sums.len() as f64
}

pub fn abel_bound_check(
    q: &HeadVector,
    k: &HeadVector,
    delta: u64,
    config: &RopeConfig,
) -> Result<AbelReport> {
    config.check_len(q.len())?;
    config.check_len(k.len())?;
    let frequencies = rope_frequencies(config);
    let (q, k) = (q.as_slice(), k.as_slice());
    let h: Vec<Complex64> = (0..config.pairs())
        .map(|i| {
            Complex64::new(q[2 * i], q[2 * i + 1]).conj() * Complex64::new(k[2 * i], k[2 * i + 1])
        })
        .collect();

    let m = delta as f64;
    let lhs: Complex64 = h
        .iter()
        .zip(&frequencies)
        .map(|(h, &t)| h * Complex64::from_polar(1.0, m * t))
        .sum();

    let sums = partial_sums(delta, &frequencies);
    let max_step = (0..h.len())
        .map(|i| {
            let next = h.get(i + 1).copied().unwrap_or_default();
            (next - h[i]).norm()
        })
        .fold(0.0, f64::max);
    let sum_abs: f64 = sums.iter().map(|s| s.norm()).sum();

    let real_dot = Rotation::from_frequencies(&frequencies, delta as i64).rotated_dot(q, k);

    Ok(AbelReport {
        relative_distance: delta,
        lhs_magnitude: lhs.norm(),
        real_dot,
        bound_value: max_step * sum_abs,
        partial_sum_mean: sum_abs / sums.len() as f64,
    })
}

fn check_means(mu_q: &MeanVector, mu_k: &MeanVector, config: &RopeConfig) -> Result<()> {
    config.check_len(mu_q.len())?;
    config.check_len(mu_k.len())
}

/// `sum_i A_i cos(m theta_i) + B_i sin(m theta_i)` with
/// `A_i = mq[2i] mk[2i] + mq[2i+1] mk[2i+1]` and
/// `B_i = mq[2i+1] mk[2i] - mq[2i] mk[2i+1]`.
pub fn expected_dot_closed_form(
    mu_q: &MeanVector,
    mu_k: &MeanVector,
    m: i64,
    config: &RopeConfig,
) -> Result<f64> {
    check_means(mu_q, mu_k, config)?;
    let (a, b) = (mu_q.as_slice(), mu_k.as_slice());
    let m = m as f64;
    Ok(rope_frequencies(config)
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let big_a = a[2 * i] * b[2 * i] + a[2 * i + 1] * b[2 * i + 1];
            let big_b = a[2 * i + 1] * b[2 * i] - a[2 * i] * b[2 * i + 1];
            let (s, c) = (m * t).sin_cos();
            big_a * c + big_b * s
        })
        .sum())
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl MonteCarloEstimate {
    /// `|mean - expected| <= sigmas * stderr`.
    pub fn within(&self, expected: f64, sigmas: f64) -> bool {
        (self.mean - expected).abs() <= sigmas * self.stderr
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64,
        }
    }
}

fn sample_chunk(
    mu_q: &[f64],
    mu_k: &[f64],
    rotation: &Rotation,
    count: usize,
    seed: u64,
    stream: u64,
) -> Moments {
    let mut rng = stream_rng(seed, stream);
    let d = mu_q.len();
    let mut q = vec![0.0; d];
    let mut k = vec![0.0; d];
    let mut moments = Moments::default();
    for _ in 0..count {
        for (x, mu) in q.iter_mut().zip(mu_q) {
            *x = mu + rng.sample::<f64, _>(StandardNormal);
        }
        for (x, mu) in k.iter_mut().zip(mu_k) {
            *x = mu + rng.sample::<f64, _>(StandardNormal);
        }
        moments.push(rotation.rotated_dot(&q, &k));
    }
    moments
}

/// Estimates `E[(R_0 q) . (R_m k)]` with `q ~ N(mu_q, I)`, `k ~ N(mu_k, I)`.
pub fn monte_carlo_expected_dot(
    mu_q: &MeanVector,
    mu_k: &MeanVector,
    m: i64,
    samples: usize,
    seed: u64,
    config: &RopeConfig,
) -> Result<MonteCarloEstimate> {
    monte_carlo_expected_dot_with(mu_q, mu_k, m, samples, seed, config, Execution::default())
}

pub fn monte_carlo_expected_dot_with(
    mu_q: &MeanVector,
    mu_k: &MeanVector,
    m: i64,
    samples: usize,
    seed: u64,
    config: &RopeConfig,
    exec: Execution,
) -> Result<MonteCarloEstimate> {
    if samples < 2 {
        return Err(Error::TooFewSamples(samples));
    }
    check_means(mu_q, mu_k, config)?;
    let rotation = Rotation::new(config, m);
    let chunks = samples.div_ceil(SAMPLES_PER_CHUNK);
    let parts = exec.map_range(chunks, |c| {
        let count = SAMPLES_PER_CHUNK.min(samples - c * SAMPLES_PER_CHUNK);
        sample_chunk(
            mu_q.as_slice(),
            mu_k.as_slice(),
            &rotation,
            count,
            seed,
            c as u64,
        )
    });
    let total = parts.into_iter().fold(Moments::default(), Moments::merge);
    let variance = total.m2 / (total.n - 1) as f64;
    Ok(MonteCarloEstimate {
        mean: total.mean,
        stderr: (variance / total.n as f64).sqrt(),
        samples,
    })
}

/// Mean rotary dot product per relative distance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayProfile {
    pub distances: Vec<u64>,
    pub mean_dot: Vec<f64>,
    pub stderr: Vec<f64>,
    pub sample_count: usize,
}

impl DecayProfile {
    pub const CSV_HEADER: &'static str = "rel_distance,mean_dot,stderr,samples";

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for ((d, m), s) in self.distances.iter().zip(&self.mean_dot).zip(&self.stderr) {
            writeln!(out, "{d},{m},{s},{}", self.sample_count)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }
}

/// Seed used for the `index`-th distance of a profile generated from `seed`.
pub fn distance_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

/// One Monte Carlo estimate per distance, each on its own derived seed.
pub fn decay_profile(
    mu_q: &MeanVector,
    mu_k: &MeanVector,
    distances: &[u64],
    samples: usize,
    seed: u64,
    config: &RopeConfig,
) -> Result<DecayProfile> {
    decay_profile_with(
        mu_q,
        mu_k,
        distances,
        samples,
        seed,
        config,
        Execution::default(),
    )
}

pub fn decay_profile_with(
    mu_q: &MeanVector,
    mu_k: &MeanVector,
    distances: &[u64],
    samples: usize,
    seed: u64,
    config: &RopeConfig,
    exec: Execution,
) -> Result<DecayProfile> {
    if distances.is_empty() {
        return Err(Error::EmptyDistances);
    }
    if distances.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::UnsortedDistances);
    }
    if samples < 2 {
        return Err(Error::TooFewSamples(samples));
    }
    check_means(mu_q, mu_k, config)?;
    let estimates = exec
        .map_range(distances.len(), |i| {
            monte_carlo_expected_dot_with(
                mu_q,
                mu_k,
                distances[i] as i64,
                samples,
                distance_seed(seed, i),
                config,
                exec,
            )
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(DecayProfile {
        distances: distances.to_vec(),
        mean_dot: estimates.iter().map(|e| e.mean).collect(),
        stderr: estimates.iter().map(|e| e.stderr).collect(),
        sample_count: samples,
    })
}

/// `0` (when `start == 0`) followed by the powers of two in `[max(start, 1), end]`,
/// with `end` appended when it is not itself a power of two.
pub fn log_spaced_distances(start: u64, end: u64) -> Vec<u64> {
    let mut out = Vec::new();
    if start == 0 {
        out.push(0);
    }
    let mut p = 1u64;
    while p <= end {
        if p >= start {
            out.push(p);
        }
        match p.checked_mul(2) {
            Some(next) => p = next,
            None => break,
        }
    }
    if end > 0 && out.last() != Some(&end) && end >= start {
        out.push(end);
    }
    out
}
