//! Exact rotary position embedding.
//!
//! Rotation pairs are adjacent coordinates `(2i, 2i + 1)`, each rotated by
//! `m * theta_i` with `theta_i = base^(-2i/d)`. The rotation matrix is never
//! materialised; every operation works pair by pair in `f64`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Head dimension and frequency base of a rotary embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRopeConfig")]
pub struct RopeConfig {
    dim: usize,
    theta_base: f64,
}

#[derive(Deserialize)]
struct RawRopeConfig {
    dim: usize,
    theta_base: f64,
}

impl TryFrom<RawRopeConfig> for RopeConfig {
    type Error = Error;

    fn try_from(raw: RawRopeConfig) -> Result<Self> {
        RopeConfig::new(raw.dim, raw.theta_base)
    }
}

impl RopeConfig {
    pub fn new(dim: usize, theta_base: f64) -> Result<Self> {
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(Error::InvalidDim(dim));
        }
        if !theta_base.is_finite() || theta_base <= 1.0 {
            return Err(Error::InvalidTheta(theta_base));
        }
        Ok(Self { dim, theta_base })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta_base(&self) -> f64 {
        self.theta_base
    }

    /// Number of rotation pairs, `dim / 2`.
    pub fn pairs(&self) -> usize {
        self.dim / 2
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len == self.dim {
            Ok(())
        } else {
            Err(Error::DimMismatch {
                expected: self.dim,
                actual: len,
            })
        }
    }
}

/// A query or key vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct HeadVector(Vec<f64>);

impl HeadVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(values))
    }

    /// Vector with every entry equal to `value`. Non-finite values are
    /// replaced by zero.
    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![if value.is_finite() { value } else { 0.0 }; dim])
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn ones(dim: usize) -> Self {
        Self(vec![1.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &HeadVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl TryFrom<Vec<f64>> for HeadVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl<'de> Deserialize<'de> for HeadVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        HeadVector::new(values).map_err(serde::de::Error::custom)
    }
}

/// Position of a token in the sequence seen by the language model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PositionId(pub u64);

impl From<u64> for PositionId {
    fn from(id: u64) -> Self {
        Self(id)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `theta_i = base^(-2i/d)` for `i` in `0..d/2`.
pub fn rope_frequencies(config: &RopeConfig) -> Vec<f64> {
    let d = config.dim as f64;
    (0..config.pairs())
        .map(|i| config.theta_base.powf(-2.0 * i as f64 / d))
        .collect()
}

/// Cosine and sine tables of `R_m` for one (possibly negative) position.
#[derive(Debug, Clone)]
pub struct Rotation {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Rotation {
    pub fn new(config: &RopeConfig, position: i64) -> Self {
        Self::from_frequencies(&rope_frequencies(config), position)
    }

    pub fn from_frequencies(frequencies: &[f64], position: i64) -> Self {
        let m = position as f64;
        let (sin, cos) = frequencies.iter().map(|&t| (m * t).sin_cos()).unzip();
        Self { cos, sin }
    }

    pub fn dim(&self) -> usize {
        self.cos.len() * 2
    }

    /// Writes `R_m v` into `out`. Both slices must have length `dim`.
    pub fn rotate_into(&self, v: &[f64], out: &mut [f64]) {
        for (i, (&c, &s)) in self.cos.iter().zip(&self.sin).enumerate() {
            let (x, y) = (v[2 * i], v[2 * i + 1]);
            out[2 * i] = c * x - s * y;
            out[2 * i + 1] = s * x + c * y;
        }
    }

    /// `q . (R_m k)` without allocating the rotated key.
    pub fn rotated_dot(&self, q: &[f64], k: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, (&c, &s)) in self.cos.iter().zip(&self.sin).enumerate() {
            let (q0, q1) = (q[2 * i], q[2 * i + 1]);
            let (k0, k1) = (k[2 * i], k[2 * i + 1]);
            acc += q0 * (c * k0 - s * k1) + q1 * (s * k0 + c * k1);
        }
        acc
    }
}

/// `R_m v`.
pub fn apply_rope(v: &HeadVector, m: PositionId, config: &RopeConfig) -> Result<HeadVector> {
    config.check_len(v.len())?;
    let rotation = Rotation::new(config, m.0 as i64);
    let mut out = vec![0.0; v.len()];
    rotation.rotate_into(v.as_slice(), &mut out);
    Ok(HeadVector(out))
}

/// `(R_m q) . (R_n k)`, evaluated by rotating both vectors.
pub fn rope_dot(
    q: &HeadVector,
    m: PositionId,
    k: &HeadVector,
    n: PositionId,
    config: &RopeConfig,
) -> Result<f64> {
    config.check_len(q.len())?;
    config.check_len(k.len())?;
    let rq = apply_rope(q, m, config)?;
    let rk = apply_rope(k, n, config)?;
    Ok(rq.dot(&rk))
}

/// `q . (R_offset k)`; equals `rope_dot(q, m, k, m + offset)` for any `m`.
pub fn relative_dot(
    q: &HeadVector,
    k: &HeadVector,
    offset: i64,
    config: &RopeConfig,
) -> Result<f64> {
    config.check_len(q.len())?;
    config.check_len(k.len())?;
    Ok(Rotation::new(config, offset).rotated_dot(q.as_slice(), k.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(dim: usize, theta: f64) -> RopeConfig {
        RopeConfig::new(dim, theta).unwrap()
    }

    fn hv(v: &[f64]) -> HeadVector {
        HeadVector::new(v.to_vec()).unwrap()
    }

    /// Dense block-diagonal `R_m`, row-major.
    fn dense_rotation(config: &RopeConfig, m: f64) -> Vec<Vec<f64>> {
        let d = config.dim();
        let mut r = vec![vec![0.0; d]; d];
        for i in 0..d / 2 {
            let theta = (-(2.0 * i as f64) / d as f64 * config.theta_base().ln()).exp();
            let (s, c) = (m * theta).sin_cos();
            r[2 * i][2 * i] = c;
            r[2 * i][2 * i + 1] = -s;
            r[2 * i + 1][2 * i] = s;
            r[2 * i + 1][2 * i + 1] = c;
        }
        r
    }

    fn matvec(r: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        r.iter().map(|row| dot(row, v)).collect()
    }

    #[test]
    fn config_validation() {
        assert_eq!(RopeConfig::new(0, 1e4), Err(Error::InvalidDim(0)));
        assert_eq!(RopeConfig::new(3, 1e4), Err(Error::InvalidDim(3)));
        assert_eq!(RopeConfig::new(4, 1.0), Err(Error::InvalidTheta(1.0)));
        assert!(RopeConfig::new(4, f64::NAN).is_err());
        assert!(RopeConfig::new(2, 1e7).is_ok());
    }

    #[test]
    fn config_deserialize_validates() {
        let ok: RopeConfig = serde_json::from_str(r#"{"dim":8,"theta_base":10000.0}"#).unwrap();
        assert_eq!(ok.dim(), 8);
        assert!(serde_json::from_str::<RopeConfig>(r#"{"dim":7,"theta_base":10000.0}"#).is_err());
    }

    #[test]
    fn head_vector_rejects_non_finite() {
        assert_eq!(
            HeadVector::new(vec![1.0, f64::INFINITY]),
            Err(Error::NonFinite { index: 1 })
        );
    }

    #[test]
    fn frequencies_small_cases() {
        let f = rope_frequencies(&cfg(4, 1e4));
        assert_eq!(f.len(), 2);
        assert_eq!(f[0], 1.0);
        assert_abs_diff_eq!(f[1], 0.01, epsilon = 1e-15);
        assert_eq!(rope_frequencies(&cfg(2, 1e7)), vec![1.0]);
    }

    #[test]
    fn frequencies_match_log_oracle() {
        let config = cfg(128, 1e4);
        let f = rope_frequencies(&config);
        assert_eq!(f.len(), 64);
        for (i, &t) in f.iter().enumerate() {
            let oracle = (-(2.0 * i as f64 / 128.0) * 1e4f64.ln()).exp();
            assert!((t - oracle).abs() <= 1e-12 * oracle);
        }
        // 10^(-4 * 126/128)
        assert!((f[63] - 10f64.powf(-4.0 * 126.0 / 128.0)).abs() <= 1e-12 * f[63]);
        assert!(f.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn rotation_at_zero_is_identity() {
        let config = cfg(6, 1e4);
        let v = hv(&[0.3, -1.2, 4.0, 0.5, -0.1, 2.2]);
        assert_eq!(apply_rope(&v, PositionId(0), &config).unwrap(), v);
    }

    #[test]
    fn unit_vector_rotates_by_one_radian() {
        let out = apply_rope(&hv(&[1.0, 0.0]), PositionId(1), &cfg(2, 123.0)).unwrap();
        assert_abs_diff_eq!(out.as_slice()[0], 1f64.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(out.as_slice()[1], 1f64.sin(), epsilon = 1e-15);
    }

    #[test]
    fn rotation_matches_dense_oracle() {
        let config = cfg(4, 1e4);
        let v = hv(&[1.0, 1.0, 1.0, 1.0]);
        let out = apply_rope(&v, PositionId(7), &config).unwrap();
        let expected = matvec(&dense_rotation(&config, 7.0), v.as_slice());
        for (a, b) in out.as_slice().iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn dot_at_equal_positions_is_plain_dot() {
        let config = cfg(64, 1e4);
        let ones = HeadVector::ones(64);
        assert_abs_diff_eq!(
            rope_dot(&ones, PositionId(3), &ones, PositionId(3), &config).unwrap(),
            64.0,
            epsilon = 1e-12
        );
        let q = hv(&(0..64).map(|i| (i as f64).sin()).collect::<Vec<_>>());
        let k = hv(&(0..64).map(|i| (i as f64 * 0.7).cos()).collect::<Vec<_>>());
        assert_abs_diff_eq!(
            rope_dot(&q, PositionId(1000), &k, PositionId(1000), &config).unwrap(),
            q.dot(&k),
            epsilon = 1e-9
        );
    }

    #[test]
    fn dot_shift_identity() {
        let config = cfg(8, 1e4);
        let q = hv(&[0.1, 0.2, -0.3, 0.4, 1.5, -0.6, 0.7, 0.8]);
        let k = hv(&[-1.0, 0.5, 0.25, 2.0, -0.75, 0.1, 0.3, -0.2]);
        let a = rope_dot(&q, PositionId(5), &k, PositionId(9), &config).unwrap();
        let b = rope_dot(&q, PositionId(0), &k, PositionId(4), &config).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        assert_abs_diff_eq!(a, relative_dot(&q, &k, 4, &config).unwrap(), epsilon = 1e-9);
        // dense oracle: q^T R_4 k
        let rk = matvec(&dense_rotation(&config, 4.0), k.as_slice());
        assert_abs_diff_eq!(a, dot(q.as_slice(), &rk), epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let config = cfg(4, 1e4);
        let short = HeadVector::ones(2);
        assert_eq!(
            apply_rope(&short, PositionId(1), &config),
            Err(Error::DimMismatch {
                expected: 4,
                actual: 2
            })
        );
        assert!(rope_dot(
            &HeadVector::ones(4),
            PositionId(0),
            &short,
            PositionId(0),
            &config
        )
        .is_err());
    }
}
