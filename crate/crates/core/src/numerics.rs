//! Dense vector algebra and the deterministic random source.
//!
//! Every reduction accumulates in ascending index order so that a run is
//! bitwise reproducible for a given seed.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat parameter or gradient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Unit basis vector `e_j`.
    pub fn basis(dim: usize, j: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[j] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn scaled(&self, alpha: f64) -> ParamVector {
        Self(self.0.iter().map(|x| alpha * x).collect())
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_dims(self, other)?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// In-place `self += alpha * x`.
    pub fn add_scaled(&mut self, alpha: f64, x: &ParamVector) -> Result<()> {
        check_dims(self, x)?;
        for (y, xv) in self.0.iter_mut().zip(&x.0) {
            *y += alpha * xv;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

fn check_dims(a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

pub fn dot(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_dims(a, b)?;
    Ok(dot_slices(&a.0, &b.0))
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn l2_norm(v: &ParamVector) -> f64 {
    dot_slices(&v.0, &v.0).sqrt()
}

/// Returns `y + alpha * x`.
pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    let mut out = y.clone();
    out.add_scaled(alpha, x)?;
    Ok(out)
}

/// Central-difference gradient of `f` at `w`.
pub fn finite_diff_grad<F>(f: F, w: &ParamVector, h: f64) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    let mut probe = w.clone();
    let mut out = Vec::with_capacity(w.dim());
    for j in 0..w.dim() {
        let orig = probe.0[j];
        probe.0[j] = orig + h;
        let fp = f(&probe);
        probe.0[j] = orig - h;
        let fm = f(&probe);
        probe.0[j] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective evaluated to non-finite value at coordinate {j}"
            )));
        }
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(ParamVector(out))
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 generator.
///
/// The state transition is `state += 0x9E3779B97F4A7C15`, and each output is
/// the finalizer
///
/// ```text
/// z = state
/// z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
/// z = (z ^ (z >> 27)) * 0x94D049BB133111EB
/// out = z ^ (z >> 31)
/// ```
///
/// with wrapping 64-bit arithmetic. Derived streams ([`RngStream::derive`])
/// start at `mix(seed ^ domain) + (stream_id << 32) * GAMMA`, so two streams
/// sharing a base occupy disjoint windows of 2^32 consecutive counter values.
///
/// Floats are `(next_u64() >> 11) * 2^-53`, bounded integers use Lemire's
/// multiply-shift with rejection, and normals use Box-Muller on two uniforms
/// (the cosine branch only).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
}

/// Stream domains for [`RngStream::derive`].
pub mod domain {
    pub const DATA: u64 = 0x6461_7461;
    pub const TEST_DATA: u64 = 0x7465_7374;
    pub const PARTITION: u64 = 0x7061_7274;
    pub const CLIENT: u64 = 0x636c_6e74;
    pub const CENTRAL: u64 = 0x6365_6e74;
}

fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent sub-stream `stream_id` of `seed` within `domain`.
    pub fn derive(seed: u64, domain: u64, stream_id: u32) -> Self {
        let base = splitmix_finalize(seed ^ domain);
        let offset = ((stream_id as u64) << 32).wrapping_mul(GOLDEN_GAMMA);
        Self {
            state: base.wrapping_add(offset),
        }
    }

    /// Sub-stream for client `client` in round `round`. Both must be < 2^16.
    pub fn for_round(seed: u64, round: u32, client: usize) -> Self {
        assert!(round < 1 << 16, "round index {round} exceeds 2^16");
        assert!(client < 1 << 16, "client index {client} exceeds 2^16");
        Self::derive(seed, domain::CLIENT, (round << 16) | client as u32)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        splitmix_finalize(self.state)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> ParamVector {
        ParamVector::new(xs.to_vec())
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap(), 11.0);
        assert_eq!(dot(&v(&[5.0, -7.0]), &ParamVector::zeros(2)).unwrap(), 0.0);
        let e1 = ParamVector::basis(3, 1);
        assert_eq!(dot(&e1, &e1).unwrap(), 1.0);
    }

    #[test]
    fn dot_rejects_mismatch() {
        let err = dot(&v(&[1.0]), &v(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 1, actual: 2 }));
    }

    #[test]
    fn norm_examples() {
        assert_eq!(l2_norm(&v(&[3.0, 4.0])), 5.0);
        assert_eq!(l2_norm(&ParamVector::zeros(4)), 0.0);
        assert_eq!(l2_norm(&v(&[1.0, 1.0, 1.0, 1.0])), 2.0);
    }

    #[test]
    fn axpy_examples() {
        let x = v(&[1.0, 0.0]);
        let y = v(&[1.0, 1.0]);
        assert_eq!(axpy(0.0, &x, &y).unwrap(), y);
        assert_eq!(axpy(1.0, &x, &ParamVector::zeros(2)).unwrap(), x);
        let out = axpy(-0.1, &x, &y).unwrap();
        assert!((out[0] - 0.9).abs() < 1e-15);
        assert_eq!(out[1], 1.0);
        assert!(axpy(1.0, &x, &v(&[1.0])).is_err());
    }

    #[test]
    fn finite_diff_examples() {
        let w = v(&[1.0, 2.0]);
        let g = finite_diff_grad(|w| dot(w, w).unwrap(), &w, 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);

        let g = finite_diff_grad(|_| 3.5, &w, 1e-5).unwrap();
        assert!(g.is_zero());

        let g = finite_diff_grad(|w| w[0], &v(&[-3.0, 9.0, 0.5]), 1e-3).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-12);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn finite_diff_rejects_bad_inputs() {
        let w = v(&[1.0]);
        assert!(finite_diff_grad(|w| w[0], &w, 0.0).is_err());
        assert!(matches!(
            finite_diff_grad(|_| f64::NAN, &w, 1e-3),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn splitmix_reference_values() {
        // Published SplitMix64 outputs for seed 1234567.
        let mut rng = RngStream::new(1234567);
        let expected = [
            6457827717110365317u64,
            3203168211198807973,
            9817491932198370423,
            4593380528125082431,
            16408922859458223821,
        ];
        for e in expected {
            assert_eq!(rng.next_u64(), e);
        }
    }

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derived_streams_occupy_disjoint_windows() {
        // Stream j starts exactly 2^32 steps after stream j - 1.
        let mut a = RngStream::derive(9, domain::CLIENT, 0);
        let b = RngStream::derive(9, domain::CLIENT, 1);
        a.state = a.state.wrapping_add((1u64 << 32).wrapping_mul(GOLDEN_GAMMA));
        assert_eq!(a, b);
        assert_ne!(
            RngStream::for_round(1, 0, 1).next_u64(),
            RngStream::for_round(1, 1, 0).next_u64()
        );
    }

    #[test]
    fn below_and_f64_ranges() {
        let mut rng = RngStream::new(5);
        for _ in 0..1000 {
            assert!(rng.below(7) < 7);
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    proptest! {
        #[test]
        fn norm_nonnegative_and_zero_iff_zero(xs in proptest::collection::vec(-1e3f64..1e3, 1..20)) {
            let p = v(&xs);
            let n = l2_norm(&p);
            prop_assert!(n >= 0.0);
            prop_assert_eq!(n == 0.0, p.is_zero());
        }

        #[test]
        fn dot_is_symmetric(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..20)) {
            let a = v(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
            let b = v(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
            let diff = (dot(&a, &b).unwrap() - dot(&b, &a).unwrap()).abs();
            prop_assert!(diff <= 1e-12 * l2_norm(&a) * l2_norm(&b));
        }
    }
}
