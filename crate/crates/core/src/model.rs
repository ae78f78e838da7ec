//! Convex linear models: squared-hinge SVM and multinomial logistic regression.
//!
//! Parameters are flat. The bias is an appended constant-1 feature, so the
//! squared SVM uses `feature_dim + 1` coordinates and the logistic model uses
//! `num_classes` consecutive blocks of `feature_dim + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot_slices, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: u32,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: u32) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SquaredSvm,
    MultinomialLogistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub l2_reg: f64,
}

impl ModelSpec {
    pub fn squared_svm(feature_dim: usize) -> Self {
        Self {
            kind: ModelKind::SquaredSvm,
            feature_dim,
            num_classes: 2,
            l2_reg: 0.0,
        }
    }

    pub fn logistic(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::MultinomialLogistic,
            feature_dim,
            num_classes,
            l2_reg: 0.0,
        }
    }

    pub fn with_l2(mut self, l2_reg: f64) -> Self {
        self.l2_reg = l2_reg;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be >= 1".into()));
        }
        if !(self.l2_reg >= 0.0) {
            return Err(Error::InvalidArgument("l2_reg must be >= 0".into()));
        }
        match self.kind {
            ModelKind::SquaredSvm if self.num_classes != 2 => Err(Error::InvalidArgument(
                format!("squared_svm needs 2 classes, got {}", self.num_classes),
            )),
            ModelKind::MultinomialLogistic if self.num_classes < 2 => Err(
                Error::InvalidArgument("multinomial_logistic needs >= 2 classes".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn param_dim(&self) -> usize {
        match self.kind {
            ModelKind::SquaredSvm => self.feature_dim + 1,
            ModelKind::MultinomialLogistic => (self.feature_dim + 1) * self.num_classes,
        }
    }

    /// Predicted class id for one feature vector. A zero SVM score predicts
    /// label 0 (y = +1); logistic ties go to the lowest class id.
    pub fn predict(&self, w: &ParamVector, features: &[f64]) -> u32 {
        match self.kind {
            ModelKind::SquaredSvm => {
                if affine(w.as_slice(), features) >= 0.0 {
                    0
                } else {
                    1
                }
            }
            ModelKind::MultinomialLogistic => {
                let scores = self.logits(w.as_slice(), features);
                let mut best = 0;
                for (c, &s) in scores.iter().enumerate() {
                    if s > scores[best] {
                        best = c;
                    }
                }
                best as u32
            }
        }
    }

    fn logits(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        w.chunks_exact(self.feature_dim + 1)
            .map(|block| affine(block, x))
            .collect()
    }

    fn check(&self, w: &ParamVector) -> Result<()> {
        if w.dim() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                actual: w.dim(),
            });
        }
        Ok(())
    }

    fn check_sample(&self, s: &Sample) -> Result<()> {
        if s.features.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: s.features.len(),
            });
        }
        if s.label as usize >= self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {} classes",
                s.label, self.num_classes
            )));
        }
        Ok(())
    }

    fn sample_loss(&self, w: &[f64], s: &Sample) -> f64 {
        match self.kind {
            ModelKind::SquaredSvm => {
                let slack = (1.0 - svm_sign(s.label) * affine(w, &s.features)).max(0.0);
                slack * slack
            }
            ModelKind::MultinomialLogistic => {
                let z = self.logits(w, &s.features);
                log_sum_exp(&z) - z[s.label as usize]
            }
        }
    }

    /// Adds the unregularized per-sample gradient into `acc`.
    fn accumulate_grad(&self, w: &[f64], s: &Sample, acc: &mut [f64]) {
        let d = self.feature_dim;
        match self.kind {
            ModelKind::SquaredSvm => {
                let y = svm_sign(s.label);
                let slack = 1.0 - y * affine(w, &s.features);
                if slack <= 0.0 {
                    return;
                }
                let coef = -2.0 * slack * y;
                for (a, x) in acc[..d].iter_mut().zip(&s.features) {
                    *a += coef * x;
                }
                acc[d] += coef;
            }
            ModelKind::MultinomialLogistic => {
                let z = self.logits(w, &s.features);
                let lse = log_sum_exp(&z);
                for (c, block) in acc.chunks_exact_mut(d + 1).enumerate() {
                    let mut coef = (z[c] - lse).exp();
                    if c == s.label as usize {
                        coef -= 1.0;
                    }
                    for (a, x) in block[..d].iter_mut().zip(&s.features) {
                        *a += coef * x;
                    }
                    block[d] += coef;
                }
            }
        }
    }

    fn reg_loss(&self, w: &ParamVector) -> f64 {
        if self.l2_reg == 0.0 {
            0.0
        } else {
            0.5 * self.l2_reg * dot_slices(w.as_slice(), w.as_slice())
        }
    }

    fn finish_grad(&self, w: &ParamVector, mut sum: Vec<f64>, n: usize) -> ParamVector {
        let inv = 1.0 / n as f64;
        for (g, wj) in sum.iter_mut().zip(w.as_slice()) {
            *g *= inv;
            if self.l2_reg != 0.0 {
                *g += self.l2_reg * wj;
            }
        }
        ParamVector::new(sum)
    }
}

/// `y` for the squared SVM: label 0 maps to +1, any other label to -1.
pub fn svm_sign(label: u32) -> f64 {
    if label == 0 {
        1.0
    } else {
        -1.0
    }
}

fn affine(block: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    dot_slices(&block[..d], x) + block[d]
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

const CHUNK: usize = 256;

fn mean_loss<'a, I>(spec: &ModelSpec, w: &ParamVector, batch: I) -> Result<f64>
where
    I: Iterator<Item = &'a Sample>,
{
    spec.check(w)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for s in batch {
        spec.check_sample(s)?;
        total += spec.sample_loss(w.as_slice(), s);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("batch"));
    }
    Ok(total / n as f64 + spec.reg_loss(w))
}

fn mean_grad<'a, I>(spec: &ModelSpec, w: &ParamVector, batch: I) -> Result<ParamVector>
where
    I: Iterator<Item = &'a Sample>,
{
    spec.check(w)?;
    let dim = spec.param_dim();
    let mut total = vec![0.0; dim];
    let mut chunk = vec![0.0; dim];
    let mut n = 0usize;
    for s in batch {
        spec.check_sample(s)?;
        spec.accumulate_grad(w.as_slice(), s, &mut chunk);
        n += 1;
        if n.is_multiple_of(CHUNK) {
            flush(&mut total, &mut chunk);
        }
    }
    if n == 0 {
        return Err(Error::Empty("batch"));
    }
    flush(&mut total, &mut chunk);
    Ok(spec.finish_grad(w, total, n))
}

fn flush(total: &mut [f64], chunk: &mut [f64]) {
    for (t, c) in total.iter_mut().zip(chunk.iter_mut()) {
        *t += *c;
        *c = 0.0;
    }
}

pub fn loss(spec: &ModelSpec, w: &ParamVector, batch: &[Sample]) -> Result<f64> {
    mean_loss(spec, w, batch.iter())
}

pub fn grad(spec: &ModelSpec, w: &ParamVector, batch: &[Sample]) -> Result<ParamVector> {
    mean_grad(spec, w, batch.iter())
}

/// Loss over `samples[idx]` for each index in `idx`.
pub fn loss_at(spec: &ModelSpec, w: &ParamVector, samples: &[Sample], idx: &[usize]) -> Result<f64> {
    mean_loss(spec, w, idx.iter().map(|&i| &samples[i]))
}

pub fn grad_at(
    spec: &ModelSpec,
    w: &ParamVector,
    samples: &[Sample],
    idx: &[usize],
) -> Result<ParamVector> {
    mean_grad(spec, w, idx.iter().map(|&i| &samples[i]))
}

/// Gradient over a whole local shard, accumulated in fixed chunks of 256.
pub fn full_grad(
    spec: &ModelSpec,
    w: &ParamVector,
    samples: &[Sample],
    shard: &[usize],
) -> Result<ParamVector> {
    if shard.is_empty() {
        return Err(Error::Empty("shard"));
    }
    grad_at(spec, w, samples, shard)
}
