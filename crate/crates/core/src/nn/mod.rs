//! Minimal deterministic dense neural-network engine.
//!
//! Multilayer perceptrons with optional additive skip connections,
//! forward/backward passes, temperature softmax, hard-label and
//! distillation losses, and seeded mini-batch gradient-descent training.
//! Everything is `f64` and bit-reproducible for a fixed seed.

mod loss;
mod model;
mod train;

pub use loss::{distill_loss, distill_loss_grad, hard_label_loss, hard_label_loss_grad, LOG_FLOOR};
pub use model::{Activation, DenseLayer, MlpModel, SkipEdge, MODEL_FORMAT_VERSION};
pub use train::{loss_and_gradient, train, LossKind, SampleTarget, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw per-class scores produced by a network's final (identity) layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    /// Validates finiteness and a minimum of two classes.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::domain(format!(
                "logit vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite logit {bad}")));
        }
        Ok(LogitVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        LogitVector::new(values)
    }
}

impl From<LogitVector> for Vec<f64> {
    fn from(v: LogitVector) -> Vec<f64> {
        v.0
    }
}

/// A normalized class-probability vector: non-negative entries summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

/// Tolerance on the sum-to-one invariant.
pub const PROB_SUM_TOL: f64 = 1e-9;

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::domain(format!(
                "probability vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::domain(format!("invalid probability entry {bad}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::domain(format!(
                "probabilities sum to {sum}, expected 1 within {PROB_SUM_TOL}"
            )));
        }
        Ok(ProbVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ProbVector::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(v: ProbVector) -> Vec<f64> {
        v.0
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Temperature softmax: `exp(z_i/T) / sum_j exp(z_j/T)`, stabilized by
/// subtracting `max(z_i/T)` before exponentiation.
///
/// The argmax of the output always equals the argmax of the input logits.
pub fn softmax_t(logits: &LogitVector, temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::domain(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(ProbVector(softmax_scaled(logits.as_slice(), temperature)))
}

/// Softmax on a raw slice, callers guarantee finite inputs and t > 0.
pub(crate) fn softmax_scaled(z: &[f64], temperature: f64) -> Vec<f64> {
    let max = z
        .iter()
        .map(|v| v / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v / temperature - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax_t(&logits(&[0.0, 0.0, 0.0]), 1.0).unwrap();
        for v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let p = softmax_t(&logits(&[2.0, 1.0, 0.0]), 1.0).unwrap();
        let expected = [0.66524, 0.24473, 0.09003];
        for (a, b) in p.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_flattens_with_high_temperature() {
        let p = softmax_t(&logits(&[2.0, 1.0, 0.0]), 20.0).unwrap();
        let expected = [0.35013, 0.33306, 0.31681];
        for (a, b) in p.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(softmax_t(&logits(&[1.0, 2.0]), 0.0).is_err());
        assert!(softmax_t(&logits(&[1.0, 2.0]), -1.0).is_err());
        assert!(softmax_t(&logits(&[1.0, 2.0]), f64::NAN).is_err());
    }

    #[test]
    fn logit_vector_rejects_non_finite_and_short() {
        assert!(LogitVector::new(vec![1.0]).is_err());
        assert!(LogitVector::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(LogitVector::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn prob_vector_enforces_simplex() {
        assert!(ProbVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbVector::new(vec![0.6, 0.5]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![1.0]).is_err());
    }

    #[test]
    fn argmax_ties_break_low() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.9, 0.9]), 1);
    }
}
