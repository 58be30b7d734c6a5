//! Uncertainty meta-information extracted from a classification output:
//! maximum probability, least confidence (top-1 minus top-2 margin),
//! entropy (`sum p ln p`, which is non-positive), and the population
//! standard deviation of the probability vector.

use serde::{Deserialize, Serialize};

use crate::nn::ProbVector;

/// The four uncertainty features, in the fixed serialized order
/// (max probability, least confidence, entropy, std deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatures {
    /// `MP = max(P_i)`, in [0, 1].
    pub max_probability: f64,
    /// Top-1 minus top-2 of the descending sort of `P_i`, in [0, 1].
    pub least_confidence: f64,
    /// `sum_i P_i ln P_i` with `0 ln 0 := 0`; lies in [-ln N, 0].
    pub entropy: f64,
    /// `sqrt(sum (P_i - mean)^2 / N)`, population divisor; in [0, sqrt(N-1)/N].
    pub std_dev: f64,
}

impl MetaFeatures {
    /// Fixed feature ordering used by decision units and artifacts.
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.max_probability,
            self.least_confidence,
            self.entropy,
            self.std_dev,
        ]
    }
}

/// Extracts the four meta-features from a probability vector.
///
/// Total on valid [`ProbVector`]s (which already guarantee at least two
/// classes and normalization).
pub fn extract_meta(probs: &ProbVector) -> MetaFeatures {
    let p = probs.as_slice();
    let n = p.len();

    let mut top1 = f64::NEG_INFINITY;
    let mut top2 = f64::NEG_INFINITY;
    for &v in p {
        if v > top1 {
            top2 = top1;
            top1 = v;
        } else if v > top2 {
            top2 = v;
        }
    }

    let entropy = p
        .iter()
        .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
        .sum::<f64>();

    let mean = p.iter().sum::<f64>() / n as f64;
    let var = p.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;

    MetaFeatures {
        max_probability: top1,
        least_confidence: top1 - top2,
        entropy,
        std_dev: var.sqrt(),
    }
}
