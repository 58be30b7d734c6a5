//! Decision units: binary classifiers trained on meta-information that
//! predict whether the local model classified a sample correctly. Their
//! positive-class probability is the "certainty" compared against a
//! per-exit sensitivity threshold.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::meta::{extract_meta, MetaFeatures};
use crate::nn::{softmax_t, train, MlpModel, ProbVector, TrainConfig};

/// Serialized feature-order contract; artifacts carrying anything else are
/// rejected at load time.
pub const FEATURE_ORDER: [&str; 4] = ["max_probability", "least_confidence", "entropy", "std_dev"];

/// Classifier output index meaning "the client prediction was correct".
pub const CORRECT_CLASS: usize = 1;

const DU_FORMAT_VERSION: &str = "du-v1";

/// One labeled decision-unit training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DuSample {
    pub features: MetaFeatures,
    /// Whether the client prediction at this exit matched the true label.
    pub correct: bool,
}

/// Per-exit escalation threshold in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Sensitivity(f64);

impl Sensitivity {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::domain(format!(
                "sensitivity must lie in [0,1], got {value}"
            )));
        }
        Ok(Sensitivity(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Sensitivity {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Sensitivity::new(v)
    }
}

impl From<Sensitivity> for f64 {
    fn from(s: Sensitivity) -> f64 {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    /// Certainty cleared the threshold: finalize at this exit.
    KeepLocal,
    /// Uncertain: continue to the next exit or offload to the server.
    Escalate,
}

/// Escalates when certainty falls below the sensitivity.
///
/// Endpoints are exact: sensitivity 0 keeps every sample local, and
/// sensitivity 1 escalates every sample (including certainty exactly 1).
pub fn gate(certainty: f64, sensitivity: Sensitivity) -> GateDecision {
    if sensitivity.value() >= 1.0 || certainty < sensitivity.value() {
        GateDecision::Escalate
    } else {
        GateDecision::KeepLocal
    }
}

/// Builds the labeled meta-feature dataset from per-sample classification
/// outputs. `predictions[i]` is expected to be the argmax of `probs[i]`.
pub fn build_du_dataset(
    probs: &[ProbVector],
    predictions: &[usize],
    labels: &[usize],
) -> Result<Vec<DuSample>> {
    if probs.len() != predictions.len() || probs.len() != labels.len() {
        return Err(Error::domain(format!(
            "mismatched lengths: {} probs, {} predictions, {} labels",
            probs.len(),
            predictions.len(),
            labels.len()
        )));
    }
    Ok(probs
        .iter()
        .zip(predictions.iter().zip(labels))
        .map(|(p, (pred, label))| DuSample {
            features: extract_meta(p),
            correct: pred == label,
        })
        .collect())
}

/// Training knobs for a decision unit. The classifier is always a 4-input,
/// 2-output network with four equal hidden layers trained on hard labels.
#[derive(Debug, Clone)]
pub struct DecisionUnitConfig {
    pub hidden_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DecisionUnitConfig {
    fn default() -> Self {
        DecisionUnitConfig {
            hidden_width: 16,
            epochs: 150,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

/// A trained correctness classifier plus the feature normalization constants
/// captured from its training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionUnit {
    format_version: String,
    classifier: MlpModel,
    norm_mean: [f64; 4],
    norm_scale: [f64; 4],
    feature_order: Vec<String>,
    seed: u64,
}

impl DecisionUnit {
    /// Predicted probability that the client classified the sample
    /// correctly, in [0, 1]. Pure and deterministic.
    pub fn certainty(&self, features: &MetaFeatures) -> f64 {
        let x = self.normalize(features);
        let logits = self
            .classifier
            .forward(&x)
            .expect("decision unit classifier accepts 4 features");
        let probs = softmax_t(&logits, 1.0).expect("temperature 1 is valid");
        probs.as_slice()[CORRECT_CLASS]
    }

    fn normalize(&self, features: &MetaFeatures) -> Vec<f64> {
        features
            .as_array()
            .iter()
            .zip(self.norm_mean.iter().zip(&self.norm_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn norm_mean(&self) -> &[f64; 4] {
        &self.norm_mean
    }

    pub fn norm_scale(&self) -> &[f64; 4] {
        &self.norm_scale
    }

    pub fn classifier(&self) -> &MlpModel {
        &self.classifier
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != DU_FORMAT_VERSION {
            return Err(Error::data(format!(
                "unsupported decision-unit format version {:?}",
                self.format_version
            )));
        }
        if self.feature_order != FEATURE_ORDER {
            return Err(Error::data(format!(
                "decision-unit feature order {:?} does not match the contract {FEATURE_ORDER:?}",
                self.feature_order
            )));
        }
        self.classifier.validate()?;
        let widths = self.classifier.widths();
        let shape_ok = widths.len() == 6
            && widths[0] == 4
            && widths[5] == 2
            && widths[1..5].iter().all(|w| *w == widths[1]);
        if !shape_ok {
            return Err(Error::data(format!(
                "decision-unit classifier widths {widths:?} are not [4, h, h, h, h, 2]"
            )));
        }
        if self.norm_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::data("normalization scales must be strictly positive"));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("decision-unit serialization failed: {e}")))?;
        fs::write(path, text)
            .map_err(|e| Error::data(format!("cannot write decision unit {}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read decision unit {}: {e}", path.display())))?;
        let du: DecisionUnit = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("decision-unit parse failed: {e}")))?;
        du.validate()?;
        Ok(du)
    }
}

/// Trains a decision unit on labeled meta-features.
///
/// Normalization constants (per-feature mean and standard deviation) come
/// from `samples`; constant features get scale 1. Requires both classes to
/// be present, otherwise the gate would be vacuous.
pub fn train_decision_unit(
    samples: &[DuSample],
    cfg: &DecisionUnitConfig,
) -> Result<DecisionUnit> {
    let n = samples.len();
    let n_correct = samples.iter().filter(|s| s.correct).count();
    if n < 2 || n_correct == 0 || n_correct == n {
        return Err(Error::train(format!(
            "decision-unit training needs both classes, got {n_correct}/{n} correct"
        )));
    }
    if cfg.hidden_width == 0 {
        return Err(Error::domain("decision-unit hidden width must be at least 1"));
    }

    let mut mean = [0.0_f64; 4];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.features.as_array()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut scale = [0.0_f64; 4];
    for s in samples {
        for ((sc, m), v) in scale.iter_mut().zip(&mean).zip(s.features.as_array()) {
            *sc += (v - m) * (v - m);
        }
    }
    for sc in &mut scale {
        *sc = (*sc / n as f64).sqrt();
        if !(*sc > 0.0) {
            *sc = 1.0;
        }
    }

    let xs: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            s.features
                .as_array()
                .iter()
                .zip(mean.iter().zip(&scale))
                .map(|(v, (m, sc))| (v - m) / sc)
                .collect()
        })
        .collect();
    let labels: Vec<usize> = samples
        .iter()
        .map(|s| if s.correct { CORRECT_CLASS } else { 1 - CORRECT_CLASS })
        .collect();
    let data = Dataset {
        xs,
        labels,
        n_classes: 2,
    };

    let h = cfg.hidden_width;
    let init = MlpModel::seeded(&[4, h, h, h, h, 2], cfg.seed)?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let outcome = train(&init, &data, &train_cfg)?;

    Ok(DecisionUnit {
        format_version: DU_FORMAT_VERSION.to_string(),
        classifier: outcome.model,
        norm_mean: mean,
        norm_scale: scale,
        feature_order: FEATURE_ORDER.iter().map(|s| s.to_string()).collect(),
        seed: cfg.seed,
    })
}

/// Area under the ROC curve for (certainty, correct) pairs, computed from
/// the Mann-Whitney statistic with average ranks on ties.
pub fn roc_auc(scored: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scored.iter().filter(|(_, c)| *c).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::domain(format!(
            "ROC-AUC needs both classes, got {n_pos} positive of {}",
            scored.len()
        )));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|a, b| scored[*a].0.partial_cmp(&scored[*b].0).expect("finite scores"));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the average rank.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            if scored[k].1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ProbVector;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn du_dataset_marks_matches() {
        let probs = vec![
            pv(&[0.1, 0.1, 0.8]),
            pv(&[0.7, 0.2, 0.1]),
            pv(&[0.1, 0.8, 0.1]),
        ];
        let samples = build_du_dataset(&probs, &[2, 0, 1], &[2, 1, 1]).unwrap();
        let flags: Vec<bool> = samples.iter().map(|s| s.correct).collect();
        assert_eq!(flags, vec![true, false, true]);
        assert_eq!(samples[0].features, extract_meta(&probs[0]));
    }

    #[test]
    fn du_dataset_empty_and_mismatched() {
        assert!(build_du_dataset(&[], &[], &[]).unwrap().is_empty());
        let probs = vec![pv(&[0.5, 0.5])];
        assert!(build_du_dataset(&probs, &[0, 1], &[0]).is_err());
    }

    #[test]
    fn gate_follows_threshold_with_endpoint_overrides() {
        let s = |v| Sensitivity::new(v).unwrap();
        assert_eq!(gate(0.8, s(0.5)), GateDecision::KeepLocal);
        assert_eq!(gate(0.3, s(0.5)), GateDecision::Escalate);
        assert_eq!(gate(0.999, s(1.0)), GateDecision::Escalate);
        assert_eq!(gate(1.0, s(1.0)), GateDecision::Escalate);
        assert_eq!(gate(0.0, s(0.0)), GateDecision::KeepLocal);
    }

    #[test]
    fn sensitivity_rejects_out_of_range() {
        assert!(Sensitivity::new(-0.1).is_err());
        assert!(Sensitivity::new(1.1).is_err());
        assert!(Sensitivity::new(f64::NAN).is_err());
    }

    #[test]
    fn single_class_dataset_is_a_training_error() {
        let samples: Vec<DuSample> = (0..10)
            .map(|_| DuSample {
                features: extract_meta(&pv(&[0.9, 0.05, 0.05])),
                correct: true,
            })
            .collect();
        let err = train_decision_unit(&samples, &DecisionUnitConfig::default()).unwrap_err();
        assert_eq!(err.category(), "training");
    }

    #[test]
    fn roc_auc_is_one_for_separated_scores() {
        let scored = vec![(0.9, true), (0.8, true), (0.2, false), (0.1, false)];
        assert_eq!(roc_auc(&scored).unwrap(), 1.0);
    }

    #[test]
    fn roc_auc_is_half_for_ties() {
        let scored = vec![(0.5, true), (0.5, false), (0.5, true), (0.5, false)];
        assert!((roc_auc(&scored).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn roc_auc_requires_both_classes() {
        assert!(roc_auc(&[(0.5, true), (0.6, true)]).is_err());
    }
}
