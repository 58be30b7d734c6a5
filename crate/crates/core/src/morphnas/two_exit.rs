use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{train, LogitVector, LossKind, MlpModel, TrainConfig};

const TWO_EXIT_FORMAT_VERSION: &str = "two-exit-v1";

/// How [`train_exits`] treats the layers shared with exit 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitTrainMode {
    /// Train only the exit-1 head; exit-2 outputs stay bit-identical.
    FrozenPrefix,
    /// Train the exit-1 head, then fine-tune the full exit-2 path.
    JointFineTune,
}

/// A client model with an early exit: a linear exit-1 head attached to an
/// intermediate representation, and the untouched base network as exit 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoExitModel {
    format_version: String,
    base: MlpModel,
    exit_position: usize,
    /// Row-major `classes x widths[exit_position]`.
    head_weights: Vec<f64>,
    head_bias: Vec<f64>,
}

/// Converts a model into a two-exit model by attaching a fresh
/// (zero-initialized) linear classifier at hidden representation `position`.
/// The exit-2 path is the original network, bit-exact.
pub fn attach_exit(model: &MlpModel, position: usize) -> Result<TwoExitModel> {
    let depth = model.depth();
    if position == 0 || position >= depth {
        return Err(Error::domain(format!(
            "exit position must be strictly inside the network (1..{depth}), got {position}"
        )));
    }
    let width = model.widths()[position];
    let classes = model.output_width();
    Ok(TwoExitModel {
        format_version: TWO_EXIT_FORMAT_VERSION.to_string(),
        base: model.clone(),
        exit_position: position,
        head_weights: vec![0.0; classes * width],
        head_bias: vec![0.0; classes],
    })
}

impl TwoExitModel {
    /// Default attachment point: layer `floor(depth / 2)`, the middle.
    pub fn middle_position(model: &MlpModel) -> usize {
        model.depth() / 2
    }

    pub fn base(&self) -> &MlpModel {
        &self.base
    }

    pub fn exit_position(&self) -> usize {
        self.exit_position
    }

    pub fn input_width(&self) -> usize {
        self.base.input_width()
    }

    pub fn n_classes(&self) -> usize {
        self.base.output_width()
    }

    /// Early-exit logits: linear head on the shared prefix representation.
    pub fn forward_exit1(&self, input: &[f64]) -> Result<LogitVector> {
        let reps = self.base.forward_reps(input, self.exit_position)?;
        let h = &reps[self.exit_position];
        let classes = self.n_classes();
        let mut logits = self.head_bias.clone();
        for o in 0..classes {
            let row = &self.head_weights[o * h.len()..(o + 1) * h.len()];
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(h) {
                acc += w * x;
            }
            logits[o] += acc;
        }
        LogitVector::new(logits)
    }

    /// Full-path logits; identical to the base model's forward pass.
    pub fn forward_exit2(&self, input: &[f64]) -> Result<LogitVector> {
        self.base.forward(input)
    }

    fn head_as_model(&self) -> Result<MlpModel> {
        let width = self.base.widths()[self.exit_position];
        let mut head = MlpModel::zeroed(&[width, self.n_classes()])?;
        let mut flat = self.head_weights.clone();
        flat.extend_from_slice(&self.head_bias);
        head.assign_params(&flat)?;
        Ok(head)
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != TWO_EXIT_FORMAT_VERSION {
            return Err(Error::data(format!(
                "unsupported two-exit format version {:?}",
                self.format_version
            )));
        }
        self.base.validate()?;
        if self.exit_position == 0 || self.exit_position >= self.base.depth() {
            return Err(Error::data(format!(
                "exit position {} outside the network",
                self.exit_position
            )));
        }
        let width = self.base.widths()[self.exit_position];
        let classes = self.n_classes();
        if self.head_weights.len() != classes * width || self.head_bias.len() != classes {
            return Err(Error::data("exit head shape mismatch"));
        }
        if self
            .head_weights
            .iter()
            .chain(&self.head_bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::data("exit head has non-finite parameters"));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("two-exit serialization failed: {e}")))?;
        fs::write(path, text)
            .map_err(|e| Error::data(format!("cannot write model {}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read model {}: {e}", path.display())))?;
        let model: TwoExitModel = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("two-exit parse failed: {e}")))?;
        model.validate()?;
        Ok(model)
    }
}

/// Trains the exit-1 head on hard labels with the shared prefix frozen; in
/// [`ExitTrainMode::JointFineTune`] the exit-2 path is then fine-tuned too.
pub fn train_exits(
    model: &TwoExitModel,
    data: &Dataset,
    cfg: &TrainConfig,
    mode: ExitTrainMode,
) -> Result<TwoExitModel> {
    if cfg.loss != LossKind::HardLabel {
        return Err(Error::config("exit heads are trained on hard labels"));
    }
    if data.is_empty() {
        return Err(Error::domain("cannot train exits on an empty dataset"));
    }

    // The prefix is fixed while the head trains, so its representations can
    // be captured once.
    let mut head_inputs = Vec::with_capacity(data.len());
    for x in &data.xs {
        let reps = model.base.forward_reps(x, model.exit_position)?;
        head_inputs.push(reps[model.exit_position].clone());
    }
    let head_data = Dataset {
        xs: head_inputs,
        labels: data.labels.clone(),
        n_classes: model.n_classes(),
    };
    let head_outcome = train(&model.head_as_model()?, &head_data, cfg)?;
    let flat = head_outcome.model.flatten_params();
    let classes = model.n_classes();
    let width = model.base.widths()[model.exit_position];

    let mut out = model.clone();
    out.head_weights = flat[..classes * width].to_vec();
    out.head_bias = flat[classes * width..].to_vec();

    if mode == ExitTrainMode::JointFineTune {
        out.base = train(&out.base, data, cfg)?.model;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};

    fn toy_data(seed: u64) -> Dataset {
        gen_synthetic(&SyntheticSpec {
            classes: 3,
            per_class: vec![40, 40, 40],
            dim: 4,
            separation: 6.0,
            seed,
        })
        .unwrap()
    }

    fn trained_base(data: &Dataset) -> MlpModel {
        let init = MlpModel::seeded(&[4, 8, 8, 3], 3).unwrap();
        train(&init, data, &TrainConfig::hard_label(40, 0.1, 1)).unwrap().model
    }

    #[test]
    fn exit2_path_is_bit_exact() {
        let data = toy_data(1);
        let base = trained_base(&data);
        let two = attach_exit(&base, 1).unwrap();
        for x in data.xs.iter().take(20) {
            assert_eq!(
                two.forward_exit2(x).unwrap().as_slice(),
                base.forward(x).unwrap().as_slice()
            );
        }
    }

    #[test]
    fn attach_rejects_input_and_output_positions() {
        let base = MlpModel::seeded(&[4, 8, 8, 3], 0).unwrap();
        assert!(attach_exit(&base, 0).is_err());
        assert!(attach_exit(&base, 3).is_err());
        assert!(attach_exit(&base, 1).is_ok());
        assert!(attach_exit(&base, 2).is_ok());
    }

    #[test]
    fn middle_position_is_floor_half_depth() {
        let base = MlpModel::seeded(&[4, 8, 8, 3], 0).unwrap();
        assert_eq!(TwoExitModel::middle_position(&base), 1);
        let deeper = MlpModel::seeded(&[4, 8, 8, 8, 8, 3], 0).unwrap();
        assert_eq!(TwoExitModel::middle_position(&deeper), 2);
    }

    #[test]
    fn frozen_prefix_training_improves_exit1_and_keeps_exit2() {
        let data = toy_data(2);
        let base = trained_base(&data);
        let two = attach_exit(&base, 1).unwrap();

        let accuracy = |m: &TwoExitModel| {
            let correct = data
                .xs
                .iter()
                .zip(&data.labels)
                .filter(|(x, l)| m.forward_exit1(x).unwrap().argmax() == **l)
                .count();
            correct as f64 / data.len() as f64
        };
        let before = accuracy(&two);

        let trained = train_exits(&two, &data, &TrainConfig::hard_label(40, 0.1, 5), ExitTrainMode::FrozenPrefix).unwrap();
        let after = accuracy(&trained);
        assert!(after > before, "exit-1 accuracy {before} -> {after}");

        for x in data.xs.iter().take(10) {
            assert_eq!(
                trained.forward_exit2(x).unwrap().as_slice(),
                two.forward_exit2(x).unwrap().as_slice()
            );
        }
    }

    #[test]
    fn zero_epoch_training_is_identity() {
        let data = toy_data(3);
        let base = trained_base(&data);
        let two = attach_exit(&base, 1).unwrap();
        let same = train_exits(&two, &data, &TrainConfig::hard_label(0, 0.1, 0), ExitTrainMode::FrozenPrefix).unwrap();
        assert_eq!(same, two);
    }

    #[test]
    fn artifact_round_trip() {
        let base = MlpModel::seeded(&[4, 6, 6, 3], 9).unwrap();
        let two = attach_exit(&base, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two-exit.json");
        two.save(&path).unwrap();
        assert_eq!(TwoExitModel::load(&path).unwrap(), two);
    }
}
