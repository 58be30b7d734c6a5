use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::model::{Activation, MlpModel};
use crate::nn::{distill_loss_grad, hard_label_loss_grad, LogitVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    HardLabel,
    Distilled,
}

/// Configuration for seeded mini-batch gradient-descent training.
///
/// Mini-batch order is a pure function of `seed`; identical inputs and seed
/// produce bit-identical trained parameters.
#[derive(Debug, Clone)]
pub struct TrainConfig<'a> {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Softening temperature for distilled training.
    pub temperature: f64,
    /// Required when `loss` is `Distilled`.
    pub teacher: Option<&'a MlpModel>,
    /// Weight on an additional hard-label term when distilling; 0 keeps the
    /// pure softened cross-entropy.
    pub hard_mix: f64,
}

impl Default for TrainConfig<'static> {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
            loss: LossKind::HardLabel,
            temperature: 1.0,
            teacher: None,
            hard_mix: 0.0,
        }
    }
}

impl<'a> TrainConfig<'a> {
    pub fn hard_label(epochs: usize, learning_rate: f64, seed: u64) -> TrainConfig<'static> {
        TrainConfig {
            epochs,
            learning_rate,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn distilled(
        epochs: usize,
        learning_rate: f64,
        seed: u64,
        teacher: &'a MlpModel,
        temperature: f64,
    ) -> TrainConfig<'a> {
        TrainConfig {
            epochs,
            learning_rate,
            seed,
            loss: LossKind::Distilled,
            temperature,
            teacher: Some(teacher),
            ..TrainConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::domain(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.loss == LossKind::Distilled {
            if self.teacher.is_none() {
                return Err(Error::config("distilled training requires a teacher model"));
            }
            if !(self.temperature > 0.0) || !self.temperature.is_finite() {
                return Err(Error::config(format!(
                    "distilled training requires temperature > 0, got {}",
                    self.temperature
                )));
            }
            if !(0.0..=1.0).contains(&self.hard_mix) {
                return Err(Error::config(format!(
                    "hard_mix must lie in [0,1], got {}",
                    self.hard_mix
                )));
            }
        }
        Ok(())
    }
}

/// Trained model plus one mean loss value per epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub loss_history: Vec<f64>,
}

/// Loss target for a single sample.
#[derive(Debug, Clone)]
pub enum SampleTarget<'a> {
    Hard { label: usize },
    Distilled {
        teacher_logits: &'a LogitVector,
        temperature: f64,
        /// Weight of an added hard-label term; label is ignored when 0.
        hard_mix: f64,
        label: usize,
    },
}

/// Parameter-shaped gradient accumulator matching a model's flatten order.
pub(crate) struct Gradients {
    layer_w: Vec<Vec<f64>>,
    layer_b: Vec<Vec<f64>>,
    skip_w: Vec<Vec<f64>>,
}

impl Gradients {
    pub(crate) fn zeroed(model: &MlpModel) -> Self {
        Gradients {
            layer_w: model.layers().iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            layer_b: model.layers().iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            skip_w: model.skips().iter().map(|s| vec![0.0; s.weights.len()]).collect(),
        }
    }

    fn reset(&mut self) {
        for v in self
            .layer_w
            .iter_mut()
            .chain(self.layer_b.iter_mut())
            .chain(self.skip_w.iter_mut())
        {
            v.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub(crate) fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.layer_w.iter().zip(&self.layer_b) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        for w in &self.skip_w {
            out.extend_from_slice(w);
        }
        out
    }

    /// `theta -= step * grad`
    fn apply(&self, model: &mut MlpModel, step: f64) {
        for (layer, (gw, gb)) in model
            .layers_mut()
            .iter_mut()
            .zip(self.layer_w.iter().zip(&self.layer_b))
        {
            for (w, g) in layer.weights.iter_mut().zip(gw) {
                *w -= step * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= step * g;
            }
        }
        for (skip, gw) in model.skips_mut().iter_mut().zip(&self.skip_w) {
            for (w, g) in skip.weights.iter_mut().zip(gw) {
                *w -= step * g;
            }
        }
    }
}

/// Backpropagates one sample, accumulating into `grads`; returns the loss.
pub(crate) fn accumulate_sample_grad(
    model: &MlpModel,
    x: &[f64],
    target: &SampleTarget,
    grads: &mut Gradients,
) -> Result<f64> {
    let depth = model.depth();
    let reps = model.forward_reps(x, depth)?;
    let logits = LogitVector::new(reps[depth].clone())?;

    let (loss, dlogits) = match target {
        SampleTarget::Hard { label } => hard_label_loss_grad(&logits, *label)?,
        SampleTarget::Distilled {
            teacher_logits,
            temperature,
            hard_mix,
            label,
        } => {
            let (soft_loss, soft_grad) = distill_loss_grad(&logits, teacher_logits, *temperature)?;
            if *hard_mix == 0.0 {
                (soft_loss, soft_grad)
            } else {
                let (hard_loss, hard_grad) = hard_label_loss_grad(&logits, *label)?;
                let m = *hard_mix;
                let loss = (1.0 - m) * soft_loss + m * hard_loss;
                let grad = soft_grad
                    .iter()
                    .zip(&hard_grad)
                    .map(|(s, h)| (1.0 - m) * s + m * h)
                    .collect();
                (loss, grad)
            }
        }
    };

    // d_rep[r] holds dL/d h_r (post-activation) for representation r.
    let mut d_rep: Vec<Vec<f64>> = model.widths().iter().map(|w| vec![0.0; *w]).collect();
    d_rep[depth] = dlogits;

    for l in (0..depth).rev() {
        let layer = &model.layers()[l];
        let h_out = &reps[l + 1];
        // Gradient w.r.t. this layer's pre-activation.
        let delta: Vec<f64> = match layer.activation {
            Activation::Identity => d_rep[l + 1].clone(),
            Activation::Relu => d_rep[l + 1]
                .iter()
                .zip(h_out)
                .map(|(g, h)| if *h > 0.0 { *g } else { 0.0 })
                .collect(),
        };
        let h_in = &reps[l];
        for (o, d) in delta.iter().enumerate() {
            grads.layer_b[l][o] += d;
            let row = &mut grads.layer_w[l][o * layer.in_width..(o + 1) * layer.in_width];
            for (g, x) in row.iter_mut().zip(h_in) {
                *g += d * x;
            }
        }
        for (o, d) in delta.iter().enumerate() {
            let row = &layer.weights[o * layer.in_width..(o + 1) * layer.in_width];
            for (i, w) in row.iter().enumerate() {
                d_rep[l][i] += w * d;
            }
        }
        for (s, skip) in model.skips().iter().enumerate() {
            if skip.dst != l + 1 {
                continue;
            }
            let src_w = model.widths()[skip.src];
            let h_src = &reps[skip.src];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut grads.skip_w[s][o * src_w..(o + 1) * src_w];
                for (g, x) in row.iter_mut().zip(h_src) {
                    *g += d * x;
                }
                let wrow = &skip.weights[o * src_w..(o + 1) * src_w];
                for (i, w) in wrow.iter().enumerate() {
                    d_rep[skip.src][i] += w * d;
                }
            }
        }
    }
    Ok(loss)
}

/// Loss and flattened parameter gradient for one sample; the layout matches
/// [`MlpModel::flatten_params`]. Used by the finite-difference checks.
pub fn loss_and_gradient(model: &MlpModel, x: &[f64], target: &SampleTarget) -> Result<(f64, Vec<f64>)> {
    let mut grads = Gradients::zeroed(model);
    let loss = accumulate_sample_grad(model, x, target, &mut grads)?;
    Ok((loss, grads.flatten()))
}

/// Seeded mini-batch gradient descent.
///
/// Hard-label mode minimizes cross-entropy against one-hot labels; distilled
/// mode minimizes the softened cross-entropy against the teacher's
/// temperature-softened outputs. Returns the trained model and one mean loss
/// per epoch; zero epochs return the model unchanged.
pub fn train(model: &MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    data.check_input_width(model.input_width())?;
    let classes = model.output_width();
    if let Some(bad) = data.labels.iter().find(|l| **l >= classes) {
        return Err(Error::domain(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    // Teacher targets are fixed for the whole run; compute them once.
    let teacher_logits: Option<Vec<LogitVector>> = match cfg.loss {
        LossKind::HardLabel => None,
        LossKind::Distilled => {
            let teacher = cfg.teacher.unwrap();
            if teacher.output_width() != classes {
                return Err(Error::config(format!(
                    "teacher emits {} classes but student emits {classes}",
                    teacher.output_width()
                )));
            }
            let mut out = Vec::with_capacity(data.len());
            for x in &data.xs {
                out.push(teacher.forward(x)?);
            }
            Some(out)
        }
    };

    let mut trained = model.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = Gradients::zeroed(&trained);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.reset();
            for &i in batch {
                let target = match cfg.loss {
                    LossKind::HardLabel => SampleTarget::Hard { label: data.labels[i] },
                    LossKind::Distilled => SampleTarget::Distilled {
                        teacher_logits: &teacher_logits.as_ref().unwrap()[i],
                        temperature: cfg.temperature,
                        hard_mix: cfg.hard_mix,
                        label: data.labels[i],
                    },
                };
                epoch_loss += accumulate_sample_grad(&trained, &data.xs[i], &target, &mut grads)?;
            }
            grads.apply(&mut trained, cfg.learning_rate / batch.len() as f64);
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::train(format!("loss diverged at epoch {epoch}")));
        }
        history.push(mean);
    }

    Ok(TrainOutcome {
        model: trained,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};

    fn blobs(seed: u64) -> Dataset {
        gen_synthetic(&SyntheticSpec {
            classes: 2,
            per_class: vec![60, 60],
            dim: 2,
            separation: 8.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn zero_epochs_returns_model_unchanged() {
        let data = blobs(1);
        let model = MlpModel::seeded(&[2, 6, 2], 3).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&model, &data, &cfg).unwrap();
        assert_eq!(out.model, model);
        assert!(out.loss_history.is_empty());
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let data = blobs(2);
        let model = MlpModel::seeded(&[2, 8, 2], 5).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let out = train(&model, &data, &cfg).unwrap();
        let correct = data
            .xs
            .iter()
            .zip(&data.labels)
            .filter(|(x, l)| out.model.forward(x).unwrap().argmax() == **l)
            .count();
        let acc = correct as f64 / data.len() as f64;
        assert!(acc >= 0.95, "training accuracy {acc}");
        assert_eq!(out.loss_history.len(), 50);
        assert!(out.loss_history.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = blobs(3);
        let model = MlpModel::seeded(&[2, 6, 2], 11).unwrap();
        let cfg = TrainConfig {
            epochs: 12,
            seed: 99,
            ..TrainConfig::default()
        };
        let a = train(&model, &data, &cfg).unwrap();
        let b = train(&model, &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn distilled_training_requires_teacher() {
        let data = blobs(4);
        let model = MlpModel::seeded(&[2, 4, 2], 0).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::Distilled,
            temperature: 20.0,
            ..TrainConfig::default()
        };
        let err = train(&model, &data, &cfg).unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn distilled_training_moves_student_toward_teacher() {
        let data = blobs(5);
        let teacher = {
            let m = MlpModel::seeded(&[2, 12, 2], 21).unwrap();
            train(&m, &data, &TrainConfig::hard_label(60, 0.1, 1)).unwrap().model
        };
        let student = MlpModel::seeded(&[2, 4, 2], 31).unwrap();
        let cfg = TrainConfig::distilled(40, 0.1, 7, &teacher, 5.0);
        let out = train(&student, &data, &cfg).unwrap();
        let first = out.loss_history[0];
        let last = *out.loss_history.last().unwrap();
        assert!(last < first, "softened loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let data = Dataset {
            xs: vec![],
            labels: vec![],
            n_classes: 2,
        };
        let model = MlpModel::seeded(&[2, 4, 2], 0).unwrap();
        assert!(train(&model, &data, &TrainConfig::default()).is_err());
    }
}
