use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LogitVector;

/// Artifact format tag; bumped on any incompatible schema change.
pub const MODEL_FORMAT_VERSION: &str = "mlp-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Rectifier, used on every hidden layer.
    Relu,
    /// Identity, used on the final (logit) layer.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(&self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

/// One dense layer mapping `in_width` inputs to `out_width` pre-activations.
/// Weights are row-major: `weights[o * in_width + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_width: usize,
    pub out_width: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    fn zeroed(in_width: usize, out_width: usize, activation: Activation) -> Self {
        DenseLayer {
            in_width,
            out_width,
            weights: vec![0.0; in_width * out_width],
            bias: vec![0.0; out_width],
            activation,
        }
    }
}

/// Additive skip edge: projects representation `src` and adds the result to
/// the pre-activation of representation `dst` (`src < dst`, `src` 0 = input).
/// Weights are row-major `widths[dst] x widths[src]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEdge {
    pub src: usize,
    pub dst: usize,
    pub weights: Vec<f64>,
}

/// A dense multilayer perceptron with optional additive skip edges.
///
/// Immutable once built; concurrent read-only forward passes are safe.
/// Representation indices run 0 (input) through `depth()` (logits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    format_version: String,
    widths: Vec<usize>,
    layers: Vec<DenseLayer>,
    skips: Vec<SkipEdge>,
}

impl MlpModel {
    /// All-zero weights and biases: forward is identically zero.
    pub fn zeroed(widths: &[usize]) -> Result<Self> {
        let layers = Self::check_widths(widths)?;
        let model = MlpModel {
            format_version: MODEL_FORMAT_VERSION.to_string(),
            widths: widths.to_vec(),
            layers,
            skips: Vec::new(),
        };
        Ok(model)
    }

    /// Scaled-uniform initialization: each weight and bias drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` using a ChaCha stream seeded
    /// with `seed`. Identical seed and widths yield identical parameters.
    pub fn seeded(widths: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let scale = 1.0 / (layer.in_width as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-scale..scale);
            }
            for b in &mut layer.bias {
                *b = rng.gen_range(-scale..scale);
            }
        }
        Ok(model)
    }

    /// Fresh seeded parameters for an existing architecture (widths and skip
    /// topology preserved, all weights redrawn). Skip projections use the
    /// same fan-in rule as layers.
    pub fn reinitialized(&self, seed: u64) -> Self {
        let mut model = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let scale = 1.0 / (layer.in_width as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-scale..scale);
            }
            for b in &mut layer.bias {
                *b = rng.gen_range(-scale..scale);
            }
        }
        for skip in &mut model.skips {
            let scale = 1.0 / (model.widths[skip.src] as f64).sqrt();
            for w in &mut skip.weights {
                *w = rng.gen_range(-scale..scale);
            }
        }
        model
    }

    fn check_widths(widths: &[usize]) -> Result<Vec<DenseLayer>> {
        if widths.len() < 2 {
            return Err(Error::domain(format!(
                "a model needs at least input and output widths, got {widths:?}"
            )));
        }
        if widths.iter().any(|w| *w == 0) {
            return Err(Error::domain(format!("zero layer width in {widths:?}")));
        }
        if *widths.last().unwrap() < 2 {
            return Err(Error::domain(format!(
                "output width must be at least 2 classes, got {}",
                widths.last().unwrap()
            )));
        }
        let depth = widths.len() - 1;
        let layers = (0..depth)
            .map(|l| {
                let act = if l + 1 == depth {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::zeroed(widths[l], widths[l + 1], act)
            })
            .collect();
        Ok(layers)
    }

    /// Checks every structural invariant; used after deserialization and by
    /// the morphism operators.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::data(format!(
                "unsupported model format version {:?}, expected {MODEL_FORMAT_VERSION:?}",
                self.format_version
            )));
        }
        let expected = Self::check_widths(&self.widths)?;
        if expected.len() != self.layers.len() {
            return Err(Error::data(format!(
                "layer count {} does not match widths {:?}",
                self.layers.len(),
                self.widths
            )));
        }
        for (l, (layer, shape)) in self.layers.iter().zip(&expected).enumerate() {
            if layer.in_width != shape.in_width
                || layer.out_width != shape.out_width
                || layer.activation != shape.activation
            {
                return Err(Error::data(format!("layer {l} shape mismatch")));
            }
            if layer.weights.len() != layer.in_width * layer.out_width
                || layer.bias.len() != layer.out_width
            {
                return Err(Error::data(format!("layer {l} parameter length mismatch")));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::data(format!("layer {l} has non-finite parameters")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for skip in &self.skips {
            if skip.src >= skip.dst || skip.dst > self.depth() {
                return Err(Error::data(format!(
                    "skip edge {}->{} is not forward-only",
                    skip.src, skip.dst
                )));
            }
            if !seen.insert((skip.src, skip.dst)) {
                return Err(Error::data(format!(
                    "duplicate skip edge {}->{}",
                    skip.src, skip.dst
                )));
            }
            if skip.weights.len() != self.widths[skip.src] * self.widths[skip.dst] {
                return Err(Error::data(format!(
                    "skip edge {}->{} projection length mismatch",
                    skip.src, skip.dst
                )));
            }
            if skip.weights.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!(
                    "skip edge {}->{} has non-finite parameters",
                    skip.src, skip.dst
                )));
            }
        }
        Ok(())
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of dense layers (representation indices run 0..=depth).
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn skips(&self) -> &[SkipEdge] {
        &self.skips
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .chain(self.skips.iter().map(|s| s.weights.len()))
            .sum()
    }

    pub(crate) fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub(crate) fn skips_mut(&mut self) -> &mut [SkipEdge] {
        &mut self.skips
    }

    /// Structural surgery entry point for the morphism operators.
    pub(crate) fn from_parts(
        widths: Vec<usize>,
        layers: Vec<DenseLayer>,
        skips: Vec<SkipEdge>,
    ) -> MlpModel {
        MlpModel {
            format_version: MODEL_FORMAT_VERSION.to_string(),
            widths,
            layers,
            skips,
        }
    }

    /// Deterministic forward pass. Errors only on input-width mismatch.
    pub fn forward(&self, input: &[f64]) -> Result<LogitVector> {
        let reps = self.forward_reps(input, self.depth())?;
        LogitVector::new(reps.into_iter().last().unwrap())
    }

    /// Computes post-activation representations 0..=upto (0 is the input).
    pub(crate) fn forward_reps(&self, input: &[f64], upto: usize) -> Result<Vec<Vec<f64>>> {
        if input.len() != self.input_width() {
            return Err(Error::domain(format!(
                "input width {} does not match model input width {}",
                input.len(),
                self.input_width()
            )));
        }
        debug_assert!(upto <= self.depth());
        let mut reps: Vec<Vec<f64>> = Vec::with_capacity(upto + 1);
        reps.push(input.to_vec());
        for (l, layer) in self.layers.iter().take(upto).enumerate() {
            let prev = &reps[l];
            let mut pre = layer.bias.clone();
            for o in 0..layer.out_width {
                let row = &layer.weights[o * layer.in_width..(o + 1) * layer.in_width];
                let mut acc = 0.0;
                for (w, x) in row.iter().zip(prev) {
                    acc += w * x;
                }
                pre[o] += acc;
            }
            for skip in self.skips.iter().filter(|s| s.dst == l + 1) {
                let src = &reps[skip.src];
                let src_w = self.widths[skip.src];
                for (o, p) in pre.iter_mut().enumerate() {
                    let row = &skip.weights[o * src_w..(o + 1) * src_w];
                    let mut acc = 0.0;
                    for (w, x) in row.iter().zip(src) {
                        acc += w * x;
                    }
                    *p += acc;
                }
            }
            for v in &mut pre {
                *v = layer.activation.apply(*v);
            }
            reps.push(pre);
        }
        Ok(reps)
    }

    /// Flattened parameter view: layer weights then bias, in layer order,
    /// followed by skip projections in edge order.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        for skip in &self.skips {
            out.extend_from_slice(&skip.weights);
        }
        out
    }

    /// Writes a flattened parameter vector back; the inverse of
    /// [`MlpModel::flatten_params`].
    pub fn assign_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::domain(format!(
                "parameter vector length {} does not match model ({})",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for layer in &mut self.layers {
            layer.weights.copy_from_slice(&flat[at..at + layer.weights.len()]);
            at += layer.weights.len();
            layer.bias.copy_from_slice(&flat[at..at + layer.bias.len()]);
            at += layer.bias.len();
        }
        for skip in &mut self.skips {
            skip.weights.copy_from_slice(&flat[at..at + skip.weights.len()]);
            at += skip.weights.len();
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("model serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: MlpModel = serde_json::from_str(text)
            .map_err(|e| Error::data(format!("model parse failed: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?)
            .map_err(|e| Error::data(format!("cannot write model {}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read model {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
