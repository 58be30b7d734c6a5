use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::morphnas::ops::apply_morph;
use crate::nn::{distill_loss, train, LogitVector, MlpModel, TrainConfig};

/// A structural edit drawn during search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MorphKind {
    Widen { layer: usize, new_width: usize },
    Deepen { position: usize },
    AddSkip { src: usize, dst: usize },
}

/// A drawn morphism together with the rng seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphOp {
    pub kind: MorphKind,
    pub draw_seed: u64,
}

/// Hill-climbing search configuration. Candidates are trained with the
/// distillation loss at `temperature` and scored by the softened loss on the
/// validation split.
#[derive(Debug, Clone)]
pub struct SearchConfig<'a> {
    pub steps: usize,
    pub candidates: usize,
    pub epochs_per_candidate: usize,
    pub temperature: f64,
    pub teacher: &'a MlpModel,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl<'a> SearchConfig<'a> {
    /// Small-budget defaults: 5 steps of 8 candidates, 5 epochs each, T=20.
    pub fn with_teacher(teacher: &'a MlpModel) -> Self {
        SearchConfig {
            steps: 5,
            candidates: 8,
            epochs_per_candidate: 5,
            temperature: 20.0,
            teacher,
            seed: 0,
            batch_size: 32,
            learning_rate: 0.05,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.candidates == 0 {
            return Err(Error::domain("search needs at least one candidate per step"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::domain(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One evaluated candidate, as persisted in the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub step: usize,
    pub index: usize,
    pub ops: Vec<MorphOp>,
    pub val_loss: f64,
    pub accepted: bool,
}

/// Full record of a hill-climbing run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchTrace {
    /// Softened validation loss of the seed model before any step.
    pub initial_loss: f64,
    pub candidates: Vec<CandidateRecord>,
    /// Incumbent loss before step 1, then after each step; non-increasing.
    pub best_so_far: Vec<f64>,
}

impl SearchTrace {
    /// Line-delimited log, one JSON record per candidate.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for record in &self.candidates {
            let line = serde_json::to_string(record)
                .map_err(|e| Error::data(format!("trace serialization failed: {e}")))?;
            out.extend_from_slice(line.as_bytes());
            out.push(b'\n');
        }
        let mut f = fs::File::create(path)
            .map_err(|e| Error::data(format!("cannot write trace {}: {e}", path.display())))?;
        f.write_all(&out)
            .map_err(|e| Error::data(format!("cannot write trace {}: {e}", path.display())))
    }

    pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<CandidateRecord>> {
        let path = path.as_ref();
        let f = fs::File::open(path)
            .map_err(|e| Error::data(format!("cannot read trace {}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line
                .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| {
                Error::data(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?);
        }
        Ok(records)
    }
}

/// Mean softened cross-entropy of `model` against `teacher` over a dataset.
pub fn softened_loss(
    model: &MlpModel,
    teacher: &MlpModel,
    data: &Dataset,
    temperature: f64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("softened loss needs a non-empty dataset"));
    }
    let mut total = 0.0;
    for x in &data.xs {
        let s = model.forward(x)?;
        let t = teacher.forward(x)?;
        total += distill_loss(&s, &t, temperature)?;
    }
    Ok(total / data.len() as f64)
}

fn softened_loss_cached(
    model: &MlpModel,
    teacher_logits: &[LogitVector],
    data: &Dataset,
    temperature: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in data.xs.iter().zip(teacher_logits) {
        total += distill_loss(&model.forward(x)?, t, temperature)?;
    }
    Ok(total / data.len() as f64)
}

/// splitmix64 finalizer over a combined stream tag; gives each candidate an
/// independent deterministic seed.
fn derive_seed(base: u64, step: u64, index: u64, stream: u64) -> u64 {
    let mut z = base
        ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ stream.wrapping_mul(0x94D0_49BB_1331_11EB);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one applicable morphism uniformly over the available kinds.
fn draw_morph(model: &MlpModel, seed: u64) -> Result<MorphKind> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = model.depth();

    let has_hidden = depth >= 2;
    // Skips spanning at least one full layer keep the draw meaningful.
    let mut skip_pairs = Vec::new();
    for src in 0..depth.saturating_sub(1) {
        for dst in (src + 2)..=depth {
            if !model.skips().iter().any(|s| s.src == src && s.dst == dst) {
                skip_pairs.push((src, dst));
            }
        }
    }

    let mut kinds = Vec::new();
    if has_hidden {
        kinds.push(0); // widen
        kinds.push(1); // deepen
    }
    if !skip_pairs.is_empty() {
        kinds.push(2);
    }
    if kinds.is_empty() {
        return Err(Error::domain(
            "no morphism applicable: model has no hidden layers and no free skip pairs",
        ));
    }

    match kinds[rng.gen_range(0..kinds.len())] {
        0 => {
            let layer = rng.gen_range(1..depth);
            let delta = rng.gen_range(1..=4usize);
            Ok(MorphKind::Widen {
                layer,
                new_width: model.widths()[layer] + delta,
            })
        }
        1 => Ok(MorphKind::Deepen {
            position: rng.gen_range(1..depth),
        }),
        _ => {
            let (src, dst) = skip_pairs[rng.gen_range(0..skip_pairs.len())];
            Ok(MorphKind::AddSkip { src, dst })
        }
    }
}

struct Evaluated {
    index: usize,
    op: MorphOp,
    model: MlpModel,
    val_loss: f64,
}

fn evaluate_candidate(
    incumbent: &MlpModel,
    train_data: &Dataset,
    val_data: &Dataset,
    teacher_val_logits: &[LogitVector],
    cfg: &SearchConfig,
    step: usize,
    index: usize,
) -> Result<Evaluated> {
    let draw_seed = derive_seed(cfg.seed, step as u64, index as u64, 0);
    let train_seed = derive_seed(cfg.seed, step as u64, index as u64, 1);
    let kind = draw_morph(incumbent, draw_seed)?;
    let morphed = apply_morph(incumbent, &kind)
        .map_err(|e| Error::domain(format!("step {step} candidate {index}: {e}")))?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs_per_candidate,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: train_seed,
        ..TrainConfig::distilled(0, cfg.learning_rate, 0, cfg.teacher, cfg.temperature)
    };
    let outcome = train(&morphed, train_data, &train_cfg)
        .map_err(|e| Error::train(format!("step {step} candidate {index} ({kind:?}): {e}")))?;
    let val_loss = softened_loss_cached(&outcome.model, teacher_val_logits, val_data, cfg.temperature)?;
    Ok(Evaluated {
        index,
        op: MorphOp { kind, draw_seed },
        model: outcome.model,
        val_loss,
    })
}

/// Greedy morphism hill climbing with knowledge-distilled candidate training.
///
/// Each step draws `candidates` random morphs of the incumbent, trains each
/// briefly on the teacher's softened labels, scores each by softened
/// validation loss, and replaces the incumbent only when strictly better.
/// Fully deterministic for a fixed seed; candidates may evaluate in parallel
/// and ties resolve to the lowest candidate index.
pub fn hill_climb(
    seed_model: &MlpModel,
    train_data: &Dataset,
    val_data: &Dataset,
    cfg: &SearchConfig,
) -> Result<(MlpModel, SearchTrace)> {
    cfg.validate()?;
    if cfg.teacher.output_width() != seed_model.output_width()
        || cfg.teacher.input_width() != seed_model.input_width()
    {
        return Err(Error::config(format!(
            "teacher shape {}x{} does not match seed model {}x{}",
            cfg.teacher.input_width(),
            cfg.teacher.output_width(),
            seed_model.input_width(),
            seed_model.output_width()
        )));
    }

    let mut teacher_val_logits = Vec::with_capacity(val_data.len());
    for x in &val_data.xs {
        teacher_val_logits.push(cfg.teacher.forward(x)?);
    }

    let mut incumbent = seed_model.clone();
    let mut incumbent_loss =
        softened_loss_cached(&incumbent, &teacher_val_logits, val_data, cfg.temperature)?;
    let mut trace = SearchTrace {
        initial_loss: incumbent_loss,
        candidates: Vec::new(),
        best_so_far: vec![incumbent_loss],
    };

    for step in 0..cfg.steps {
        let eval = |index: usize| {
            evaluate_candidate(
                &incumbent,
                train_data,
                val_data,
                &teacher_val_logits,
                cfg,
                step,
                index,
            )
        };
        #[cfg(feature = "parallel")]
        let evaluated: Vec<Evaluated> = (0..cfg.candidates)
            .into_par_iter()
            .map(eval)
            .collect::<Result<_>>()?;
        #[cfg(not(feature = "parallel"))]
        let evaluated: Vec<Evaluated> = (0..cfg.candidates).map(eval).collect::<Result<_>>()?;

        let best = evaluated
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.val_loss
                    .partial_cmp(&b.val_loss)
                    .expect("finite validation losses")
            })
            .map(|(i, _)| i)
            .expect("at least one candidate");
        let accepted = evaluated[best].val_loss < incumbent_loss;

        for (i, cand) in evaluated.iter().enumerate() {
            trace.candidates.push(CandidateRecord {
                step,
                index: cand.index,
                ops: vec![cand.op.clone()],
                val_loss: cand.val_loss,
                accepted: accepted && i == best,
            });
        }
        if accepted {
            let winner = evaluated.into_iter().nth(best).expect("index in range");
            incumbent = winner.model;
            incumbent_loss = winner.val_loss;
        }
        trace.best_so_far.push(incumbent_loss);
    }

    Ok((incumbent, trace))
}
