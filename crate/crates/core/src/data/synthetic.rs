use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Seeded Gaussian-cluster dataset description.
///
/// `separation` is the ratio of the minimum pairwise center distance to the
/// per-coordinate noise sigma (fixed at 1), so higher values give cleaner
/// class boundaries. Per-class counts may be imbalanced.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: Vec<usize>,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::domain(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.per_class.len() != self.classes {
            return Err(Error::domain(format!(
                "{} per-class counts for {} classes",
                self.per_class.len(),
                self.classes
            )));
        }
        if self.per_class.iter().any(|c| *c == 0) {
            return Err(Error::domain("every class needs at least 1 sample"));
        }
        if self.dim == 0 {
            return Err(Error::domain("input dimension must be at least 1"));
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return Err(Error::domain(format!(
                "separation must be positive and finite, got {}",
                self.separation
            )));
        }
        Ok(())
    }
}

/// Generates seed-deterministic Gaussian clusters and shuffles the result.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Random centers, rescaled so the closest pair sits exactly at
    // `separation` noise sigmas.
    let centers = loop {
        let cand: Vec<Vec<f64>> = (0..spec.classes)
            .map(|_| (0..spec.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let mut min_dist = f64::INFINITY;
        for i in 0..cand.len() {
            for j in (i + 1)..cand.len() {
                let d: f64 = cand[i]
                    .iter()
                    .zip(&cand[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                min_dist = min_dist.min(d);
            }
        }
        if min_dist > 1e-6 {
            let scale = spec.separation / min_dist;
            break cand
                .into_iter()
                .map(|c| c.into_iter().map(|v| v * scale).collect::<Vec<f64>>())
                .collect::<Vec<_>>();
        }
    };

    let total: usize = spec.per_class.iter().sum();
    let mut xs = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (class, count) in spec.per_class.iter().enumerate() {
        for _ in 0..*count {
            let x: Vec<f64> = centers[class]
                .iter()
                .map(|c| c + rng.sample::<f64, _>(StandardNormal))
                .collect();
            xs.push(x);
            labels.push(class);
        }
    }

    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let xs = order.iter().map(|i| xs[*i].clone()).collect();
    let labels = order.iter().map(|i| labels[*i]).collect();

    Ok(Dataset {
        xs,
        labels,
        n_classes: spec.classes,
    })
}
