use serde::{Deserialize, Serialize};

use super::data::SyntheticGenerator;
use crate::error::{Error, Result};
use crate::losses::{Example, LossSpec};
use crate::optimizer::{sgd_run, DomainConstraint, TrainConfig};
use crate::vector::dot;

/// Empirical risk `(1/n) Σ ℓ(w, z_i)`.
pub fn evaluate_risk(w: &[f64], data: &[Example], spec: &LossSpec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0;
    for z in data {
        if z.dim() != w.len() {
            return Err(Error::DimensionMismatch { expected: w.len(), actual: z.dim() });
        }
        sum += spec.loss_at(dot(w, &z.features), z.label);
    }
    Ok(sum / data.len() as f64)
}

/// Default size of each fresh holdout used for population-risk estimates.
pub const DEFAULT_HOLDOUT_N: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationReference {
    pub weights: Vec<f64>,
    /// Risk of `weights` on the evaluation holdout.
    pub risk: f64,
    pub holdout_n: usize,
    pub train_seed: u64,
    pub eval_seed: u64,
    pub iterations: usize,
    pub step_size: f64,
}

/// Seeds for the two holdouts drawn by [`approx_population_optimum`].
pub fn holdout_seeds(seed: u64) -> (u64, u64) {
    (seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xA5A5, seed.wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ 0x5A5A)
}

/// Approximates `min_{w ∈ W} R(w)` by long projected SGD on one fresh holdout
/// of `holdout_n` examples, scored on a second fresh holdout.
///
/// Runs `T = 10 · holdout_n` steps at `η = R/√T` (`R = 1` when unbounded).
pub fn approx_population_optimum(
    generator: &SyntheticGenerator,
    spec: &LossSpec,
    domain: DomainConstraint,
    holdout_n: usize,
    seed: u64,
) -> Result<PopulationReference> {
    let (train_seed, eval_seed) = holdout_seeds(seed);
    let train = generator.sample(holdout_n, train_seed)?;
    let eval = generator.sample(holdout_n, eval_seed)?;
    let iterations = 10 * holdout_n;
    let step_size = domain.radius().unwrap_or(1.0) / (iterations as f64).sqrt();
    let cfg = TrainConfig::new(iterations, step_size, train_seed, domain);
    let run = sgd_run(&train.examples, spec, &cfg, None)?;
    let risk = evaluate_risk(&run.average, &eval.examples, spec)?;
    Ok(PopulationReference { weights: run.average, risk, holdout_n, train_seed, eval_seed, iterations, step_size })
}
