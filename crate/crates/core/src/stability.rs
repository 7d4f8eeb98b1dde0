//! High-probability uniform argument stability (UAS) of projected SGD.
//!
//! [`theoretical_uas`] evaluates the closed-form bound on
//! `sup_{S≃S′} ‖w̄(S) − w̄(S′)‖₂` that holds with probability `1 − γ` over the
//! index sequence. [`empirical_uas`] measures the same distance on coupled
//! runs (shared index sequence) over seeded neighbor replacements, which
//! lower-bounds the supremum and is used to check dominance.

use std::f64::consts::E;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{self_bounding_coeff, Example, LossEnvelope, LossSpec};
use crate::optimizer::{sgd_run, step_size_cap, DomainConstraint, TrainConfig};
use crate::rng::{stream_rng, trial_seed, Stream};
use crate::vector::distance;

/// Quantile levels reported by [`empirical_uas`], alongside the maximum.
pub const UAS_QUANTILES: [f64; 3] = [0.5, 0.9, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    pub alpha: f64,
    pub holder_l: f64,
    pub m: f64,
    pub m0: f64,
    pub c_alpha_1: f64,
    pub c_alpha_2: f64,
    /// Iterate-growth constant: `‖w_{t+1}‖² ≤ C_α Σ η_j` on an unbounded domain.
    pub c_alpha: f64,
}

/// Constants for exponent `alpha`, Hölder constant `holder_l` and envelope `env`.
///
/// `holder_l = 0` is accepted (constant-gradient limit).
pub fn stability_constants(alpha: f64, holder_l: f64, env: &LossEnvelope) -> Result<StabilityConstants> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", format!("must lie in [0, 1], got {alpha}")));
    }
    if !(holder_l >= 0.0) || !holder_l.is_finite() {
        return Err(Error::invalid("holder_l", format!("must be nonnegative, got {holder_l}")));
    }
    if !(env.m >= 0.0 && env.m0 >= 0.0) {
        return Err(Error::invalid("envelope", "M and M0 must be nonnegative"));
    }
    let c1 = self_bounding_coeff(alpha, holder_l, env.m);
    let (c2, c_alpha) = if alpha == 1.0 {
        (0.0, 2.0 * env.m0)
    } else {
        let ratio = (1.0 - alpha) / (1.0 + alpha);
        let c2 = ratio.sqrt() * (2f64.powf(-alpha) * holder_l).powf(1.0 / (1.0 - alpha));
        // (α/(1+α))^{2α/(1−α)} is 1 at α = 0 (0^0).
        let growth = ratio
            * c1.powf(2.0 * (1.0 + alpha) / (1.0 - alpha))
            * (alpha / (1.0 + alpha)).powf(2.0 * alpha / (1.0 - alpha));
        (c2, growth + 2.0 * env.m0)
    };
    Ok(StabilityConstants { alpha, holder_l, m: env.m, m0: env.m0, c_alpha_1: c1, c_alpha_2: c2, c_alpha })
}

impl StabilityConstants {
    pub fn for_spec(spec: &LossSpec, env: &LossEnvelope) -> Result<Self> {
        stability_constants(spec.alpha, spec.holder_l, env)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid("gamma", format!("must lie in (0, 1), got {gamma}")));
    }
    Ok(())
}

/// `c_{γ,T} = max(√(3n ln(n/γ)/T), 3n ln(n/γ)/T)`.
pub fn c_gamma_t(n: usize, iterations: usize, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if n == 0 || iterations == 0 {
        return Err(Error::invalid("n", "n and T must be at least 1"));
    }
    let r = 3.0 * n as f64 * (n as f64 / gamma).ln() / iterations as f64;
    Ok(r.sqrt().max(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityInputs {
    pub n: usize,
    pub iterations: usize,
    pub step_size: f64,
    pub constants: StabilityConstants,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityBound {
    pub delta: f64,
    pub gamma: f64,
    pub domain: DomainConstraint,
    pub inputs: StabilityInputs,
}

/// Closed-form UAS bound for `T` steps of size `eta` on `n` examples.
///
/// Unbounded domain: the gradient-magnitude factor is
/// `M + L (C_α T η)^{α/2}`; on a ball of radius `R` it is `M + L R^α`.
/// The standing assumption `η > 1/T` is not enforced here.
pub fn theoretical_uas(
    consts: &StabilityConstants,
    n: usize,
    iterations: usize,
    eta: f64,
    gamma: f64,
    domain: DomainConstraint,
) -> Result<StabilityBound> {
    check_gamma(gamma)?;
    domain.validate()?;
    if n == 0 || iterations == 0 {
        return Err(Error::invalid("n", "n and T must be at least 1"));
    }
    let cap = step_size_cap(consts.holder_l);
    if !(eta > 0.0 && eta < cap) {
        return Err(Error::Precondition(format!("step size {eta} must satisfy 0 < eta < min(1, 1/L) = {cap}")));
    }
    let alpha = consts.alpha;
    let t = iterations as f64;
    // c_{α,2}² η^{2/(1−α)} grouped so neither factor overflows near α = 1.
    let contraction = if alpha == 1.0 {
        0.0
    } else {
        (1.0 - alpha) / (1.0 + alpha) * t * (2f64.powf(-alpha) * consts.holder_l * eta).powf(2.0 / (1.0 - alpha))
    };
    let grad = match domain {
        DomainConstraint::Unbounded => consts.m + consts.holder_l * (consts.c_alpha * t * eta).powf(alpha / 2.0),
        DomainConstraint::Ball { radius } => consts.m + consts.holder_l * radius.powf(alpha),
    };
    let visits = t / n as f64 * (1.0 + c_gamma_t(n, iterations, gamma)?);
    let replacement = 4.0 * grad * grad * eta * eta * (1.0 + visits) * visits;
    Ok(StabilityBound {
        delta: (E * (contraction + replacement)).sqrt(),
        gamma,
        domain,
        inputs: StabilityInputs { n, iterations, step_size: eta, constants: *consts },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub level: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UasEstimate {
    pub max_observed: f64,
    pub quantiles: Vec<Quantile>,
    pub trials: usize,
    pub coupling_seed: u64,
    /// Per-trial distances in trial order.
    pub distances: Vec<f64>,
}

impl UasEstimate {
    fn from_distances(distances: Vec<f64>, coupling_seed: u64) -> Self {
        let mut sorted = distances.clone();
        sorted.sort_by(f64::total_cmp);
        let quantiles = UAS_QUANTILES
            .iter()
            .map(|&level| Quantile { level, value: nearest_rank(&sorted, level) })
            .collect();
        Self {
            max_observed: *sorted.last().unwrap_or(&0.0),
            quantiles,
            trials: distances.len(),
            coupling_seed,
            distances,
        }
    }

    /// Fraction of trials whose distance strictly exceeds `threshold`.
    pub fn exceedance_fraction(&self, threshold: f64) -> f64 {
        let over = self.distances.iter().filter(|&&d| d > threshold).count();
        over as f64 / self.trials.max(1) as f64
    }

    pub fn quantile(&self, level: f64) -> Option<f64> {
        self.quantiles.iter().find(|q| q.level == level).map(|q| q.value)
    }
}

fn nearest_rank(sorted: &[f64], level: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (level * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Source of replacement examples for neighboring datasets.
pub trait ReplacementSampler: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng, replaced: usize) -> Example;
}

impl<F> ReplacementSampler for F
where
    F: Fn(&mut ChaCha8Rng, usize) -> Example + Sync,
{
    fn sample(&self, rng: &mut ChaCha8Rng, replaced: usize) -> Example {
        self(rng, replaced)
    }
}

/// Draws replacements uniformly from a fixed pool of examples.
pub struct PoolSampler<'a>(pub &'a [Example]);

impl ReplacementSampler for PoolSampler<'_> {
    fn sample(&self, rng: &mut ChaCha8Rng, _replaced: usize) -> Example {
        self.0[rng.random_range(0..self.0.len())].clone()
    }
}

/// One coupled trial: distance between averages plus whether both runs
/// consumed the same index sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledTrial {
    pub distance: f64,
    pub coupled: bool,
}

pub fn coupled_trial(
    data: &[Example],
    spec: &LossSpec,
    cfg: &TrainConfig,
    trial: usize,
    sampler: &dyn ReplacementSampler,
) -> Result<CoupledTrial> {
    let seed = trial_seed(cfg.seed, trial);
    let mut rng = stream_rng(seed, Stream::Neighbor);
    let j = rng.random_range(0..data.len());
    let replacement = sampler.sample(&mut rng, j);
    let mut neighbor = data.to_vec();
    neighbor[j] = replacement;
    let trial_cfg = TrainConfig { seed, ..*cfg };
    let a = sgd_run(data, spec, &trial_cfg, None)?;
    let b = sgd_run(&neighbor, spec, &trial_cfg, None)?;
    Ok(CoupledTrial {
        distance: distance(&a.average, &b.average),
        coupled: a.index_digest == b.index_digest && a.index_sequence == b.index_sequence,
    })
}

/// Empirical UAS over `trials` coupled neighbor pairs. Trials run in parallel
/// and are aggregated in trial order.
pub fn empirical_uas(
    data: &[Example],
    spec: &LossSpec,
    cfg: &TrainConfig,
    trials: usize,
    sampler: &dyn ReplacementSampler,
) -> Result<UasEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    if data.len() < 2 {
        return Err(Error::invalid("data", "need at least two examples for neighboring datasets"));
    }
    let outcomes: Vec<CoupledTrial> = (0..trials)
        .into_par_iter()
        .map(|t| coupled_trial(data, spec, cfg, t, sampler))
        .collect::<Result<_>>()?;
    if let Some(t) = outcomes.iter().position(|o| !o.coupled) {
        return Err(Error::Precondition(format!("trial {t}: coupled runs diverged in their index sequences")));
    }
    Ok(UasEstimate::from_distances(outcomes.into_iter().map(|o| o.distance).collect(), cfg.seed))
}
