//! Projected stochastic subgradient descent.
//!
//! The update is `w_{t+1} = Proj_W(w_t − η (∂ℓ(w_t, z_{i_t}) + b_t))` with
//! `w_1 = 0`, `i_t` i.i.d. uniform on `[0, n)`, and `b_t` an optional Gaussian
//! perturbation. `T` updates are executed and the returned average is
//! `(1/T) Σ_{t=1}^T w_t`, so `w_1 = 0` is included and `w_{T+1}` is not.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{Example, LossSpec};
use crate::rng::{stream_rng, Stream};
use crate::vector::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainConstraint {
    Unbounded,
    Ball { radius: f64 },
}

impl DomainConstraint {
    pub fn ball(radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid("radius", format!("must be positive, got {radius}")));
        }
        Ok(DomainConstraint::Ball { radius })
    }

    pub fn radius(&self) -> Option<f64> {
        match *self {
            DomainConstraint::Unbounded => None,
            DomainConstraint::Ball { radius } => Some(radius),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DomainConstraint::Ball { radius } = *self {
            DomainConstraint::ball(radius)?;
        }
        Ok(())
    }

    #[inline]
    fn project_in_place(&self, w: &mut [f64]) {
        if let DomainConstraint::Ball { radius } = *self {
            let nw = norm(w);
            if nw > radius {
                w.iter_mut().for_each(|v| *v = *v * radius / nw);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub seed: u64,
    pub domain: DomainConstraint,
    /// Keep per-step iterate norms and the index sequence in the returned run.
    #[serde(default)]
    pub retain_trace: bool,
}

impl TrainConfig {
    pub fn new(iterations: usize, step_size: f64, seed: u64, domain: DomainConstraint) -> Self {
        Self { iterations, step_size, seed, domain, retain_trace: false }
    }

    pub fn with_trace(mut self) -> Self {
        self.retain_trace = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid("step_size", format!("must be positive, got {}", self.step_size)));
        }
        self.domain.validate()
    }

    /// The step-size precondition `η < min(1, 1/L)` of the stability bounds.
    pub fn validate_theorem_mode(&self, holder_l: f64) -> Result<()> {
        self.validate()?;
        let cap = step_size_cap(holder_l);
        if self.step_size >= cap {
            return Err(Error::Precondition(format!(
                "step size {} must satisfy eta < min(1, 1/L) = {cap}",
                self.step_size
            )));
        }
        Ok(())
    }

    /// Whether the standing assumption `η > 1/T` holds.
    pub fn exceeds_inverse_horizon(&self) -> bool {
        self.step_size > 1.0 / self.iterations as f64
    }
}

/// `min(1, 1/L)`, with `1/0 = ∞`.
pub fn step_size_cap(holder_l: f64) -> f64 {
    if holder_l > 0.0 {
        (1.0f64).min(1.0 / holder_l)
    } else {
        1.0
    }
}

/// Gaussian perturbation `N(0, σ² I)` drawn from its own seeded stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoise {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdRun {
    pub average: Vec<f64>,
    /// `w_{T+1}`, the iterate produced by the last update (not part of the average).
    pub last_iterate: Vec<f64>,
    /// `‖w_{t+1}‖₂` after each update; empty unless tracing was requested.
    pub iterates_norm_trace: Vec<f64>,
    /// Empty unless tracing was requested.
    pub index_sequence: Vec<usize>,
    /// FNV-1a digest of the index sequence, always populated.
    pub index_digest: u64,
}

pub fn project_ball(v: &[f64], radius: f64) -> Result<Vec<f64>> {
    let domain = DomainConstraint::ball(radius)?;
    let mut out = v.to_vec();
    domain.project_in_place(&mut out);
    Ok(out)
}

pub fn sample_index_sequence(n: usize, iterations: usize, seed: u64) -> Vec<usize> {
    assert!(n >= 1, "index range must be nonempty");
    let mut rng = stream_rng(seed, Stream::Indices);
    (0..iterations).map(|_| rng.random_range(0..n)).collect()
}

pub fn gaussian_vector<R: Rng + ?Sized>(dim: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; dim];
    }
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    #[inline]
    fn push(&mut self, v: usize) {
        for b in (v as u64).to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

/// Checks that all examples share one dimension and returns it.
pub(crate) fn common_dim(data: &[Example]) -> Result<usize> {
    let first = data.first().ok_or(Error::EmptyDataset)?;
    let d = first.dim();
    for z in data {
        if z.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: z.dim() });
        }
    }
    Ok(d)
}

pub fn sgd_run(
    data: &[Example],
    spec: &LossSpec,
    cfg: &TrainConfig,
    noise: Option<&GaussianNoise>,
) -> Result<SgdRun> {
    cfg.validate()?;
    let d = common_dim(data)?;
    if let Some(nz) = noise {
        if !(nz.sigma >= 0.0) || !nz.sigma.is_finite() {
            return Err(Error::invalid("sigma", format!("must be nonnegative, got {}", nz.sigma)));
        }
    }
    let n = data.len();
    let eta = cfg.step_size;
    let mut index_rng = stream_rng(cfg.seed, Stream::Indices);
    let mut noise_rng = noise.filter(|nz| nz.sigma > 0.0).map(|nz| (nz.sigma, stream_rng(nz.seed, Stream::StepNoise)));

    let mut w = vec![0.0; d];
    let mut sum = vec![0.0; d];
    let mut digest = Fnv::new();
    let mut norms = Vec::new();
    let mut indices = Vec::new();
    if cfg.retain_trace {
        norms.reserve(cfg.iterations);
        indices.reserve(cfg.iterations);
    }

    for _ in 0..cfg.iterations {
        for (s, v) in sum.iter_mut().zip(&w) {
            *s += v;
        }
        let i = index_rng.random_range(0..n);
        digest.push(i);
        let z = &data[i];
        let c = spec.subgradient_scale(dot(&w, &z.features), z.label);
        match noise_rng.as_mut() {
            None => {
                for (wj, xj) in w.iter_mut().zip(&z.features) {
                    *wj -= eta * (c * xj);
                }
            }
            Some((sigma, rng)) => {
                for (wj, xj) in w.iter_mut().zip(&z.features) {
                    let b: f64 = StandardNormal.sample(rng);
                    *wj -= eta * (c * xj + *sigma * b);
                }
            }
        }
        cfg.domain.project_in_place(&mut w);
        if cfg.retain_trace {
            norms.push(norm(&w));
            indices.push(i);
        }
    }

    let inv_t = 1.0 / cfg.iterations as f64;
    let average = sum.into_iter().map(|s| s * inv_t).collect();
    Ok(SgdRun {
        average,
        last_iterate: w,
        iterates_norm_trace: norms,
        index_sequence: indices,
        index_digest: digest.0,
    })
}
