//! Convex loss families with α-Hölder continuous subgradients.
//!
//! Both families are generalized linear: the loss depends on `w` only through
//! `⟨w, x⟩`, so every subgradient is a scalar multiple of the feature vector.
//! * `QHinge`: `max(0, 1 − y⟨w, x⟩)^q`, the q-norm soft-margin SVM loss;
//! * `QNormRegression`: `|y − ⟨w, x⟩|^q`; `q = 1` is the absolute loss.
//!
//! With `q ∈ [1, 2]` the subgradient map is `(q − 1)`-Hölder continuous.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    QHinge,
    QNormRegression,
}

impl std::str::FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qhinge" | "q_hinge" | "hinge" => Ok(LossFamily::QHinge),
            "qnorm" | "q_norm_regression" | "regression" => Ok(LossFamily::QNormRegression),
            other => Err(Error::invalid("loss", format!("unknown loss family `{other}`"))),
        }
    }
}

/// A loss family instance together with its Hölder parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: LossFamily,
    pub q: f64,
    pub alpha: f64,
    pub holder_l: f64,
    pub feature_bound: f64,
}

/// Dataset maxima of the subgradient norm (`m`) and loss value (`m0`) at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEnvelope {
    pub m: f64,
    pub m0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: f64,
}

impl Example {
    pub fn new(features: Vec<f64>, label: f64) -> Self {
        Self { features, label }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

fn check_q(q: f64) -> Result<()> {
    if !(1.0..=2.0).contains(&q) {
        return Err(Error::invalid("q", format!("must lie in [1, 2], got {q}")));
    }
    Ok(())
}

/// Hölder exponent and constant for a family at exponent `q`.
///
/// `L = q · 2^{2−q} · B^q` for both families, from
/// `| |a|^s sgn a − |b|^s sgn b | ≤ 2^{1−s} |a − b|^s` applied to the residual
/// (or margin) map with `s = q − 1` and `|⟨w − w′, x⟩| ≤ B ‖w − w′‖`.
pub fn holder_constants(_family: LossFamily, q: f64, feature_bound: f64) -> Result<(f64, f64)> {
    check_q(q)?;
    if !(feature_bound > 0.0) || !feature_bound.is_finite() {
        return Err(Error::invalid("feature_bound", format!("must be positive, got {feature_bound}")));
    }
    let alpha = q - 1.0;
    let holder_l = q * 2f64.powf(2.0 - q) * feature_bound.powf(q);
    Ok((alpha, holder_l))
}

/// The self-bounding coefficient `c_{α,1}`: `‖∂ℓ‖ ≤ c_{α,1} ℓ^{α/(1+α)}`.
pub fn self_bounding_coeff(alpha: f64, holder_l: f64, m: f64) -> f64 {
    if alpha == 0.0 {
        m + holder_l
    } else {
        (1.0 + 1.0 / alpha).powf(alpha / (1.0 + alpha)) * holder_l.powf(1.0 / (1.0 + alpha))
    }
}

/// `|t|^p` with the two common exponents evaluated exactly.
#[inline]
fn abs_pow(t: f64, p: f64) -> f64 {
    if p == 1.0 {
        t.abs()
    } else if p == 2.0 {
        t * t
    } else if p == 0.0 {
        1.0
    } else {
        t.abs().powf(p)
    }
}

impl LossSpec {
    pub fn new(family: LossFamily, q: f64, feature_bound: f64) -> Result<Self> {
        let (alpha, holder_l) = holder_constants(family, q, feature_bound)?;
        Ok(Self { family, q, alpha, holder_l, feature_bound })
    }

    fn check_dims(w: &[f64], z: &Example) -> Result<()> {
        if w.len() != z.features.len() {
            return Err(Error::DimensionMismatch { expected: w.len(), actual: z.features.len() });
        }
        Ok(())
    }

    /// Loss as a function of the prediction `⟨w, x⟩`.
    #[inline]
    pub(crate) fn loss_at(&self, prediction: f64, label: f64) -> f64 {
        match self.family {
            LossFamily::QHinge => {
                let slack = 1.0 - label * prediction;
                if slack > 0.0 {
                    abs_pow(slack, self.q)
                } else {
                    0.0
                }
            }
            LossFamily::QNormRegression => abs_pow(label - prediction, self.q),
        }
    }

    /// Scalar `c` with `∂ℓ(w, z) = c · x`, given the prediction `⟨w, x⟩`.
    /// Kinks (margin exactly 1, residual exactly 0) map to `c = 0`.
    #[inline]
    pub(crate) fn subgradient_scale(&self, prediction: f64, label: f64) -> f64 {
        let s = self.q - 1.0;
        match self.family {
            LossFamily::QHinge => {
                let slack = 1.0 - label * prediction;
                if slack > 0.0 {
                    -self.q * abs_pow(slack, s) * label
                } else {
                    0.0
                }
            }
            LossFamily::QNormRegression => {
                let r = label - prediction;
                if r == 0.0 {
                    0.0
                } else {
                    -self.q * abs_pow(r, s) * r.signum()
                }
            }
        }
    }

    pub fn eval_loss(&self, w: &[f64], z: &Example) -> Result<f64> {
        check_q(self.q)?;
        Self::check_dims(w, z)?;
        Ok(self.loss_at(dot(w, &z.features), z.label))
    }

    pub fn subgradient(&self, w: &[f64], z: &Example) -> Result<Vec<f64>> {
        check_q(self.q)?;
        Self::check_dims(w, z)?;
        let c = self.subgradient_scale(dot(w, &z.features), z.label);
        Ok(z.features.iter().map(|x| c * x).collect())
    }

    /// Exact dataset maxima `M = max ‖∂ℓ(0, z)‖₂`, `M0 = max ℓ(0, z)`.
    pub fn envelope(&self, data: &[Example]) -> Result<LossEnvelope> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_q(self.q)?;
        let mut env = LossEnvelope { m: 0.0, m0: 0.0 };
        for z in data {
            let c = self.subgradient_scale(0.0, z.label);
            env.m = env.m.max(c.abs() * norm(&z.features));
            env.m0 = env.m0.max(self.loss_at(0.0, z.label));
        }
        Ok(env)
    }

    pub fn self_bounding_coeff(&self, env: &LossEnvelope) -> f64 {
        self_bounding_coeff(self.alpha, self.holder_l, env.m)
    }
}

pub fn eval_loss(spec: &LossSpec, w: &[f64], z: &Example) -> Result<f64> {
    spec.eval_loss(w, z)
}

pub fn subgradient(spec: &LossSpec, w: &[f64], z: &Example) -> Result<Vec<f64>> {
    spec.subgradient(w, z)
}

pub fn envelope(spec: &LossSpec, data: &[Example]) -> Result<LossEnvelope> {
    spec.envelope(data)
}
