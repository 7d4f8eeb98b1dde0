//! Gaussian-mechanism calibration and Rényi-DP accounting.
//!
//! All logarithms are natural. Composition is performed at a single fixed
//! Rényi order per run; projection and iterate averaging are post-processing
//! and are not charged to the accountant.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let b = Self { epsilon, delta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid("epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        check_delta(self.delta)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// A `(λ, ρ)`-RDP guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdpPoint {
    pub lambda: f64,
    pub rho: f64,
}

impl RdpPoint {
    pub fn new(lambda: f64, rho: f64) -> Result<Self> {
        if !(lambda > 1.0) || !lambda.is_finite() {
            return Err(Error::invalid("lambda", format!("Rényi order must exceed 1, got {lambda}")));
        }
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::invalid("rho", format!("must be nonnegative, got {rho}")));
        }
        Ok(Self { lambda, rho })
    }

    /// `k`-fold composition of this point with itself.
    pub fn repeat(self, k: usize) -> Self {
        Self { lambda: self.lambda, rho: self.rho * k as f64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityProvenance {
    TheoreticalUas,
    GradientBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBound {
    pub value: f64,
    pub provenance: SensitivityProvenance,
}

/// `steps` identical per-step guarantees and their composition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountantTrace {
    pub per_step: RdpPoint,
    pub steps: usize,
    pub composed: RdpPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub sigma: f64,
    pub beta: Option<f64>,
    pub lambda_used: Option<f64>,
    pub accountant_trace: Option<AccountantTrace>,
}

impl NoisePlan {
    pub fn sigma_squared(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// Named inequality checked by an accountant precondition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Noise-to-sensitivity floor (`σ² ≥ 0.67 Δ²` and its instantiations).
    NoiseFloor,
    /// Upper bound on the Rényi order.
    OrderBound,
    /// No grid point satisfied both conditions.
    EmptyFeasibleSet,
}

/// One checked inequality `lhs ≤ rhs`; `margin = rhs − lhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub condition: Condition,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl ConditionCheck {
    fn le(condition: Condition, lhs: f64, rhs: f64) -> Self {
        Self { condition, lhs, rhs, holds: lhs <= rhs }
    }

    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub checks: Vec<ConditionCheck>,
}

impl Diagnostics {
    pub fn holds(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.holds)
    }

    pub fn failing(&self) -> impl Iterator<Item = &ConditionCheck> {
        self.checks.iter().filter(|c| !c.holds)
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for c in self.failing() {
            if !first {
                write!(f, "; ")?;
            }
            first = false;
            write!(f, "{:?} violated ({} > {}, margin {})", c.condition, c.lhs, c.rhs, c.margin())?;
        }
        if first {
            write!(f, "all conditions hold")?;
        }
        Ok(())
    }
}

fn check_sensitivity(delta_sens: f64) -> Result<()> {
    if !(delta_sens >= 0.0) || !delta_sens.is_finite() {
        return Err(Error::invalid("sensitivity", format!("must be nonnegative, got {delta_sens}")));
    }
    Ok(())
}

/// Minimal Gaussian-mechanism scale `√(2 ln(1.25/δ)) Δ / ε`.
pub fn gaussian_sigma(delta_sens: f64, budget: &PrivacyBudget) -> Result<f64> {
    budget.validate()?;
    check_sensitivity(delta_sens)?;
    Ok((2.0 * (1.25 / budget.delta).ln()).sqrt() * delta_sens / budget.epsilon)
}

/// Output-perturbation scale `√(2 ln(2.5/δ)) Δ / ε`, the Gaussian mechanism at `δ/2`.
pub fn output_sigma(delta_sens: f64, budget: &PrivacyBudget) -> Result<f64> {
    budget.validate()?;
    check_sensitivity(delta_sens)?;
    Ok((2.0 * (2.5 / budget.delta).ln()).sqrt() * delta_sens / budget.epsilon)
}

/// RDP of the Gaussian mechanism on a uniform subsample at rate `p`.
///
/// Returns `(λ, 3.5 p² λ Δ²/σ²)` when `σ² ≥ 0.67 Δ²` and
/// `λ − 1 ≤ (2σ²/(3Δ²)) ln(1/(λ p (1 + σ²/Δ²)))`; otherwise
/// [`Error::Infeasible`] with both checks.
pub fn rdp_subsampled_gaussian(p: f64, lambda: f64, delta_sens: f64, sigma: f64) -> Result<RdpPoint> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid("p", format!("sampling rate must lie in (0, 1], got {p}")));
    }
    if !(lambda > 1.0) {
        return Err(Error::invalid("lambda", format!("Rényi order must exceed 1, got {lambda}")));
    }
    if !(sigma > 0.0) || !(delta_sens > 0.0) {
        return Err(Error::invalid("sigma", "sigma and sensitivity must be positive"));
    }
    let s2 = sigma * sigma;
    let d2 = delta_sens * delta_sens;
    let floor = ConditionCheck::le(Condition::NoiseFloor, 0.67 * d2, s2);
    let log_arg = 1.0 / (lambda * p * (1.0 + s2 / d2));
    let order = ConditionCheck::le(Condition::OrderBound, lambda - 1.0, (2.0 * s2 / (3.0 * d2)) * log_arg.ln());
    let diag = Diagnostics { checks: vec![floor, order] };
    if !diag.holds() {
        return Err(Error::Infeasible(diag));
    }
    RdpPoint::new(lambda, 3.5 * p * p * lambda * d2 / s2)
}

/// Composition at a shared order: `(λ, Σ ρ_i)`, compensated summation.
pub fn rdp_compose(points: &[RdpPoint], common_lambda: f64) -> Result<RdpPoint> {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for p in points {
        if p.lambda != common_lambda {
            return Err(Error::invalid(
                "lambda",
                format!("cannot compose order {} with common order {common_lambda}", p.lambda),
            ));
        }
        // Neumaier
        let t = sum + p.rho;
        if sum.abs() >= p.rho.abs() {
            comp += (sum - t) + p.rho;
        } else {
            comp += (p.rho - t) + sum;
        }
        sum = t;
    }
    RdpPoint::new(common_lambda, sum + comp)
}

/// `(λ, ρ)`-RDP implies `(ρ + ln(1/δ)/(λ − 1), δ)`-DP.
pub fn rdp_to_dp(point: &RdpPoint, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(point.lambda > 1.0) {
        return Err(Error::invalid("lambda", "Rényi order must exceed 1"));
    }
    Ok(point.rho + (1.0 / delta).ln() / (point.lambda - 1.0))
}

/// Rényi order used by gradient perturbation: `ln(1/δ)/((1 − β)ε) + 1`.
pub fn gradient_lambda(budget: &PrivacyBudget, beta: f64) -> f64 {
    (1.0 / budget.delta).ln() / ((1.0 - beta) * budget.epsilon) + 1.0
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid("beta", format!("must lie in (0, 1), got {beta}")));
    }
    Ok(())
}

/// Per-step noise for gradient perturbation on a ball, with gradient bound
/// `B = M + L R^α`:
/// `σ² = 14 B² T / (β n² ε) · (ln(1/δ)/((1 − β)ε) + 1)`.
pub fn gradient_sigma(grad_bound: f64, iterations: usize, n: usize, budget: &PrivacyBudget, beta: f64) -> Result<NoisePlan> {
    budget.validate()?;
    check_beta(beta)?;
    if !(grad_bound > 0.0) || !grad_bound.is_finite() {
        return Err(Error::invalid("grad_bound", format!("must be positive, got {grad_bound}")));
    }
    if iterations == 0 || n == 0 {
        return Err(Error::invalid("n", "n and T must be at least 1"));
    }
    let lambda = gradient_lambda(budget, beta);
    let t = iterations as f64;
    let nf = n as f64;
    let sigma2 = 14.0 * grad_bound * grad_bound * t / (beta * nf * nf * budget.epsilon) * lambda;
    let per_step = RdpPoint::new(lambda, beta * budget.epsilon / t)?;
    Ok(NoisePlan {
        sigma: sigma2.sqrt(),
        beta: Some(beta),
        lambda_used: Some(lambda),
        accountant_trace: Some(AccountantTrace { per_step, steps: iterations, composed: per_step.repeat(iterations) }),
    })
}

/// The two subsampled-RDP conditions for gradient perturbation with sampling
/// rate `1/n` and per-step sensitivity `2B`.
pub fn check_gradient_rdp_conditions(sigma: f64, grad_bound: f64, lambda: f64, n: usize) -> Diagnostics {
    let s2 = sigma * sigma;
    let b2 = grad_bound * grad_bound;
    let ratio = s2 / (4.0 * b2);
    let floor = ConditionCheck::le(Condition::NoiseFloor, 0.67, ratio);
    let log_arg = n as f64 / (lambda * (1.0 + ratio));
    let order = ConditionCheck::le(Condition::OrderBound, lambda - 1.0, s2 / (6.0 * b2) * log_arg.ln());
    Diagnostics { checks: vec![floor, order] }
}

/// Sufficient-condition threshold on ε for the existence of β when `T = n`
/// and `δ = 1/n²`: `(7(n^{1/3} − 1) + 4 n ln n + 7) / (2n(n^{1/3} − 1))`.
pub fn beta_existence_threshold(n: usize) -> Result<f64> {
    if n < 18 {
        return Err(Error::invalid("n", format!("the sufficient condition needs n >= 18, got {n}")));
    }
    let nf = n as f64;
    let c = nf.cbrt() - 1.0;
    Ok((7.0 * c + 4.0 * nf.ln() * nf + 7.0) / (2.0 * nf * c))
}

pub fn beta_existence_sufficient(n: usize, epsilon: f64) -> Result<bool> {
    Ok(epsilon >= beta_existence_threshold(n)?)
}

/// Grid used by [`search_beta`]: `β = k / 10_000`, `k = 1..=9_999`.
pub const BETA_GRID_DENOM: u32 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSearch {
    pub beta: Option<f64>,
    pub feasible_points: usize,
    /// Maximal runs of consecutive feasible grid points, as closed `[lo, hi]`.
    pub feasible_intervals: Vec<(f64, f64)>,
}

impl BetaSearch {
    pub fn is_feasible(&self) -> bool {
        self.beta.is_some()
    }
}

fn beta_feasible(grad_bound: f64, iterations: usize, n: usize, budget: &PrivacyBudget, beta: f64) -> Result<bool> {
    let plan = gradient_sigma(grad_bound, iterations, n, budget, beta)?;
    Ok(check_gradient_rdp_conditions(plan.sigma, grad_bound, plan.lambda_used.unwrap_or(f64::NAN), n).holds())
}

/// Scans the β grid and returns the feasible β closest to 1/2, ties going to
/// the smaller β.
pub fn search_beta(grad_bound: f64, iterations: usize, n: usize, budget: &PrivacyBudget) -> Result<BetaSearch> {
    let half = BETA_GRID_DENOM / 2;
    let mut best: Option<u32> = None;
    let mut count = 0;
    let mut intervals: Vec<(u32, u32)> = Vec::new();
    for k in 1..BETA_GRID_DENOM {
        let beta = k as f64 / BETA_GRID_DENOM as f64;
        if !beta_feasible(grad_bound, iterations, n, budget, beta)? {
            continue;
        }
        count += 1;
        match intervals.last_mut() {
            Some((_, hi)) if *hi + 1 == k => *hi = k,
            _ => intervals.push((k, k)),
        }
        // k ascends, so strict improvement keeps the smaller β on ties.
        if best.is_none_or(|b| k.abs_diff(half) < b.abs_diff(half)) {
            best = Some(k);
        }
    }
    let to_beta = |k: u32| k as f64 / BETA_GRID_DENOM as f64;
    Ok(BetaSearch {
        beta: best.map(to_beta),
        feasible_points: count,
        feasible_intervals: intervals.into_iter().map(|(a, b)| (to_beta(a), to_beta(b))).collect(),
    })
}
