//! Private training pipelines and default hyperparameters.
//!
//! [`dp_sgd_output`] runs noiseless projected SGD and perturbs the iterate
//! average once, with noise calibrated to the UAS bound at `γ = δ/2`.
//! [`dp_sgd_gradient`] perturbs every stochastic subgradient on a ball domain
//! and accounts the run with Rényi DP at a single order.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{Example, LossEnvelope, LossSpec};
use crate::optimizer::{common_dim, sgd_run, step_size_cap, DomainConstraint, GaussianNoise, TrainConfig};
use crate::privacy::{
    check_gradient_rdp_conditions, gradient_sigma, output_sigma, rdp_to_dp, search_beta, Condition, ConditionCheck,
    Diagnostics, NoisePlan, PrivacyBudget, SensitivityBound, SensitivityProvenance,
};
use crate::rng::{stream_rng, Stream};
use crate::stability::{theoretical_uas, StabilityBound, StabilityConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    OutputPerturbation,
    GradientPerturbation,
}

impl FromStr for PerturbationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "output" | "output_perturbation" => Ok(Self::OutputPerturbation),
            "gradient" | "gradient_perturbation" => Ok(Self::GradientPerturbation),
            other => Err(Error::invalid("mode", format!("unknown perturbation mode `{other}`"))),
        }
    }
}

impl fmt::Display for PerturbationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::OutputPerturbation => "output",
            Self::GradientPerturbation => "gradient",
        })
    }
}

/// Which utility guarantee prescribes `(T, η)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperparamRule {
    OutputUnbounded,
    OutputBounded,
    Gradient,
}

/// `(√73 − 7)/4`, the exponent switch for unbounded output perturbation.
pub fn output_unbounded_threshold() -> f64 {
    (73f64.sqrt() - 7.0) / 4.0
}

impl HyperparamRule {
    pub fn for_mode(mode: PerturbationMode, domain: &DomainConstraint) -> Self {
        match (mode, domain) {
            (PerturbationMode::GradientPerturbation, _) => Self::Gradient,
            (PerturbationMode::OutputPerturbation, DomainConstraint::Unbounded) => Self::OutputUnbounded,
            (PerturbationMode::OutputPerturbation, DomainConstraint::Ball { .. }) => Self::OutputBounded,
        }
    }

    /// α at and above which `T = n`.
    pub fn alpha_threshold(self) -> f64 {
        match self {
            Self::OutputUnbounded => output_unbounded_threshold(),
            Self::OutputBounded | Self::Gradient => 0.5,
        }
    }

    /// Exponent `e` in `T ≍ n^e`.
    pub fn horizon_exponent(self, alpha: f64) -> f64 {
        if alpha >= self.alpha_threshold() {
            return 1.0;
        }
        match self {
            Self::OutputUnbounded => (-alpha * alpha - 3.0 * alpha + 6.0) / ((1.0 + alpha) * (3.0 + alpha)),
            Self::OutputBounded | Self::Gradient => (2.0 - alpha) / (1.0 + alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperparamQuery {
    pub rule: HyperparamRule,
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    pub holder_l: f64,
    pub budget: PrivacyBudget,
    pub gamma: f64,
    /// The constant `c` in `T = ⌈c · n^e⌉`.
    pub horizon_scale: f64,
}

impl HyperparamQuery {
    pub fn new(
        rule: HyperparamRule,
        n: usize,
        d: usize,
        alpha: f64,
        holder_l: f64,
        budget: PrivacyBudget,
        gamma: f64,
    ) -> Self {
        Self { rule, n, d, alpha, holder_l, budget, gamma, horizon_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub iterations: usize,
    pub step_size: f64,
    pub horizon_exponent: f64,
    /// Step size before clamping.
    pub raw_step_size: f64,
    pub clamps: Vec<String>,
}

/// `T = ⌈c n^e⌉`, exactly `n` when `c = 1` and `e = 1`.
pub fn default_iterations(rule: HyperparamRule, n: usize, alpha: f64, horizon_scale: f64) -> Result<usize> {
    let e = rule.horizon_exponent(alpha);
    if e == 1.0 && horizon_scale == 1.0 {
        return Ok(n);
    }
    let t = (horizon_scale * (n as f64).powf(e)).ceil();
    if !(t >= 1.0 && t < usize::MAX as f64) {
        return Err(Error::invalid("horizon_scale", format!("iteration count {t} out of range")));
    }
    Ok(t as usize)
}

fn raw_step_size(q: &HyperparamQuery, iterations: usize) -> f64 {
    let n = q.n as f64;
    let d = q.d as f64;
    let t = iterations as f64;
    let eps = q.budget.epsilon;
    let ln_inv_delta = (1.0 / q.budget.delta).ln();
    let ln_inv_gamma = (1.0 / q.gamma).ln();
    match q.rule {
        HyperparamRule::OutputUnbounded => {
            let p = 1.0 / (3.0 + q.alpha);
            n.powf(p) / (t * ln_inv_gamma.powf(p))
        }
        HyperparamRule::OutputBounded => {
            let ln_n_delta = (n / q.budget.delta).ln();
            let a = (ln_n_delta * n.ln() * ln_inv_gamma).sqrt() / n.sqrt();
            let b = (d * ln_inv_delta).powf(0.25) * ln_n_delta.sqrt() * ln_inv_gamma.powf(0.125) / (n * eps).sqrt();
            1.0 / (t * a.max(b))
        }
        HyperparamRule::Gradient => {
            let a = (n.ln() * (n / q.gamma).ln() * ln_inv_gamma).sqrt() / n.sqrt();
            let b = (d * ln_inv_delta).sqrt() * ln_inv_gamma.powf(0.25) / (n * eps);
            a.max(b) / t
        }
    }
}

/// Utility-optimal `(T, η)`, with `η` clamped into `(1/T, 0.99 min(1, 1/L))`.
///
/// A step size at or below `1/T` is raised to `1.01/T`; one at or above the
/// cap is lowered to `0.99` of it. The upper clamp wins when both apply.
pub fn default_hyperparams(q: &HyperparamQuery) -> Result<Hyperparams> {
    if q.n < 2 || q.d == 0 {
        return Err(Error::invalid("n", "need n >= 2 and d >= 1"));
    }
    if !(0.0..=1.0).contains(&q.alpha) {
        return Err(Error::invalid("alpha", format!("must lie in [0, 1], got {}", q.alpha)));
    }
    if !(q.gamma > 0.0 && q.gamma < 1.0) {
        return Err(Error::invalid("gamma", format!("must lie in (0, 1), got {}", q.gamma)));
    }
    if !(q.horizon_scale > 0.0) {
        return Err(Error::invalid("horizon_scale", "must be positive"));
    }
    q.budget.validate()?;
    let iterations = default_iterations(q.rule, q.n, q.alpha, q.horizon_scale)?;
    let raw = raw_step_size(q, iterations);
    let mut eta = raw;
    let mut clamps = Vec::new();
    let floor = 1.0 / iterations as f64;
    if eta <= floor {
        let to = 1.01 * floor;
        clamps.push(format!("step_size raised from {eta} to {to} (must exceed 1/T = {floor})"));
        eta = to;
    }
    let cap = step_size_cap(q.holder_l);
    if eta >= 0.99 * cap {
        let to = 0.99 * cap;
        clamps.push(format!("step_size lowered from {eta} to {to} (must stay below min(1, 1/L) = {cap})"));
        eta = to;
    }
    Ok(Hyperparams { iterations, step_size: eta, horizon_exponent: q.rule.horizon_exponent(q.alpha), raw_step_size: raw, clamps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub iterations: usize,
    pub step_size: f64,
    pub seed: u64,
    pub noise_seed: u64,
    pub domain: DomainConstraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub mode: PerturbationMode,
    pub sensitivity: SensitivityBound,
    pub noise: NoisePlan,
    pub budget: PrivacyBudget,
    pub hyperparams: RunParams,
    pub clamps_applied: Vec<String>,
    /// `None` when the run does not support an `(ε, δ)` claim.
    pub claimed_guarantee: Option<PrivacyBudget>,
    pub loss: LossSpec,
    pub envelope: LossEnvelope,
    pub n: usize,
    pub d: usize,
    pub stability: Option<StabilityBound>,
    /// `M + L R^α`.
    pub grad_bound: Option<f64>,
    pub rdp_conditions: Option<Diagnostics>,
    /// `ε` recovered from the composed accountant trace at the budget's `δ`.
    pub realized_epsilon: Option<f64>,
    pub noise_draw: Option<Vec<f64>>,
    pub noiseless_average: Option<Vec<f64>>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateModel {
    pub weights: Vec<f64>,
    pub audit: AuditRecord,
}

impl PrivateModel {
    /// Attaches the step-size clamps that produced `cfg`.
    pub fn with_clamps(mut self, clamps: Vec<String>) -> Self {
        self.audit.clamps_applied = clamps;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputOptions {
    /// Defaults to the training seed; drawn from a separate stream.
    pub noise_seed: Option<u64>,
    /// Replaces the dataset envelope, e.g. with a data-independent bound.
    pub envelope: Option<LossEnvelope>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientOptions {
    /// Skip the β search and use this split.
    pub beta: Option<f64>,
    /// Proceed with `claimed_guarantee = None` instead of aborting when the
    /// accountant conditions fail.
    pub allow_void_claim: bool,
    /// Test hook: add no noise. The claim is void.
    pub force_zero_noise: bool,
    pub noise_seed: Option<u64>,
    pub envelope: Option<LossEnvelope>,
}

/// β used when no grid point is feasible and the caller accepts a void claim.
pub const FALLBACK_BETA: f64 = 0.5;

fn horizon_note(cfg: &TrainConfig, notes: &mut Vec<String>) {
    if !cfg.exceeds_inverse_horizon() {
        notes.push(format!("step_size {} does not exceed 1/T = {}", cfg.step_size, 1.0 / cfg.iterations as f64));
    }
}

/// Output perturbation: `w_priv = w̄ + b`, `b ~ N(0, σ² I)`,
/// `σ = √(2 ln(2.5/δ)) Δ / ε`, `Δ` the UAS bound at `γ = δ/2` for `cfg.domain`.
pub fn dp_sgd_output(
    data: &[Example],
    spec: &LossSpec,
    budget: &PrivacyBudget,
    cfg: &TrainConfig,
    opts: &OutputOptions,
) -> Result<PrivateModel> {
    budget.validate()?;
    cfg.validate_theorem_mode(spec.holder_l)?;
    let d = common_dim(data)?;
    let env = match opts.envelope {
        Some(e) => e,
        None => spec.envelope(data)?,
    };
    let consts = StabilityConstants::for_spec(spec, &env)?;
    let bound = theoretical_uas(&consts, data.len(), cfg.iterations, cfg.step_size, budget.delta / 2.0, cfg.domain)?;
    let sigma = output_sigma(bound.delta, budget)?;

    let run = sgd_run(data, spec, cfg, None)?;
    let noise_seed = opts.noise_seed.unwrap_or(cfg.seed);
    let mut rng = stream_rng(noise_seed, Stream::OutputNoise);
    let draw: Vec<f64> = (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect();
    let weights = run.average.iter().zip(&draw).map(|(a, b)| a + b).collect();

    let mut notes = Vec::new();
    horizon_note(cfg, &mut notes);
    Ok(PrivateModel {
        weights,
        audit: AuditRecord {
            mode: PerturbationMode::OutputPerturbation,
            sensitivity: SensitivityBound { value: bound.delta, provenance: SensitivityProvenance::TheoreticalUas },
            noise: NoisePlan { sigma, beta: None, lambda_used: None, accountant_trace: None },
            budget: *budget,
            hyperparams: RunParams {
                iterations: cfg.iterations,
                step_size: cfg.step_size,
                seed: cfg.seed,
                noise_seed,
                domain: cfg.domain,
            },
            clamps_applied: Vec::new(),
            claimed_guarantee: Some(*budget),
            loss: *spec,
            envelope: env,
            n: data.len(),
            d,
            stability: Some(bound),
            grad_bound: None,
            rdp_conditions: None,
            realized_epsilon: None,
            noise_draw: Some(draw),
            noiseless_average: Some(run.average),
            notes,
        },
    })
}

/// Gradient perturbation on a ball of radius `R`:
/// `w_{t+1} = Proj(w_t − η(∂ℓ(w_t; z_{i_t}) + b_t))`, returning the iterate
/// average.
///
/// Without [`GradientOptions::beta`] the split is found by [`search_beta`].
/// If the accountant conditions fail the run aborts with
/// [`Error::Infeasible`] unless [`GradientOptions::allow_void_claim`] is set.
pub fn dp_sgd_gradient(
    data: &[Example],
    spec: &LossSpec,
    budget: &PrivacyBudget,
    cfg: &TrainConfig,
    opts: &GradientOptions,
) -> Result<PrivateModel> {
    budget.validate()?;
    cfg.validate()?;
    let radius = match cfg.domain {
        DomainConstraint::Ball { radius } => radius,
        DomainConstraint::Unbounded => {
            return Err(Error::invalid("domain", "gradient perturbation requires a ball domain"));
        }
    };
    let d = common_dim(data)?;
    let n = data.len();
    let env = match opts.envelope {
        Some(e) => e,
        None => spec.envelope(data)?,
    };
    let grad_bound = env.m + spec.holder_l * radius.powf(spec.alpha);
    let mut notes = Vec::new();

    let (beta, search_failed) = match opts.beta {
        Some(b) => (b, false),
        None => match search_beta(grad_bound, cfg.iterations, n, budget)?.beta {
            Some(b) => (b, false),
            None => (FALLBACK_BETA, true),
        },
    };
    let plan = gradient_sigma(grad_bound, cfg.iterations, n, budget, beta)?;
    let lambda = plan.lambda_used.unwrap_or(f64::NAN);
    let mut diag = check_gradient_rdp_conditions(plan.sigma, grad_bound, lambda, n);
    if search_failed {
        diag.checks.push(ConditionCheck { condition: Condition::EmptyFeasibleSet, lhs: 1.0, rhs: 0.0, holds: false });
    }
    if !diag.holds() {
        if !opts.allow_void_claim {
            return Err(Error::Infeasible(diag));
        }
        notes.push(format!("accountant conditions fail at beta = {beta} ({diag}); no privacy claim"));
    }
    let realized = plan.accountant_trace.map(|tr| rdp_to_dp(&tr.composed, budget.delta)).transpose()?;

    let noise_seed = opts.noise_seed.unwrap_or(cfg.seed);
    let applied = GaussianNoise { sigma: if opts.force_zero_noise { 0.0 } else { plan.sigma }, seed: noise_seed };
    if opts.force_zero_noise {
        notes.push("noise disabled by test hook; no privacy claim".to_string());
    }
    let run = sgd_run(data, spec, cfg, Some(&applied))?;
    horizon_note(cfg, &mut notes);

    let claim = (diag.holds() && !opts.force_zero_noise).then_some(*budget);
    Ok(PrivateModel {
        weights: run.average,
        audit: AuditRecord {
            mode: PerturbationMode::GradientPerturbation,
            sensitivity: SensitivityBound { value: 2.0 * grad_bound, provenance: SensitivityProvenance::GradientBound },
            noise: plan,
            budget: *budget,
            hyperparams: RunParams {
                iterations: cfg.iterations,
                step_size: cfg.step_size,
                seed: cfg.seed,
                noise_seed,
                domain: cfg.domain,
            },
            clamps_applied: Vec::new(),
            claimed_guarantee: claim,
            loss: *spec,
            envelope: env,
            n,
            d,
            stability: None,
            grad_bound: Some(grad_bound),
            rdp_conditions: Some(diag),
            realized_epsilon: realized,
            noise_draw: None,
            noiseless_average: None,
            notes,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossFamily;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn budget(e: f64, d: f64) -> PrivacyBudget {
        PrivacyBudget::new(e, d).unwrap()
    }

    fn regression(n: usize, d: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if nx > 1.0 {
                    x.iter_mut().for_each(|v| *v /= nx);
                }
                let y = x[0] * 0.7 + rng.random_range(-0.1..0.1);
                Example::new(x, y)
            })
            .collect()
    }

    #[test]
    fn horizon_examples() {
        let q = HyperparamQuery::new(HyperparamRule::Gradient, 100, 10, 0.25, 1.0, budget(1.0, 1e-4), 0.05);
        let h = default_hyperparams(&q).unwrap();
        assert_eq!(h.iterations, 631);
        assert_eq!(default_iterations(HyperparamRule::Gradient, 1000, 0.5, 1.0).unwrap(), 1000);
        assert_eq!(default_iterations(HyperparamRule::Gradient, 256, 0.0, 1.0).unwrap(), 65_536);
        assert_eq!(default_iterations(HyperparamRule::OutputUnbounded, 100, 0.0, 1.0).unwrap(), 10_000);
        assert_eq!(default_iterations(HyperparamRule::Gradient, 100, 0.5, 2.0).unwrap(), 200);
    }

    #[test]
    fn gradient_step_size_example() {
        let q = HyperparamQuery::new(HyperparamRule::Gradient, 100, 10, 0.25, 1.0, budget(1.0, 1e-4), 0.05);
        let h = default_hyperparams(&q).unwrap();
        // max{1.0240164209288003, 0.12625936173543863} / 631
        assert_relative_eq!(h.raw_step_size, 0.0016228469428348658, max_relative = 1e-12);
        assert!(h.clamps.is_empty());
        assert_eq!(h.step_size, h.raw_step_size);
    }

    #[test]
    fn threshold_switches_exactly() {
        for rule in [HyperparamRule::OutputUnbounded, HyperparamRule::OutputBounded, HyperparamRule::Gradient] {
            let a = rule.alpha_threshold();
            assert_eq!(rule.horizon_exponent(a), 1.0);
            let below = a - 1e-9;
            assert!(rule.horizon_exponent(below) > 1.0);
            assert_eq!(rule.horizon_exponent(a + 1e-9), 1.0);
        }
        // unbounded exponent is continuous at its threshold
        let r = HyperparamRule::OutputUnbounded;
        assert_relative_eq!(r.horizon_exponent(output_unbounded_threshold() - 1e-12), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn clamps_are_recorded() {
        // T = n² at α = 0 puts the prescribed step below 1/T
        let q = HyperparamQuery::new(HyperparamRule::Gradient, 256, 5, 0.0, 2.0, budget(2.0, 1.0 / 65_536.0), 0.05);
        let h = default_hyperparams(&q).unwrap();
        assert_eq!(h.iterations, 65_536);
        assert!(h.raw_step_size <= 1.0 / 65_536.0);
        assert_eq!(h.clamps.len(), 1);
        assert_relative_eq!(h.step_size, 1.01 / 65_536.0, max_relative = 1e-15);

        // tiny n and huge L: upper clamp
        let q = HyperparamQuery::new(HyperparamRule::OutputUnbounded, 2, 1, 1.0, 1e6, budget(1.0, 1e-2), 0.5);
        let h = default_hyperparams(&q).unwrap();
        assert!(h.step_size < 1e-6);
        assert!(!h.clamps.is_empty());
    }

    #[test]
    fn hyperparam_validation() {
        let b = budget(1.0, 1e-3);
        assert!(default_hyperparams(&HyperparamQuery::new(HyperparamRule::Gradient, 1, 1, 0.0, 1.0, b, 0.1)).is_err());
        assert!(default_hyperparams(&HyperparamQuery::new(HyperparamRule::Gradient, 10, 1, 1.5, 1.0, b, 0.1)).is_err());
        assert!(default_hyperparams(&HyperparamQuery::new(HyperparamRule::Gradient, 10, 1, 0.0, 1.0, b, 1.0)).is_err());
    }

    #[test]
    fn rule_for_mode() {
        assert_eq!(
            HyperparamRule::for_mode(PerturbationMode::OutputPerturbation, &DomainConstraint::Unbounded),
            HyperparamRule::OutputUnbounded
        );
        assert_eq!(
            HyperparamRule::for_mode(PerturbationMode::OutputPerturbation, &DomainConstraint::Ball { radius: 1.0 }),
            HyperparamRule::OutputBounded
        );
        assert_eq!("gradient".parse::<PerturbationMode>().unwrap(), PerturbationMode::GradientPerturbation);
        assert!("bogus".parse::<PerturbationMode>().is_err());
    }

    #[test]
    fn output_audit_recomputes() {
        let data = regression(100, 3, 1);
        let spec = LossSpec::new(LossFamily::QNormRegression, 1.0, 1.0).unwrap();
        let b = budget(1.0, 0.01);
        let cfg = TrainConfig::new(100, 0.01, 9, DomainConstraint::Unbounded);
        let model = dp_sgd_output(&data, &spec, &b, &cfg, &OutputOptions::default()).unwrap();
        let a = &model.audit;

        let env = spec.envelope(&data).unwrap();
        let consts = StabilityConstants::for_spec(&spec, &env).unwrap();
        let delta = theoretical_uas(&consts, 100, 100, 0.01, 0.005, DomainConstraint::Unbounded).unwrap().delta;
        assert_eq!(a.sensitivity.value, delta);
        assert_eq!(a.sensitivity.provenance, SensitivityProvenance::TheoreticalUas);
        assert_relative_eq!(a.noise.sigma, (2.0 * 250f64.ln()).sqrt() * delta, max_relative = 1e-14);
        assert_eq!(a.claimed_guarantee, Some(b));
        assert!(a.noise.beta.is_none());
        // exact additive decomposition
        let avg = a.noiseless_average.as_ref().unwrap();
        let draw = a.noise_draw.as_ref().unwrap();
        for j in 0..3 {
            assert_eq!(model.weights[j].to_bits(), (avg[j] + draw[j]).to_bits());
        }
        let plain = sgd_run(&data, &spec, &cfg, None).unwrap();
        assert_eq!(&plain.average, avg);
    }

    #[test]
    fn output_is_deterministic() {
        let data = regression(50, 2, 2);
        let spec = LossSpec::new(LossFamily::QHinge, 1.5, 1.0).unwrap();
        let data: Vec<Example> =
            data.into_iter().map(|z| Example::new(z.features, if z.label > 0.0 { 1.0 } else { -1.0 })).collect();
        let b = budget(2.0, 1e-3);
        let cfg = TrainConfig::new(200, 0.05, 4, DomainConstraint::ball(2.0).unwrap());
        let o = OutputOptions { noise_seed: Some(77), ..Default::default() };
        let m1 = dp_sgd_output(&data, &spec, &b, &cfg, &o).unwrap();
        let m2 = dp_sgd_output(&data, &spec, &b, &cfg, &o).unwrap();
        assert_eq!(m1, m2);
        let o2 = OutputOptions { noise_seed: Some(78), ..Default::default() };
        assert_ne!(dp_sgd_output(&data, &spec, &b, &cfg, &o2).unwrap().weights, m1.weights);
    }

    #[test]
    fn output_rejects_large_step() {
        let data = regression(20, 2, 3);
        let spec = LossSpec::new(LossFamily::QNormRegression, 2.0, 1.0).unwrap();
        let cfg = TrainConfig::new(20, 0.5, 0, DomainConstraint::Unbounded);
        assert!(dp_sgd_output(&data, &spec, &budget(1.0, 0.1), &cfg, &OutputOptions::default()).is_err());
    }

    #[test]
    fn gradient_zero_noise_matches_plain_sgd() {
        let data = regression(64, 3, 5);
        let spec = LossSpec::new(LossFamily::QNormRegression, 1.0, 1.0).unwrap();
        let cfg = TrainConfig::new(500, 0.02, 11, DomainConstraint::ball(1.0).unwrap());
        let opts = GradientOptions { beta: Some(0.5), allow_void_claim: true, force_zero_noise: true, ..Default::default() };
        let m = dp_sgd_gradient(&data, &spec, &budget(2.0, 1e-4), &cfg, &opts).unwrap();
        let plain = sgd_run(&data, &spec, &cfg, None).unwrap();
        let a: Vec<u64> = m.weights.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = plain.average.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert!(m.audit.claimed_guarantee.is_none());
    }

    #[test]
    fn gradient_audit_recomputes() {
        let n = 1000;
        let data = regression(n, 2, 6);
        let spec = LossSpec::new(LossFamily::QNormRegression, 1.5, 1.0).unwrap();
        let r = 1.0;
        let b = budget(2.0, 1e-6);
        let cfg = TrainConfig::new(n, 0.01, 3, DomainConstraint::ball(r).unwrap()).with_trace();
        let m = dp_sgd_gradient(&data, &spec, &b, &cfg, &GradientOptions::default()).unwrap();
        let a = &m.audit;
        let env = spec.envelope(&data).unwrap();
        let gb = env.m + spec.holder_l * r.powf(spec.alpha);
        assert_eq!(a.grad_bound, Some(gb));
        let beta = a.noise.beta.unwrap();
        let lam = (1e6f64).ln() / ((1.0 - beta) * 2.0) + 1.0;
        let s2 = 14.0 * gb * gb * n as f64 / (beta * (n * n) as f64 * 2.0) * lam;
        assert_relative_eq!(a.noise.sigma_squared(), s2, max_relative = 1e-12);
        assert!(a.rdp_conditions.as_ref().unwrap().holds());
        assert_eq!(a.claimed_guarantee, Some(b));
        assert_relative_eq!(a.realized_epsilon.unwrap(), 2.0, max_relative = 1e-12);
        let trace = a.noise.accountant_trace.unwrap();
        assert_relative_eq!(trace.composed.rho, beta * 2.0, max_relative = 1e-12);
    }

    #[test]
    fn gradient_iterates_stay_in_ball() {
        let data = regression(200, 3, 7);
        let spec = LossSpec::new(LossFamily::QNormRegression, 1.0, 1.0).unwrap();
        let r = 0.3;
        let cfg = TrainConfig::new(2000, 0.05, 1, DomainConstraint::ball(r).unwrap()).with_trace();
        let opts = GradientOptions { beta: Some(0.5), allow_void_claim: true, ..Default::default() };
        let m = dp_sgd_gradient(&data, &spec, &budget(0.5, 1e-3), &cfg, &opts).unwrap();
        let noise = GaussianNoise { sigma: m.audit.noise.sigma, seed: 1 };
        let run = sgd_run(&data, &spec, &cfg, Some(&noise)).unwrap();
        assert_eq!(run.average, m.weights);
        assert!(run.iterates_norm_trace.iter().all(|&v| v <= r * (1.0 + 1e-12)));
    }

    #[test]
    fn gradient_infeasible_aborts_or_voids() {
        let n = 50;
        let data = regression(n, 2, 8);
        let spec = LossSpec::new(LossFamily::QNormRegression, 1.0, 1.0).unwrap();
        let b = budget(0.01, 1.0 / (n * n) as f64);
        let cfg = TrainConfig::new(n, 0.05, 0, DomainConstraint::ball(1.0).unwrap());
        match dp_sgd_gradient(&data, &spec, &b, &cfg, &GradientOptions::default()) {
            Err(Error::Infeasible(d)) => assert!(d.failing().any(|c| c.condition == Condition::EmptyFeasibleSet)),
            other => panic!("expected infeasible, got {other:?}"),
        }
        let opts = GradientOptions { allow_void_claim: true, ..Default::default() };
        let m = dp_sgd_gradient(&data, &spec, &b, &cfg, &opts).unwrap();
        assert!(m.audit.claimed_guarantee.is_none());
        assert_eq!(m.audit.noise.beta, Some(FALLBACK_BETA));
        assert!(!m.audit.notes.is_empty());
    }

    #[test]
    fn gradient_rejects_unbounded_domain() {
        let data = regression(10, 2, 9);
        let spec = LossSpec::new(LossFamily::QNormRegression, 1.0, 1.0).unwrap();
        let cfg = TrainConfig::new(10, 0.05, 0, DomainConstraint::Unbounded);
        assert!(dp_sgd_gradient(&data, &spec, &budget(1.0, 0.1), &cfg, &GradientOptions::default()).is_err());
    }

    #[test]
    fn audit_serializes() {
        let data = regression(30, 2, 10);
        let spec = LossSpec::new(LossFamily::QNormRegression, 1.0, 1.0).unwrap();
        let cfg = TrainConfig::new(30, 0.05, 0, DomainConstraint::Unbounded);
        let m = dp_sgd_output(&data, &spec, &budget(1.0, 0.1), &cfg, &OutputOptions::default()).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: PrivateModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
