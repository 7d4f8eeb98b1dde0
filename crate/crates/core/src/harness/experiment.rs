use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::data::{SyntheticGenerator, SyntheticTask};
use super::risk::{approx_population_optimum, evaluate_risk, DEFAULT_HOLDOUT_N};
use crate::error::{Error, Result};
use crate::losses::{LossFamily, LossSpec};
use crate::optimizer::{sgd_run, DomainConstraint, TrainConfig};
use crate::privacy::{beta_existence_threshold, search_beta, PrivacyBudget};
use crate::rng::trial_seed;
use crate::stability::{c_gamma_t, empirical_uas, theoretical_uas, PoolSampler, StabilityConstants};
use crate::trainers::{
    default_hyperparams, dp_sgd_gradient, dp_sgd_output, GradientOptions, HyperparamQuery, HyperparamRule,
    OutputOptions, PerturbationMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ExcessRisk,
    StabilityDominance,
    FeasibilityMap,
    CalibrationAudit,
}

/// Cartesian grid, enumerated with `n` outermost and `gamma` innermost.
///
/// Empty axes take defaults: `alpha = [0]`, `epsilon = [1]`, `gamma = [0.05]`,
/// and `delta = [1/n²]` per `n`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParameterGrid {
    pub n: Vec<usize>,
    pub alpha: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
}

fn or_default(v: &[f64], d: f64) -> Vec<f64> {
    if v.is_empty() {
        vec![d]
    } else {
        v.to_vec()
    }
}

impl ParameterGrid {
    pub fn points(&self) -> Vec<GridPoint> {
        let alphas = or_default(&self.alpha, 0.0);
        let epsilons = or_default(&self.epsilon, 1.0);
        let gammas = or_default(&self.gamma, 0.05);
        let mut out = Vec::new();
        for &n in &self.n {
            let deltas = or_default(&self.delta, 1.0 / (n as f64 * n as f64));
            for &alpha in &alphas {
                for &epsilon in &epsilons {
                    for &delta in &deltas {
                        for &gamma in &gammas {
                            out.push(GridPoint { n, alpha, epsilon, delta, gamma });
                        }
                    }
                }
            }
        }
        out
    }
}

fn default_d() -> usize {
    5
}

fn default_holdout() -> usize {
    DEFAULT_HOLDOUT_N
}

fn default_true() -> bool {
    true
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    #[serde(default)]
    pub family: Option<LossFamily>,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default)]
    pub noise_level: f64,
    /// `None` trains without privacy.
    #[serde(default)]
    pub mode: Option<PerturbationMode>,
    #[serde(default)]
    pub domain: Option<DomainConstraint>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default = "default_holdout")]
    pub holdout_n: usize,
    #[serde(default)]
    pub allow_void_claim: bool,
    #[serde(default = "default_true")]
    pub search_beta: bool,
    #[serde(default = "default_scale")]
    pub horizon_scale: f64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            family: None,
            d: default_d(),
            noise_level: 0.0,
            mode: None,
            domain: None,
            iterations: None,
            step_size: None,
            holdout_n: default_holdout(),
            allow_void_claim: false,
            search_beta: true,
            horizon_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub grid: ParameterGrid,
    pub trials: usize,
    pub seed: u64,
    pub output_path: PathBuf,
    #[serde(default)]
    pub settings: ExperimentSettings,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.n.is_empty() {
            return Err(Error::invalid("grid", "the n axis must be nonempty"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if self.settings.d == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        Ok(())
    }

    fn family(&self) -> LossFamily {
        self.settings.family.unwrap_or(LossFamily::QNormRegression)
    }

    fn task(&self) -> SyntheticTask {
        match self.family() {
            LossFamily::QNormRegression => SyntheticTask::LinearRegression,
            LossFamily::QHinge => SyntheticTask::LinearClassification,
        }
    }

    fn generator(&self) -> Result<SyntheticGenerator> {
        SyntheticGenerator::new(self.task(), self.settings.d, self.settings.noise_level, self.seed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub parameters: BTreeMap<String, Value>,
    pub metrics: BTreeMap<String, Value>,
}

impl ReportRow {
    fn param(mut self, k: &str, v: impl Into<Value>) -> Self {
        self.parameters.insert(k.to_string(), v.into());
        self
    }

    fn metric(mut self, k: &str, v: impl Into<Value>) -> Self {
        self.metrics.insert(k.to_string(), v.into());
        self
    }

    pub fn get_metric(&self, k: &str) -> Option<&Value> {
        self.metrics.get(k)
    }

    pub fn metric_f64(&self, k: &str) -> Option<f64> {
        self.metrics.get(k).and_then(Value::as_f64)
    }

    pub fn param_f64(&self, k: &str) -> Option<f64> {
        self.parameters.get(k).and_then(Value::as_f64)
    }
}

fn base_row(p: &GridPoint) -> ReportRow {
    ReportRow::default()
        .param("n", p.n)
        .param("alpha", p.alpha)
        .param("epsilon", p.epsilon)
        .param("delta", p.delta)
        .param("gamma", p.gamma)
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, Value::from)
}

fn median(sorted: &[f64]) -> Option<f64> {
    let k = sorted.len();
    if k == 0 {
        None
    } else if k % 2 == 1 {
        Some(sorted[k / 2])
    } else {
        Some(0.5 * (sorted[k / 2 - 1] + sorted[k / 2]))
    }
}

/// Computes the report rows in deterministic grid order without persisting.
pub fn compute_rows(exp: &ExperimentSpec) -> Result<Vec<ReportRow>> {
    exp.validate()?;
    let points = exp.grid.points();
    match exp.kind {
        ExperimentKind::ExcessRisk => excess_risk_rows(exp, &points),
        ExperimentKind::StabilityDominance => points.par_iter().map(|p| stability_row(exp, p)).collect(),
        ExperimentKind::FeasibilityMap => points.par_iter().map(|p| feasibility_row(exp, p)).collect(),
        ExperimentKind::CalibrationAudit => points.par_iter().map(|p| calibration_row(exp, p)).collect(),
    }
}

/// Runs the experiment, writes one JSON object per row to `output_path` and
/// a metadata object to [`meta_path`].
pub fn run_experiment(exp: &ExperimentSpec) -> Result<Vec<ReportRow>> {
    let rows = compute_rows(exp)?;
    write_report(&rows, &exp.output_path)?;
    let meta = json!({
        "artifact": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "spec": exp,
        "seed": exp.seed,
        "trial_seeds": "seed ^ trial",
        "generator": exp.generator()?.describe(),
        "data_note": "synthetic generators chosen by this artifact; no external data",
        "rows": rows.len(),
    });
    let mut f = BufWriter::new(File::create(meta_path(&exp.output_path))?);
    serde_json::to_writer_pretty(&mut f, &meta)?;
    writeln!(f)?;
    f.flush()?;
    Ok(rows)
}

/// `<output>.meta.json` next to the report.
pub fn meta_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut f, row)?;
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

fn spec_for(exp: &ExperimentSpec, alpha: f64) -> Result<LossSpec> {
    LossSpec::new(exp.family(), 1.0 + alpha, 1.0)
}

struct TrialOutcome {
    excess: Option<f64>,
    empirical: Option<f64>,
    claimed: bool,
    sigma: Option<f64>,
    beta: Option<f64>,
}

fn excess_risk_rows(exp: &ExperimentSpec, points: &[GridPoint]) -> Result<Vec<ReportRow>> {
    let generator = exp.generator()?;
    let domain = exp.settings.domain.unwrap_or(DomainConstraint::Ball { radius: 1.0 });
    let mut alphas: Vec<f64> = points.iter().map(|p| p.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let refs: Vec<(f64, f64)> = alphas
        .par_iter()
        .map(|&a| {
            let spec = spec_for(exp, a)?;
            let r = approx_population_optimum(&generator, &spec, domain, exp.settings.holdout_n, exp.seed)?;
            Ok((a, r.risk))
        })
        .collect::<Result<_>>()?;
    let (_, eval_seed) = super::risk::holdout_seeds(exp.seed);
    let eval = generator.sample(exp.settings.holdout_n, eval_seed)?;

    points
        .iter()
        .map(|p| {
            let spec = spec_for(exp, p.alpha)?;
            let risk_ref = refs.iter().find(|(a, _)| *a == p.alpha).map(|r| r.1).unwrap_or(f64::NAN);
            let budget = PrivacyBudget::new(p.epsilon, p.delta)?;
            let rule = HyperparamRule::for_mode(exp.settings.mode.unwrap_or(PerturbationMode::GradientPerturbation), &domain);
            let mut q = HyperparamQuery::new(rule, p.n, exp.settings.d, p.alpha, spec.holder_l, budget, p.gamma);
            q.horizon_scale = exp.settings.horizon_scale;
            let hp = default_hyperparams(&q)?;
            let iterations = exp.settings.iterations.unwrap_or(hp.iterations);
            let step_size = exp.settings.step_size.unwrap_or(hp.step_size);

            let outcomes: Vec<TrialOutcome> = (0..exp.trials)
                .into_par_iter()
                .map(|t| {
                    let seed = trial_seed(exp.seed, t);
                    let train = generator.sample(p.n, seed)?;
                    let cfg = TrainConfig::new(iterations, step_size, seed, domain);
                    let trained = match exp.settings.mode {
                        None => Ok((sgd_run(&train.examples, &spec, &cfg, None)?.average, false, None, None)),
                        Some(PerturbationMode::OutputPerturbation) => {
                            dp_sgd_output(&train.examples, &spec, &budget, &cfg, &OutputOptions::default())
                                .map(|m| (m.weights, m.audit.claimed_guarantee.is_some(), Some(m.audit.noise.sigma), None))
                        }
                        Some(PerturbationMode::GradientPerturbation) => {
                            let o = GradientOptions { allow_void_claim: exp.settings.allow_void_claim, ..Default::default() };
                            dp_sgd_gradient(&train.examples, &spec, &budget, &cfg, &o).map(|m| {
                                (m.weights, m.audit.claimed_guarantee.is_some(), Some(m.audit.noise.sigma), m.audit.noise.beta)
                            })
                        }
                    };
                    match trained {
                        Ok((w, claimed, sigma, beta)) => {
                            let pop = evaluate_risk(&w, &eval.examples, &spec)?;
                            let emp = evaluate_risk(&w, &train.examples, &spec)?;
                            Ok(TrialOutcome { excess: Some(pop - risk_ref), empirical: Some(emp), claimed, sigma, beta })
                        }
                        Err(Error::Infeasible(_)) => {
                            Ok(TrialOutcome { excess: None, empirical: None, claimed: false, sigma: None, beta: None })
                        }
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_>>()?;

            let mut ex: Vec<f64> = outcomes.iter().filter_map(|o| o.excess).collect();
            ex.sort_by(f64::total_cmp);
            let mut emp: Vec<f64> = outcomes.iter().filter_map(|o| o.empirical).collect();
            emp.sort_by(f64::total_cmp);
            let mean = (!ex.is_empty()).then(|| ex.iter().sum::<f64>() / ex.len() as f64);
            let infeasible = outcomes.iter().filter(|o| o.excess.is_none()).count();
            let claimed = outcomes.iter().filter(|o| o.claimed).count();
            Ok(base_row(p)
                .param("mode", exp.settings.mode.map_or("non_private".to_string(), |m| m.to_string()))
                .param("d", exp.settings.d)
                .metric("risk_ref", risk_ref)
                .metric("median_excess_risk", opt(median(&ex)))
                .metric("mean_excess_risk", opt(mean))
                .metric("min_excess_risk", opt(ex.first().copied()))
                .metric("max_excess_risk", opt(ex.last().copied()))
                .metric("median_empirical_risk", opt(median(&emp)))
                .metric("iterations", iterations)
                .metric("step_size", step_size)
                .metric("step_size_clamps", hp.clamps.len())
                .metric("sigma", opt(outcomes.iter().find_map(|o| o.sigma)))
                .metric("beta", opt(outcomes.iter().find_map(|o| o.beta)))
                .metric("claimed_trials", claimed)
                .metric("infeasible_trials", infeasible)
                .metric("infeasible", infeasible == exp.trials))
        })
        .collect()
}

fn stability_row(exp: &ExperimentSpec, p: &GridPoint) -> Result<ReportRow> {
    let generator = exp.generator()?;
    let spec = spec_for(exp, p.alpha)?;
    let domain = exp.settings.domain.unwrap_or(DomainConstraint::Unbounded);
    let iterations = exp.settings.iterations.unwrap_or(p.n);
    let step_size = exp.settings.step_size.unwrap_or(0.01);
    let data = generator.sample(p.n, exp.seed)?;
    let pool = generator.sample(1000.max(p.n), exp.seed ^ 0x5EED)?;
    let env = spec.envelope(&data.examples)?;
    let consts = StabilityConstants::for_spec(&spec, &env)?;
    let bound = theoretical_uas(&consts, p.n, iterations, step_size, p.gamma, domain)?;
    let cfg = TrainConfig::new(iterations, step_size, exp.seed, domain);
    let est = empirical_uas(&data.examples, &spec, &cfg, exp.trials, &PoolSampler(&pool.examples))?;
    let exceed = est.exceedance_fraction(bound.delta);
    Ok(base_row(p)
        .param("iterations", iterations)
        .param("step_size", step_size)
        .param("domain", serde_json::to_value(domain)?)
        .metric("theoretical_uas", bound.delta)
        .metric("observed_uas", est.max_observed)
        .metric("observed_q50", opt(est.quantile(0.5)))
        .metric("observed_q90", opt(est.quantile(0.9)))
        .metric("observed_q99", opt(est.quantile(0.99)))
        .metric("exceedance_fraction", exceed)
        .metric("dominated", exceed <= p.gamma)
        .metric("trials", est.trials))
}

fn feasibility_row(exp: &ExperimentSpec, p: &GridPoint) -> Result<ReportRow> {
    let budget = PrivacyBudget::new(p.epsilon, p.delta)?;
    let threshold = beta_existence_threshold(p.n).ok();
    let (beta, points, intervals) = if exp.settings.search_beta {
        let s = search_beta(1.0, p.n, p.n, &budget)?;
        (s.beta, Value::from(s.feasible_points), Value::from(s.feasible_intervals.len()))
    } else {
        (None, Value::Null, Value::Null)
    };
    let searched = exp.settings.search_beta;
    Ok(base_row(p)
        .param("iterations", p.n)
        .metric("threshold", opt(threshold))
        .metric("sufficient_condition", threshold.map_or(Value::Null, |t| Value::from(p.epsilon >= t)))
        .metric("beta", opt(beta))
        .metric("feasible_points", points)
        .metric("feasible_intervals", intervals)
        .metric("infeasible", if searched { Value::from(beta.is_none()) } else { Value::Null }))
}

fn rel_dev(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Closed-form recomputation of an audited UAS value.
fn uas_closed_form(b: &crate::stability::StabilityBound) -> Result<f64> {
    let c = &b.inputs.constants;
    let (t, eta, a) = (b.inputs.iterations as f64, b.inputs.step_size, c.alpha);
    let contraction = if a == 1.0 { 0.0 } else { c.c_alpha_2.powi(2) * t * eta.powf(2.0 / (1.0 - a)) };
    let g = match b.domain {
        DomainConstraint::Unbounded => c.m + c.holder_l * (c.c_alpha * t * eta).powf(a / 2.0),
        DomainConstraint::Ball { radius } => c.m + c.holder_l * radius.powf(a),
    };
    let v = t / b.inputs.n as f64 * (1.0 + c_gamma_t(b.inputs.n, b.inputs.iterations, b.gamma)?);
    Ok((std::f64::consts::E * (contraction + 4.0 * g * g * eta * eta * (1.0 + v) * v)).sqrt())
}

fn calibration_row(exp: &ExperimentSpec, p: &GridPoint) -> Result<ReportRow> {
    let generator = exp.generator()?;
    let spec = spec_for(exp, p.alpha)?;
    let budget = PrivacyBudget::new(p.epsilon, p.delta)?;
    let data = generator.sample(p.n, exp.seed)?;
    let iterations = exp.settings.iterations.unwrap_or(p.n);
    let step_size = exp.settings.step_size.unwrap_or(0.01);
    let mut devs = BTreeMap::new();

    for (name, domain) in [("unbounded", DomainConstraint::Unbounded), ("ball", DomainConstraint::Ball { radius: 1.0 })] {
        let cfg = TrainConfig::new(iterations, step_size, exp.seed, domain);
        let m = dp_sgd_output(&data.examples, &spec, &budget, &cfg, &OutputOptions::default())?;
        let a = &m.audit;
        let bound = a.stability.as_ref().ok_or_else(|| Error::Precondition("missing stability record".into()))?;
        let uas = uas_closed_form(bound)?;
        let sigma = (2.0 * (2.5 / p.delta).ln()).sqrt() * uas / p.epsilon;
        devs.insert(format!("output_{name}_uas"), rel_dev(a.sensitivity.value, uas));
        devs.insert(format!("output_{name}_sigma"), rel_dev(a.noise.sigma, sigma));
        let avg = a.noiseless_average.as_deref().unwrap_or(&[]);
        let draw = a.noise_draw.as_deref().unwrap_or(&[]);
        let exact = avg.len() == m.weights.len()
            && m.weights.iter().zip(avg.iter().zip(draw)).all(|(w, (x, b))| w.to_bits() == (x + b).to_bits());
        devs.insert(format!("output_{name}_decomposition"), if exact { 0.0 } else { 1.0 });
    }

    let cfg = TrainConfig::new(iterations, step_size, exp.seed, DomainConstraint::Ball { radius: 1.0 });
    let opts = GradientOptions { allow_void_claim: true, ..Default::default() };
    let m = dp_sgd_gradient(&data.examples, &spec, &budget, &cfg, &opts)?;
    let a = &m.audit;
    let b = a.envelope.m + spec.holder_l;
    let beta = a.noise.beta.unwrap_or(f64::NAN);
    let lambda = (1.0 / p.delta).ln() / ((1.0 - beta) * p.epsilon) + 1.0;
    let s2 = 14.0 * b * b * iterations as f64 / (beta * (p.n as f64).powi(2) * p.epsilon) * lambda;
    devs.insert("gradient_bound".into(), rel_dev(a.grad_bound.unwrap_or(f64::NAN), b));
    devs.insert("gradient_sigma_squared".into(), rel_dev(a.noise.sigma_squared(), s2));
    devs.insert("gradient_lambda".into(), rel_dev(a.noise.lambda_used.unwrap_or(f64::NAN), lambda));
    devs.insert("accountant_epsilon".into(), rel_dev(a.realized_epsilon.unwrap_or(f64::NAN), p.epsilon));

    let max = devs.values().copied().fold(0.0f64, |acc, v| if v.is_nan() { f64::INFINITY } else { acc.max(v) });
    let mut row = base_row(p).param("iterations", iterations).param("step_size", step_size);
    for (k, v) in devs {
        row = row.metric(&format!("rel_dev_{k}"), v);
    }
    Ok(row
        .metric("max_relative_deviation", max)
        .metric("gradient_claimed", a.claimed_guarantee.is_some())
        .metric("beta", beta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ExperimentKind, dir: &Path) -> ExperimentSpec {
        ExperimentSpec {
            kind,
            grid: ParameterGrid::default(),
            trials: 1,
            seed: 7,
            output_path: dir.join("report.jsonl"),
            settings: ExperimentSettings::default(),
        }
    }

    #[test]
    fn grid_order_and_defaults() {
        let g = ParameterGrid { n: vec![10, 20], alpha: vec![0.0, 0.5], ..Default::default() };
        let pts = g.points();
        assert_eq!(pts.len(), 4);
        assert_eq!((pts[0].n, pts[0].alpha), (10, 0.0));
        assert_eq!((pts[1].n, pts[1].alpha), (10, 0.5));
        assert_eq!(pts[2].delta, 1.0 / 400.0);
        assert_eq!(pts[0].gamma, 0.05);
    }

    #[test]
    fn feasibility_example() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = spec(ExperimentKind::FeasibilityMap, dir.path());
        e.grid = ParameterGrid { n: vec![1000], epsilon: vec![2.0], ..Default::default() };
        let rows = run_experiment(&e).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].get_metric("sufficient_condition"), Some(&Value::Bool(true)));
        assert!((rows[0].metric_f64("threshold").unwrap() - 1.5389).abs() < 1e-3);
        assert_eq!(read_report(&e.output_path).unwrap(), rows);
        assert!(meta_path(&e.output_path).exists());
    }

    #[test]
    fn calibration_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = spec(ExperimentKind::CalibrationAudit, dir.path());
        e.grid = ParameterGrid { n: vec![200], alpha: vec![0.0, 0.5, 1.0], epsilon: vec![1.0], delta: vec![1e-3], gamma: vec![] };
        let rows = compute_rows(&e).unwrap();
        for r in rows {
            assert!(r.metric_f64("max_relative_deviation").unwrap() <= 1e-12, "{r:?}");
        }
    }

    #[test]
    fn report_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = spec(ExperimentKind::StabilityDominance, dir.path());
        e.grid = ParameterGrid { n: vec![30], alpha: vec![0.0, 1.0], ..Default::default() };
        e.trials = 20;
        run_experiment(&e).unwrap();
        let a = std::fs::read(&e.output_path).unwrap();
        let ma = std::fs::read(meta_path(&e.output_path)).unwrap();
        run_experiment(&e).unwrap();
        assert_eq!(a, std::fs::read(&e.output_path).unwrap());
        assert_eq!(ma, std::fs::read(meta_path(&e.output_path)).unwrap());
    }

    #[test]
    fn excess_risk_rows_have_stable_schema() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = spec(ExperimentKind::ExcessRisk, dir.path());
        e.grid = ParameterGrid { n: vec![30, 60], epsilon: vec![2.0], ..Default::default() };
        e.trials = 3;
        e.settings.d = 2;
        e.settings.holdout_n = 2000;
        e.settings.mode = Some(PerturbationMode::GradientPerturbation);
        e.settings.allow_void_claim = true;
        let rows = compute_rows(&e).unwrap();
        assert_eq!(rows[0].metrics.keys().collect::<Vec<_>>(), rows[1].metrics.keys().collect::<Vec<_>>());
        assert!(rows.iter().all(|r| r.metric_f64("median_excess_risk").is_some()));
    }

    #[test]
    fn invalid_specs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let e = spec(ExperimentKind::FeasibilityMap, dir.path());
        assert!(compute_rows(&e).is_err());
        let mut e = spec(ExperimentKind::FeasibilityMap, dir.path());
        e.grid.n = vec![100];
        e.trials = 0;
        assert!(compute_rows(&e).is_err());
    }
}
