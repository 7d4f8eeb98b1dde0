use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use dpsgd_core::harness::{load_dataset, run_experiment, Dataset, DatasetFormat, ExperimentSpec};
use dpsgd_core::losses::{LossFamily, LossSpec};
use dpsgd_core::optimizer::{DomainConstraint, TrainConfig};
use dpsgd_core::privacy::{
    check_gradient_rdp_conditions, gaussian_sigma, gradient_sigma, output_sigma, rdp_compose, rdp_to_dp, search_beta,
    PrivacyBudget, RdpPoint,
};
use dpsgd_core::stability::{empirical_uas, theoretical_uas, PoolSampler, StabilityConstants};
use dpsgd_core::trainers::{
    default_hyperparams, dp_sgd_gradient, dp_sgd_output, GradientOptions, HyperparamQuery, HyperparamRule,
    OutputOptions, PerturbationMode,
};
use dpsgd_core::Error;

const EXIT_INPUT: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;

#[derive(Parser)]
#[command(name = "dpsgd", version, about = "Differentially private SGD for Hölder-smooth convex losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a private model and write `{weights, audit}` as JSON.
    Train(TrainArgs),
    /// Print the noise plan for a mechanism.
    Calibrate(CalibrateArgs),
    /// Theoretical and empirical uniform argument stability.
    Stability(StabilityArgs),
    /// Compose RDP points read from a JSON list and optionally convert to (ε, δ).
    Account(AccountArgs),
    /// Run an experiment described by a JSON spec.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Output,
    Gradient,
}

impl From<Mode> for PerturbationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Output => PerturbationMode::OutputPerturbation,
            Mode::Gradient => PerturbationMode::GradientPerturbation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Libsvm,
}

impl From<Format> for DatasetFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => DatasetFormat::Csv,
            Format::Libsvm => DatasetFormat::Libsvm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Qhinge,
    Qnorm,
}

impl From<Loss> for LossFamily {
    fn from(l: Loss) -> Self {
        match l {
            Loss::Qhinge => LossFamily::QHinge,
            Loss::Qnorm => LossFamily::QNormRegression,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, value_enum, default_value = "qnorm")]
    loss: Loss,
    /// Loss exponent in [1, 2]; the Hölder exponent is q − 1.
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Feature-norm bound; defaults to the dataset maximum.
    #[arg(long)]
    feature_bound: Option<f64>,
    /// Ball radius; omit for an unbounded domain.
    #[arg(long)]
    radius: Option<f64>,
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, LossSpec, DomainConstraint)> {
        let data = load_dataset(&self.data, self.format.into())
            .with_context(|| format!("loading {}", self.data.display()))?;
        let bound = self.feature_bound.unwrap_or(data.feature_bound);
        if bound < data.feature_bound {
            bail!("--feature-bound {bound} is below the dataset maximum {}", data.feature_bound);
        }
        let spec = LossSpec::new(self.loss.into(), self.q, bound)?;
        let domain = match self.radius {
            Some(r) => DomainConstraint::ball(r)?,
            None => DomainConstraint::Unbounded,
        };
        Ok((data, spec, domain))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    /// Confidence level for the default step size.
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
    /// Iterations; derived from the utility guarantee when omitted.
    #[arg(long)]
    t: Option<usize>,
    /// Step size; derived when omitted.
    #[arg(long)]
    eta: Option<f64>,
    /// Constant c in T = ceil(c n^e).
    #[arg(long, default_value_t = 1.0)]
    horizon_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to --seed.
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Gradient mode: fix β instead of searching.
    #[arg(long)]
    beta: Option<f64>,
    /// Gradient mode: train without a privacy claim if the accountant conditions fail.
    #[arg(long)]
    allow_void_claim: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mechanism {
    Gaussian,
    Output,
    Gradient,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, value_enum)]
    mechanism: Mechanism,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    /// ℓ₂-sensitivity for the gaussian and output mechanisms.
    #[arg(long)]
    sensitivity: Option<f64>,
    /// Gradient bound M + L R^α.
    #[arg(long)]
    grad_bound: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    /// Defaults to n.
    #[arg(long)]
    t: Option<usize>,
    /// Searched when omitted.
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    t: usize,
    #[arg(long)]
    eta: f64,
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
    /// Coupled neighbor trials; 0 skips the empirical estimate.
    #[arg(long, default_value_t = 0)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AccountArgs {
    /// JSON list of {"lambda", "rho"}; `-` reads stdin.
    #[arg(long)]
    points: PathBuf,
    /// Common order; defaults to the first point's.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the experiment file's output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let (data, spec, domain) = a.data.load()?;
    let budget = PrivacyBudget::new(a.epsilon, a.delta)?;
    let mode: PerturbationMode = a.mode.into();
    let mut q = HyperparamQuery::new(
        HyperparamRule::for_mode(mode, &domain),
        data.n,
        data.d,
        spec.alpha,
        spec.holder_l,
        budget,
        a.gamma,
    );
    q.horizon_scale = a.horizon_scale;
    let hp = default_hyperparams(&q)?;
    let iterations = a.t.unwrap_or(hp.iterations);
    let step_size = a.eta.unwrap_or(hp.step_size);
    let clamps = if a.eta.is_none() { hp.clamps.clone() } else { Vec::new() };
    eprintln!(
        "{}",
        json!({
            "derived": {
                "n": data.n,
                "d": data.d,
                "alpha": spec.alpha,
                "holder_l": spec.holder_l,
                "iterations": iterations,
                "iterations_source": if a.t.is_some() { "flag" } else { "default" },
                "step_size": step_size,
                "step_size_source": if a.eta.is_some() { "flag" } else { "default" },
                "clamps": clamps,
            }
        })
    );
    let cfg = TrainConfig::new(iterations, step_size, a.seed, domain);
    let model = match mode {
        PerturbationMode::OutputPerturbation => {
            let opts = OutputOptions { noise_seed: a.noise_seed, envelope: None };
            dp_sgd_output(&data.examples, &spec, &budget, &cfg, &opts)?
        }
        PerturbationMode::GradientPerturbation => {
            let opts = GradientOptions {
                beta: a.beta,
                allow_void_claim: a.allow_void_claim,
                noise_seed: a.noise_seed,
                ..Default::default()
            };
            dp_sgd_gradient(&data.examples, &spec, &budget, &cfg, &opts)?
        }
    }
    .with_clamps(clamps);
    emit(&model, a.out.as_deref())
}

fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let budget = PrivacyBudget::new(a.epsilon, a.delta)?;
    let need_sens = || a.sensitivity.context("--sensitivity is required for this mechanism");
    let value = match a.mechanism {
        Mechanism::Gaussian => json!({ "mechanism": "gaussian", "sigma": gaussian_sigma(need_sens()?, &budget)? }),
        Mechanism::Output => json!({ "mechanism": "output", "sigma": output_sigma(need_sens()?, &budget)? }),
        Mechanism::Gradient => {
            let b = a.grad_bound.context("--grad-bound is required for the gradient mechanism")?;
            let n = a.n.context("--n is required for the gradient mechanism")?;
            let t = a.t.unwrap_or(n);
            let (beta, search) = match a.beta {
                Some(beta) => (Some(beta), None),
                None => {
                    let s = search_beta(b, t, n, &budget)?;
                    (s.beta, Some(s))
                }
            };
            match beta {
                None => json!({ "mechanism": "gradient", "feasible": false, "search": search }),
                Some(beta) => {
                    let plan = gradient_sigma(b, t, n, &budget, beta)?;
                    let diag = check_gradient_rdp_conditions(plan.sigma, b, plan.lambda_used.unwrap_or(f64::NAN), n);
                    json!({
                        "mechanism": "gradient",
                        "feasible": diag.holds(),
                        "plan": plan,
                        "conditions": diag,
                        "search": search,
                    })
                }
            }
        }
    };
    emit(&value, None)
}

fn stability(a: &StabilityArgs) -> Result<()> {
    let (data, spec, domain) = a.data.load()?;
    let env = spec.envelope(&data.examples)?;
    let consts = StabilityConstants::for_spec(&spec, &env)?;
    let bound = theoretical_uas(&consts, data.n, a.t, a.eta, a.gamma, domain)?;
    let empirical = if a.trials > 0 {
        let cfg = TrainConfig::new(a.t, a.eta, a.seed, domain);
        let est = empirical_uas(&data.examples, &spec, &cfg, a.trials, &PoolSampler(&data.examples))?;
        let exceed = est.exceedance_fraction(bound.delta);
        Some(json!({
            "max_observed": est.max_observed,
            "quantiles": est.quantiles,
            "trials": est.trials,
            "exceedance_fraction": exceed,
        }))
    } else {
        None
    };
    emit(&json!({ "theoretical": bound, "empirical": empirical }), None)
}

fn account(a: &AccountArgs) -> Result<()> {
    let text = if a.points.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        s
    } else {
        fs::read_to_string(&a.points).with_context(|| format!("reading {}", a.points.display()))?
    };
    let raw: Vec<RdpPoint> = serde_json::from_str(&text).context("parsing RDP point list")?;
    let points = raw.into_iter().map(|p| RdpPoint::new(p.lambda, p.rho)).collect::<Result<Vec<_>, _>>()?;
    let lambda = match (a.lambda, points.first()) {
        (Some(l), _) => l,
        (None, Some(p)) => p.lambda,
        (None, None) => bail!("empty point list needs --lambda"),
    };
    let composed = rdp_compose(&points, lambda)?;
    let epsilon = a.delta.map(|d| rdp_to_dp(&composed, d)).transpose()?;
    emit(&json!({ "composed": composed, "delta": a.delta, "epsilon": epsilon }), None)
}

fn experiment(a: &ExperimentArgs) -> Result<()> {
    let text = fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let mut spec: ExperimentSpec = serde_json::from_str(&text).context("parsing experiment spec")?;
    if let Some(out) = &a.out {
        spec.output_path = out.clone();
    }
    let rows = run_experiment(&spec)?;
    emit(&json!({ "rows": rows.len(), "output_path": spec.output_path }), None)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let is_train = matches!(cli.command, Command::Train(_));
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Stability(a) => stability(a),
        Command::Account(a) => account(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(Error::Infeasible(diag)) = e.downcast_ref::<Error>() {
                eprintln!("{}", json!({ "error": "infeasible", "diagnostics": diag }));
                if is_train {
                    return ExitCode::from(EXIT_INFEASIBLE);
                }
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(EXIT_INPUT)
        }
    }
}
