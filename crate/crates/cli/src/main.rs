use std::error::Error;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use qom_core::bounds::{
    concentration_epsilon, fast_rate_bound, main_risk_bound, misspec_bound, BoundInputs, Side,
};
use qom_core::datagen::{gen_appendix_e, gen_regression, ContaminationSpec};
use qom_core::harness::{
    run_appendix_e, run_breakdown, run_fast_rate, run_rate_scaling, summarize, write_records,
    AppendixEConfig, BreakdownConfig, ExperimentRecord, FastRateConfig, KRule, RateConfig,
    SolverSettings,
};
use qom_core::io::{load_dataset, save_dataset, save_tags, save_weights, write_weights};
use qom_core::solver::{default_step0, fit_qom_gd, fit_qom_newton};
use qom_core::{FitConfig, LossKind, PenaltyKind, QuantileSpec};

type CliResult<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "qom", version, about = "Quantile-of-means linear models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a quantile-of-means model to a dataset CSV.
    Fit(FitArgs),
    /// Evaluate a risk bound.
    Bound(BoundArgs),
    /// Generate a contaminated synthetic dataset.
    Gen(GenArgs),
    /// Run a replicated simulation study.
    #[command(args_override_self = true)]
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "logistic")]
    loss: LossKind,
    #[arg(long, default_value = "none")]
    penalty: PenaltyKind,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    q: f64,
    /// Defaults to 0.1 for squared loss and 1.0 otherwise.
    #[arg(long)]
    step0: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    reshuffle_every: usize,
    /// Use damped Newton steps instead of gradient steps.
    #[arg(long)]
    newton: bool,
    #[arg(long, default_value_t = 0.0)]
    damping: f64,
    /// Weights CSV; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundVariant {
    Main,
    Concentration,
    Fast,
    Misspec,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, default_value = "main")]
    variant: BoundVariant,
    /// Loss standard-deviation bound V.
    #[arg(long)]
    v: f64,
    /// Radius B of the feasible set.
    #[arg(long)]
    b: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    mu_star: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 0.5)]
    q: f64,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    inliers: usize,
    #[arg(long, default_value_t = 0)]
    outliers: usize,
    /// Population strong-convexity modulus (fast variant).
    #[arg(long)]
    alpha: Option<f64>,
    /// Splitting constant of the fast-rate bound.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Average misspecification (misspec variant).
    #[arg(long, default_value_t = 0.0)]
    eps_p: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    /// Two Gaussian components labelled by a logistic model.
    AppendixE,
    /// Linear regression with Gaussian noise.
    Regression,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "appendix-e")]
    kind: GenKind,
    /// Number of inliers.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    /// Defaults to 0.1 for appendix-e and 1.0 for regression.
    #[arg(long)]
    inlier_variance: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    outlier_mean: f64,
    #[arg(long, default_value_t = 100.0)]
    outlier_variance: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset CSV.
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out stem>_tags.csv`.
    #[arg(long)]
    tags_out: Option<PathBuf>,
    /// Defaults to `<out stem>_weights.csv`.
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExperimentKind {
    AppendixE,
    Rate,
    FastRate,
    Breakdown,
}

#[derive(Args)]
struct ExperimentArgs {
    kind: ExperimentKind,
    /// Results CSV; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` file whose keys mirror the long flags; flags given on
    /// the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    m_min: Option<u32>,
    #[arg(long)]
    m_max: Option<u32>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    n_grid: Option<String>,
    /// log_n | c_outliers[:c] | a1[:eta] | fixed:<K>
    #[arg(long)]
    k_rule: Option<KRule>,
    /// Exit with status 2 when any row violates the block-count assumption.
    #[arg(long)]
    strict: bool,
    /// Record wall-clock time per fit.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    step0: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    penalty: Option<PenaltyKind>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    /// Outlier exponent for the rate study; clean data when absent.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n_mc: Option<usize>,
    #[arg(long)]
    allow_unregularized: bool,
    /// Inlier count for the breakdown study.
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated outlier exponents for the breakdown study.
    #[arg(long)]
    beta_grid: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let cli = Cli::parse_from(args);
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Bound(a) => bound(a),
        Command::Gen(a) => gen(a),
        Command::Experiment(a) => experiment(a),
    }
}

/// Splices `--config` file entries in front of the other experiment flags.
fn expand_config(args: Vec<String>) -> CliResult<Vec<String>> {
    let Some(sub) = args.iter().position(|a| a == "experiment") else {
        return Ok(args);
    };
    let mut path = None;
    for (i, a) in args.iter().enumerate().skip(sub + 1) {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let mut injected = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected key = value", lineno + 1))?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        match value.trim() {
            "true" => injected.push(flag),
            "false" => {}
            v => {
                injected.push(flag);
                injected.push(v.trim_matches('"').to_string());
            }
        }
    }
    let mut out = args[..=sub].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}

fn open_out(path: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| format!("cannot create {}: {e}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn fit(a: FitArgs) -> CliResult<ExitCode> {
    let data = load_dataset(&a.data, a.loss.response_kind())?;
    let config = FitConfig {
        lambda: a.lambda,
        blocks: a.k,
        quantile: QuantileSpec::new(a.q)?,
        step0: a.step0.unwrap_or_else(|| default_step0(a.loss)),
        max_iters: a.max_iters,
        tolerance: a.tol,
        seed: a.seed,
        reshuffle_every: a.reshuffle_every,
    };
    let result = if a.newton {
        fit_qom_newton(&data, a.loss, a.penalty, &config, a.damping)?
    } else {
        fit_qom_gd(&data, a.loss, a.penalty, &config)?
    };
    eprintln!(
        "iterations = {}\nconverged = {}\nobjective = {}",
        result.iterations_run,
        result.converged,
        result.objective_trace.last().map_or(f64::NAN, |v| *v)
    );
    write_weights(open_out(&a.out)?, result.weights.as_slice())?;
    Ok(ExitCode::SUCCESS)
}

fn bound(a: BoundArgs) -> CliResult<ExitCode> {
    let inputs = BoundInputs {
        v: a.v,
        b_radius: a.b,
        tau: a.tau,
        mu_star: a.mu_star,
        sigma: a.sigma,
        eta: a.eta,
        q: QuantileSpec::new(a.q)?,
        n: a.n,
        k: a.k,
        inliers: a.inliers,
        outliers: a.outliers,
        alpha: a.alpha,
    };
    match a.variant {
        BoundVariant::Main | BoundVariant::Misspec => {
            let r = match a.variant {
                BoundVariant::Main => main_risk_bound(&inputs)?,
                _ => misspec_bound(&inputs, a.eps_p)?,
            };
            println!("bound = {}", r.bound);
            println!("confidence = {}", r.confidence);
            println!("raw_confidence = {}", r.raw_confidence);
        }
        BoundVariant::Concentration => {
            let (lo, plo) = concentration_epsilon(&inputs, Side::Lower)?;
            let (up, pup) = concentration_epsilon(&inputs, Side::Upper)?;
            println!("lower_epsilon = {lo}");
            println!("lower_confidence = {}", plo.clamp(0.0, 1.0));
            println!("upper_epsilon = {up}");
            println!("upper_confidence = {}", pup.clamp(0.0, 1.0));
        }
        BoundVariant::Fast => {
            println!("bound = {}", fast_rate_bound(&inputs, a.beta)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_{suffix}.csv"))
}

fn gen(a: GenArgs) -> CliResult<ExitCode> {
    let default_var = match a.kind {
        GenKind::AppendixE => 0.1,
        GenKind::Regression => 1.0,
    };
    let spec = ContaminationSpec {
        n_inliers: a.n,
        p: a.p,
        beta: a.beta,
        inlier_variance: a.inlier_variance.unwrap_or(default_var),
        outlier_mean: a.outlier_mean,
        outlier_variance: a.outlier_variance,
        seed: a.seed,
    };
    let g = match a.kind {
        GenKind::AppendixE => gen_appendix_e(&spec)?,
        GenKind::Regression => gen_regression(&spec, a.noise_std)?,
    };
    save_dataset(&a.out, &g.data)?;
    let tags = a.tags_out.unwrap_or_else(|| sidecar(&a.out, "tags"));
    let weights = a.weights_out.unwrap_or_else(|| sidecar(&a.out, "weights"));
    save_tags(&tags, &g.tags)?;
    save_weights(&weights, g.true_weights.as_slice())?;
    info!("wrote {} rows ({} outliers)", g.data.n(), g.tags.outlier_count());
    Ok(ExitCode::SUCCESS)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| format!("bad {what} entry '{x}'").into()))
        .collect()
}

fn grid(a: &ExperimentArgs, default: &[usize]) -> CliResult<Vec<usize>> {
    if let Some(g) = &a.n_grid {
        return parse_list(g, "n-grid");
    }
    if a.m_min.is_none() && a.m_max.is_none() {
        return Ok(default.to_vec());
    }
    let lo = a.m_min.unwrap_or(7);
    let hi = a.m_max.unwrap_or(14);
    if lo > hi || hi >= usize::BITS - 1 {
        return Err(format!("bad m range [{lo}, {hi}]").into());
    }
    Ok((lo..=hi).map(|m| 1usize << m).collect())
}

fn solver(a: &ExperimentArgs, base: SolverSettings) -> SolverSettings {
    SolverSettings {
        step0: a.step0.unwrap_or(base.step0),
        max_iters: a.max_iters.unwrap_or(base.max_iters),
        tolerance: a.tol.unwrap_or(base.tolerance),
    }
}

fn experiment(a: ExperimentArgs) -> CliResult<ExitCode> {
    let records: Vec<ExperimentRecord> = match a.kind {
        ExperimentKind::AppendixE => {
            let d = AppendixEConfig::default();
            run_appendix_e(&AppendixEConfig {
                m_min: a.m_min.unwrap_or(d.m_min),
                m_max: a.m_max.unwrap_or(d.m_max),
                reps: a.reps.unwrap_or(d.reps),
                seed: a.seed,
                p: a.p.unwrap_or(d.p),
                k_rule: a.k_rule.unwrap_or(d.k_rule),
                solver: solver(&a, d.solver),
                timing: a.timing,
            })?
        }
        ExperimentKind::Rate => {
            let d = RateConfig::default();
            let loss = a.loss.unwrap_or(d.loss);
            let cfg = RateConfig {
                loss,
                penalty: a.penalty.unwrap_or(d.penalty),
                lambda: a.lambda.unwrap_or(d.lambda),
                q: a.q.map(QuantileSpec::new).transpose()?.unwrap_or(d.q),
                k_rule: a.k_rule.unwrap_or(d.k_rule),
                beta: a.beta,
                n_grid: grid(&a, &d.n_grid)?,
                reps: a.reps.unwrap_or(d.reps),
                seed: a.seed,
                p: a.p.unwrap_or(d.p),
                solver: solver(&a, SolverSettings::study_default(loss)),
                timing: a.timing,
            };
            let out = run_rate_scaling(&cfg)?;
            eprintln!(
                "slope(ln mean sq_error) = {}\nerror rate slope = {}\nr_squared = {}",
                out.fit.slope,
                out.fit.slope / 2.0,
                out.fit.r_squared
            );
            out.records
        }
        ExperimentKind::FastRate => {
            let d = FastRateConfig::default();
            let out = run_fast_rate(&FastRateConfig {
                n_grid: grid(&a, &d.n_grid)?,
                reps: a.reps.unwrap_or(d.reps),
                lambda: a.lambda.unwrap_or(d.lambda),
                seed: a.seed,
                p: a.p.unwrap_or(d.p),
                k_rule: a.k_rule.unwrap_or(d.k_rule),
                n_mc: a.n_mc.unwrap_or(d.n_mc),
                allow_unregularized: a.allow_unregularized,
                solver: solver(&a, d.solver),
                timing: a.timing,
            })?;
            eprintln!(
                "slope(ln mean excess risk) = {}\nr_squared = {}",
                out.fit.slope, out.fit.r_squared
            );
            out.records
        }
        ExperimentKind::Breakdown => {
            let d = BreakdownConfig::default();
            run_breakdown(&BreakdownConfig {
                n: a.n.unwrap_or(d.n),
                beta_grid: match &a.beta_grid {
                    Some(g) => parse_list(g, "beta-grid")?,
                    None => d.beta_grid,
                },
                k_rule: a.k_rule.unwrap_or(d.k_rule),
                q: a.q.map(QuantileSpec::new).transpose()?.unwrap_or(d.q),
                eta: a.eta.unwrap_or(d.eta),
                reps: a.reps.unwrap_or(d.reps),
                seed: a.seed,
                p: a.p.unwrap_or(d.p),
                solver: solver(&a, d.solver),
                timing: a.timing,
            })?
        }
    };
    for g in summarize(&records) {
        eprintln!(
            "{} n={} {}: mean sq_error {:.6}",
            g.experiment,
            g.n,
            g.method.as_str(),
            g.mean_sq_error
        );
    }
    write_records(open_out(&a.out)?, &records)?;
    let violations = records.iter().filter(|r| !r.assumption_ok).count();
    if violations > 0 {
        eprintln!("{violations} rows violate the block-count assumption");
        if a.strict {
            return Ok(ExitCode::from(2));
        }
    }
    Ok(ExitCode::SUCCESS)
}
