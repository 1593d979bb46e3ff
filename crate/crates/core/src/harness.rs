//! Replicated simulation studies: the two-class contamination study, rate
//! scaling on log-log axes, the fast-rate study and a contamination sweep.
//!
//! Replications run on the rayon pool. Each `(grid point, replication)` task
//! derives its own seeds from the experiment seed, and rows are returned in
//! `(grid point, replication, method)` order whatever the completion order.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::{gen_appendix_e, gen_regression, ContaminationSpec, GeneratedData, InlierModel};
use crate::error::{param, QomError, Result};
use crate::loss::LossKind;
use crate::penalty::PenaltyKind;
use crate::solver::{default_step0, fit_erm_gd, fit_qom_gd, splitmix64};
use crate::types::{dot, min_blocks, validate_partition_assumption, FitConfig, QuantileSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Mom,
    Erm,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mom => "mom",
            Method::Erm => "erm",
        }
    }
}

/// One fitted replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub experiment: String,
    /// `log2 n`, rounded down for grids that are not powers of two.
    pub m: u32,
    /// Inlier count.
    pub n: usize,
    pub replication: usize,
    pub method: Method,
    /// `‖ŵ − w₀‖₂`.
    pub error: f64,
    pub sq_error: f64,
    pub excess_risk: Option<f64>,
    pub wall_ms: u64,
    pub blocks: usize,
    pub outliers: usize,
    /// Whether `K` satisfied the block-count assumption for this row.
    pub assumption_ok: bool,
    /// The solver hit a non-finite objective; the row holds its last finite iterate.
    pub diverged: bool,
}

pub const RECORD_COLUMNS: [&str; 9] = [
    "experiment",
    "m",
    "n",
    "replication",
    "method",
    "error",
    "sq_error",
    "excess_risk",
    "wall_ms",
];

pub fn write_records<W: Write>(out: W, records: &[ExperimentRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.write_record([
            r.experiment.clone(),
            r.m.to_string(),
            r.n.to_string(),
            r.replication.to_string(),
            r.method.as_str().to_string(),
            r.error.to_string(),
            r.sq_error.to_string(),
            r.excess_risk.map_or_else(String::new, |e| e.to_string()),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Ordinary least-squares line through a point cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination; 1 when `y` is constant.
    pub r_squared: f64,
}

pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return param("slope fit needs finite points");
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if points.len() < 2 || !(sxx > 0.0) {
        return param("slope fit needs at least two distinct x values");
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
    })
}

/// How the block count follows the sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KRule {
    /// Smallest odd `K ≥ ln n`.
    LogN,
    /// Smallest odd `K ≥ c·|O| + 1`.
    COutliers(f64),
    /// Smallest odd `K` meeting the block-count assumption with slack `η`.
    A1 { eta: f64 },
    Fixed(usize),
}

fn smallest_odd_at_least(x: f64) -> usize {
    let k = x.ceil().max(1.0) as usize;
    if k % 2 == 0 {
        k + 1
    } else {
        k
    }
}

impl KRule {
    /// Block count for a sample of `n_total` rows holding `outliers` outliers.
    pub fn blocks(self, n_total: usize, outliers: usize, q: QuantileSpec) -> Result<usize> {
        let k = match self {
            KRule::LogN => smallest_odd_at_least((n_total as f64).ln()),
            KRule::COutliers(c) => smallest_odd_at_least(c * outliers as f64 + 1.0),
            KRule::A1 { eta } => {
                let k = min_blocks(outliers, q, eta)?;
                if k % 2 == 0 {
                    k + 1
                } else {
                    k
                }
            }
            KRule::Fixed(k) => k,
        };
        if k < 1 || k > n_total {
            return param(format!("rule {self} gives K = {k} for n = {n_total}"));
        }
        Ok(k)
    }
}

impl fmt::Display for KRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KRule::LogN => f.write_str("log_n"),
            KRule::COutliers(c) => write!(f, "c_outliers:{c}"),
            KRule::A1 { eta } => write!(f, "a1:{eta}"),
            KRule::Fixed(k) => write!(f, "fixed:{k}"),
        }
    }
}

impl FromStr for KRule {
    type Err = QomError;

    /// `log_n`, `c_outliers[:c]` (default 4), `a1[:eta]` (default 1) or `fixed:<K>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.trim().split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s.trim(), None),
        };
        let num = |d: f64| -> Result<f64> {
            match arg {
                None => Ok(d),
                Some(a) => a
                    .parse()
                    .map_err(|_| QomError::Parameter(format!("bad K-rule argument '{a}'"))),
            }
        };
        match name {
            "log_n" if arg.is_none() => Ok(KRule::LogN),
            "c_outliers" => Ok(KRule::COutliers(num(4.0)?)),
            "a1" => Ok(KRule::A1 { eta: num(1.0)? }),
            "fixed" => match arg.map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Ok(KRule::Fixed(k)),
                _ => param("fixed K rule needs a positive count, e.g. fixed:5"),
            },
            _ => param(format!("unknown K rule '{s}' (expected log_n|c_outliers[:c]|a1[:eta]|fixed:<K>)")),
        }
    }
}

/// Step size and stopping controls shared by every fit of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub step0: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

/// Tolerance that never triggers, so fits run for exactly `max_iters`.
pub const NO_EARLY_STOP: f64 = f64::MIN_POSITIVE;

impl SolverSettings {
    /// Solver defaults for a loss: `step0` per loss, 10 000 iterations,
    /// tolerance 1e−8.
    pub fn for_loss(loss: LossKind) -> Self {
        Self {
            step0: default_step0(loss),
            max_iters: 10_000,
            tolerance: 1e-8,
        }
    }

    /// Schedule used by the logistic studies: `step0 = 3` for 3000
    /// iterations with no early stop.
    ///
    /// On the two-component design the risk curvature along `1_p` is about
    /// 0.22, so `ε_t = step0/t` shrinks the optimization error like
    /// `t^(−0.22·step0)`; `step0 = 1` leaves it above the statistical error
    /// at the larger sample sizes.
    pub fn logistic_study() -> Self {
        Self {
            step0: 3.0,
            max_iters: 3000,
            tolerance: NO_EARLY_STOP,
        }
    }

    /// Study schedule for a loss. Squared loss on unit-variance features has
    /// curvature about 2, and `step0 = 0.9` puts `step0·curvature` near 2.
    pub fn study_default(loss: LossKind) -> Self {
        match loss {
            LossKind::Squared => Self {
                step0: 0.9,
                max_iters: 10_000,
                tolerance: NO_EARLY_STOP,
            },
            LossKind::Logistic | LossKind::Hinge => Self::logistic_study(),
        }
    }

    fn config(&self, lambda: f64, blocks: usize, quantile: QuantileSpec, seed: u64) -> FitConfig {
        FitConfig {
            lambda,
            blocks,
            quantile,
            step0: self.step0,
            max_iters: self.max_iters,
            tolerance: self.tolerance,
            seed,
            reshuffle_every: 0,
        }
    }
}

fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

fn log2_floor(n: usize) -> u32 {
    if n == 0 {
        0
    } else {
        n.ilog2()
    }
}

struct FitSpec<'a> {
    experiment: &'a str,
    loss: LossKind,
    penalty: PenaltyKind,
    lambda: f64,
    quantile: QuantileSpec,
    solver: SolverSettings,
    timing: bool,
}

struct Replicate<'a> {
    generated: &'a GeneratedData,
    n: usize,
    replication: usize,
    blocks: usize,
    assumption_ok: bool,
    partition_seed: u64,
}

impl FitSpec<'_> {
    fn run(&self, rep: &Replicate<'_>, method: Method) -> Result<(ExperimentRecord, Vec<f64>)> {
        let cfg = self
            .solver
            .config(self.lambda, rep.blocks, self.quantile, rep.partition_seed);
        let data = &rep.generated.data;
        let start = Instant::now();
        let fitted = match method {
            Method::Mom => fit_qom_gd(data, self.loss, self.penalty, &cfg),
            Method::Erm => fit_erm_gd(data, self.loss, self.penalty, &cfg),
        };
        let wall_ms = if self.timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        let (w, diverged) = match fitted {
            Ok(f) => (f.weights.into_inner(), false),
            Err(QomError::Divergence {
                iteration,
                last_weights,
            }) => {
                warn!(
                    "{}: {} diverged at iteration {iteration} (n = {}, replication {})",
                    self.experiment,
                    method.as_str(),
                    rep.n,
                    rep.replication
                );
                (last_weights, true)
            }
            Err(e) => return Err(e),
        };
        let sq_error: f64 = w
            .iter()
            .zip(rep.generated.true_weights.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let record = ExperimentRecord {
            experiment: self.experiment.to_string(),
            m: log2_floor(rep.n),
            n: rep.n,
            replication: rep.replication,
            method,
            error: sq_error.sqrt(),
            sq_error,
            excess_risk: None,
            wall_ms,
            blocks: rep.blocks,
            outliers: rep.generated.tags.outlier_count(),
            assumption_ok: rep.assumption_ok,
            diverged,
        };
        Ok((record, w))
    }
}

/// Runs `task` over every `(grid index, replication)` pair in parallel and
/// concatenates the results in grid-major order.
fn run_grid<T, F>(points: usize, reps: usize, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, usize) -> Result<Vec<T>> + Sync,
{
    let jobs: Vec<(usize, usize)> = (0..points).flat_map(|g| (0..reps).map(move |r| (g, r))).collect();
    let chunks: Vec<Vec<T>> = jobs.into_par_iter().map(|(g, r)| task(g, r)).collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

fn check_assumption(outliers: usize, q: QuantileSpec, eta: f64, k: usize) -> Result<bool> {
    validate_partition_assumption(outliers, q, eta, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppendixEConfig {
    pub m_min: u32,
    pub m_max: u32,
    pub reps: usize,
    pub seed: u64,
    pub p: usize,
    pub k_rule: KRule,
    pub solver: SolverSettings,
    /// Record wall-clock milliseconds; off keeps reruns byte-identical.
    pub timing: bool,
}

impl Default for AppendixEConfig {
    fn default() -> Self {
        Self {
            m_min: 5,
            m_max: 13,
            reps: 20,
            seed: 0,
            p: 2,
            k_rule: KRule::A1 { eta: 1.0 },
            solver: SolverSettings::logistic_study(),
            timing: false,
        }
    }
}

/// Median-of-means and plain logistic regression on the two-class
/// contamination model, for `n = 2^m` inliers.
pub fn run_appendix_e(cfg: &AppendixEConfig) -> Result<Vec<ExperimentRecord>> {
    if cfg.m_min < 2 || cfg.m_min > cfg.m_max {
        return param(format!("need 2 ≤ m_min ≤ m_max, got [{}, {}]", cfg.m_min, cfg.m_max));
    }
    if cfg.m_max >= usize::BITS - 1 {
        return param("m_max too large");
    }
    let ms: Vec<u32> = (cfg.m_min..=cfg.m_max).collect();
    let spec = FitSpec {
        experiment: "appendix_e",
        loss: LossKind::Logistic,
        penalty: PenaltyKind::None,
        lambda: 0.0,
        quantile: QuantileSpec::MEDIAN,
        solver: cfg.solver,
        timing: cfg.timing,
    };
    run_grid(ms.len(), cfg.reps, |g, r| {
        let n = 1usize << ms[g];
        let data_seed = derive_seed(cfg.seed, &[0, ms[g] as u64, r as u64]);
        let generated = gen_appendix_e(&ContaminationSpec {
            p: cfg.p,
            ..ContaminationSpec::appendix_e(n, data_seed)
        })?;
        let outliers = generated.tags.outlier_count();
        let k = cfg.k_rule.blocks(generated.data.n(), outliers, spec.quantile)?;
        let ok = check_assumption(outliers, spec.quantile, 1.0, k)?;
        if !ok {
            warn!("appendix_e: K = {k} violates the block-count assumption for |O| = {outliers}");
        }
        let rep = Replicate {
            generated: &generated,
            n,
            replication: r,
            blocks: k,
            assumption_ok: ok,
            partition_seed: derive_seed(cfg.seed, &[1, ms[g] as u64, r as u64]),
        };
        Ok(vec![spec.run(&rep, Method::Mom)?.0, spec.run(&rep, Method::Erm)?.0])
    })
}

/// Per-`(experiment, n, method)` averages, in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub experiment: String,
    pub n: usize,
    pub method: Method,
    pub reps: usize,
    pub mean_error: f64,
    pub mean_sq_error: f64,
    pub mean_ln_sq_error: f64,
    pub mean_excess_risk: Option<f64>,
}

pub fn summarize(records: &[ExperimentRecord]) -> Vec<GridPoint> {
    let mut out: Vec<(GridPoint, usize)> = Vec::new();
    for r in records {
        let pos = out
            .iter()
            .position(|(g, _)| g.experiment == r.experiment && g.n == r.n && g.method == r.method);
        let idx = match pos {
            Some(i) => i,
            None => {
                out.push((
                    GridPoint {
                        experiment: r.experiment.clone(),
                        n: r.n,
                        method: r.method,
                        reps: 0,
                        mean_error: 0.0,
                        mean_sq_error: 0.0,
                        mean_ln_sq_error: 0.0,
                        mean_excess_risk: Some(0.0),
                    },
                    0,
                ));
                out.len() - 1
            }
        };
        let (g, with_excess) = &mut out[idx];
        g.reps += 1;
        g.mean_error += r.error;
        g.mean_sq_error += r.sq_error;
        g.mean_ln_sq_error += r.sq_error.ln();
        if let (Some(acc), Some(e)) = (g.mean_excess_risk.as_mut(), r.excess_risk) {
            *acc += e;
            *with_excess += 1;
        }
    }
    out.into_iter()
        .map(|(mut g, with_excess)| {
            let k = g.reps as f64;
            g.mean_error /= k;
            g.mean_sq_error /= k;
            g.mean_ln_sq_error /= k;
            g.mean_excess_risk = if with_excess == g.reps {
                g.mean_excess_risk.map(|e| e / k)
            } else {
                None
            };
            g
        })
        .collect()
}

/// Configuration of a rate-scaling study.
#[derive(Debug, Clone, PartialEq)]
pub struct RateConfig {
    pub loss: LossKind,
    pub penalty: PenaltyKind,
    pub lambda: f64,
    pub q: QuantileSpec,
    pub k_rule: KRule,
    /// Outlier exponent; `None` fits clean data.
    pub beta: Option<f64>,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub p: usize,
    pub solver: SolverSettings,
    pub timing: bool,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Logistic,
            penalty: PenaltyKind::None,
            lambda: 0.0,
            q: QuantileSpec::MEDIAN,
            k_rule: KRule::LogN,
            beta: None,
            n_grid: (7..=14).map(|m| 1usize << m).collect(),
            reps: 20,
            seed: 0,
            p: 2,
            solver: SolverSettings::logistic_study(),
            timing: false,
        }
    }
}

fn check_grid(grid: &[usize]) -> Result<()> {
    if grid.len() < 4 {
        return param(format!("need at least 4 grid points, got {}", grid.len()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] < 2 {
        return param("sample-size grid must be increasing and start at 2 or more");
    }
    Ok(())
}

/// Regression setup for squared-loss studies: unit-variance features and noise.
fn regression_spec(n: usize, p: usize, beta: f64, seed: u64) -> ContaminationSpec {
    ContaminationSpec {
        n_inliers: n,
        p,
        beta,
        inlier_variance: 1.0,
        outlier_mean: 0.5,
        outlier_variance: 100.0,
        seed,
    }
}

fn generate(loss: LossKind, n: usize, p: usize, beta: Option<f64>, seed: u64) -> Result<GeneratedData> {
    let g = match loss {
        LossKind::Squared => gen_regression(&regression_spec(n, p, beta.unwrap_or(0.0), seed), 1.0)?,
        LossKind::Logistic | LossKind::Hinge => gen_appendix_e(&ContaminationSpec {
            p,
            beta: beta.unwrap_or(0.0),
            ..ContaminationSpec::appendix_e(n, seed)
        })?,
    };
    if beta.is_none() {
        g.inliers_only()
    } else {
        Ok(g)
    }
}

fn slope_of(points: &[GridPoint], value: impl Fn(&GridPoint) -> Option<f64>) -> Result<SlopeFit> {
    let mut xy = Vec::with_capacity(points.len());
    for g in points.iter().filter(|g| g.method == Method::Mom) {
        match value(g) {
            Some(v) if v > 0.0 => xy.push(((g.n as f64).ln(), v.ln())),
            _ => return param(format!("non-positive mean at n = {}; cannot take logs", g.n)),
        }
    }
    fit_loglog_slope(&xy)
}

/// Records of a scaling study with the log-log fit of their Mom means.
#[derive(Debug, Clone, PartialEq)]
pub struct RateOutcome {
    pub records: Vec<ExperimentRecord>,
    pub fit: SlopeFit,
}

/// Quantile-of-means fits over a sample-size grid; the slope is fitted to
/// `(ln n, ln mean ‖ŵ − w₀‖²)`, so the error-scale rate is half of it.
pub fn run_rate_scaling(cfg: &RateConfig) -> Result<RateOutcome> {
    check_grid(&cfg.n_grid)?;
    let spec = FitSpec {
        experiment: "rate",
        loss: cfg.loss,
        penalty: cfg.penalty,
        lambda: cfg.lambda,
        quantile: cfg.q,
        solver: cfg.solver,
        timing: cfg.timing,
    };
    let records = run_grid(cfg.n_grid.len(), cfg.reps, |g, r| {
        let n = cfg.n_grid[g];
        let generated = generate(cfg.loss, n, cfg.p, cfg.beta, derive_seed(cfg.seed, &[2, n as u64, r as u64]))?;
        let outliers = generated.tags.outlier_count();
        let k = cfg.k_rule.blocks(generated.data.n(), outliers, cfg.q)?;
        let rep = Replicate {
            generated: &generated,
            n,
            replication: r,
            blocks: k,
            assumption_ok: check_assumption(outliers, cfg.q, 1.0, k)?,
            partition_seed: derive_seed(cfg.seed, &[3, n as u64, r as u64]),
        };
        Ok(vec![spec.run(&rep, Method::Mom)?.0])
    })?;
    let fit = slope_of(&summarize(&records), |g| Some(g.mean_sq_error))?;
    Ok(RateOutcome { records, fit })
}

/// Monte-Carlo estimate of `E[L(⟨ŵ,x⟩,y) − L(⟨w*,x⟩,y)]` over fresh inlier
/// draws; both terms share the draws.
pub fn excess_risk_mc(
    w_hat: &[f64],
    w_star: &[f64],
    model: &InlierModel,
    loss: LossKind,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if n_mc == 0 {
        return param("n_mc must be at least 1");
    }
    if w_hat.len() != model.p() || w_star.len() != model.p() {
        return param(format!("weights must have dimension {}", model.p()));
    }
    if loss.response_kind() != model.response_kind() {
        return param(format!("{loss} loss does not match the generator's responses"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_mc {
        let s = model.draw(&mut rng);
        total += loss.value_unchecked(dot(&s.features, w_hat), s.response)
            - loss.value_unchecked(dot(&s.features, w_star), s.response);
    }
    Ok(total / n_mc as f64)
}

/// Minimizer of `E(⟨w,x⟩ − y)² + (λ/2)‖w‖²` for the regression model:
/// `2v/(2v + λ)·w₀`.
pub fn population_ridge_solution(model: &InlierModel, lambda: f64) -> Result<Vec<f64>> {
    match model {
        InlierModel::Regression { weights, variance, .. } => {
            let shrink = 2.0 * variance / (2.0 * variance + lambda);
            Ok(weights.iter().map(|w| shrink * w).collect())
        }
        InlierModel::LogisticMixture { .. } => param("closed-form ridge solution needs the regression model"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastRateConfig {
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub lambda: f64,
    pub seed: u64,
    pub p: usize,
    pub k_rule: KRule,
    pub n_mc: usize,
    pub allow_unregularized: bool,
    pub solver: SolverSettings,
    pub timing: bool,
}

impl Default for FastRateConfig {
    fn default() -> Self {
        Self {
            n_grid: (7..=14).map(|m| 1usize << m).collect(),
            reps: 20,
            lambda: 0.1,
            seed: 0,
            p: 2,
            k_rule: KRule::LogN,
            n_mc: 100_000,
            allow_unregularized: false,
            solver: SolverSettings::study_default(LossKind::Squared),
            timing: false,
        }
    }
}

/// Ridge-penalized squared-loss median-of-means on clean regression data.
///
/// The excess risk is taken against the population penalized minimizer
/// `w_λ`: the Monte-Carlo loss gap plus `λ(F(ŵ) − F(w_λ))`.
pub fn run_fast_rate(cfg: &FastRateConfig) -> Result<RateOutcome> {
    check_grid(&cfg.n_grid)?;
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return param(format!("lambda must be finite and nonnegative, got {}", cfg.lambda));
    }
    if cfg.lambda == 0.0 && !cfg.allow_unregularized {
        return param("lambda = 0 leaves no strong convexity from the penalty; pass allow_unregularized to run anyway");
    }
    let penalty = PenaltyKind::Ridge;
    let spec = FitSpec {
        experiment: "fast_rate",
        loss: LossKind::Squared,
        penalty,
        lambda: cfg.lambda,
        quantile: QuantileSpec::MEDIAN,
        solver: cfg.solver,
        timing: cfg.timing,
    };
    let records = run_grid(cfg.n_grid.len(), cfg.reps, |g, r| {
        let n = cfg.n_grid[g];
        let generated = generate(LossKind::Squared, n, cfg.p, None, derive_seed(cfg.seed, &[4, n as u64, r as u64]))?;
        let k = cfg.k_rule.blocks(generated.data.n(), 0, spec.quantile)?;
        let rep = Replicate {
            generated: &generated,
            n,
            replication: r,
            blocks: k,
            assumption_ok: true,
            partition_seed: derive_seed(cfg.seed, &[5, n as u64, r as u64]),
        };
        let (mut record, w) = spec.run(&rep, Method::Mom)?;
        let w_lambda = population_ridge_solution(&generated.model, cfg.lambda)?;
        let gap = excess_risk_mc(
            &w,
            &w_lambda,
            &generated.model,
            LossKind::Squared,
            cfg.n_mc,
            derive_seed(cfg.seed, &[6, n as u64, r as u64]),
        )?;
        record.excess_risk = Some(gap + cfg.lambda * (penalty.value(&w) - penalty.value(&w_lambda)));
        Ok(vec![record])
    })?;
    let fit = slope_of(&summarize(&records), |g| g.mean_excess_risk)?;
    Ok(RateOutcome { records, fit })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownConfig {
    pub n: usize,
    pub beta_grid: Vec<f64>,
    pub k_rule: KRule,
    pub q: QuantileSpec,
    /// Slack used when flagging block-count violations.
    pub eta: f64,
    pub reps: usize,
    pub seed: u64,
    pub p: usize,
    pub solver: SolverSettings,
    pub timing: bool,
}

impl Default for BreakdownConfig {
    fn default() -> Self {
        Self {
            n: 1024,
            beta_grid: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            k_rule: KRule::LogN,
            q: QuantileSpec::MEDIAN,
            eta: 1.0,
            reps: 10,
            seed: 0,
            p: 2,
            solver: SolverSettings::logistic_study(),
            timing: false,
        }
    }
}

/// Median-of-means and plain logistic fits at a fixed inlier count while the
/// outlier exponent sweeps `beta_grid`. Rows where `K` violates the
/// block-count assumption carry `assumption_ok = false`.
pub fn run_breakdown(cfg: &BreakdownConfig) -> Result<Vec<ExperimentRecord>> {
    if cfg.beta_grid.is_empty() {
        return param("empty beta grid");
    }
    if let Some(b) = cfg.beta_grid.iter().find(|b| !(0.0..1.0).contains(*b)) {
        return param(format!("beta must lie in [0, 1), got {b}"));
    }
    let names: Vec<String> = cfg.beta_grid.iter().map(|b| format!("breakdown_beta={b}")).collect();
    run_grid(cfg.beta_grid.len(), cfg.reps, |g, r| {
        let beta = cfg.beta_grid[g];
        let spec = FitSpec {
            experiment: &names[g],
            loss: LossKind::Logistic,
            penalty: PenaltyKind::None,
            lambda: 0.0,
            quantile: cfg.q,
            solver: cfg.solver,
            timing: cfg.timing,
        };
        let generated = generate(
            LossKind::Logistic,
            cfg.n,
            cfg.p,
            Some(beta),
            derive_seed(cfg.seed, &[7, g as u64, r as u64]),
        )?;
        let outliers = generated.tags.outlier_count();
        let k = cfg.k_rule.blocks(generated.data.n(), outliers, cfg.q)?;
        let rep = Replicate {
            generated: &generated,
            n: cfg.n,
            replication: r,
            blocks: k,
            assumption_ok: check_assumption(outliers, cfg.q, cfg.eta, k)?,
            partition_seed: derive_seed(cfg.seed, &[8, g as u64, r as u64]),
        };
        Ok(vec![spec.run(&rep, Method::Mom)?.0, spec.run(&rep, Method::Erm)?.0])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_examples() {
        let f = fit_loglog_slope(&[(0.0, 0.0), (1.0, 2.0)]).unwrap();
        assert_eq!((f.slope, f.r_squared), (2.0, 1.0));
        let f = fit_loglog_slope(&[(0.0, 4.0), (1.0, 4.0), (5.0, 4.0)]).unwrap();
        assert_eq!(f.slope, 0.0);
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let x = i as f64;
                (x, 3.0 * x + 1e-9 * ((i * 7919 % 13) as f64 - 6.0))
            })
            .collect();
        assert!((fit_loglog_slope(&pts).unwrap().slope - 3.0).abs() < 1e-6);
        assert!(fit_loglog_slope(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
        assert!(fit_loglog_slope(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn injected_lines() {
        for target in [-0.5, -1.0] {
            let pts: Vec<(f64, f64)> = (7..=14)
                .map(|m| {
                    let x = ((1usize << m) as f64).ln();
                    (x, target * x + 0.3)
                })
                .collect();
            let f = fit_loglog_slope(&pts).unwrap();
            assert!((f.slope - target).abs() < 1e-12);
            assert!((f.r_squared - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn k_rules() {
        let q = QuantileSpec::MEDIAN;
        assert_eq!(KRule::LogN.blocks(1000, 0, q).unwrap(), 7);
        assert_eq!(KRule::LogN.blocks(128, 0, q).unwrap(), 5);
        assert_eq!(KRule::COutliers(4.0).blocks(1000, 8, q).unwrap(), 33);
        assert_eq!(KRule::A1 { eta: 1.0 }.blocks(1000, 8, q).unwrap(), 33);
        assert_eq!(KRule::A1 { eta: 1.0 }.blocks(1000, 0, q).unwrap(), 1);
        assert_eq!(KRule::Fixed(4).blocks(10, 3, q).unwrap(), 4);
        assert!(KRule::Fixed(11).blocks(10, 3, q).is_err());
        for s in ["log_n", "c_outliers:4", "a1:1", "fixed:9"] {
            assert_eq!(s.parse::<KRule>().unwrap().to_string(), s);
        }
        assert_eq!("c_outliers".parse::<KRule>().unwrap(), KRule::COutliers(4.0));
        assert!("fixed".parse::<KRule>().is_err());
        assert!("median".parse::<KRule>().is_err());
    }

    fn quick_solver() -> SolverSettings {
        SolverSettings {
            step0: 1.0,
            max_iters: 50,
            tolerance: 1e-8,
        }
    }

    #[test]
    fn appendix_record_shape_and_determinism() {
        let cfg = AppendixEConfig {
            m_min: 6,
            m_max: 6,
            reps: 1,
            solver: quick_solver(),
            ..AppendixEConfig::default()
        };
        let a = run_appendix_e(&cfg).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!((a[0].method, a[1].method), (Method::Mom, Method::Erm));
        assert!(a.iter().all(|r| r.assumption_ok && r.blocks % 2 == 1 && r.n == 64 && r.m == 6));
        for r in &a {
            assert!((r.error * r.error - r.sq_error).abs() <= 1e-12 * r.sq_error.max(1.0));
        }
        let cfg = AppendixEConfig {
            m_min: 5,
            m_max: 7,
            reps: 3,
            ..cfg
        };
        let x = run_appendix_e(&cfg).unwrap();
        assert_eq!(x.len(), 2 * 3 * 3);
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        write_records(&mut b1, &x).unwrap();
        write_records(&mut b2, &run_appendix_e(&cfg).unwrap()).unwrap();
        assert_eq!(b1, b2);
        assert!(String::from_utf8(b1)
            .unwrap()
            .starts_with("experiment,m,n,replication,method,error,sq_error,excess_risk,wall_ms\n"));
        assert!(run_appendix_e(&AppendixEConfig { m_min: 1, ..cfg.clone() }).is_err());
    }

    #[test]
    fn summary_means() {
        let rec = |n, rep, sq: f64| ExperimentRecord {
            experiment: "t".into(),
            m: 0,
            n,
            replication: rep,
            method: Method::Mom,
            error: sq.sqrt(),
            sq_error: sq,
            excess_risk: Some(sq),
            wall_ms: 0,
            blocks: 1,
            outliers: 0,
            assumption_ok: true,
            diverged: false,
        };
        let s = summarize(&[rec(4, 0, 1.0), rec(4, 1, 4.0), rec(8, 0, 9.0)]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].mean_sq_error, 2.5);
        assert_eq!(s[0].mean_error, 1.5);
        assert_eq!(s[0].mean_excess_risk, Some(2.5));
        assert!((s[0].mean_ln_sq_error - 4f64.ln() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rate_guards() {
        let cfg = RateConfig {
            n_grid: vec![64, 128, 256],
            ..RateConfig::default()
        };
        assert!(run_rate_scaling(&cfg).is_err());
        let cfg = FastRateConfig {
            lambda: 0.0,
            ..FastRateConfig::default()
        };
        assert!(run_fast_rate(&cfg).is_err());
    }

    #[test]
    fn small_rate_run() {
        let cfg = RateConfig {
            n_grid: vec![64, 128, 256, 512],
            reps: 2,
            solver: quick_solver(),
            ..RateConfig::default()
        };
        let out = run_rate_scaling(&cfg).unwrap();
        assert_eq!(out.records.len(), 8);
        assert!(out.records.iter().all(|r| r.outliers == 0));
        assert!(out.fit.slope.is_finite());
    }

    #[test]
    fn excess_risk_examples() {
        let model = InlierModel::Regression {
            weights: vec![1.0],
            variance: 2.0,
            noise_std: 0.5,
        };
        assert_eq!(excess_risk_mc(&[0.3], &[0.3], &model, LossKind::Squared, 100, 1).unwrap(), 0.0);
        // E(⟨Δ, X⟩)² = Δ²·var when w* is the truth
        let e = excess_risk_mc(&[1.5], &[1.0], &model, LossKind::Squared, 200_000, 2).unwrap();
        assert!((e - 0.5).abs() < 0.02, "{e}");
        let mut sum = 0.0;
        for seed in 0..20 {
            sum += excess_risk_mc(&[1.1], &[1.0], &model, LossKind::Squared, 1000, seed).unwrap();
        }
        assert!(sum / 20.0 > 0.0);
        assert!(excess_risk_mc(&[1.0], &[1.0], &model, LossKind::Squared, 0, 1).is_err());
        assert!(excess_risk_mc(&[1.0], &[1.0], &model, LossKind::Logistic, 10, 1).is_err());
    }

    #[test]
    fn ridge_population_solution_minimizes() {
        let model = InlierModel::Regression {
            weights: vec![1.0, -2.0],
            variance: 0.5,
            noise_std: 1.0,
        };
        let lambda = 0.3;
        let w = population_ridge_solution(&model, lambda).unwrap();
        // population objective v‖w − w₀‖² + s² + (λ/2)‖w‖² has gradient 2v(w − w₀) + λw
        for (wi, w0) in w.iter().zip([1.0, -2.0]) {
            assert!((2.0 * 0.5 * (wi - w0) + lambda * wi).abs() < 1e-15);
        }
    }

    #[test]
    fn breakdown_flags() {
        let cfg = BreakdownConfig {
            n: 256,
            beta_grid: vec![0.0, 0.6],
            k_rule: KRule::Fixed(5),
            reps: 1,
            solver: quick_solver(),
            ..BreakdownConfig::default()
        };
        let r = run_breakdown(&cfg).unwrap();
        assert_eq!(r.len(), 4);
        assert_eq!(r[0].experiment, "breakdown_beta=0");
        // 256^0.6 ≈ 27.9 outliers against K = 5 < 2|O|
        assert!(r[0].assumption_ok);
        assert!(!r[2].assumption_ok);
        assert!(run_breakdown(&BreakdownConfig { beta_grid: vec![1.0], ..cfg }).is_err());
    }
}
