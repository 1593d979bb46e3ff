//! Decaying-step gradient descent on the quantile-of-means objective, a
//! damped Newton variant, and the full-sample baseline.
//!
//! All solvers start at `w = 0` and use `ε_t = step0 / t`, which satisfies
//! `Σ ε_t = ∞` and `Σ ε_t² < ∞`. A run stops once the objective moves by
//! less than `tolerance` in one update, or after `max_iters` updates.

use nalgebra::{DMatrix, DVector};

use crate::error::{QomError, Result};
use crate::loss::LossKind;
use crate::objective::{ErmObjective, QomObjective};
use crate::partition::PartitionScheme;
use crate::penalty::PenaltyKind;
use crate::types::{Dataset, FitConfig, FitResult, WeightVector};

/// `ε_t = step0 / t` for 1-based `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub step0: f64,
}

impl StepSchedule {
    pub fn new(step0: f64) -> Self {
        Self { step0 }
    }

    #[inline]
    pub fn step(&self, t: usize) -> f64 {
        self.step0 / t as f64
    }
}

/// Suggested initial step for a loss.
pub fn default_step0(loss: LossKind) -> f64 {
    match loss {
        LossKind::Squared => 0.1,
        LossKind::Logistic | LossKind::Hinge => 1.0,
    }
}

/// Seed of the partition used from iteration `t` on when reshuffling.
pub fn reshuffle_seed(seed: u64, t: usize) -> u64 {
    splitmix64(seed ^ splitmix64(t as u64))
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The pieces a descent loop needs from an objective.
trait Problem {
    fn p(&self) -> usize;
    /// Objective value and the block it was read from.
    fn evaluate(&self, w: &[f64]) -> (f64, usize);
    fn gradient(&self, w: &[f64], block: usize) -> Vec<f64>;
    fn hessian(&self, w: &[f64], block: usize) -> Result<DMatrix<f64>>;
    fn on_iteration(&mut self, _t: usize) -> bool {
        false
    }
}

struct QomProblem<'a> {
    data: &'a Dataset,
    scheme: PartitionScheme,
    loss: LossKind,
    config: &'a FitConfig,
    penalty: PenaltyKind,
}

impl QomProblem<'_> {
    fn objective(&self) -> QomObjective<'_> {
        QomObjective {
            data: self.data,
            scheme: &self.scheme,
            loss: self.loss,
            quantile: self.config.quantile,
            lambda: self.config.lambda,
            penalty: self.penalty,
        }
    }
}

impl Problem for QomProblem<'_> {
    fn p(&self) -> usize {
        self.data.p()
    }

    fn evaluate(&self, w: &[f64]) -> (f64, usize) {
        let obj = self.objective();
        let sel = obj.risk_unchecked(w);
        (sel.value + obj.lambda * obj.penalty.value(w), sel.block_index)
    }

    fn gradient(&self, w: &[f64], block: usize) -> Vec<f64> {
        self.objective().gradient_on_block(w, block)
    }

    fn hessian(&self, w: &[f64], block: usize) -> Result<DMatrix<f64>> {
        self.objective().hessian_on_block(w, block)
    }

    fn on_iteration(&mut self, t: usize) -> bool {
        let every = self.config.reshuffle_every;
        if every > 0 && t > 1 && (t - 1) % every == 0 {
            self.scheme = self.scheme.reshuffle(reshuffle_seed(self.config.seed, t));
            return true;
        }
        false
    }
}

impl Problem for ErmObjective<'_> {
    fn p(&self) -> usize {
        self.data.p()
    }

    fn evaluate(&self, w: &[f64]) -> (f64, usize) {
        (self.value_unchecked(w), 0)
    }

    fn gradient(&self, w: &[f64], _block: usize) -> Vec<f64> {
        self.gradient_unchecked(w)
    }

    fn hessian(&self, w: &[f64], _block: usize) -> Result<DMatrix<f64>> {
        ErmObjective::hessian(self, w)
    }
}

enum Direction {
    Gradient,
    Newton { damping: f64 },
}

fn descend<P: Problem>(problem: &mut P, config: &FitConfig, direction: Direction) -> Result<FitResult> {
    let schedule = StepSchedule::new(config.step0);
    let mut w = vec![0.0; problem.p()];
    let (mut value, mut block) = problem.evaluate(&w);
    if !value.is_finite() {
        return Err(QomError::Divergence {
            iteration: 0,
            last_weights: w,
        });
    }
    let mut objective_trace = Vec::new();
    let mut selected_block_trace = Vec::new();
    let mut converged = false;

    for t in 1..=config.max_iters {
        if problem.on_iteration(t) {
            (value, block) = problem.evaluate(&w);
        }
        let grad = problem.gradient(&w, block);
        let step = match direction {
            Direction::Gradient => grad,
            Direction::Newton { damping } => {
                let mut h = problem.hessian(&w, block)?;
                for d in 0..h.nrows() {
                    h[(d, d)] += damping;
                }
                newton_step(h, grad, t)?
            }
        };
        let eps = schedule.step(t);
        let next: Vec<f64> = w.iter().zip(&step).map(|(wi, si)| wi - eps * si).collect();
        let (next_value, next_block) = problem.evaluate(&next);
        if !next_value.is_finite() || next.iter().any(|x| !x.is_finite()) {
            return Err(QomError::Divergence {
                iteration: t,
                last_weights: w,
            });
        }
        objective_trace.push(next_value);
        selected_block_trace.push(block);
        let change = (next_value - value).abs();
        w = next;
        value = next_value;
        block = next_block;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        weights: WeightVector::new(w)?,
        iterations_run: objective_trace.len(),
        objective_trace,
        selected_block_trace,
        converged,
    })
}

fn newton_step(h: DMatrix<f64>, grad: Vec<f64>, t: usize) -> Result<Vec<f64>> {
    let g = DVector::from_vec(grad);
    let chol = h.cholesky().ok_or_else(|| {
        QomError::LinearSolve(format!("damped Hessian is not positive definite at iteration {t}"))
    })?;
    let d = chol.solve(&g);
    if d.iter().any(|x| !x.is_finite()) {
        return Err(QomError::LinearSolve(format!("Newton direction is not finite at iteration {t}")));
    }
    Ok(d.as_slice().to_vec())
}

fn qom_problem<'a>(
    data: &'a Dataset,
    loss: LossKind,
    penalty: PenaltyKind,
    config: &'a FitConfig,
) -> Result<QomProblem<'a>> {
    config.validate_for(data.n())?;
    let scheme = PartitionScheme::new(data.n(), config.blocks, config.seed)?;
    // validates loss/data compatibility
    QomObjective::new(data, &scheme, loss, config.quantile, config.lambda, penalty)?;
    Ok(QomProblem {
        data,
        scheme,
        loss,
        config,
        penalty,
    })
}

/// Gradient descent on the quantile-of-means objective.
///
/// The partition is drawn from `config.seed`; with `reshuffle_every = r > 0`
/// a fresh partition is drawn before iterations `r + 1, 2r + 1, …`.
pub fn fit_qom_gd(data: &Dataset, loss: LossKind, penalty: PenaltyKind, config: &FitConfig) -> Result<FitResult> {
    let mut problem = qom_problem(data, loss, penalty, config)?;
    descend(&mut problem, config, Direction::Gradient)
}

/// Damped Newton iterations `w ← w − ε_t (H + δI)⁻¹ ∇g` on the selected block.
pub fn fit_qom_newton(
    data: &Dataset,
    loss: LossKind,
    penalty: PenaltyKind,
    config: &FitConfig,
    damping: f64,
) -> Result<FitResult> {
    if !(damping >= 0.0 && damping.is_finite()) {
        return Err(QomError::Parameter(format!("damping must be finite and nonnegative, got {damping}")));
    }
    let mut problem = qom_problem(data, loss, penalty, config)?;
    // fail before iterating when no Hessian exists
    problem.hessian(&vec![0.0; data.p()], 0)?;
    descend(&mut problem, config, Direction::Newton { damping })
}

/// Gradient descent on the full-sample objective.
pub fn fit_erm_gd(data: &Dataset, loss: LossKind, penalty: PenaltyKind, config: &FitConfig) -> Result<FitResult> {
    config.validate_for(data.n())?;
    let mut problem = ErmObjective::new(data, loss, config.lambda, penalty)?;
    descend(&mut problem, config, Direction::Gradient)
}
