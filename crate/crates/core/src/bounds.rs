//! Closed-form risk, concentration and fast-rate bounds, with the moment
//! estimates that feed them. The dual norm is ℓ2 throughout.

use nalgebra::{DMatrix, DVector};

use crate::error::{param, QomError, Result};
use crate::types::{dot, validate_partition_assumption, Dataset, QuantileSpec};

/// Constants entering the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Uniform bound on the loss standard deviation.
    pub v: f64,
    /// Radius `B` with `F(w) ≤ B²` on the feasible set.
    pub b_radius: f64,
    /// Lipschitz constant of the loss in its prediction argument.
    pub tau: f64,
    /// `√E‖X‖²`.
    pub mu_star: f64,
    /// Strong-convexity modulus of the penalty.
    pub sigma: f64,
    pub eta: f64,
    pub q: QuantileSpec,
    pub n: usize,
    pub k: usize,
    pub inliers: usize,
    pub outliers: usize,
    /// Strong-convexity modulus of the population risk (fast rate only).
    pub alpha: Option<f64>,
}

impl BoundInputs {
    /// `b = floor(n / K)`.
    pub fn block_size(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.n / self.k
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v >= 0.0 && self.v.is_finite()) {
            return param(format!("V must be finite and nonnegative, got {}", self.v));
        }
        for (name, x) in [("B", self.b_radius), ("tau", self.tau), ("mu_star", self.mu_star), ("eta", self.eta)] {
            if !(x > 0.0 && x.is_finite()) {
                return param(format!("{name} must be positive and finite, got {x}"));
            }
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(QomError::StrongConvexity(format!(
                "penalty modulus sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.k < 1 || self.k > self.n {
            return param(format!("K = {} must lie in [1, n = {}]", self.k, self.n));
        }
        if self.inliers + self.outliers > self.n {
            return param(format!(
                "|I| + |O| = {} exceeds n = {}",
                self.inliers + self.outliers,
                self.n
            ));
        }
        if !validate_partition_assumption(self.outliers, self.q, self.eta, self.k)? {
            return Err(QomError::Assumption(format!(
                "K = {} < (1 + η)|O| / min(q, 1 − q) with |O| = {}, q = {}, η = {}",
                self.k,
                self.outliers,
                self.q.value(),
                self.eta
            )));
        }
        Ok(())
    }

    /// `e^{−2K(2t/(2+η) − |O|/K)²}` for one tail level `t`.
    fn tail_failure(&self, t: f64) -> f64 {
        let k = self.k as f64;
        let gap = 2.0 * t / (2.0 + self.eta) - self.outliers as f64 / k;
        (-2.0 * k * gap * gap).exp()
    }

    /// `16Bτμ*(2+η)√|I| / (n√σ)`, the shared second-term numerator over `n√σ`.
    fn complexity_term(&self) -> f64 {
        16.0 * self.b_radius * self.tau * self.mu_star * (2.0 + self.eta) * (self.inliers as f64).sqrt()
            / (self.n as f64 * self.sigma.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundResult {
    pub bound: f64,
    /// Probability lower bound clamped to `[0, 1]`.
    pub confidence: f64,
    /// The probability expression before clamping; may be negative.
    pub raw_confidence: f64,
}

impl BoundResult {
    fn new(bound: f64, raw_confidence: f64) -> Self {
        Self {
            bound,
            confidence: raw_confidence.clamp(0.0, 1.0),
            raw_confidence,
        }
    }
}

/// High-probability bound on the excess risk of the quantile-of-means
/// minimizer.
pub fn main_risk_bound(inputs: &BoundInputs) -> Result<BoundResult> {
    inputs.validate()?;
    let q = inputs.q.value();
    let qq = q * (1.0 - q);
    let b = inputs.block_size() as f64;
    let eta = inputs.eta;
    let bound = 2.0 * inputs.v * (2.0 * (2.0 + eta) / (qq * eta * b)).sqrt()
        + inputs.complexity_term() / (qq * eta);
    let raw = 1.0 - inputs.tail_failure(q) - inputs.tail_failure(1.0 - q);
    Ok(BoundResult::new(bound, raw))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Population risk above the empirical quantile risk; governed by `q`.
    Lower,
    /// Empirical quantile risk above the population risk; governed by `1 − q`.
    Upper,
}

/// One-sided uniform deviation `ε` between the quantile risk and the
/// population risk, with the probability it holds.
pub fn concentration_epsilon(inputs: &BoundInputs, side: Side) -> Result<(f64, f64)> {
    inputs.validate()?;
    let t = match side {
        Side::Lower => inputs.q.value(),
        Side::Upper => 1.0 - inputs.q.value(),
    };
    let b = inputs.block_size() as f64;
    let eta = inputs.eta;
    let eps = 2.0 * inputs.v * ((2.0 + eta) / (t * eta * b)).sqrt() + inputs.complexity_term() / (t * eta);
    Ok((eps, 1.0 - inputs.tail_failure(t)))
}

/// Sample Rademacher-complexity bound `(2B/n)·√((1/(2σ))·Σ‖X_i‖²)` for the
/// linear class `{x ↦ ⟨w, x⟩ : F(w) ≤ B²}`.
pub fn rademacher_bound(b_radius: f64, sigma: f64, dual_norms_sq: &[f64]) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(QomError::StrongConvexity(format!("sigma must be positive, got {sigma}")));
    }
    if dual_norms_sq.is_empty() {
        return param("need at least one norm");
    }
    if dual_norms_sq.iter().any(|&x| !(x >= 0.0)) {
        return param("squared norms must be nonnegative");
    }
    let n = dual_norms_sq.len() as f64;
    let total: f64 = dual_norms_sq.iter().sum();
    Ok(2.0 * b_radius / n * (total / (2.0 * sigma)).sqrt())
}

/// Loss standard-deviation bound from fourth moments:
/// `√(2·E L²(0,Y)) + √2·τ·√(B² + 2‖∇F*(0)‖²·m2 + 2·m4)`.
pub fn fourth_moment_v(tau: f64, b_radius: f64, grad_fstar_zero_norm: f64, m2: f64, m4: f64, l0sq: f64) -> Result<f64> {
    for (name, x) in [
        ("tau", tau),
        ("B", b_radius),
        ("grad_fstar_zero_norm", grad_fstar_zero_norm),
        ("m2", m2),
        ("m4", m4),
        ("l0sq", l0sq),
    ] {
        if !(x >= 0.0 && x.is_finite()) {
            return param(format!("{name} must be finite and nonnegative, got {x}"));
        }
    }
    let g2 = grad_fstar_zero_norm * grad_fstar_zero_norm;
    Ok((2.0 * l0sq).sqrt()
        + std::f64::consts::SQRT_2 * tau * (b_radius * b_radius + 2.0 * g2 * m2 + 2.0 * m4).sqrt())
}

/// Excess-risk bound under population strong convexity `α`, with the
/// free splitting constant `β > 0`.
pub fn fast_rate_bound(inputs: &BoundInputs, beta: f64) -> Result<f64> {
    inputs.validate()?;
    let alpha = match inputs.alpha {
        Some(a) if a > 0.0 && a.is_finite() => a,
        other => {
            return Err(QomError::StrongConvexity(format!(
                "population modulus alpha must be positive, got {other:?}"
            )))
        }
    };
    if !(beta > 0.0 && beta.is_finite()) {
        return param(format!("beta must be positive, got {beta}"));
    }
    let q = inputs.q.value();
    let eta = inputs.eta;
    let b = inputs.block_size() as f64;
    let n = inputs.n as f64;
    let scale = 8.0 * inputs.tau.powi(2) * inputs.mu_star.powi(2) * (1.0 + 1.0 / beta);
    let first = 2.0 * (2.0 + eta) / (alpha * q * eta * b);
    let second = 256.0 * (2.0 + eta).powi(2) * inputs.inliers as f64
        / (q * q * eta * eta * n * n * alpha * inputs.sigma);
    Ok(scale * (first + second))
}

/// Main bound plus `τ·ε(P)` for average misspecification `eps_p`.
pub fn misspec_bound(inputs: &BoundInputs, eps_p: f64) -> Result<BoundResult> {
    if !(eps_p >= 0.0 && eps_p.is_finite()) {
        return param(format!("misspecification must be finite and nonnegative, got {eps_p}"));
    }
    let base = main_risk_bound(inputs)?;
    Ok(BoundResult {
        bound: base.bound + inputs.tau * eps_p,
        ..base
    })
}

/// Sample means of `‖X_i‖²` and `‖X_i‖⁴`.
pub fn empirical_moments(data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return param("empty dataset");
    }
    let (mut m2, mut m4) = (0.0, 0.0);
    for i in 0..data.n() {
        let s = dot(data.row(i), data.row(i));
        m2 += s;
        m4 += s * s;
    }
    let n = data.n() as f64;
    Ok((m2 / n, m4 / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MisspecEstimate {
    /// Smallest mean absolute deviation found.
    pub value: f64,
    pub weights: Vec<f64>,
    /// False when the budget ran out before the step size decayed to its floor.
    pub converged: bool,
}

/// Plug-in estimate of `inf_w mean |⟨w, x_i⟩ − f*(x_i)|`.
///
/// Subgradient descent from the least-squares fit with normalized steps
/// shrinking geometrically; the best iterate is returned.
pub fn misspecification_estimate(data: &Dataset, fstar_values: &[f64], budget: usize) -> Result<MisspecEstimate> {
    if data.is_empty() {
        return param("empty dataset");
    }
    if fstar_values.len() != data.n() {
        return param(format!("{} target values for {} rows", fstar_values.len(), data.n()));
    }
    if fstar_values.iter().any(|v| !v.is_finite()) {
        return param("target values must be finite");
    }
    let (n, p) = (data.n(), data.p());
    let objective = |w: &[f64]| -> f64 {
        (0..n).map(|i| (dot(data.row(i), w) - fstar_values[i]).abs()).sum::<f64>() / n as f64
    };

    let x = DMatrix::from_fn(n, p, |i, j| data.row(i)[j]);
    let y = DVector::from_column_slice(fstar_values);
    let mut w: Vec<f64> = x
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| QomError::LinearSolve(e.to_string()))?
        .iter()
        .copied()
        .collect();

    let mut best = objective(&w);
    let mut best_w = w.clone();
    let mean_norm = (0..n).map(|i| dot(data.row(i), data.row(i)).sqrt()).sum::<f64>() / n as f64;
    if best == 0.0 || mean_norm == 0.0 {
        return Ok(MisspecEstimate {
            value: best,
            weights: best_w,
            converged: true,
        });
    }

    const DECAY: f64 = 0.999;
    const FLOOR: f64 = 1e-10;
    let step0 = best / mean_norm;
    let mut step = step0;
    let mut g = vec![0.0; p];
    for _ in 0..budget {
        if step < FLOOR * step0 {
            return Ok(MisspecEstimate {
                value: best,
                weights: best_w,
                converged: true,
            });
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let r = dot(data.row(i), &w) - fstar_values[i];
            let s = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            for (gj, xj) in g.iter_mut().zip(data.row(i)) {
                *gj += s * xj;
            }
        }
        let norm = dot(&g, &g).sqrt();
        if norm == 0.0 {
            return Ok(MisspecEstimate {
                value: best,
                weights: best_w,
                converged: true,
            });
        }
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= step * gj / norm;
        }
        let value = objective(&w);
        if value < best {
            best = value;
            best_w.copy_from_slice(&w);
        }
        step *= DECAY;
    }
    Ok(MisspecEstimate {
        value: best,
        weights: best_w,
        converged: step < FLOOR * step0,
    })
}
