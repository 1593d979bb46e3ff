//! Loss family `L(a, y)` with derivatives in the prediction argument `a`.

use std::fmt;
use std::str::FromStr;

use crate::error::{param, QomError, Result};
use crate::types::{Dataset, ResponseKind};

/// Margin beyond which the logistic loss switches to its asymptotic forms.
const LOGISTIC_CUTOFF: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `(a - y)^2`
    Squared,
    /// `ln(1 + exp(-y a))` with `y ∈ {-1, +1}`
    Logistic,
    /// `max(0, 1 - y a)` with `y ∈ {-1, +1}`
    Hinge,
}

impl LossKind {
    pub fn needs_labels(self) -> bool {
        matches!(self, LossKind::Logistic | LossKind::Hinge)
    }

    /// Responses the loss accepts.
    pub fn response_kind(self) -> ResponseKind {
        if self.needs_labels() {
            ResponseKind::Label
        } else {
            ResponseKind::Real
        }
    }

    pub fn check(self, a: f64, y: f64) -> Result<()> {
        if !a.is_finite() || !y.is_finite() {
            return param(format!("loss arguments must be finite (a = {a}, y = {y})"));
        }
        if self.needs_labels() && y != 1.0 && y != -1.0 {
            return Err(QomError::Domain(format!("{self} loss needs a ±1 label, got {y}")));
        }
        Ok(())
    }

    /// Verifies every response in `data` is admissible for this loss.
    pub fn check_dataset(self, data: &Dataset) -> Result<()> {
        if self.needs_labels() && data.kind() != ResponseKind::Label {
            if let Some((i, y)) = data
                .responses()
                .iter()
                .enumerate()
                .find(|(_, &y)| y != 1.0 && y != -1.0)
            {
                return Err(QomError::Domain(format!(
                    "{self} loss needs ±1 labels; row {i} has {y}"
                )));
            }
        }
        Ok(())
    }

    pub fn value(self, a: f64, y: f64) -> Result<f64> {
        self.check(a, y)?;
        Ok(self.value_unchecked(a, y))
    }

    pub fn grad(self, a: f64, y: f64) -> Result<f64> {
        self.check(a, y)?;
        Ok(self.grad_unchecked(a, y))
    }

    pub fn hess(self, a: f64, y: f64) -> Result<f64> {
        self.check(a, y)?;
        Ok(self.hess_unchecked(a, y))
    }

    #[inline]
    pub(crate) fn value_unchecked(self, a: f64, y: f64) -> f64 {
        match self {
            LossKind::Squared => (a - y) * (a - y),
            LossKind::Logistic => {
                let m = y * a;
                if m < -LOGISTIC_CUTOFF {
                    -m
                } else if m > LOGISTIC_CUTOFF {
                    (-m).exp()
                } else {
                    (-m).exp().ln_1p()
                }
            }
            LossKind::Hinge => (1.0 - y * a).max(0.0),
        }
    }

    #[inline]
    pub(crate) fn grad_unchecked(self, a: f64, y: f64) -> f64 {
        match self {
            LossKind::Squared => 2.0 * (a - y),
            LossKind::Logistic => -y / (1.0 + (y * a).exp()),
            // subgradient 0 at the kink
            LossKind::Hinge => {
                if y * a < 1.0 {
                    -y
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    pub(crate) fn hess_unchecked(self, a: f64, y: f64) -> f64 {
        match self {
            LossKind::Squared => 2.0,
            LossKind::Logistic => {
                let e = (-(y * a).abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            LossKind::Hinge => 0.0,
        }
    }

    /// Lipschitz constant of `a ↦ L(a, y)` over `|a| ≤ a_bound`, `|y| ≤ y_bound`.
    pub fn lipschitz_constant(self, a_bound: f64, y_bound: f64) -> Result<f64> {
        if !(a_bound > 0.0 && a_bound.is_finite() && y_bound > 0.0 && y_bound.is_finite()) {
            return param(format!(
                "bounds must be positive and finite (a_bound = {a_bound}, y_bound = {y_bound})"
            ));
        }
        Ok(match self {
            LossKind::Squared => 2.0 * (a_bound + y_bound),
            LossKind::Logistic | LossKind::Hinge => 1.0,
        })
    }

    pub fn has_curvature(self) -> bool {
        !matches!(self, LossKind::Hinge)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Squared => "squared",
            LossKind::Logistic => "logistic",
            LossKind::Hinge => "hinge",
        })
    }
}

impl FromStr for LossKind {
    type Err = QomError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "squared" => Ok(LossKind::Squared),
            "logistic" => Ok(LossKind::Logistic),
            "hinge" => Ok(LossKind::Hinge),
            other => param(format!("unknown loss '{other}' (expected squared|logistic|hinge)")),
        }
    }
}

pub fn loss_value(kind: LossKind, a: f64, y: f64) -> Result<f64> {
    kind.value(a, y)
}

pub fn loss_grad_a(kind: LossKind, a: f64, y: f64) -> Result<f64> {
    kind.grad(a, y)
}

pub fn loss_hess_a(kind: LossKind, a: f64, y: f64) -> Result<f64> {
    kind.hess(a, y)
}
