//! Regularizers `F(w)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{param, QomError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyKind {
    None,
    /// `½‖w‖₂²`
    Ridge,
    /// `‖w‖₁`
    Lasso,
    /// `α‖w‖₁ + ((1 − α)/2)‖w‖₂²` with `α ∈ (0, 1)`.
    ElasticNet { alpha: f64 },
}

impl PenaltyKind {
    pub fn elastic_net(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return param(format!("elastic-net mix must lie in (0, 1), got {alpha}"));
        }
        Ok(PenaltyKind::ElasticNet { alpha })
    }

    pub fn value(self, w: &[f64]) -> f64 {
        match self {
            PenaltyKind::None => 0.0,
            PenaltyKind::Ridge => 0.5 * sq_norm(w),
            PenaltyKind::Lasso => l1_norm(w),
            PenaltyKind::ElasticNet { alpha } => {
                alpha * l1_norm(w) + 0.5 * (1.0 - alpha) * sq_norm(w)
            }
        }
    }

    /// A subgradient of `F` at `w`; `sign(0) = 0` for the ℓ1 part.
    pub fn subgrad(self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        self.add_scaled_subgrad(w, 1.0, &mut g);
        g
    }

    /// `out += scale · ∂F(w)`.
    pub(crate) fn add_scaled_subgrad(self, w: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            PenaltyKind::None => {}
            PenaltyKind::Ridge => {
                for (o, &wi) in out.iter_mut().zip(w) {
                    *o += scale * wi;
                }
            }
            PenaltyKind::Lasso => {
                for (o, &wi) in out.iter_mut().zip(w) {
                    *o += scale * sign(wi);
                }
            }
            PenaltyKind::ElasticNet { alpha } => {
                for (o, &wi) in out.iter_mut().zip(w) {
                    *o += scale * (alpha * sign(wi) + (1.0 - alpha) * wi);
                }
            }
        }
    }

    /// Strong-convexity modulus with respect to ‖·‖₂.
    pub fn strong_convexity_sigma(self) -> f64 {
        match self {
            PenaltyKind::Ridge => 1.0,
            PenaltyKind::ElasticNet { alpha } => 1.0 - alpha,
            PenaltyKind::Lasso | PenaltyKind::None => 0.0,
        }
    }

    /// `c` such that `∇²F = c·I`, or `None` when `F` has an ℓ1 kink.
    ///
    /// Elastic net reports its quadratic part only.
    pub fn curvature(self) -> Option<f64> {
        match self {
            PenaltyKind::None => Some(0.0),
            PenaltyKind::Ridge => Some(1.0),
            PenaltyKind::ElasticNet { alpha } => Some(1.0 - alpha),
            PenaltyKind::Lasso => None,
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sq_norm(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum()
}

fn l1_norm(w: &[f64]) -> f64 {
    w.iter().map(|x| x.abs()).sum()
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltyKind::None => f.write_str("none"),
            PenaltyKind::Ridge => f.write_str("ridge"),
            PenaltyKind::Lasso => f.write_str("lasso"),
            PenaltyKind::ElasticNet { alpha } => write!(f, "elastic:{alpha}"),
        }
    }
}

impl FromStr for PenaltyKind {
    type Err = QomError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "none" => Ok(PenaltyKind::None),
            "ridge" => Ok(PenaltyKind::Ridge),
            "lasso" => Ok(PenaltyKind::Lasso),
            _ => match s.strip_prefix("elastic:") {
                Some(alpha) => {
                    let alpha: f64 = alpha
                        .parse()
                        .map_err(|_| QomError::Parameter(format!("bad elastic-net mix '{alpha}'")))?;
                    PenaltyKind::elastic_net(alpha)
                }
                None => param(format!(
                    "unknown penalty '{s}' (expected none|ridge|lasso|elastic:<alpha>)"
                )),
            },
        }
    }
}

pub fn penalty_value(kind: PenaltyKind, w: &[f64]) -> f64 {
    kind.value(w)
}

pub fn penalty_subgrad(kind: PenaltyKind, w: &[f64]) -> Vec<f64> {
    kind.subgrad(w)
}

pub fn strong_convexity_sigma(kind: PenaltyKind) -> f64 {
    kind.strong_convexity_sigma()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kinds() -> Vec<PenaltyKind> {
        vec![
            PenaltyKind::None,
            PenaltyKind::Ridge,
            PenaltyKind::Lasso,
            PenaltyKind::elastic_net(0.25).unwrap(),
            PenaltyKind::elastic_net(0.8).unwrap(),
        ]
    }

    fn rand_vec(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
        (0..p).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    #[test]
    fn values() {
        assert_eq!(PenaltyKind::Ridge.value(&[0.0, 0.0]), 0.0);
        assert_eq!(PenaltyKind::Ridge.value(&[3.0, 4.0]), 12.5);
        assert_eq!(PenaltyKind::elastic_net(0.5).unwrap().value(&[1.0, -1.0]), 1.5);
    }

    #[test]
    fn subgradients() {
        assert_eq!(PenaltyKind::Ridge.subgrad(&[3.0, 4.0]), vec![3.0, 4.0]);
        assert_eq!(PenaltyKind::Lasso.subgrad(&[2.0, 0.0, -1.0]), vec![1.0, 0.0, -1.0]);
        assert_eq!(PenaltyKind::None.subgrad(&[2.0, 5.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn sigma() {
        assert_eq!(PenaltyKind::Ridge.strong_convexity_sigma(), 1.0);
        assert_eq!(PenaltyKind::elastic_net(0.25).unwrap().strong_convexity_sigma(), 0.75);
        assert_eq!(PenaltyKind::Lasso.strong_convexity_sigma(), 0.0);
        assert_eq!(PenaltyKind::None.strong_convexity_sigma(), 0.0);
    }

    #[test]
    fn lasso_is_not_strongly_convex() {
        // Along a segment inside one orthant ℓ1 is linear, so any σ > 0 breaks
        // the strong-convexity inequality.
        let (w1, w2, a) = ([1.0, 2.0], [3.0, 1.0], 0.5);
        let mid = [a * w1[0] + (1.0 - a) * w2[0], a * w1[1] + (1.0 - a) * w2[1]];
        let f = |w: &[f64]| PenaltyKind::Lasso.value(w);
        let gap = a * f(&w1) + (1.0 - a) * f(&w2) - f(&mid);
        assert_eq!(gap, 0.0);
        let dist2 = (w1[0] - w2[0]).powi(2) + (w1[1] - w2[1]).powi(2);
        for sigma in [1e-6, 0.1, 1.0] {
            assert!(gap < 0.5 * sigma * a * (1.0 - a) * dist2);
        }
    }

    #[test]
    fn parse_names() {
        for k in kinds() {
            assert_eq!(k.to_string().parse::<PenaltyKind>().unwrap(), k);
        }
        assert!("elastic:1.5".parse::<PenaltyKind>().is_err());
        assert!("group".parse::<PenaltyKind>().is_err());
    }

    #[test]
    fn strong_convexity_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in kinds() {
            let sigma = k.strong_convexity_sigma();
            if sigma == 0.0 {
                continue;
            }
            for _ in 0..500 {
                let w1 = rand_vec(&mut rng, 4);
                let w2 = rand_vec(&mut rng, 4);
                let a: f64 = rng.random_range(0.0..1.0);
                let mid: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + (1.0 - a) * y).collect();
                let d2: f64 = w1.iter().zip(&w2).map(|(x, y)| (x - y).powi(2)).sum();
                let rhs = a * k.value(&w1) + (1.0 - a) * k.value(&w2) - 0.5 * sigma * a * (1.0 - a) * d2;
                assert!(k.value(&mid) <= rhs + 1e-10, "{k}");
            }
        }
    }

    #[test]
    fn infimum_zero_at_origin_and_valid_subgradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in kinds() {
            assert_eq!(k.value(&[0.0; 4]), 0.0);
            for _ in 0..500 {
                let w = rand_vec(&mut rng, 4);
                let v = rand_vec(&mut rng, 4);
                assert!(k.value(&w) >= 0.0);
                let g = k.subgrad(&w);
                let lin: f64 = g.iter().zip(v.iter().zip(&w)).map(|(gi, (vi, wi))| gi * (vi - wi)).sum();
                assert!(k.value(&v) >= k.value(&w) + lin - 1e-10, "{k}");
            }
        }
    }
}
