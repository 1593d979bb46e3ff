//! Block risks, quantile-of-means selection and the regularized objective
//!
//! ```text
//! g(w) = Q_q(P_1 φ_w, …, P_K φ_w) + λ F(w)
//! ```
//!
//! with its gradient and Hessian taken on the block that attains the
//! quantile. Per iteration the objective costs one pass over the retained
//! rows for the block risks, an `O(K)` selection, and one pass over a single
//! block for the gradient.

use nalgebra::DMatrix;

use crate::error::{param, QomError, Result};
use crate::loss::LossKind;
use crate::partition::PartitionScheme;
use crate::penalty::PenaltyKind;
use crate::types::{Dataset, QuantileSpec};

/// The selected order statistic and the block attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileSelection {
    pub value: f64,
    pub block_index: usize,
}

/// Mean loss over `block`.
pub fn block_risk(w: &[f64], data: &Dataset, block: &[usize], loss: LossKind) -> Result<f64> {
    if block.is_empty() {
        return param("block is empty");
    }
    if w.len() != data.p() {
        return param(format!("weight dimension {} != data dimension {}", w.len(), data.p()));
    }
    if let Some(&i) = block.iter().find(|&&i| i >= data.n()) {
        return param(format!("block index {i} out of range (n = {})", data.n()));
    }
    loss.check_dataset(data)?;
    Ok(block_risk_unchecked(w, data, block, loss))
}

#[inline]
fn block_risk_unchecked(w: &[f64], data: &Dataset, block: &[usize], loss: LossKind) -> f64 {
    let total: f64 = block
        .iter()
        .map(|&i| loss.value_unchecked(data.predict(i, w), data.response(i)))
        .sum();
    total / block.len() as f64
}

/// The `q`-th lower quantile of `risks`: the `j*`-th smallest value with
/// `j* = floor(K(1 − q)) + 1`, i.e. `sup{z : #{k : r_k ≥ z} ≥ qK}`.
///
/// Ties resolve to the smallest block index carrying the selected value.
pub fn quantile_of_risks(risks: &[f64], q: QuantileSpec) -> Result<QuantileSelection> {
    if risks.is_empty() {
        return param("risk vector is empty");
    }
    Ok(select_rank(risks, q.order_rank(risks.len())))
}

/// Selection at a precomputed 1-based rank.
pub(crate) fn select_rank(risks: &[f64], rank: usize) -> QuantileSelection {
    debug_assert!(rank >= 1 && rank <= risks.len());
    let mut order: Vec<usize> = (0..risks.len()).collect();
    let (_, nth, _) = order.select_nth_unstable_by(rank - 1, |&a, &b| {
        risks[a].total_cmp(&risks[b]).then(a.cmp(&b))
    });
    let value = risks[*nth];
    let block_index = risks
        .iter()
        .position(|r| r.total_cmp(&value).is_eq())
        .expect("value comes from the vector");
    QuantileSelection { value, block_index }
}

/// The quantile-of-means objective bound to one dataset and partition.
#[derive(Debug, Clone, Copy)]
pub struct QomObjective<'a> {
    pub data: &'a Dataset,
    pub scheme: &'a PartitionScheme,
    pub loss: LossKind,
    pub quantile: QuantileSpec,
    pub lambda: f64,
    pub penalty: PenaltyKind,
}

impl<'a> QomObjective<'a> {
    pub fn new(
        data: &'a Dataset,
        scheme: &'a PartitionScheme,
        loss: LossKind,
        quantile: QuantileSpec,
        lambda: f64,
        penalty: PenaltyKind,
    ) -> Result<Self> {
        if scheme.n() != data.n() {
            return param(format!(
                "partition built for n = {} but data has n = {}",
                scheme.n(),
                data.n()
            ));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return param(format!("lambda must be finite and nonnegative, got {lambda}"));
        }
        loss.check_dataset(data)?;
        Ok(Self {
            data,
            scheme,
            loss,
            quantile,
            lambda,
            penalty,
        })
    }

    fn check_w(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.data.p() {
            return param(format!("weight dimension {} != data dimension {}", w.len(), self.data.p()));
        }
        Ok(())
    }

    pub fn block_risks(&self, w: &[f64]) -> Vec<f64> {
        self.scheme
            .blocks()
            .iter()
            .map(|b| block_risk_unchecked(w, self.data, b, self.loss))
            .collect()
    }

    /// `Q_q` of the block risks at `w`.
    pub fn risk(&self, w: &[f64]) -> Result<QuantileSelection> {
        self.check_w(w)?;
        Ok(self.risk_unchecked(w))
    }

    pub(crate) fn risk_unchecked(&self, w: &[f64]) -> QuantileSelection {
        let risks = self.block_risks(w);
        select_rank(&risks, self.quantile.order_rank(risks.len()))
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        self.check_w(w)?;
        Ok(self.value_unchecked(w))
    }

    pub(crate) fn value_unchecked(&self, w: &[f64]) -> f64 {
        self.risk_unchecked(w).value + self.lambda * self.penalty.value(w)
    }

    /// Gradient on the selected block plus `λ ∂F(w)`.
    pub fn gradient(&self, w: &[f64]) -> Result<(Vec<f64>, QuantileSelection)> {
        self.check_w(w)?;
        Ok(self.gradient_unchecked(w))
    }

    pub(crate) fn gradient_unchecked(&self, w: &[f64]) -> (Vec<f64>, QuantileSelection) {
        let selection = self.risk_unchecked(w);
        (self.gradient_on_block(w, selection.block_index), selection)
    }

    pub(crate) fn gradient_on_block(&self, w: &[f64], block: usize) -> Vec<f64> {
        let mut g = mean_loss_gradient(w, self.data, self.scheme.block(block), self.loss);
        self.penalty.add_scaled_subgrad(w, self.lambda, &mut g);
        g
    }

    pub(crate) fn hessian_on_block(&self, w: &[f64], block: usize) -> Result<DMatrix<f64>> {
        let curvature = check_curvature(self.loss, self.penalty)?;
        Ok(mean_loss_hessian(w, self.data, self.scheme.block(block), self.loss, self.lambda * curvature))
    }

    /// Hessian on the selected block plus `λ ∇²F`.
    pub fn hessian(&self, w: &[f64]) -> Result<(DMatrix<f64>, QuantileSelection)> {
        self.check_w(w)?;
        check_curvature(self.loss, self.penalty)?;
        let selection = self.risk_unchecked(w);
        Ok((self.hessian_on_block(w, selection.block_index)?, selection))
    }
}

fn check_curvature(loss: LossKind, penalty: PenaltyKind) -> Result<f64> {
    if !loss.has_curvature() {
        return Err(QomError::UnsupportedCurvature(format!("{loss} loss is piecewise linear")));
    }
    penalty
        .curvature()
        .ok_or_else(|| QomError::UnsupportedCurvature(format!("{penalty} penalty has no Hessian")))
}

fn mean_loss_gradient(w: &[f64], data: &Dataset, rows: &[usize], loss: LossKind) -> Vec<f64> {
    let mut g = vec![0.0; data.p()];
    for &i in rows {
        let x = data.row(i);
        let factor = loss.grad_unchecked(crate::types::dot(x, w), data.response(i));
        if factor != 0.0 {
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += factor * xj;
            }
        }
    }
    let inv = 1.0 / rows.len() as f64;
    for gj in &mut g {
        *gj *= inv;
    }
    g
}

fn mean_loss_hessian(
    w: &[f64],
    data: &Dataset,
    rows: &[usize],
    loss: LossKind,
    ridge: f64,
) -> DMatrix<f64> {
    let p = data.p();
    let mut h = DMatrix::<f64>::zeros(p, p);
    for &i in rows {
        let x = data.row(i);
        let c = loss.hess_unchecked(crate::types::dot(x, w), data.response(i));
        for r in 0..p {
            let cr = c * x[r];
            for s in 0..p {
                h[(r, s)] += cr * x[s];
            }
        }
    }
    h /= rows.len() as f64;
    for d in 0..p {
        h[(d, d)] += ridge;
    }
    h
}

/// Full-sample objective `(1/n) Σ L(⟨w, x_i⟩, y_i) + λ F(w)`.
#[derive(Debug, Clone)]
pub struct ErmObjective<'a> {
    pub data: &'a Dataset,
    pub loss: LossKind,
    pub lambda: f64,
    pub penalty: PenaltyKind,
    rows: Vec<usize>,
}

impl<'a> ErmObjective<'a> {
    pub fn new(data: &'a Dataset, loss: LossKind, lambda: f64, penalty: PenaltyKind) -> Result<Self> {
        if data.is_empty() {
            return param("dataset is empty");
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return param(format!("lambda must be finite and nonnegative, got {lambda}"));
        }
        loss.check_dataset(data)?;
        Ok(Self {
            data,
            loss,
            lambda,
            penalty,
            rows: (0..data.n()).collect(),
        })
    }

    pub(crate) fn risk_unchecked(&self, w: &[f64]) -> f64 {
        block_risk_unchecked(w, self.data, &self.rows, self.loss)
    }

    pub(crate) fn value_unchecked(&self, w: &[f64]) -> f64 {
        self.risk_unchecked(w) + self.lambda * self.penalty.value(w)
    }

    pub(crate) fn gradient_unchecked(&self, w: &[f64]) -> Vec<f64> {
        let mut g = mean_loss_gradient(w, self.data, &self.rows, self.loss);
        self.penalty.add_scaled_subgrad(w, self.lambda, &mut g);
        g
    }

    pub(crate) fn hessian(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let curvature = check_curvature(self.loss, self.penalty)?;
        Ok(mean_loss_hessian(w, self.data, &self.rows, self.loss, self.lambda * curvature))
    }
}

pub fn qom_risk(
    w: &[f64],
    data: &Dataset,
    scheme: &PartitionScheme,
    loss: LossKind,
    q: QuantileSpec,
) -> Result<QuantileSelection> {
    QomObjective::new(data, scheme, loss, q, 0.0, PenaltyKind::None)?.risk(w)
}

pub fn qom_objective(
    w: &[f64],
    data: &Dataset,
    scheme: &PartitionScheme,
    loss: LossKind,
    q: QuantileSpec,
    lambda: f64,
    penalty: PenaltyKind,
) -> Result<f64> {
    QomObjective::new(data, scheme, loss, q, lambda, penalty)?.value(w)
}

pub fn qom_gradient(
    w: &[f64],
    data: &Dataset,
    scheme: &PartitionScheme,
    loss: LossKind,
    q: QuantileSpec,
    lambda: f64,
    penalty: PenaltyKind,
) -> Result<(Vec<f64>, QuantileSelection)> {
    QomObjective::new(data, scheme, loss, q, lambda, penalty)?.gradient(w)
}

pub fn qom_hessian(
    w: &[f64],
    data: &Dataset,
    scheme: &PartitionScheme,
    loss: LossKind,
    q: QuantileSpec,
    lambda: f64,
    penalty: PenaltyKind,
) -> Result<DMatrix<f64>> {
    Ok(QomObjective::new(data, scheme, loss, q, lambda, penalty)?.hessian(w)?.0)
}

/// Mean loss over all `n` rows.
pub fn erm_risk(w: &[f64], data: &Dataset, loss: LossKind) -> Result<f64> {
    if data.is_empty() {
        return param("dataset is empty");
    }
    let rows: Vec<usize> = (0..data.n()).collect();
    block_risk(w, data, &rows, loss)
}

pub fn erm_gradient(
    w: &[f64],
    data: &Dataset,
    loss: LossKind,
    lambda: f64,
    penalty: PenaltyKind,
) -> Result<Vec<f64>> {
    let obj = ErmObjective::new(data, loss, lambda, penalty)?;
    if w.len() != data.p() {
        return param(format!("weight dimension {} != data dimension {}", w.len(), data.p()));
    }
    Ok(obj.gradient_unchecked(w))
}
