//! Domain types shared across the crate and the structural block-count
//! assumption.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{param, QomError, Result};

/// Whether responses are real-valued or ±1 class labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseKind {
    Real,
    Label,
}

/// One observation `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub response: f64,
}

impl Sample {
    pub fn new(features: Vec<f64>, response: f64) -> Self {
        Self { features, response }
    }
}

/// Immutable table of `n` feature vectors of dimension `p` with responses.
///
/// Features are stored row-major in one contiguous buffer. There is no
/// mutating API; every transformation produces a new dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    responses: Vec<f64>,
    n: usize,
    p: usize,
    kind: ResponseKind,
}

impl Dataset {
    pub fn from_samples(samples: Vec<Sample>, kind: ResponseKind) -> Result<Self> {
        let p = match samples.first() {
            Some(s) => s.features.len(),
            None => 0,
        };
        let mut rows = Vec::with_capacity(samples.len());
        let mut responses = Vec::with_capacity(samples.len());
        for s in samples {
            rows.push(s.features);
            responses.push(s.response);
        }
        Self::from_rows_with_dim(rows, responses, kind, p)
    }

    /// Builds a dataset from per-row feature vectors.
    pub fn from_rows(rows: Vec<Vec<f64>>, responses: Vec<f64>, kind: ResponseKind) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        Self::from_rows_with_dim(rows, responses, kind, p)
    }

    fn from_rows_with_dim(
        rows: Vec<Vec<f64>>,
        responses: Vec<f64>,
        kind: ResponseKind,
        p: usize,
    ) -> Result<Self> {
        if rows.len() != responses.len() {
            return param(format!(
                "{} feature rows but {} responses",
                rows.len(),
                responses.len()
            ));
        }
        let mut features = Vec::with_capacity(rows.len() * p);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != p {
                return param(format!("row {i} has dimension {} (expected {p})", row.len()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return param(format!("row {i} has a non-finite feature"));
            }
            features.extend(row);
        }
        Self::from_flat(features, responses, p, kind)
    }

    /// Builds a dataset from a row-major `n × p` buffer.
    pub fn from_flat(
        features: Vec<f64>,
        responses: Vec<f64>,
        p: usize,
        kind: ResponseKind,
    ) -> Result<Self> {
        let n = responses.len();
        if features.len() != n * p {
            return param(format!(
                "feature buffer has {} entries, expected n*p = {}",
                features.len(),
                n * p
            ));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return param(format!("feature entry {pos} is not finite"));
        }
        for (i, &y) in responses.iter().enumerate() {
            if !y.is_finite() {
                return param(format!("response {i} is not finite"));
            }
            if kind == ResponseKind::Label && y != 1.0 && y != -1.0 {
                return Err(QomError::Domain(format!(
                    "response {i} = {y} is not a ±1 label"
                )));
            }
        }
        Ok(Self {
            features,
            responses,
            n,
            p,
            kind,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn kind(&self) -> ResponseKind {
        self.kind
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn response(&self, i: usize) -> f64 {
        self.responses[i]
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample::new(self.row(i).to_vec(), self.responses[i])
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        (0..self.n).map(|i| self.sample(i))
    }

    /// Inner product of row `i` with `w`.
    #[inline]
    pub fn predict(&self, i: usize, w: &[f64]) -> f64 {
        dot(self.row(i), w)
    }

    /// New dataset with the listed rows' features multiplied by `factor`.
    pub fn with_scaled_rows(&self, rows: &[usize], factor: f64) -> Result<Self> {
        let mut features = self.features.clone();
        for &i in rows {
            if i >= self.n {
                return param(format!("row index {i} out of range (n = {})", self.n));
            }
            for v in &mut features[i * self.p..(i + 1) * self.p] {
                *v *= factor;
            }
        }
        Self::from_flat(features, self.responses.clone(), self.p, self.kind)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Provenance of one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Inlier,
    Outlier,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Inlier => "inlier",
            Tag::Outlier => "outlier",
        }
    }
}

/// Per-row inlier/outlier flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContaminationTags {
    tags: Vec<Tag>,
    outliers: usize,
}

impl ContaminationTags {
    pub fn new(tags: Vec<Tag>) -> Self {
        let outliers = tags.iter().filter(|t| **t == Tag::Outlier).count();
        Self { tags, outliers }
    }

    pub fn all_inliers(n: usize) -> Self {
        Self::new(vec![Tag::Inlier; n])
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn is_outlier(&self, i: usize) -> bool {
        self.tags[i] == Tag::Outlier
    }

    pub fn inlier_count(&self) -> usize {
        self.tags.len() - self.outliers
    }

    pub fn outlier_count(&self) -> usize {
        self.outliers
    }

    pub fn outlier_indices(&self) -> Vec<usize> {
        (0..self.tags.len()).filter(|&i| self.is_outlier(i)).collect()
    }
}

/// Linear coefficients `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.iter().any(|c| !c.is_finite()) {
            return param("weight vector has a non-finite entry");
        }
        Ok(Self(coefficients))
    }

    pub fn zeros(p: usize) -> Self {
        Self(vec![0.0; p])
    }

    pub fn ones(p: usize) -> Self {
        Self(vec![1.0; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn check_dim(&self, p: usize) -> Result<()> {
        if self.0.len() != p {
            return param(format!("weight dimension {} != data dimension {p}", self.0.len()));
        }
        Ok(())
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &WeightVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl std::ops::Deref for WeightVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Quantile level `q ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct QuantileSpec(f64);

impl QuantileSpec {
    pub const MEDIAN: QuantileSpec = QuantileSpec(0.5);

    pub fn new(q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return param(format!("quantile level must lie in (0, 1), got {q}"));
        }
        Ok(Self(q))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `min{q, 1 - q}`; exact in binary floating point for every `q ∈ (0, 1)`.
    pub fn min_tail(self) -> f64 {
        if self.0 <= 0.5 {
            self.0
        } else {
            1.0 - self.0
        }
    }

    /// 1-based order-statistic rank `j* = floor(K(1 - q)) + 1`, clamped to
    /// `[1, K]`, computed in exact rational arithmetic.
    pub fn order_rank(self, k: usize) -> usize {
        assert!(k >= 1, "order_rank needs at least one block");
        let q = exact(self.0);
        let kq = q * BigRational::from_integer(BigInt::from(k));
        let ceil = kq.ceil().to_integer();
        // floor(K - Kq) + 1 == K + 1 - ceil(Kq)
        let rank = BigInt::from(k) + BigInt::one() - ceil;
        let rank: i128 = rank.try_into().unwrap_or(1);
        rank.clamp(1, k as i128) as usize
    }
}

impl Default for QuantileSpec {
    fn default() -> Self {
        Self::MEDIAN
    }
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite float")
}

fn check_a1_params(q: QuantileSpec, eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return param(format!("eta must be a positive finite real, got {eta}"));
    }
    QuantileSpec::new(q.value())?;
    Ok(())
}

/// Checks `K ≥ (1 + η)|O| / min{q, 1 − q}`.
///
/// The inputs are binary floats, hence dyadic rationals; the inequality is
/// evaluated exactly on those rationals so no rounding can certify a
/// borderline `K`.
pub fn validate_partition_assumption(
    outlier_count: usize,
    q: QuantileSpec,
    eta: f64,
    k: usize,
) -> Result<bool> {
    check_a1_params(q, eta)?;
    let lhs = BigRational::from_integer(BigInt::from(k)) * exact(q.min_tail());
    let rhs = (BigRational::one() + exact(eta)) * BigRational::from_integer(BigInt::from(outlier_count));
    Ok(lhs >= rhs)
}

/// Smallest `K ≥ 1` satisfying [`validate_partition_assumption`].
pub fn min_blocks(outlier_count: usize, q: QuantileSpec, eta: f64) -> Result<usize> {
    check_a1_params(q, eta)?;
    let rhs = (BigRational::one() + exact(eta))
        * BigRational::from_integer(BigInt::from(outlier_count))
        / exact(q.min_tail());
    let k = rhs.ceil().to_integer();
    if k <= BigInt::zero() {
        return Ok(1);
    }
    let k: u64 = k
        .try_into()
        .map_err(|_| QomError::Parameter("required block count overflows".into()))?;
    Ok(k as usize)
}

/// Solver controls.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub lambda: f64,
    pub blocks: usize,
    pub quantile: QuantileSpec,
    pub step0: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Rebuild the partition every this many iterations; 0 keeps the
    /// initial partition for the whole run.
    pub reshuffle_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            blocks: 1,
            quantile: QuantileSpec::MEDIAN,
            step0: 1.0,
            max_iters: 10_000,
            tolerance: 1e-8,
            seed: 0,
            reshuffle_every: 0,
        }
    }
}

impl FitConfig {
    pub fn validate_for(&self, n: usize) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return param(format!("lambda must be finite and nonnegative, got {}", self.lambda));
        }
        if self.blocks < 1 || self.blocks > n {
            return param(format!("block count {} must lie in [1, n = {n}]", self.blocks));
        }
        if !(self.step0 > 0.0 && self.step0.is_finite()) {
            return param(format!("step0 must be positive, got {}", self.step0));
        }
        if !(self.tolerance > 0.0) {
            return param(format!("tolerance must be positive, got {}", self.tolerance));
        }
        Ok(())
    }
}

/// Outcome of a solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub weights: WeightVector,
    /// Objective after each update.
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
    /// Block selected at each iteration (always 0 for full-sample fits).
    pub selected_block_trace: Vec<usize>,
    pub converged: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(v: f64) -> QuantileSpec {
        QuantileSpec::new(v).unwrap()
    }

    #[test]
    fn a1_special_case_k_four_per_outlier() {
        assert!(validate_partition_assumption(1, q(0.5), 1.0, 4).unwrap());
        assert!(!validate_partition_assumption(1, q(0.5), 1.0, 3).unwrap());
        assert_eq!(min_blocks(1, q(0.5), 1.0).unwrap(), 4);
    }

    #[test]
    fn a1_zero_outliers() {
        assert!(validate_partition_assumption(0, q(0.5), 1.0, 1).unwrap());
        assert_eq!(min_blocks(0, q(0.3), 2.5).unwrap(), 1);
    }

    #[test]
    fn a1_exact_boundary() {
        // (1.5)(3)/0.25 = 18
        assert!(!validate_partition_assumption(3, q(0.25), 0.5, 17).unwrap());
        assert!(validate_partition_assumption(3, q(0.25), 0.5, 18).unwrap());
        assert_eq!(min_blocks(3, q(0.25), 0.5).unwrap(), 18);
    }

    #[test]
    fn a1_rejects_bad_params() {
        assert!(validate_partition_assumption(1, q(0.5), 0.0, 4).is_err());
        assert!(min_blocks(1, q(0.5), f64::NAN).is_err());
        assert!(QuantileSpec::new(1.0).is_err());
        assert!(QuantileSpec::new(0.0).is_err());
    }

    #[test]
    fn a1_decimal_eta_does_not_round_in_favour() {
        // 0.1 is slightly above 1/10 in binary, so 1.1 * 10 / 0.5 > 22.
        assert_eq!(min_blocks(10, q(0.5), 0.1).unwrap(), 23);
        assert!(!validate_partition_assumption(10, q(0.5), 0.1, 22).unwrap());
    }

    #[test]
    fn order_rank_examples() {
        assert_eq!(q(0.5).order_rank(3), 2);
        assert_eq!(q(0.25).order_rank(4), 4);
        assert_eq!(q(0.75).order_rank(4), 2);
        assert_eq!(q(0.5).order_rank(4), 3);
        assert_eq!(q(0.9).order_rank(1), 1);
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        let err = Dataset::from_rows(vec![vec![1.0]], vec![0.0], ResponseKind::Label);
        assert!(matches!(err, Err(QomError::Domain(_))));
        let err = Dataset::from_rows(vec![vec![1.0], vec![1.0, 2.0]], vec![1.0, 1.0], ResponseKind::Real);
        assert!(err.is_err());
    }

    #[test]
    fn tags_count() {
        let t = ContaminationTags::new(vec![Tag::Inlier, Tag::Outlier, Tag::Inlier]);
        assert_eq!(t.inlier_count() + t.outlier_count(), t.len());
        assert_eq!(t.outlier_indices(), vec![1]);
    }

    proptest! {
        #[test]
        fn min_blocks_is_tight(o in 0usize..200, qv in 0.01f64..0.99, eta in 0.01f64..5.0) {
            let qs = q(qv);
            let k = min_blocks(o, qs, eta).unwrap();
            prop_assert!(validate_partition_assumption(o, qs, eta, k).unwrap());
            if o > 0 {
                prop_assert!(!validate_partition_assumption(o, qs, eta, k - 1).unwrap());
            }
        }

        #[test]
        fn min_blocks_monotone(o in 0usize..200, qv in 0.01f64..0.5, eta in 0.01f64..5.0,
                               dq in 0.0f64..0.49, deta in 0.0f64..3.0) {
            let base = min_blocks(o, q(qv), eta).unwrap();
            prop_assert!(min_blocks(o + 1, q(qv), eta).unwrap() >= base);
            prop_assert!(min_blocks(o, q(qv), eta + deta).unwrap() >= base);
            // larger min{q, 1-q} never needs more blocks
            let wider = (qv + dq).min(0.5);
            prop_assert!(min_blocks(o, q(wider), eta).unwrap() <= base);
        }
    }
}
