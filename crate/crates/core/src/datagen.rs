//! Synthetic contaminated datasets.
//!
//! Every generator draws inliers from an [`InlierModel`] and appends
//! `floor(n_inliers^β)` outliers from `N(outlier_mean·1, outlier_variance·I)`,
//! then shuffles the rows. The outliers come on top of the requested inliers.

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{param, Result};
use crate::types::{dot, ContaminationTags, Dataset, ResponseKind, Sample, Tag, WeightVector};

#[derive(Debug, Clone, PartialEq)]
pub struct ContaminationSpec {
    pub n_inliers: usize,
    pub p: usize,
    /// Outlier exponent, `0 ≤ β < 1`.
    pub beta: f64,
    pub inlier_variance: f64,
    pub outlier_mean: f64,
    pub outlier_variance: f64,
    pub seed: u64,
}

impl ContaminationSpec {
    /// The two-class simulation defaults: `p = 2`, `β = 0.3`, inlier
    /// variance 0.1, outliers with mean 0.5 and variance 100.
    pub fn appendix_e(n_inliers: usize, seed: u64) -> Self {
        Self {
            n_inliers,
            p: 2,
            beta: 0.3,
            inlier_variance: 0.1,
            outlier_mean: 0.5,
            outlier_variance: 100.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return param(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if !(self.inlier_variance > 0.0 && self.outlier_variance > 0.0) {
            return param("variances must be positive");
        }
        if !self.outlier_mean.is_finite() {
            return param("outlier mean must be finite");
        }
        if self.p == 0 {
            return param("dimension p must be positive");
        }
        Ok(())
    }

    /// `floor(n_inliers^β)`.
    pub fn outlier_count(&self) -> usize {
        outlier_count(self.n_inliers, self.beta)
    }
}

/// `floor(n^β)`, snapping to the integer when `powf` lands within rounding
/// distance of one (e.g. `1024^0.3 = 8`).
pub fn outlier_count(n: usize, beta: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let c = (n as f64).powf(beta);
    let r = c.round();
    if (c - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        c.floor() as usize
    }
}

/// Distribution of clean rows, used both for generation and for fresh
/// Monte-Carlo draws.
#[derive(Debug, Clone, PartialEq)]
pub enum InlierModel {
    /// Features from two balanced Gaussian components at `±1_p` with
    /// covariance `variance·I`; labels from the logistic model
    /// `P(y = +1 | x) = 1 / (1 + exp(−⟨w, x⟩))`.
    LogisticMixture { weights: Vec<f64>, variance: f64 },
    /// `x ~ N(0, variance·I)`, `y = ⟨w, x⟩ + N(0, noise_std²)`.
    Regression {
        weights: Vec<f64>,
        variance: f64,
        noise_std: f64,
    },
}

impl InlierModel {
    pub fn p(&self) -> usize {
        match self {
            InlierModel::LogisticMixture { weights, .. } | InlierModel::Regression { weights, .. } => weights.len(),
        }
    }

    pub fn weights(&self) -> &[f64] {
        match self {
            InlierModel::LogisticMixture { weights, .. } | InlierModel::Regression { weights, .. } => weights,
        }
    }

    pub fn response_kind(&self) -> ResponseKind {
        match self {
            InlierModel::Regression { .. } => ResponseKind::Real,
            InlierModel::LogisticMixture { .. } => ResponseKind::Label,
        }
    }

    /// One draw; the mixture picks its component with a fair coin.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        match self {
            InlierModel::LogisticMixture { .. } => {
                let component = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                self.draw_component(rng, component)
            }
            InlierModel::Regression {
                weights,
                variance,
                noise_std,
            } => {
                let x = gaussian_vec(rng, 0.0, *variance, weights.len());
                let z: f64 = StandardNormal.sample(rng);
                let y = dot(&x, weights) + noise_std * z;
                Sample::new(x, y)
            }
        }
    }

    fn draw_component<R: Rng + ?Sized>(&self, rng: &mut R, component: f64) -> Sample {
        match self {
            InlierModel::LogisticMixture { weights, variance } => {
                let x = gaussian_vec(rng, component, *variance, weights.len());
                let prob = 1.0 / (1.0 + (-dot(&x, weights)).exp());
                let y = if rng.random::<f64>() < prob { 1.0 } else { -1.0 };
                Sample::new(x, y)
            }
            InlierModel::Regression { .. } => unreachable!("components only exist for the mixture model"),
        }
    }
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, mean: f64, variance: f64, p: usize) -> Vec<f64> {
    let dist = Normal::new(mean, variance.sqrt()).expect("positive variance");
    (0..p).map(|_| dist.sample(rng)).collect()
}

/// A generated sample with its provenance and ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub data: Dataset,
    pub tags: ContaminationTags,
    pub true_weights: WeightVector,
    pub model: InlierModel,
}

impl GeneratedData {
    /// The same sample with every outlier row removed, order preserved.
    pub fn inliers_only(&self) -> Result<GeneratedData> {
        let keep: Vec<usize> = (0..self.data.n()).filter(|&i| !self.tags.is_outlier(i)).collect();
        let samples = keep.iter().map(|&i| self.data.sample(i)).collect();
        Ok(GeneratedData {
            data: Dataset::from_samples(samples, self.data.kind())?,
            tags: ContaminationTags::all_inliers(keep.len()),
            true_weights: self.true_weights.clone(),
            model: self.model.clone(),
        })
    }
}

#[derive(Clone, Copy)]
enum OutlierResponse {
    RandomLabel,
    /// `y = −⟨w, x⟩ + N(0, outlier_variance)`
    FlippedModel,
}

fn assemble(
    spec: &ContaminationSpec,
    model: InlierModel,
    true_weights: Vec<f64>,
    inliers: Vec<Sample>,
    outlier_response: OutlierResponse,
    rng: &mut ChaCha8Rng,
) -> Result<GeneratedData> {
    let mut rows: Vec<(Sample, Tag)> = inliers.into_iter().map(|s| (s, Tag::Inlier)).collect();
    let outlier_noise = Normal::new(0.0, spec.outlier_variance.sqrt()).expect("positive variance");
    for _ in 0..spec.outlier_count() {
        let x = gaussian_vec(rng, spec.outlier_mean, spec.outlier_variance, spec.p);
        let y = match outlier_response {
            OutlierResponse::RandomLabel => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            OutlierResponse::FlippedModel => -dot(&x, &true_weights) + outlier_noise.sample(rng),
        };
        rows.push((Sample::new(x, y), Tag::Outlier));
    }
    rows.shuffle(rng);
    let (samples, tags): (Vec<Sample>, Vec<Tag>) = rows.into_iter().unzip();
    Ok(GeneratedData {
        data: Dataset::from_samples(samples, model.response_kind())?,
        tags: ContaminationTags::new(tags),
        true_weights: WeightVector::new(true_weights)?,
        model,
    })
}

/// Two equal Gaussian components at `±1_p` with covariance
/// `inlier_variance·I`, labelled by the logistic model with true weights
/// `1_p`, plus outliers labelled at random.
///
/// An odd `n_inliers` is rounded down so both components have equal size.
pub fn gen_appendix_e(spec: &ContaminationSpec) -> Result<GeneratedData> {
    spec.validate()?;
    let mut spec = spec.clone();
    if spec.n_inliers % 2 == 1 {
        warn!("n_inliers = {} is odd; using {}", spec.n_inliers, spec.n_inliers - 1);
        spec.n_inliers -= 1;
    }
    if spec.n_inliers == 0 {
        return param("need at least two inliers");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let model = InlierModel::LogisticMixture {
        weights: vec![1.0; spec.p],
        variance: spec.inlier_variance,
    };
    let half = spec.n_inliers / 2;
    let mut inliers = Vec::with_capacity(spec.n_inliers);
    for component in [1.0, -1.0] {
        for _ in 0..half {
            inliers.push(model.draw_component(&mut rng, component));
        }
    }
    assemble(&spec, model, vec![1.0; spec.p], inliers, OutlierResponse::RandomLabel, &mut rng)
}

/// Linear regression inliers `y = ⟨1_p, x⟩ + noise` with
/// `x ~ N(0, inlier_variance·I)`; outliers follow the sign-flipped model
/// with extra `N(0, outlier_variance)` noise on top of their large features.
pub fn gen_regression(spec: &ContaminationSpec, noise_std: f64) -> Result<GeneratedData> {
    spec.validate()?;
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return param(format!("noise_std must be finite and nonnegative, got {noise_std}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights = vec![1.0; spec.p];
    let model = InlierModel::Regression {
        weights: weights.clone(),
        variance: spec.inlier_variance,
        noise_std,
    };
    let inliers = (0..spec.n_inliers).map(|_| model.draw(&mut rng)).collect();
    assemble(spec, model, weights, inliers, OutlierResponse::FlippedModel, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appendix_defaults() {
        let s = ContaminationSpec::appendix_e(64, 1);
        assert_eq!((s.inlier_variance, s.outlier_mean, s.outlier_variance, s.beta), (0.1, 0.5, 100.0, 0.3));
    }

    #[test]
    fn outlier_counts() {
        assert_eq!(outlier_count(1000, 0.0), 1);
        assert_eq!(outlier_count(1024, 0.3), 8);
        assert_eq!(outlier_count(1023, 0.3), 7);
        assert_eq!(outlier_count(32, 0.3), 2);
        assert_eq!(outlier_count(65536, 0.3), 27);
        assert_eq!(outlier_count(100, 0.5), 10);
    }

    #[test]
    fn appendix_counts_balance_and_truth() {
        let g = gen_appendix_e(&ContaminationSpec::appendix_e(200, 3)).unwrap();
        assert_eq!(g.tags.inlier_count(), 200);
        assert_eq!(g.tags.outlier_count(), outlier_count(200, 0.3));
        assert_eq!(g.data.n(), 200 + g.tags.outlier_count());
        // components are told apart by the sign of the feature sum
        let upper = (0..g.data.n())
            .filter(|&i| !g.tags.is_outlier(i) && g.data.row(i).iter().sum::<f64>() > 0.0)
            .count();
        assert_eq!(upper, 100);
        assert_eq!(g.true_weights.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn dropping_outliers() {
        let g = gen_appendix_e(&ContaminationSpec::appendix_e(100, 5)).unwrap();
        let c = g.inliers_only().unwrap();
        assert_eq!(c.data.n(), 100);
        assert_eq!(c.tags.outlier_count(), 0);
        let kept: Vec<usize> = (0..g.data.n()).filter(|&i| !g.tags.is_outlier(i)).collect();
        assert_eq!(c.data.row(7), g.data.row(kept[7]));
    }

    #[test]
    fn beta_zero_single_outlier() {
        let spec = ContaminationSpec {
            beta: 0.0,
            ..ContaminationSpec::appendix_e(50, 0)
        };
        assert_eq!(gen_appendix_e(&spec).unwrap().tags.outlier_count(), 1);
    }

    #[test]
    fn odd_inliers_rounded_down() {
        let g = gen_appendix_e(&ContaminationSpec::appendix_e(51, 0)).unwrap();
        assert_eq!(g.tags.inlier_count(), 50);
    }

    #[test]
    fn deterministic() {
        let s = ContaminationSpec::appendix_e(40, 17);
        let (a, b) = (gen_appendix_e(&s).unwrap(), gen_appendix_e(&s).unwrap());
        assert_eq!(a.data, b.data);
        assert_eq!(a.tags, b.tags);
        let c = gen_appendix_e(&ContaminationSpec { seed: 18, ..s }).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn rejects_bad_spec() {
        let s = ContaminationSpec::appendix_e(40, 1);
        assert!(gen_appendix_e(&ContaminationSpec { beta: 1.0, ..s.clone() }).is_err());
        assert!(gen_appendix_e(&ContaminationSpec { inlier_variance: 0.0, ..s.clone() }).is_err());
        assert!(gen_regression(&s, -1.0).is_err());
    }

    #[test]
    fn mixture_labels_follow_logistic_model() {
        // P(y = 1 | x) at the component centres is σ(±2)
        let g = gen_appendix_e(&ContaminationSpec::appendix_e(40_000, 9)).unwrap();
        let (mut hits, mut total) = (0usize, 0usize);
        for i in 0..g.data.n() {
            if !g.tags.is_outlier(i) && g.data.row(i).iter().sum::<f64>() > 0.0 {
                total += 1;
                hits += usize::from(g.data.response(i) == 1.0);
            }
        }
        let frac = hits as f64 / total as f64;
        // E σ(⟨1, x⟩) over the upper component, x ~ N(1_2, 0.1 I), is ≈ 0.873
        assert!((frac - 0.873).abs() < 0.01, "{frac}");
    }

    #[test]
    fn regression_counts_and_realizable() {
        let spec = ContaminationSpec {
            inlier_variance: 1.0,
            ..ContaminationSpec::appendix_e(300, 4)
        };
        let g = gen_regression(&spec, 0.0).unwrap();
        assert_eq!(g.tags.outlier_count(), outlier_count(300, 0.3));
        for i in 0..g.data.n() {
            if !g.tags.is_outlier(i) {
                let fit = g.data.predict(i, g.true_weights.as_slice());
                assert!((fit - g.data.response(i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inlier_covariance_close_to_spec() {
        let n = 100_000;
        let g = gen_appendix_e(&ContaminationSpec::appendix_e(n, 5)).unwrap();
        let p = 2;
        let mut sums = vec![vec![0.0; p]; 2];
        let mut counts = [0usize; 2];
        let mut cov = vec![vec![0.0; p * p]; 2];
        for pass in 0..2 {
            for i in 0..g.data.n() {
                if g.tags.is_outlier(i) {
                    continue;
                }
                let c = usize::from(g.data.row(i).iter().sum::<f64>() < 0.0);
                let x = g.data.row(i);
                if pass == 0 {
                    counts[c] += 1;
                    for j in 0..p {
                        sums[c][j] += x[j];
                    }
                } else {
                    for a in 0..p {
                        for b in 0..p {
                            let ma = sums[c][a] / counts[c] as f64;
                            let mb = sums[c][b] / counts[c] as f64;
                            cov[c][a * p + b] += (x[a] - ma) * (x[b] - mb);
                        }
                    }
                }
            }
        }
        for c in 0..2 {
            let m = counts[c] as f64;
            for a in 0..p {
                for b in 0..p {
                    let est = cov[c][a * p + b] / (m - 1.0);
                    let target = if a == b { 0.1 } else { 0.0 };
                    // se of a Gaussian (co)variance estimate: σ²·sqrt(2/m) on the
                    // diagonal, σ²/sqrt(m) off it
                    let se = if a == b { 0.1 * (2.0 / m).sqrt() } else { 0.1 / m.sqrt() };
                    assert!((est - target).abs() < 3.0 * se, "class {c} ({a},{b}): {est}");
                }
            }
        }
        // class means at ±1
        assert!((sums[0][0] / counts[0] as f64 - 1.0).abs() < 0.01);
        assert!((sums[1][1] / counts[1] as f64 + 1.0).abs() < 0.01);
    }
}
