//! Fuzzy C-means with distribution-aware distances.
//!
//! One run alternates two steps until the partition matrix stops moving:
//!
//! 1. memberships from squared distances,
//!    `μ_ij = 1 / Σ_l (D_ij / D_lj)^(1/(m−1))`;
//! 2. cluster models from memberships: centers are `μ^m`-weighted means, the
//!    Mahalanobis metric additionally refits a covariance per cluster and the
//!    gamma metric refits a scale `θ_i = mean_i / L`.
//!
//! The adaptive Mahalanobis metric is volume normalized (Gustafson–Kessel):
//! `D_ij = det(Σ_i)^(1/d) (x_j − c_i)ᵀ Σ_i⁻¹ (x_j − c_i)`, and the first
//! iteration runs with identity covariances.
//!
//! The closed-form covariance (plain `μ` weights) and gamma scale updates are
//! not exact minimizers of the objective `Σ μ^m D`. A refit is therefore kept
//! per cluster only if it does not raise that cluster's share of the
//! objective, which makes the objective trace non-increasing.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::trace;
#[cfg(debug_assertions)]
use crate::linalg::Cholesky;
use crate::models::{hellinger_sq_unchecked, Mahalanobis};
use crate::scalar::Scalar;

/// Below this total membership a cluster counts as empty.
const EMPTY_CLUSTER_MASS: f64 = 1e-12;
/// Absolute ridge added to every covariance after the relative one.
const COVARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric<T> {
    Euclidean,
    /// Per-cluster covariance, volume normalized.
    AdaptiveMahalanobis,
    /// One-dimensional positive data compared as `Γ(L, x/L)` against
    /// `Γ(L, θ_i)` with the squared Hellinger distance.
    HellingerGamma {
        looks: T,
    },
}

impl<T> Metric<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::AdaptiveMahalanobis => "adaptive_mahalanobis",
            Metric::HellingerGamma { .. } => "hellinger_gamma",
        }
    }
}

/// Weights used when refitting covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceWeights {
    /// `μ_ij`.
    #[default]
    Membership,
    /// `μ_ij^m`, the Gustafson–Kessel fuzzy covariance.
    Fuzzified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcmParams<T> {
    pub k: usize,
    pub fuzzifier: T,
    pub max_iter: usize,
    pub tol: T,
    pub seed: u64,
    pub metric: Metric<T>,
    /// Relative covariance ridge ε.
    pub regularization: T,
    pub covariance_weights: CovarianceWeights,
}

impl<T: Scalar> FcmParams<T> {
    pub fn new(k: usize, metric: Metric<T>, seed: u64) -> Self {
        Self {
            k,
            fuzzifier: T::lit(2.0),
            max_iter: 100,
            tol: T::lit(1e-5),
            seed,
            metric,
            regularization: T::lit(1e-6),
            covariance_weights: CovarianceWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Param(format!("k must be >= 2, got {}", self.k)));
        }
        if !(self.fuzzifier > T::one()) || !self.fuzzifier.is_finite() {
            return Err(Error::Param(format!(
                "fuzzifier must be > 1, got {}",
                self.fuzzifier
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Param("max_iter must be positive".into()));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::Param(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.regularization > T::zero()) {
            return Err(Error::Param(format!(
                "regularization must be positive, got {}",
                self.regularization
            )));
        }
        if let Metric::HellingerGamma { looks } = self.metric {
            if !(looks > T::zero()) || !looks.is_finite() {
                return Err(Error::Param(format!("looks must be positive, got {looks}")));
            }
        }
        Ok(())
    }
}

/// `k × N` fuzzy memberships; every column sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionMatrix<T> {
    u: Array2<T>,
}

impl<T: Scalar> PartitionMatrix<T> {
    pub fn from_array(u: Array2<T>) -> Result<Self> {
        let p = Self { u };
        let err = p.max_column_error();
        if err > 1e-9 || p.u.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::Data(format!(
                "not a partition matrix (column error {err:e})"
            )));
        }
        Ok(p)
    }

    pub fn uniform(k: usize, n: usize) -> Self {
        Self {
            u: Array2::from_elem((k, n), T::one() / T::from_count(k)),
        }
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.u.view()
    }

    pub fn clusters(&self) -> usize {
        self.u.nrows()
    }

    pub fn samples(&self) -> usize {
        self.u.ncols()
    }

    pub fn get(&self, cluster: usize, sample: usize) -> T {
        self.u[[cluster, sample]]
    }

    /// Largest `|Σ_i μ_ij − 1|` over columns.
    pub fn max_column_error(&self) -> f64 {
        self.u
            .axis_iter(Axis(1))
            .map(|c| (c.iter().copied().sum::<T>().as_f64() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Argmax per column; ties go to the lowest cluster index.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.u
            .axis_iter(Axis(1))
            .map(|c| {
                let mut best = 0;
                for i in 1..c.len() {
                    if c[i] > c[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    fn max_abs_diff(&self, other: &Self) -> T {
        self.u
            .iter()
            .zip(other.u.iter())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// `v^e` with the common exponents 1 and 2 done exactly.
#[inline]
fn pow<T: Scalar>(v: T, e: T) -> T {
    if e == T::one() {
        v
    } else if e == T::lit(2.0) {
        v * v
    } else {
        v.powf(e)
    }
}

/// Memberships from a `k × N` matrix of squared distances.
///
/// A column with an exact zero gives full membership to the first cluster at
/// zero distance.
pub fn update_memberships<T: Scalar>(d: ArrayView2<'_, T>, fuzzifier: T) -> PartitionMatrix<T> {
    let (k, n) = d.dim();
    let expo = (fuzzifier - T::one()).recip();
    let mut u = Array2::<T>::zeros((k, n));
    for j in 0..n {
        let col = d.column(j);
        if let Some(z) = col.iter().position(|&v| v <= T::zero()) {
            u[[z, j]] = T::one();
            continue;
        }
        // μ_ij ∝ D_ij^(-1/(m-1)); scale by the smallest distance first
        let dmin = col.iter().copied().fold(T::infinity(), T::min);
        let mut total = T::zero();
        for i in 0..k {
            let w = pow(dmin / col[i], expo);
            u[[i, j]] = w;
            total = total + w;
        }
        for i in 0..k {
            u[[i, j]] = u[[i, j]] / total;
        }
    }
    PartitionMatrix { u }
}

/// Per-cluster parameters of one FCM state.
#[derive(Debug, Clone, PartialEq)]
pub struct FcmModel<T> {
    /// `k × d` cluster centers; for the gamma metric the single column holds
    /// the cluster mean `L·θ_i`.
    pub centers: Array2<T>,
    /// Regularized covariances (adaptive Mahalanobis only).
    pub covariances: Option<Vec<Array2<T>>>,
    /// Gamma scales `θ_i` (Hellinger gamma only).
    pub scales: Option<Vec<T>>,
}

impl<T: Scalar> FcmModel<T> {
    pub fn clusters(&self) -> usize {
        self.centers.nrows()
    }

    /// Initial model with centers at the given sample indices.
    pub fn seeded(x: ArrayView2<'_, T>, indices: &[usize], metric: &Metric<T>) -> Result<Self> {
        let d = x.ncols();
        let mut centers = Array2::zeros((indices.len(), d));
        for (i, &idx) in indices.iter().enumerate() {
            if idx >= x.nrows() {
                return Err(Error::Param(format!("initial index {idx} out of range")));
            }
            centers.row_mut(i).assign(&x.row(idx));
        }
        Ok(match metric {
            Metric::Euclidean => Self {
                centers,
                covariances: None,
                scales: None,
            },
            Metric::AdaptiveMahalanobis => Self {
                centers,
                covariances: Some(vec![Array2::eye(d); indices.len()]),
                scales: None,
            },
            Metric::HellingerGamma { looks } => {
                let scales = centers.column(0).iter().map(|&c| c / *looks).collect();
                Self {
                    centers,
                    covariances: None,
                    scales: Some(scales),
                }
            }
        })
    }
}

/// Squared-distance evaluator for one cluster.
enum Kernel<T> {
    Euclidean,
    Mahalanobis(Mahalanobis<T>),
    Gamma { scale: T, looks: T },
}

impl<T: Scalar> Kernel<T> {
    fn build(model: &FcmModel<T>, i: usize, metric: &Metric<T>) -> Result<Self> {
        Ok(match metric {
            Metric::Euclidean => Kernel::Euclidean,
            Metric::AdaptiveMahalanobis => {
                let cov = &model
                    .covariances
                    .as_ref()
                    .ok_or_else(|| Error::Param("model lacks covariances".into()))?[i];
                Kernel::Mahalanobis(Mahalanobis::new(cov, true)?)
            }
            Metric::HellingerGamma { looks } => Kernel::Gamma {
                scale: model
                    .scales
                    .as_ref()
                    .ok_or_else(|| Error::Param("model lacks gamma scales".into()))?[i],
                looks: *looks,
            },
        })
    }

    #[inline]
    fn eval(&self, x: &[T], center: &[T], diff: &mut [T]) -> T {
        match self {
            Kernel::Euclidean => x.iter().zip(center).map(|(&a, &b)| (a - b) * (a - b)).sum(),
            Kernel::Mahalanobis(m) => {
                for ((o, &a), &b) in diff.iter_mut().zip(x).zip(center) {
                    *o = a - b;
                }
                m.eval_diff_slice(diff)
            }
            Kernel::Gamma { scale, looks } => hellinger_sq_unchecked(x[0] / *looks, *scale, *looks),
        }
    }
}

/// `k × N` squared distances between samples and the model's clusters.
pub fn distances<T: Scalar>(
    x: ArrayView2<'_, T>,
    model: &FcmModel<T>,
    metric: &Metric<T>,
) -> Result<Array2<T>> {
    let k = model.clusters();
    let d = x.ncols();
    let x = x.as_standard_layout();
    let rows = x.as_slice().expect("standard layout");
    let mut out = Array2::zeros((k, x.nrows()));
    let mut diff = vec![T::zero(); d];
    for i in 0..k {
        let kernel = Kernel::build(model, i, metric)?;
        let c = model.centers.row(i).to_vec();
        for (o, row) in out.row_mut(i).iter_mut().zip(rows.chunks_exact(d.max(1))) {
            *o = kernel.eval(row, &c, &mut diff);
        }
    }
    Ok(out)
}

/// `Σ_ij μ_ij^m D_ij` under the active metric.
pub fn fcm_objective<T: Scalar>(
    x: ArrayView2<'_, T>,
    u: &PartitionMatrix<T>,
    model: &FcmModel<T>,
    params: &FcmParams<T>,
) -> Result<T> {
    let d = distances(x, model, &params.metric)?;
    Ok(u.u
        .iter()
        .zip(d.iter())
        .map(|(&m, &dist)| pow(m, params.fuzzifier) * dist)
        .sum())
}

fn cluster_distances<T: Scalar>(
    x: ArrayView2<'_, T>,
    kernel: &Kernel<T>,
    center: ArrayView1<'_, T>,
) -> Vec<T> {
    let d = x.ncols();
    let x = x.as_standard_layout();
    let rows = x.as_slice().expect("standard layout");
    let c = center.to_vec();
    let mut diff = vec![T::zero(); d];
    rows.chunks_exact(d.max(1))
        .map(|row| kernel.eval(row, &c, &mut diff))
        .collect()
}

fn regularize<T: Scalar>(cov: &mut Array2<T>, eps: T) {
    let d = cov.nrows();
    let ridge = eps * trace(cov.view()) / T::from_count(d) + T::lit(COVARIANCE_FLOOR);
    for i in 0..d {
        cov[[i, i]] = cov[[i, i]] + ridge;
    }
}

/// Closed-form model refit from memberships.
///
/// Centers are `μ^m`-weighted means. Covariances use the configured weights
/// and are ridge-regularized `Σ + ε·tr(Σ)/d·I + 1e−12·I`. Gamma scales are
/// `center / L`. An empty cluster is re-seeded at the sample whose largest
/// membership is smallest.
pub fn update_model<T: Scalar>(
    x: ArrayView2<'_, T>,
    u: &PartitionMatrix<T>,
    params: &FcmParams<T>,
) -> Result<FcmModel<T>> {
    update_model_tracked(x, u, params).map(|(m, _)| m)
}

/// Same as [`update_model`], also reporting which clusters were re-seeded.
fn update_model_tracked<T: Scalar>(
    x: ArrayView2<'_, T>,
    u: &PartitionMatrix<T>,
    params: &FcmParams<T>,
) -> Result<(FcmModel<T>, Vec<bool>)> {
    let (n, d) = x.dim();
    let k = u.clusters();
    if u.samples() != n {
        return Err(Error::Shape(format!(
            "partition over {} samples for {n} data rows",
            u.samples()
        )));
    }
    let fuzzy = u.u.mapv(|v| pow(v, params.fuzzifier));
    let mut centers = Array2::<T>::zeros((k, d));
    let mut reseeded = vec![false; k];
    let mut reseed_at: Option<usize> = None;
    for i in 0..k {
        let w = fuzzy.row(i);
        let mass: T = w.iter().copied().sum();
        if mass.as_f64() < EMPTY_CLUSTER_MASS || u.u.row(i).sum().as_f64() < EMPTY_CLUSTER_MASS {
            let idx = *reseed_at.get_or_insert_with(|| least_claimed_sample(u));
            centers.row_mut(i).assign(&x.row(idx));
            reseeded[i] = true;
            continue;
        }
        let mut c = Array1::<T>::zeros(d);
        for (row, &wj) in x.axis_iter(Axis(0)).zip(w.iter()) {
            c.scaled_add(wj, &row);
        }
        centers.row_mut(i).assign(&c.mapv(|v| v / mass));
    }

    let covariances = match params.metric {
        Metric::AdaptiveMahalanobis => {
            let mut covs = Vec::with_capacity(k);
            for i in 0..k {
                let mut cov = if reseeded[i] {
                    Array2::eye(d)
                } else {
                    let w = match params.covariance_weights {
                        CovarianceWeights::Membership => u.u.row(i),
                        CovarianceWeights::Fuzzified => fuzzy.row(i),
                    };
                    weighted_covariance(x, w, centers.row(i))
                };
                regularize(&mut cov, params.regularization);
                #[cfg(debug_assertions)]
                debug_assert!(
                    Cholesky::new(cov.view()).is_ok(),
                    "covariance not positive definite after regularization"
                );
                covs.push(cov);
            }
            Some(covs)
        }
        _ => None,
    };

    let scales = match params.metric {
        Metric::HellingerGamma { looks } => {
            Some(centers.column(0).iter().map(|&c| c / looks).collect::<Vec<_>>())
        }
        _ => None,
    };

    Ok((
        FcmModel {
            centers,
            covariances,
            scales,
        },
        reseeded,
    ))
}

fn least_claimed_sample<T: Scalar>(u: &PartitionMatrix<T>) -> usize {
    let mut best = 0;
    let mut best_val = T::infinity();
    for (j, col) in u.u.axis_iter(Axis(1)).enumerate() {
        let m = col.iter().copied().fold(T::neg_infinity(), T::max);
        if m < best_val {
            best_val = m;
            best = j;
        }
    }
    best
}

/// `Σ_j w_j (x_j − c)(x_j − c)ᵀ / Σ_j w_j`.
pub fn weighted_covariance<T: Scalar>(
    x: ArrayView2<'_, T>,
    w: ArrayView1<'_, T>,
    center: ArrayView1<'_, T>,
) -> Array2<T> {
    let d = x.ncols();
    let mut cov = Array2::<T>::zeros((d, d));
    let mut diff = vec![T::zero(); d];
    let mut total = T::zero();
    for (row, &wj) in x.axis_iter(Axis(0)).zip(w.iter()) {
        total = total + wj;
        for a in 0..d {
            diff[a] = row[a] - center[a];
        }
        for a in 0..d {
            let s = wj * diff[a];
            for b in 0..=a {
                cov[[a, b]] = cov[[a, b]] + s * diff[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[[a, b]] / total;
            cov[[a, b]] = v;
            cov[[b, a]] = v;
        }
    }
    cov
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcmResult<T> {
    pub memberships: PartitionMatrix<T>,
    pub model: FcmModel<T>,
    /// Argmax of each membership column, ties to the lowest index.
    pub labels: Vec<usize>,
    /// Objective after every iteration.
    pub objective: Vec<T>,
    /// Largest column-sum error of `U` seen over all iterations.
    pub max_column_error: f64,
    pub iterations: usize,
    pub converged: bool,
    /// All samples identical: one effective cluster, uniform memberships.
    pub degenerate: bool,
}

impl<T: Scalar> FcmResult<T> {
    pub fn covariances(&self) -> Option<&[Array2<T>]> {
        self.model.covariances.as_deref()
    }

    pub fn centers(&self) -> &Array2<T> {
        &self.model.centers
    }
}

fn check_data<T: Scalar>(x: ArrayView2<'_, T>, params: &FcmParams<T>) -> Result<()> {
    params.validate()?;
    let (n, d) = x.dim();
    if d == 0 {
        return Err(Error::Shape("data has no features".into()));
    }
    if n < params.k {
        return Err(Error::Data(format!("{n} samples for k = {}", params.k)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite sample".into()));
    }
    if let Metric::HellingerGamma { .. } = params.metric {
        if d != 1 {
            return Err(Error::Shape(format!("gamma metric needs 1-D data, got d = {d}")));
        }
        if x.iter().any(|&v| !(v > T::zero())) {
            return Err(Error::Data("gamma metric needs strictly positive data".into()));
        }
    }
    Ok(())
}

/// One seeded FCM run; initial centers are `k` distinct samples.
///
/// The Gaussian metrics draw them uniformly without replacement. The gamma
/// metric uses D² seeding instead: its distance saturates at 1, so a
/// backscatter level left without an initial center pulls on no center and
/// stays unclaimed for the whole run.
pub fn fcm_run<T: Scalar>(x: ArrayView2<'_, T>, params: &FcmParams<T>) -> Result<FcmResult<T>> {
    check_data(x, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init = match params.metric {
        Metric::HellingerGamma { looks } => d2_seeding(x.column(0), looks, params.k, &mut rng),
        _ => rand::seq::index::sample(&mut rng, x.nrows(), params.k).into_vec(),
    };
    fcm_run_from(x, params, &init)
}

/// `k` distinct indices, each drawn with probability proportional to its
/// squared Hellinger distance to the nearest one already drawn.
fn d2_seeding<T: Scalar, R: Rng>(x: ArrayView1<'_, T>, looks: T, k: usize, rng: &mut R) -> Vec<usize> {
    let n = x.len();
    let dist = |a: T, b: T| hellinger_sq_unchecked(a / looks, b / looks, looks).as_f64();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = x.iter().map(|&v| dist(v, x[chosen[0]])).collect();
    nearest[chosen[0]] = 0.0;
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (j, &w) in nearest.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(j);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // fewer distinct values than k: any index not taken yet
            let free: Vec<usize> = (0..n).filter(|j| !chosen.contains(j)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        for (j, w) in nearest.iter_mut().enumerate() {
            *w = w.min(dist(x[j], x[pick]));
        }
        nearest[pick] = 0.0;
    }
    chosen
}

/// FCM run with explicit initial center indices.
pub fn fcm_run_from<T: Scalar>(
    x: ArrayView2<'_, T>,
    params: &FcmParams<T>,
    init: &[usize],
) -> Result<FcmResult<T>> {
    check_data(x, params)?;
    if init.len() != params.k {
        return Err(Error::Param(format!(
            "{} initial indices for k = {}",
            init.len(),
            params.k
        )));
    }
    let (n, d) = x.dim();
    let first = x.row(0);
    if x.axis_iter(Axis(0)).all(|r| r == first) {
        return Ok(degenerate_result(x, params));
    }

    let mut model = FcmModel::seeded(x, init, &params.metric)?;
    let mut previous: Option<PartitionMatrix<T>> = None;
    let mut objective = Vec::new();
    let mut max_column_error = 0.0f64;
    let mut converged = false;
    let mut iterations = 0;

    let mut dist = distances(x, &model, &params.metric)?;
    for _ in 0..params.max_iter {
        iterations += 1;
        let u = update_memberships(dist.view(), params.fuzzifier);
        max_column_error = max_column_error.max(u.max_column_error());
        let (refit, next) = refit_monotone(x, &u, params, model)?;
        model = refit;
        dist = next;
        objective.push(
            u.u.iter()
                .zip(dist.iter())
                .map(|(&m, &dd)| pow(m, params.fuzzifier) * dd)
                .sum(),
        );
        let done = previous.as_ref().is_some_and(|p| u.max_abs_diff(p) < params.tol);
        previous = Some(u);
        if done {
            converged = true;
            break;
        }
    }
    let memberships = previous.expect("at least one iteration");
    debug_assert_eq!(memberships.samples(), n);
    debug_assert_eq!(model.centers.ncols(), d);
    Ok(FcmResult {
        labels: memberships.hard_labels(),
        memberships,
        model,
        objective,
        max_column_error,
        iterations,
        converged,
        degenerate: false,
    })
}

/// Model step that never raises the objective for fixed memberships.
///
/// Also returns the distances under the accepted model.
fn refit_monotone<T: Scalar>(
    x: ArrayView2<'_, T>,
    u: &PartitionMatrix<T>,
    params: &FcmParams<T>,
    old: FcmModel<T>,
) -> Result<(FcmModel<T>, Array2<T>)> {
    let (mut fresh, reseeded) = update_model_tracked(x, u, params)?;
    let weights = u.u.mapv(|v| pow(v, params.fuzzifier));
    let mut dist = Array2::zeros((fresh.clusters(), x.nrows()));
    let weighted = |row: &[T], i: usize| -> T { row.iter().zip(weights.row(i)).map(|(&d, &w)| w * d).sum() };
    match params.metric {
        // weighted mean is the exact minimizer
        Metric::Euclidean => {
            for i in 0..fresh.clusters() {
                let row = cluster_distances(x, &Kernel::Euclidean, fresh.centers.row(i));
                dist.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
            }
        }
        Metric::AdaptiveMahalanobis => {
            // the new center is optimal for any fixed metric; the refitted
            // covariance is kept only if it does not do worse than the old one
            let old_covs = old.covariances.expect("mahalanobis model");
            let mut new_covs = fresh.covariances.take().expect("mahalanobis model");
            for i in 0..fresh.clusters() {
                let c = fresh.centers.row(i);
                let mut row =
                    cluster_distances(x, &Kernel::Mahalanobis(Mahalanobis::new(&new_covs[i], true)?), c);
                if !reseeded[i] {
                    let prev =
                        cluster_distances(x, &Kernel::Mahalanobis(Mahalanobis::new(&old_covs[i], true)?), c);
                    if weighted(&row, i) > weighted(&prev, i) {
                        new_covs[i] = old_covs[i].clone();
                        row = prev;
                    }
                }
                dist.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
            }
            fresh.covariances = Some(new_covs);
        }
        Metric::HellingerGamma { looks } => {
            let old_scales = old.scales.expect("gamma model");
            let mut scales = fresh.scales.take().expect("gamma model");
            for i in 0..fresh.clusters() {
                let c = fresh.centers.row(i);
                let mut row = cluster_distances(
                    x,
                    &Kernel::Gamma {
                        scale: scales[i],
                        looks,
                    },
                    c,
                );
                if !reseeded[i] {
                    let prev = cluster_distances(
                        x,
                        &Kernel::Gamma {
                            scale: old_scales[i],
                            looks,
                        },
                        c,
                    );
                    if weighted(&row, i) > weighted(&prev, i) {
                        scales[i] = old_scales[i];
                        fresh.centers[[i, 0]] = old_scales[i] * looks;
                        row = prev;
                    }
                }
                dist.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
            }
            fresh.scales = Some(scales);
        }
    }
    Ok((fresh, dist))
}

fn degenerate_result<T: Scalar>(x: ArrayView2<'_, T>, params: &FcmParams<T>) -> FcmResult<T> {
    let (n, d) = x.dim();
    let k = params.k;
    let mut centers = Array2::zeros((k, d));
    for mut r in centers.axis_iter_mut(Axis(0)) {
        r.assign(&x.row(0));
    }
    let covariances = matches!(params.metric, Metric::AdaptiveMahalanobis).then(|| {
        let mut c = Array2::zeros((d, d));
        regularize(&mut c, params.regularization);
        vec![c; k]
    });
    let scales = match params.metric {
        Metric::HellingerGamma { looks } => Some(vec![x[[0, 0]] / looks; k]),
        _ => None,
    };
    let memberships = PartitionMatrix::uniform(k, n);
    FcmResult {
        labels: vec![0; n],
        max_column_error: memberships.max_column_error(),
        memberships,
        model: FcmModel {
            centers,
            covariances,
            scales,
        },
        objective: vec![T::zero()],
        iterations: 0,
        converged: true,
        degenerate: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::{Distribution, Gamma, StandardNormal};

    fn blobs(seed: u64, n_per: usize, centers: &[[f64; 2]], sd: f64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..n_per {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                rows.extend([ctr[0] + sd * a, ctr[1] + sd * b]);
                truth.push(c);
            }
        }
        (Array2::from_shape_vec((truth.len(), 2), rows).unwrap(), truth)
    }

    #[test]
    fn memberships_equidistant() {
        let d = array![[2.0], [2.0]];
        let u = update_memberships(d.view(), 2.0);
        assert_eq!(u.get(0, 0), 0.5);
        assert_eq!(u.get(1, 0), 0.5);
    }

    #[test]
    fn memberships_zero_distance() {
        let d = array![[3.0], [0.0], [0.0]];
        let u = update_memberships(d.view(), 2.0);
        assert_eq!(u.view().column(0).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn memberships_formula() {
        // direct evaluation: 1/(1 + 1/4 + 1/4) = 2/3, 1/(4 + 1 + 1) = 1/6
        let d = array![[1.0], [4.0], [4.0]];
        let u = update_memberships(d.view(), 2.0);
        assert_relative_eq!(u.get(0, 0), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(u.get(1, 0), 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(u.get(2, 0), 1.0 / 6.0, epsilon = 1e-15);
        // m = 3: exponent 1/2
        let u = update_memberships(d.view(), 3.0);
        let raw = [1.0, 0.5, 0.5];
        let s: f64 = raw.iter().sum();
        assert_relative_eq!(u.get(0, 0), raw[0] / s, epsilon = 1e-15);
    }

    #[test]
    fn hard_labels_tie_low() {
        let u = PartitionMatrix::from_array(array![[0.5, 0.2], [0.5, 0.8]]).unwrap();
        assert_eq!(u.hard_labels(), vec![0, 1]);
        assert!(PartitionMatrix::from_array(array![[0.5], [0.6]]).is_err());
    }

    #[test]
    fn one_hot_model_is_sample_statistics() {
        let x = array![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [10.0, 10.0], [12.0, 14.0]];
        let u = PartitionMatrix::from_array(array![[1.0, 1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, 1.0]])
            .unwrap();
        let p = FcmParams::new(2, Metric::AdaptiveMahalanobis, 0);
        let m = update_model(x.view(), &u, &p).unwrap();
        // direct sample statistics
        let c0 = [2.0 / 3.0, 2.0 / 3.0];
        assert_relative_eq!(m.centers[[0, 0]], c0[0], epsilon = 1e-12);
        assert_relative_eq!(m.centers[[1, 1]], 12.0, epsilon = 1e-12);
        let mut s = [[0.0; 2]; 2];
        for r in [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]] {
            for a in 0..2 {
                for b in 0..2 {
                    s[a][b] += (r[a] - c0[a]) * (r[b] - c0[b]) / 3.0;
                }
            }
        }
        let ridge = 1e-6 * (s[0][0] + s[1][1]) / 2.0 + 1e-12;
        let cov = &m.covariances.as_ref().unwrap()[0];
        assert_relative_eq!(cov[[0, 0]], s[0][0] + ridge, epsilon = 1e-12);
        assert_relative_eq!(cov[[0, 1]], s[0][1], epsilon = 1e-12);
        assert_relative_eq!(cov[[1, 1]], s[1][1] + ridge, epsilon = 1e-12);
    }

    #[test]
    fn uniform_memberships_collapse_centers() {
        let x = array![[0.0], [1.0], [5.0]];
        let u = PartitionMatrix::<f64>::uniform(2, 3);
        let m = update_model(x.view(), &u, &FcmParams::new(2, Metric::Euclidean, 0)).unwrap();
        assert_relative_eq!(m.centers[[0, 0]], 2.0, epsilon = 1e-12);
        assert_eq!(m.centers[[0, 0]], m.centers[[1, 0]]);
    }

    #[test]
    fn single_point_cluster_positive_definite() {
        let x = array![[1.0, 2.0], [5.0, 5.0], [6.0, 5.0]];
        let u = PartitionMatrix::from_array(array![[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]).unwrap();
        let m = update_model(x.view(), &u, &FcmParams::new(2, Metric::AdaptiveMahalanobis, 0)).unwrap();
        let cov = &m.covariances.unwrap()[0];
        assert_eq!(cov[[0, 1]], 0.0);
        assert_eq!(cov[[0, 0]], 1e-12);
        assert!(crate::linalg::Cholesky::new(cov.view()).is_ok());
    }

    #[test]
    fn empty_cluster_reseeded() {
        let x = array![[0.0], [1.0], [2.0], [10.0]];
        let u = PartitionMatrix::from_array(array![
            [1.0, 1.0, 0.6, 0.55],
            [0.0, 0.0, 0.4, 0.45],
            [0.0, 0.0, 0.0, 0.0]
        ])
        .unwrap();
        let m = update_model(x.view(), &u, &FcmParams::new(3, Metric::Euclidean, 0)).unwrap();
        assert_eq!(m.centers[[2, 0]], 10.0);
    }

    #[test]
    fn recovers_two_pairs_every_metric() {
        let x = array![[1.0], [1.1], [20.0], [20.5]];
        for metric in [
            Metric::Euclidean,
            Metric::AdaptiveMahalanobis,
            Metric::HellingerGamma { looks: 4.0 },
        ] {
            let r = fcm_run(x.view(), &FcmParams::new(2, metric, 3)).unwrap();
            assert_eq!(r.labels[0], r.labels[1], "{metric:?}");
            assert_eq!(r.labels[2], r.labels[3], "{metric:?}");
            assert_ne!(r.labels[0], r.labels[2], "{metric:?}");
            for j in 0..4 {
                let l = r.labels[j];
                assert!(r.memberships.get(l, j) > 0.99, "{metric:?} {j}");
            }
        }
    }

    #[test]
    fn coincident_initial_centers() {
        let x = array![[1.0f64, 1.0], [1.0, 1.0], [3.0, 0.0], [4.0, 1.0]];
        for metric in [Metric::Euclidean, Metric::AdaptiveMahalanobis] {
            let r = fcm_run_from(x.view(), &FcmParams::new(2, metric, 0), &[0, 1]).unwrap();
            assert!(r.memberships.view().iter().all(|v| v.is_finite()));
            assert!(r.objective.iter().all(|v| v.is_finite()));
            // sample 0 sits on both centers; the zero-distance rule hands it to
            // cluster 0, which breaks the symmetry
            assert_eq!(r.labels[0], 0);
        }
    }

    #[test]
    fn identical_data_flagged() {
        let x = Array2::from_elem((10, 2), 3.0f64);
        let r = fcm_run(x.view(), &FcmParams::new(3, Metric::AdaptiveMahalanobis, 0)).unwrap();
        assert!(r.degenerate);
        assert!(r
            .memberships
            .view()
            .iter()
            .all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(r.labels, vec![0; 10]);
    }

    #[test]
    fn input_errors() {
        let x = array![[1.0], [2.0]];
        assert!(fcm_run(x.view(), &FcmParams::new(3, Metric::Euclidean, 0)).is_err());
        let neg = array![[1.0], [-2.0], [3.0]];
        assert!(fcm_run(
            neg.view(),
            &FcmParams::new(2, Metric::HellingerGamma { looks: 1.0 }, 0)
        )
        .is_err());
        let two_d = array![[1.0, 1.0], [2.0, 2.0]];
        assert!(fcm_run(
            two_d.view(),
            &FcmParams::new(2, Metric::HellingerGamma { looks: 1.0 }, 0)
        )
        .is_err());
        let mut p = FcmParams::new(2, Metric::Euclidean, 0);
        p.fuzzifier = 1.0;
        assert!(fcm_run(x.view(), &p).is_err());
        p = FcmParams::new(1, Metric::Euclidean, 0);
        assert!(fcm_run(x.view(), &p).is_err());
    }

    #[test]
    fn objective_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Array2<f64> = Array2::from_shape_fn((30, 2), |_| rng.random_range(-3.0..3.0));
        let p = FcmParams::new(3, Metric::Euclidean, 1);
        let r = fcm_run(x.view(), &p).unwrap();
        // independent triple loop
        let mut j = 0.0;
        for i in 0..3 {
            for s in 0..30 {
                let d2: f64 = (0..2)
                    .map(|a| (x[[s, a]] - r.model.centers[[i, a]]).powi(2))
                    .sum();
                j += r.memberships.get(i, s).powi(2) * d2;
            }
        }
        assert_relative_eq!(*r.objective.last().unwrap(), j, epsilon = 1e-9);
        assert_relative_eq!(
            fcm_objective(x.view(), &r.memberships, &r.model, &p).unwrap(),
            j,
            epsilon = 1e-9
        );
    }

    #[test]
    fn objective_homogeneous_in_scale() {
        let x = array![[0.0f64, 0.0], [1.0, 2.0], [4.0, 4.0]];
        let u = PartitionMatrix::from_array(array![[0.7, 0.4, 0.1], [0.3, 0.6, 0.9]]).unwrap();
        let p = FcmParams::new(2, Metric::Euclidean, 0);
        let m = update_model(x.view(), &u, &p).unwrap();
        let j1 = fcm_objective(x.view(), &u, &m, &p).unwrap();
        let x2 = &x * 2.0;
        let mut m2 = m.clone();
        m2.centers = &m.centers * 2.0;
        let j2 = fcm_objective(x2.view(), &u, &m2, &p).unwrap();
        assert_relative_eq!(j2, 4.0 * j1, epsilon = 1e-12);
        // one-hot at the centers
        let u = PartitionMatrix::from_array(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let x = array![[1.0, 1.0], [5.0, 2.0]];
        let m = update_model(x.view(), &u, &p).unwrap();
        assert_eq!(fcm_objective(x.view(), &u, &m, &p).unwrap(), 0.0);
    }

    #[test]
    fn separated_blobs_match_nearest_mean() {
        let (x, truth) = blobs(9, 100, &[[0.0, 0.0], [15.0, 0.0]], 1.0);
        let r = fcm_run(x.view(), &FcmParams::new(2, Metric::Euclidean, 5)).unwrap();
        // oracle: nearest sample mean of the planted groups
        let mean = |g: usize| {
            let rows: Vec<_> = (0..x.nrows()).filter(|&i| truth[i] == g).collect();
            let m0 = rows.iter().map(|&i| x[[i, 0]]).sum::<f64>() / rows.len() as f64;
            let m1 = rows.iter().map(|&i| x[[i, 1]]).sum::<f64>() / rows.len() as f64;
            (m0, m1)
        };
        let (a, b) = (mean(0), mean(1));
        let flip = r.labels[0];
        for i in 0..x.nrows() {
            let da = (x[[i, 0]] - a.0).powi(2) + (x[[i, 1]] - a.1).powi(2);
            let db = (x[[i, 0]] - b.0).powi(2) + (x[[i, 1]] - b.1).powi(2);
            let nearest = usize::from(db < da);
            assert_eq!(r.labels[i] ^ flip, nearest);
        }
    }

    #[test]
    fn deterministic_and_permutation_equivariant() {
        let (x, _) = blobs(2, 40, &[[0.0, 0.0], [4.0, 1.0], [1.0, 5.0]], 1.2);
        let p = FcmParams::new(3, Metric::AdaptiveMahalanobis, 17);
        let a = fcm_run(x.view(), &p).unwrap();
        let b = fcm_run(x.view(), &p).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.memberships, b.memberships);

        let n = x.nrows();
        let init = [5usize, 50, 100];
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect(); // new[i] = old[perm[i]]
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let xp = x.select(Axis(0), &perm);
        let init_p: Vec<usize> = init.iter().map(|&i| inv[i]).collect();
        let r = fcm_run_from(x.view(), &p, &init).unwrap();
        let rp = fcm_run_from(xp.view(), &p, &init_p).unwrap();
        for j in 0..n {
            for i in 0..3 {
                let a = r.memberships.get(i, perm[j]);
                let b = rp.memberships.get(i, j);
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gamma_metric_separates_populations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut v = Vec::new();
        for mean in [1.0, 16.0] {
            let g = Gamma::new(5.0, mean / 5.0).unwrap();
            v.extend((0..200).map(|_| g.sample(&mut rng)));
        }
        let x = Array2::from_shape_vec((400, 1), v).unwrap();
        let r = fcm_run(
            x.view(),
            &FcmParams::new(2, Metric::HellingerGamma { looks: 5.0 }, 2),
        )
        .unwrap();
        let agree = (0..400)
            .filter(|&i| (r.labels[i] == r.labels[0]) == (i < 200))
            .count();
        assert!(agree >= 396, "{agree}");
        let scales = r.model.scales.unwrap();
        let mut s = scales.clone();
        s.sort_by(f64::total_cmp);
        // the Hellinger objective is not minimized by the mean, so only the
        // ordering and rough magnitude are fixed
        assert!(s[0] * 5.0 > 0.5 && s[0] * 5.0 < 2.0, "{s:?}");
        assert!(s[1] * 5.0 > 8.0 && s[1] * 5.0 < 24.0, "{s:?}");
    }

    #[test]
    fn f32_runs() {
        let x = array![[0.0f32, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]];
        let r = fcm_run(x.view(), &FcmParams::new(2, Metric::AdaptiveMahalanobis, 1)).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_ne!(r.labels[0], r.labels[2]);
    }
}
