//! Statistical models for the two sensors and the distances derived from them.
//!
//! Optical feature vectors are modelled as multivariate Gaussian per cluster
//! and compared with the Mahalanobis distance. Single-polarisation SAR
//! intensity is modelled as gamma with a shape (number of looks) shared by
//! all clusters, so a cluster is fully described by its mean `L·θ`; clusters
//! are compared with the Hellinger distance. A log-normal SAR model makes the
//! log intensity Gaussian, which is what allows optical channels and
//! `log(SAR)` to be stacked into one Gaussian feature vector.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::raster::{BandRole, Raster, RasterHeader};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCluster<T> {
    pub mean: Array1<T>,
    pub covariance: Array2<T>,
}

impl<T: Scalar> GaussianCluster<T> {
    pub fn new(mean: Array1<T>, covariance: Array2<T>) -> Result<Self> {
        let d = mean.len();
        if covariance.dim() != (d, d) {
            return Err(Error::Shape(format!(
                "covariance {:?} for a {d}-dimensional mean",
                covariance.dim()
            )));
        }
        let tol = T::lit(1e-9);
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (covariance[[i, j]], covariance[[j, i]]);
                if (a - b).abs() > tol * (T::one() + a.abs().max(b.abs())) {
                    return Err(Error::Param("covariance is not symmetric".into()));
                }
            }
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Precomputed Mahalanobis evaluator for one cluster.
#[derive(Debug, Clone)]
pub struct Mahalanobis<T> {
    chol: Cholesky<T>,
    scale: T,
}

impl<T: Scalar> Mahalanobis<T> {
    /// `volume_normalized` multiplies the quadratic form by `det(Σ)^(1/d)`,
    /// which fixes the volume of the unit ball at that of the identity metric.
    pub fn new(covariance: &Array2<T>, volume_normalized: bool) -> Result<Self> {
        let chol = Cholesky::new(covariance.view())?;
        let scale = if volume_normalized {
            chol.det_root()
        } else {
            T::one()
        };
        Ok(Self { chol, scale })
    }

    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    /// Squared distance of a difference vector `x − μ`.
    pub fn eval_diff(&self, diff: ArrayView1<'_, T>) -> T {
        self.scale * self.chol.inv_quad_form(diff)
    }

    pub fn eval_diff_slice(&self, diff: &[T]) -> T {
        self.scale * self.chol.inv_quad_form_slice(diff)
    }
}

/// `(x − μ)ᵀ Σ⁻¹ (x − μ)`, optionally scaled by `det(Σ)^(1/d)`.
pub fn mahalanobis_sq<T: Scalar>(
    x: ArrayView1<'_, T>,
    c: &GaussianCluster<T>,
    volume_normalized: bool,
) -> Result<T> {
    if x.len() != c.dim() {
        return Err(Error::Shape(format!(
            "{}-vector against a {}-dimensional cluster",
            x.len(),
            c.dim()
        )));
    }
    let m = Mahalanobis::new(&c.covariance, volume_normalized)?;
    let diff = &x - &c.mean;
    Ok(m.eval_diff(diff.view()))
}

fn check_positive<T: Scalar>(name: &str, v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Param(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// Squared Hellinger distance between `Γ(L, θa)` and `Γ(L, θb)`.
///
/// Both share the shape `L`, so the Bhattacharyya coefficient has the closed
/// form `(2√(θa θb) / (θa + θb))^L`. Evaluated as
/// `−expm1(L · ln1p(−(√θa − √θb)² / (θa + θb)))` to stay accurate when the
/// scales are close.
pub fn hellinger_sq_gamma<T: Scalar>(theta_a: T, theta_b: T, looks: T) -> Result<T> {
    check_positive("theta_a", theta_a)?;
    check_positive("theta_b", theta_b)?;
    check_positive("looks", looks)?;
    Ok(hellinger_sq_unchecked(theta_a, theta_b, looks))
}

#[inline]
pub(crate) fn hellinger_sq_unchecked<T: Scalar>(theta_a: T, theta_b: T, looks: T) -> T {
    let gap = theta_a.sqrt() - theta_b.sqrt();
    let ln_bc = looks * (-(gap * gap) / (theta_a + theta_b)).ln_1p();
    (-ln_bc.exp_m1()).max(T::zero()).min(T::one())
}

/// Hellinger distance `√(1 − BC)` between two same-shape gamma laws.
pub fn hellinger_gamma<T: Scalar>(theta_a: T, theta_b: T, looks: T) -> Result<T> {
    Ok(hellinger_sq_gamma(theta_a, theta_b, looks)?.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaCluster<T> {
    pub scale: T,
    pub looks: T,
}

impl<T: Scalar> GammaCluster<T> {
    pub fn new(scale: T, looks: T) -> Result<Self> {
        check_positive("scale", scale)?;
        check_positive("looks", looks)?;
        Ok(Self { scale, looks })
    }

    /// Cluster with the given mean intensity.
    pub fn from_mean(mean: T, looks: T) -> Result<Self> {
        check_positive("looks", looks)?;
        Self::new(mean / looks, looks)
    }

    pub fn mean(&self) -> T {
        self.looks * self.scale
    }
}

pub fn gamma_mean<T: Scalar>(c: &GammaCluster<T>) -> T {
    c.mean()
}

/// Parameters of `log X ~ N(mu, sigma²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalParams<T> {
    pub mu: T,
    pub sigma: T,
}

impl<T: Scalar> LogNormalParams<T> {
    pub fn new(mu: T, sigma: T) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::Param(format!("mu must be finite, got {mu}")));
        }
        check_positive("sigma", sigma)?;
        Ok(Self { mu, sigma })
    }

    /// Linear-domain `(mean, variance)`.
    ///
    /// `mean = exp(mu + sigma²/2)`, `variance = mean² · (exp(sigma²) − 1)`.
    pub fn moments(&self) -> (T, T) {
        let s2 = self.sigma * self.sigma;
        let mean = (self.mu + s2 / T::lit(2.0)).exp();
        (mean, mean * mean * s2.exp_m1())
    }
}

pub fn lognormal_moments<T: Scalar>(p: &LogNormalParams<T>) -> (T, T) {
    p.moments()
}

/// Offset added to SAR intensity before taking logs: `1e-10 · max`, floored
/// at `1e-30`.
pub fn default_log_offset(max_intensity: f64) -> f64 {
    (1e-10 * max_intensity).max(1e-30)
}

/// Stacks optical bands with `log(sar + delta)` into one raster.
///
/// `delta` defaults to [`default_log_offset`] of the SAR maximum.
pub fn log_stack(opt: &Raster, sar: &Raster, delta: Option<f64>) -> Result<Raster> {
    if (opt.width(), opt.height()) != (sar.width(), sar.height()) {
        return Err(Error::Shape(format!(
            "optical {}x{} vs SAR {}x{}",
            opt.width(),
            opt.height(),
            sar.width(),
            sar.height()
        )));
    }
    if sar.bands() != 1 || sar.roles()[0] != BandRole::SarIntensity {
        return Err(Error::Param(format!(
            "SAR input must be one sar_intensity band, got {:?}",
            sar.roles()
        )));
    }
    if opt.roles().iter().any(|&r| r != BandRole::Optical) {
        return Err(Error::Param(format!(
            "optical input must have optical bands only, got {:?}",
            opt.roles()
        )));
    }
    let delta = match delta {
        Some(d) => {
            check_positive("delta", d)?;
            d
        }
        None => default_log_offset(sar.data().iter().fold(0.0f64, |m, &v| m.max(v as f64))),
    };
    let nb = opt.bands();
    let mut data = Vec::with_capacity(opt.data().len() + sar.data().len());
    for (px, &s) in opt.data().chunks_exact(nb).zip(sar.data()) {
        data.extend_from_slice(px);
        data.push(((s as f64) + delta).ln() as f32);
    }
    let mut roles = opt.roles().to_vec();
    roles.push(BandRole::StackedLog);
    Raster::new(RasterHeader::new(opt.width(), opt.height(), roles), data)
}
