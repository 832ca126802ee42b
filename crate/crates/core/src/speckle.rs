//! SAR speckle handling: enhanced Lee filtering and equivalent number of looks
//! estimation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{BandRole, Raster};
use crate::scalar::Scalar;

pub const ENL_MIN: f64 = 1.0;
pub const ENL_MAX: f64 = 100.0;
/// Default tile side for [`estimate_enl`].
pub const DEFAULT_ENL_TILE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeckleParams<T = f64> {
    /// Odd window side, at least 3.
    pub window_side: usize,
    /// Number of looks L of the speckle.
    pub looks: T,
    /// Damping factor K of the weighting branch.
    pub damping: T,
}

impl<T: Scalar> SpeckleParams<T> {
    pub fn new(looks: T) -> Self {
        Self {
            window_side: 7,
            looks,
            damping: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_side < 3 || self.window_side.is_multiple_of(2) {
            return Err(Error::Param(format!(
                "speckle window side must be odd and >= 3, got {}",
                self.window_side
            )));
        }
        if !(self.looks > T::zero()) || !self.looks.is_finite() {
            return Err(Error::Param(format!(
                "looks must be positive, got {}",
                self.looks
            )));
        }
        if !(self.damping > T::zero()) || !self.damping.is_finite() {
            return Err(Error::Param(format!(
                "damping must be positive, got {}",
                self.damping
            )));
        }
        Ok(())
    }

    /// Speckle coefficient of variation of a homogeneous area, `1/√L`.
    pub fn cu(&self) -> T {
        self.looks.sqrt().recip()
    }

    /// Upper coefficient of variation bound, `√(1 + 2/L)`.
    pub fn cmax(&self) -> T {
        (T::one() + T::lit(2.0) / self.looks).sqrt()
    }
}

/// Enhanced Lee response for one pixel given its window statistics.
///
/// With `ci = std/mean`:
/// * `ci <= cu`: homogeneous, returns the local mean;
/// * `ci >= cmax`: point target, returns the pixel unchanged;
/// * otherwise `mean·w + x·(1 − w)` with `w = exp(−K (ci − cu) / (cmax − ci))`.
pub fn enhanced_lee_response<T: Scalar>(x: T, mean: T, std: T, p: &SpeckleParams<T>) -> T {
    if !(mean > T::zero()) {
        // all-zero window (intensities are nonnegative)
        return if std > T::zero() { x } else { mean };
    }
    let ci = std / mean;
    let cu = p.cu();
    let cmax = p.cmax();
    if ci <= cu {
        mean
    } else if ci >= cmax {
        x
    } else {
        let w = (-p.damping * (ci - cu) / (cmax - ci)).exp();
        x + w * (mean - x)
    }
}

/// Filters a row-major `width × height` intensity plane.
///
/// Windows at the border shrink to their intersection with the image.
pub fn enhanced_lee_plane<T: Scalar>(
    plane: &[T],
    width: usize,
    height: usize,
    p: &SpeckleParams<T>,
) -> Result<Vec<T>> {
    p.validate()?;
    if plane.len() != width * height {
        return Err(Error::Shape(format!(
            "{} samples for a {width}x{height} plane",
            plane.len()
        )));
    }
    if p.window_side > width || p.window_side > height {
        return Err(Error::Shape(format!(
            "{}x{} window larger than {width}x{height} image",
            p.window_side, p.window_side
        )));
    }
    let half = p.window_side / 2;
    let mut out = vec![T::zero(); plane.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let y0 = y.saturating_sub(half);
        let y1 = (y + half + 1).min(height);
        for (x, o) in row.iter_mut().enumerate() {
            let x0 = x.saturating_sub(half);
            let x1 = (x + half + 1).min(width);
            let n = T::from_count((y1 - y0) * (x1 - x0));
            let mut sum = T::zero();
            for yy in y0..y1 {
                sum = sum + plane[yy * width + x0..yy * width + x1].iter().copied().sum::<T>();
            }
            let mean = sum / n;
            let mut ss = T::zero();
            for yy in y0..y1 {
                for &v in &plane[yy * width + x0..yy * width + x1] {
                    let d = v - mean;
                    ss = ss + d * d;
                }
            }
            let std = (ss / n).sqrt();
            *o = enhanced_lee_response(plane[y * width + x], mean, std, p);
        }
    });
    Ok(out)
}

/// Filters a single-band SAR intensity raster.
pub fn enhanced_lee(r: &Raster, p: &SpeckleParams<f64>) -> Result<Raster> {
    check_sar(r)?;
    let plane: Vec<f64> = r.data().iter().map(|&v| v as f64).collect();
    let out = enhanced_lee_plane(&plane, r.width(), r.height(), p)?;
    Raster::single(
        r.width(),
        r.height(),
        BandRole::SarIntensity,
        out.into_iter().map(|v| v as f32).collect(),
    )
}

fn check_sar(r: &Raster) -> Result<()> {
    if r.bands() != 1 || r.roles()[0] != BandRole::SarIntensity {
        return Err(Error::Param(format!(
            "expected one sar_intensity band, got roles {:?}",
            r.roles()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnlEstimate {
    /// Estimated looks, clamped to `[ENL_MIN, ENL_MAX]`.
    pub looks: f64,
    /// Set when the estimate hit a clamp bound or a zero-variance tile
    /// dominated the selection.
    pub warning: bool,
    pub tiles_used: usize,
}

/// Equivalent number of looks from the most homogeneous tiles.
///
/// The plane is cut into non-overlapping `tile_side²` tiles; for each the
/// coefficient of variation (unbiased variance) is computed and the tenth of
/// tiles with the lowest CV are averaged as `mean² / variance`.
pub fn estimate_enl_plane<T: Scalar>(
    plane: &[T],
    width: usize,
    height: usize,
    tile_side: usize,
) -> Result<EnlEstimate> {
    if tile_side < 8 {
        return Err(Error::Param(format!(
            "ENL tile side must be >= 8, got {tile_side}"
        )));
    }
    if width < tile_side || height < tile_side {
        return Err(Error::Shape(format!(
            "{width}x{height} image smaller than one {tile_side}px tile"
        )));
    }
    let n = (tile_side * tile_side) as f64;
    // (cv, ratio) per tile; zero variance maps to (0, inf)
    let mut tiles: Vec<(f64, f64)> = Vec::new();
    for ty in 0..height / tile_side {
        for tx in 0..width / tile_side {
            let rows = (ty * tile_side..(ty + 1) * tile_side)
                .map(|y| &plane[y * width + tx * tile_side..y * width + (tx + 1) * tile_side]);
            let sum: f64 = rows.clone().flatten().map(|v| v.as_f64()).sum();
            let mean = sum / n;
            let ss: f64 = rows
                .flatten()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum();
            let var = ss / (n - 1.0);
            if var <= 0.0 {
                tiles.push((0.0, f64::INFINITY));
            } else if mean > 0.0 {
                tiles.push((var.sqrt() / mean, mean * mean / var));
            }
        }
    }
    if tiles.is_empty() {
        return Err(Error::Data("no tile with positive mean intensity".into()));
    }
    tiles.sort_by(|a, b| a.0.total_cmp(&b.0));
    let take = ((tiles.len() as f64) * 0.1).ceil().max(1.0) as usize;
    let raw = tiles[..take].iter().map(|t| t.1).sum::<f64>() / take as f64;
    let looks = raw.clamp(ENL_MIN, ENL_MAX);
    Ok(EnlEstimate {
        looks,
        warning: !raw.is_finite() || raw != looks,
        tiles_used: take,
    })
}

pub fn estimate_enl(r: &Raster, tile_side: usize) -> Result<EnlEstimate> {
    check_sar(r)?;
    let est = estimate_enl_plane(r.data(), r.width(), r.height(), tile_side)?;
    if est.warning {
        log::warn!(
            "ENL estimate clamped to {} (degenerate or extreme tiles)",
            est.looks
        );
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    fn gamma_field(w: usize, h: usize, looks: f64, mean: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Gamma::new(looks, mean / looks).unwrap();
        (0..w * h).map(|_| g.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_window_returns_constant() {
        let plane = vec![3.25f32; 81];
        let p = SpeckleParams::new(4.0f32);
        let out = enhanced_lee_plane(&plane, 9, 9, &p).unwrap();
        assert!(out.iter().all(|&v| v == 3.25));
    }

    #[test]
    fn point_target_preserved() {
        let mut plane = vec![0.5f64; 15 * 15];
        plane[7 * 15 + 7] = 1234.5678;
        let p = SpeckleParams::new(3.0);
        let out = enhanced_lee_plane(&plane, 15, 15, &p).unwrap();
        assert_eq!(out[7 * 15 + 7], 1234.5678);
    }

    /// Hand-built 7×7 window landing in the weighted branch, checked against a
    /// direct evaluation of the three-branch rule.
    #[test]
    fn weighted_branch_matches_scalar_formula() {
        let looks = 4.0f64;
        let (cu, cmax) = (0.5, 1.5f64.sqrt());
        // 24 samples at 1.0, 25 at b; pick b so that the CV sits mid-way
        let target = 0.5 * (cu + cmax);
        let mut b = 1.0f64;
        for _ in 0..200 {
            let vals: Vec<f64> = (0..49).map(|i| if i < 24 { 1.0 } else { b }).collect();
            let m = vals.iter().sum::<f64>() / 49.0;
            let s = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 49.0).sqrt();
            let ci = s / m;
            b *= if ci < target { 1.01 } else { 0.995 };
        }
        // centre pixel (index 24) is one of the b samples
        let plane: Vec<f64> = (0..49).map(|i| if i < 24 { 1.0 } else { b }).collect();
        let m = plane.iter().sum::<f64>() / 49.0;
        let s = (plane.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 49.0).sqrt();
        let ci = s / m;
        assert!(ci > cu && ci < cmax, "ci {ci}");
        let x = plane[24];
        let w = (-(ci - cu) / (cmax - ci)).exp();
        let expected = m * w + x * (1.0 - w);

        let p = SpeckleParams::new(looks);
        let out = enhanced_lee_plane(&plane, 7, 7, &p).unwrap();
        assert!((out[24] - expected).abs() < 1e-12, "{} vs {expected}", out[24]);
        assert!(out[24] >= x.min(m) && out[24] <= x.max(m));
    }

    #[test]
    fn border_windows_shrink() {
        // 3x3 window, corner pixel uses its 2x2 neighbourhood
        let plane = vec![1.0, 2.0, 9.0, 3.0, 4.0, 9.0, 9.0, 9.0, 9.0];
        let p = SpeckleParams {
            window_side: 3,
            looks: 1e6,
            damping: 1.0,
        };
        // huge L makes cu ≈ 0 and cmax ≈ 1: corner CV of {1,2,3,4} is ~0.447
        let out = enhanced_lee_plane(&plane, 3, 3, &p).unwrap();
        let (m, s) = (2.5f64, 1.25f64.sqrt());
        let expected = enhanced_lee_response(1.0, m, s, &p);
        assert!((out[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn weighted_output_bounded() {
        let plane = gamma_field(40, 40, 2.0, 10.0, 9);
        let p = SpeckleParams::new(2.0);
        let out = enhanced_lee_plane(&plane, 40, 40, &p).unwrap();
        for (i, (&x, &o)) in plane.iter().zip(&out).enumerate() {
            let (xx, yy) = (i % 40, i / 40);
            let (x0, x1) = (xx.saturating_sub(3), (xx + 4).min(40));
            let (y0, y1) = (yy.saturating_sub(3), (yy + 4).min(40));
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += plane[y * 40 + x];
                }
            }
            let m = sum / ((x1 - x0) * (y1 - y0)) as f64;
            assert!(o >= x.min(m) - 1e-9 && o <= x.max(m) + 1e-9);
        }
    }

    #[test]
    fn filter_preserves_mean_and_reduces_variance() {
        let plane = gamma_field(256, 256, 5.0, 10.0, 1);
        let out = enhanced_lee_plane(&plane, 256, 256, &SpeckleParams::new(5.0)).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        assert!((mean(&out) / mean(&plane) - 1.0).abs() < 0.01);
        assert!(var(&out) < 0.5 * var(&plane));
    }

    #[test]
    fn rejects_bad_params_and_inputs() {
        let plane = vec![1.0f64; 25];
        for p in [
            SpeckleParams {
                window_side: 4,
                looks: 1.0,
                damping: 1.0,
            },
            SpeckleParams {
                window_side: 1,
                looks: 1.0,
                damping: 1.0,
            },
            SpeckleParams {
                window_side: 3,
                looks: 0.0,
                damping: 1.0,
            },
            SpeckleParams {
                window_side: 3,
                looks: 1.0,
                damping: -1.0,
            },
            SpeckleParams {
                window_side: 7,
                looks: 1.0,
                damping: 1.0,
            },
        ] {
            assert!(enhanced_lee_plane(&plane, 5, 5, &p).is_err(), "{p:?}");
        }
        let opt = Raster::single(5, 5, BandRole::Optical, vec![1.0; 25]).unwrap();
        assert!(enhanced_lee(&opt, &SpeckleParams::new(1.0)).is_err());
    }

    #[test]
    fn enl_constant_image_clamps() {
        let plane = vec![2.0f64; 64 * 64];
        let e = estimate_enl_plane(&plane, 64, 64, 16).unwrap();
        assert_eq!(e.looks, ENL_MAX);
        assert!(e.warning);
    }

    #[test]
    fn enl_gamma_l5() {
        let plane = gamma_field(512, 512, 5.0, 20.0, 5);
        let e = estimate_enl_plane(&plane, 512, 512, DEFAULT_ENL_TILE).unwrap();
        assert!((4.5..=5.5).contains(&e.looks), "{e:?}");
        assert!(!e.warning);
    }

    #[test]
    fn enl_two_region_scene_tracks_homogeneous_part() {
        // left half homogeneous L=3 speckle; right half textured (backscatter
        // itself varies), so its tiles have larger CV and are not selected
        let (w, h) = (512usize, 512usize);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let speckle = Gamma::new(3.0, 1.0 / 3.0).unwrap();
        let texture = Gamma::new(1.5, 1.0 / 1.5).unwrap();
        let plane: Vec<f64> = (0..w * h)
            .map(|i| {
                let x = i % w;
                let rcs = if x < w / 2 {
                    10.0
                } else {
                    10.0 * texture.sample(&mut rng)
                };
                rcs * speckle.sample(&mut rng)
            })
            .collect();
        let e = estimate_enl_plane(&plane, w, h, DEFAULT_ENL_TILE).unwrap();
        assert!((2.6..=3.4).contains(&e.looks), "{e:?}");
    }

    #[test]
    fn enl_errors() {
        let plane = vec![1.0f64; 100];
        assert!(estimate_enl_plane(&plane, 10, 10, 7).is_err());
        assert!(estimate_enl_plane(&plane, 10, 10, 16).is_err());
    }
}
