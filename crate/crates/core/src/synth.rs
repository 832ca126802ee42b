//! Synthetic co-registered optical/SAR pairs with planted changes.
//!
//! Optical pixels are Gaussian around the class mean of the first date; SAR
//! intensities are gamma with `L` looks around the backscatter of the second
//! date's class. A pixel is changed when its class differs between the dates.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::kv;
use crate::linalg::Cholesky;
use crate::raster::{BandRole, Bounds, Mask, Raster, RasterHeader};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub optical_mean: Vec<f64>,
    /// Row-major `d × d`.
    pub optical_cov: Vec<f64>,
    pub sar_mean: f64,
    /// Areas painted with this class at the first date.
    pub regions: Vec<Bounds>,
}

impl ClassSpec {
    /// Class with independent bands of equal variance and no regions.
    pub fn isotropic(optical_mean: Vec<f64>, variance: f64, sar_mean: f64) -> Self {
        let d = optical_mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = variance;
        }
        Self {
            optical_mean,
            optical_cov: cov,
            sar_mean,
            regions: Vec::new(),
        }
    }

    pub fn with_region(mut self, b: Bounds) -> Self {
        self.regions.push(b);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeRegion {
    pub rect: Bounds,
    /// Class at the second date.
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub looks: f64,
    pub seed: u64,
    /// Class of pixels outside every region.
    pub background: usize,
    pub classes: Vec<ClassSpec>,
    pub changes: Vec<ChangeRegion>,
}

fn parse_rect(key: &str, v: &str) -> Result<Bounds> {
    let p: Vec<usize> = kv::list(key, v)?;
    match p[..] {
        [x0, y0, w, h] => Ok(Bounds::new(x0, y0, w, h)),
        _ => Err(Error::Config(format!("{key}: expected x0,y0,width,height"))),
    }
}

fn rect_text(b: &Bounds) -> String {
    format!("{},{},{},{}", b.x0, b.y0, b.width, b.height)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Default)]
struct ClassDraft {
    mean: Option<Vec<f64>>,
    cov: Option<Vec<f64>>,
    var: Option<Vec<f64>>,
    sar: Option<f64>,
    regions: Vec<Bounds>,
}

#[derive(Default)]
struct ChangeDraft {
    rect: Option<Bounds>,
    class: Option<usize>,
}

fn group_index(key: &str, rest: &str) -> Result<(usize, String)> {
    let (idx, field) = rest
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("malformed key {key:?}")))?;
    Ok((kv::value(key, idx)?, field.to_string()))
}

impl SceneSpec {
    /// Reads the `key=value` scene dialect.
    ///
    /// ```text
    /// width=200
    /// height=200
    /// looks=5
    /// seed=7
    /// background=0
    /// class.0.optical_mean=40,60,80
    /// class.0.optical_var=9,9,9        # or optical_cov, row-major d×d
    /// class.0.sar_mean=1.0
    /// class.1.regions=0,100,200,100    # x0,y0,w,h; several joined by ';'
    /// change.0.rect=10,60,30,30
    /// change.0.class=2
    /// ```
    ///
    /// Regions are painted in ascending class order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut width = None;
        let mut height = None;
        let mut looks = None;
        let mut seed = 0u64;
        let mut background = 0usize;
        let mut classes: BTreeMap<usize, ClassDraft> = BTreeMap::new();
        let mut changes: BTreeMap<usize, ChangeDraft> = BTreeMap::new();
        for (k, v) in kv::parse_pairs(text)? {
            if let Some(rest) = k.strip_prefix("class.") {
                let (i, field) = group_index(&k, rest)?;
                let c = classes.entry(i).or_default();
                match field.as_str() {
                    "optical_mean" => c.mean = Some(kv::list(&k, &v)?),
                    "optical_cov" => c.cov = Some(kv::list(&k, &v)?),
                    "optical_var" => c.var = Some(kv::list(&k, &v)?),
                    "sar_mean" => c.sar = Some(kv::value(&k, &v)?),
                    "regions" => {
                        c.regions = v
                            .split(';')
                            .filter(|r| !r.trim().is_empty())
                            .map(|r| parse_rect(&k, r))
                            .collect::<Result<_>>()?
                    }
                    _ => return Err(Error::Config(format!("unknown key {k:?}"))),
                }
                continue;
            }
            if let Some(rest) = k.strip_prefix("change.") {
                let (i, field) = group_index(&k, rest)?;
                let c = changes.entry(i).or_default();
                match field.as_str() {
                    "rect" => c.rect = Some(parse_rect(&k, &v)?),
                    "class" => c.class = Some(kv::value(&k, &v)?),
                    _ => return Err(Error::Config(format!("unknown key {k:?}"))),
                }
                continue;
            }
            match k.as_str() {
                "width" => width = Some(kv::value(&k, &v)?),
                "height" => height = Some(kv::value(&k, &v)?),
                "looks" => looks = Some(kv::value(&k, &v)?),
                "seed" => seed = kv::value(&k, &v)?,
                "background" => background = kv::value(&k, &v)?,
                _ => return Err(Error::Config(format!("unknown key {k:?}"))),
            }
        }

        let mut out_classes = Vec::new();
        for (expect, (i, c)) in classes.into_iter().enumerate() {
            if i != expect {
                return Err(Error::Config(format!(
                    "class ids must be contiguous from 0, missing {expect}"
                )));
            }
            let mean = c
                .mean
                .ok_or_else(|| Error::Config(format!("class.{i}.optical_mean missing")))?;
            let d = mean.len();
            let cov = match (c.cov, c.var) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config(format!(
                        "class.{i}: give optical_cov or optical_var, not both"
                    )))
                }
                (Some(cov), None) => cov,
                (None, Some(var)) => {
                    if var.len() != d {
                        return Err(Error::Config(format!("class.{i}.optical_var needs {d} values")));
                    }
                    let mut cov = vec![0.0; d * d];
                    for (b, v) in var.iter().enumerate() {
                        cov[b * d + b] = *v;
                    }
                    cov
                }
                (None, None) => return Err(Error::Config(format!("class.{i}: optical covariance missing"))),
            };
            out_classes.push(ClassSpec {
                optical_mean: mean,
                optical_cov: cov,
                sar_mean: c
                    .sar
                    .ok_or_else(|| Error::Config(format!("class.{i}.sar_mean missing")))?,
                regions: c.regions,
            });
        }
        let mut out_changes = Vec::new();
        for (expect, (i, c)) in changes.into_iter().enumerate() {
            if i != expect {
                return Err(Error::Config(format!(
                    "change ids must be contiguous from 0, missing {expect}"
                )));
            }
            out_changes.push(ChangeRegion {
                rect: c
                    .rect
                    .ok_or_else(|| Error::Config(format!("change.{i}.rect missing")))?,
                class: c
                    .class
                    .ok_or_else(|| Error::Config(format!("change.{i}.class missing")))?,
            });
        }
        let spec = Self {
            width: width.ok_or_else(|| Error::Config("width missing".into()))?,
            height: height.ok_or_else(|| Error::Config("height missing".into()))?,
            looks: looks.ok_or_else(|| Error::Config("looks missing".into()))?,
            seed,
            background,
            classes: out_classes,
            changes: out_changes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "width={}\nheight={}\nlooks={}\nseed={}\nbackground={}\n",
            self.width, self.height, self.looks, self.seed, self.background
        );
        for (i, c) in self.classes.iter().enumerate() {
            s += &format!("class.{i}.optical_mean={}\n", join(&c.optical_mean));
            s += &format!("class.{i}.optical_cov={}\n", join(&c.optical_cov));
            s += &format!("class.{i}.sar_mean={}\n", c.sar_mean);
            if !c.regions.is_empty() {
                let r: Vec<String> = c.regions.iter().map(rect_text).collect();
                s += &format!("class.{i}.regions={}\n", r.join(";"));
            }
        }
        for (i, c) in self.changes.iter().enumerate() {
            s += &format!(
                "change.{i}.rect={}\nchange.{i}.class={}\n",
                rect_text(&c.rect),
                c.class
            );
        }
        s
    }

    pub fn bands(&self) -> usize {
        self.classes.first().map_or(0, |c| c.optical_mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("scene must be non-empty".into()));
        }
        if !(self.looks > 0.0 && self.looks.is_finite()) {
            return Err(Error::Config(format!(
                "looks must be positive, got {}",
                self.looks
            )));
        }
        if self.classes.is_empty() {
            return Err(Error::Config("scene needs at least one class".into()));
        }
        let k = self.classes.len();
        if self.background >= k {
            return Err(Error::Config(format!(
                "background class {} out of range",
                self.background
            )));
        }
        let d = self.bands();
        if d == 0 {
            return Err(Error::Config("optical mean is empty".into()));
        }
        let inside = |b: &Bounds| {
            b.width > 0 && b.height > 0 && b.x0 + b.width <= self.width && b.y0 + b.height <= self.height
        };
        for (i, c) in self.classes.iter().enumerate() {
            if c.optical_mean.len() != d || c.optical_cov.len() != d * d {
                return Err(Error::Config(format!("class {i}: expected {d} bands")));
            }
            let cov = Array2::from_shape_vec((d, d), c.optical_cov.clone()).expect("length checked");
            if cov != cov.t() {
                return Err(Error::Config(format!(
                    "class {i}: optical covariance not symmetric"
                )));
            }
            Cholesky::new(cov.view())
                .map_err(|_| Error::Config(format!("class {i}: optical covariance not positive definite")))?;
            if !(c.sar_mean > 0.0 && c.sar_mean.is_finite()) {
                return Err(Error::Config(format!("class {i}: sar_mean must be positive")));
            }
            if let Some(b) = c.regions.iter().find(|b| !inside(b)) {
                return Err(Error::Config(format!(
                    "class {i}: region {} outside the scene",
                    rect_text(b)
                )));
            }
        }
        for (i, c) in self.changes.iter().enumerate() {
            if c.class >= k {
                return Err(Error::Config(format!(
                    "change {i}: class {} out of range",
                    c.class
                )));
            }
            if !inside(&c.rect) {
                return Err(Error::Config(format!("change {i}: rect outside the scene")));
            }
        }
        Ok(())
    }

    /// Class of every pixel at the first date, row-major.
    pub fn class_map(&self) -> Vec<usize> {
        let mut map = vec![self.background; self.width * self.height];
        for (i, c) in self.classes.iter().enumerate() {
            for b in &c.regions {
                paint(&mut map, self.width, b, i);
            }
        }
        map
    }

    /// Class of every pixel at the second date.
    pub fn changed_map(&self) -> Vec<usize> {
        let mut map = self.class_map();
        for c in &self.changes {
            paint(&mut map, self.width, &c.rect, c.class);
        }
        map
    }
}

fn paint(map: &mut [usize], width: usize, b: &Bounds, class: usize) {
    for y in b.y0..b.y0 + b.height {
        map[y * width + b.x0..y * width + b.x0 + b.width].fill(class);
    }
}

/// Gamma draw with shape `looks` and scale `scale`; integer shapes use a sum
/// of exponentials.
fn gamma_draw<R: Rng>(rng: &mut R, looks: f64, scale: f64, fallback: Option<&Gamma<f64>>) -> f64 {
    match fallback {
        Some(g) => g.sample(rng) * scale,
        None => {
            let mut s = 0.0;
            for _ in 0..looks as usize {
                let e: f64 = Exp1.sample(rng);
                s += e;
            }
            s * scale
        }
    }
}

/// Samples a gamma speckle field around `means`.
pub fn gamma_field(means: &[f64], looks: f64, seed: u64) -> Result<Vec<f32>> {
    if !(looks > 0.0) {
        return Err(Error::Param(format!("looks must be positive, got {looks}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = integer_shape(looks)
        .is_none()
        .then(|| Gamma::new(looks, 1.0).map_err(|e| Error::Param(e.to_string())))
        .transpose()?;
    Ok(means
        .iter()
        .map(|&m| gamma_draw(&mut rng, looks, m / looks, unit.as_ref()) as f32)
        .collect())
}

fn integer_shape(looks: f64) -> Option<usize> {
    (looks.fract() == 0.0 && looks <= 64.0).then_some(looks as usize)
}

/// Optical image, SAR intensity image and change truth for a scene.
pub fn generate_pair(s: &SceneSpec) -> Result<(Raster, Raster, Mask)> {
    s.validate()?;
    let d = s.bands();
    let factors: Vec<Array2<f64>> = s
        .classes
        .iter()
        .map(|c| {
            let cov = Array2::from_shape_vec((d, d), c.optical_cov.clone()).expect("validated");
            Cholesky::new(cov.view()).map(|ch| ch.lower().clone())
        })
        .collect::<Result<_>>()?;
    let unit = integer_shape(s.looks)
        .is_none()
        .then(|| Gamma::new(s.looks, 1.0).map_err(|e| Error::Param(e.to_string())))
        .transpose()?;

    let before = s.class_map();
    let after = s.changed_map();
    let n = s.width * s.height;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut opt = Vec::with_capacity(n * d);
    let mut sar = Vec::with_capacity(n);
    let mut z = vec![0.0f64; d];
    for (&c1, &c2) in before.iter().zip(&after) {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let (cls, l) = (&s.classes[c1], &factors[c1]);
        for b in 0..d {
            let mut v = cls.optical_mean[b];
            for (j, zj) in z.iter().enumerate().take(b + 1) {
                v += l[[b, j]] * zj;
            }
            opt.push(v as f32);
        }
        let m = s.classes[c2].sar_mean;
        sar.push(gamma_draw(&mut rng, s.looks, m / s.looks, unit.as_ref()) as f32);
    }
    let optical = Raster::new(
        RasterHeader::new(s.width, s.height, vec![BandRole::Optical; d]),
        opt,
    )?;
    let sar = Raster::single(s.width, s.height, BandRole::SarIntensity, sar)?;
    let truth = Mask::new(
        s.width,
        s.height,
        before.iter().zip(&after).map(|(a, b)| a != b).collect(),
    )?;
    Ok((optical, sar, truth))
}

/// Side of the cells of [`planted_scene`].
pub const PLANTED_CELL: usize = 25;

/// The 200x200 five-look scene used as the end-to-end benchmark.
///
/// Four classes form 50-pixel blocks centred on the corners of the 50-pixel
/// window grid, so every window holds one 25-pixel quadrant of each and class
/// edges only run along window midlines. Two sub-rectangles of class 1 take a
/// new backscatter level at the second date (splits, in windows 0 and 10), and
/// two patches of a fifth optical class take the backscatter of the class 2
/// block around them (merges, in windows 5 and 15).
pub fn planted_scene(seed: u64) -> SceneSpec {
    let mut classes = vec![
        ClassSpec::isotropic(vec![30.0, 60.0, 90.0], 16.0, 0.2),
        ClassSpec::isotropic(vec![90.0, 40.0, 60.0], 16.0, 1.0),
        ClassSpec::isotropic(vec![60.0, 100.0, 30.0], 16.0, 5.0),
        ClassSpec::isotropic(vec![120.0, 80.0, 110.0], 16.0, 25.0),
        ClassSpec::isotropic(vec![90.0, 40.0, 60.0], 16.0, 125.0),
        ClassSpec::isotropic(vec![150.0, 20.0, 20.0], 16.0, 1.0),
    ];
    let c = PLANTED_CELL;
    // cell parity mirrored across window boundaries: 0 1 1 0 0 1 1 0
    let parity = |i: usize| i.div_ceil(2) % 2;
    for cy in 0..200 / c {
        for cx in 0..200 / c {
            let class = parity(cx) + 2 * parity(cy);
            if class != 0 {
                classes[class].regions.push(Bounds::new(cx * c, cy * c, c, c));
            }
        }
    }
    let merges = [Bounds::new(79, 54, 16, 14), Bounds::new(179, 154, 16, 14)];
    classes[5].regions.extend(merges);
    let mut changes = vec![
        ChangeRegion {
            rect: Bounds::new(28, 4, 16, 14),
            class: 4,
        },
        ChangeRegion {
            rect: Bounds::new(128, 104, 16, 14),
            class: 4,
        },
    ];
    changes.extend(merges.iter().map(|&rect| ChangeRegion { rect, class: 2 }));
    SceneSpec {
        width: 200,
        height: 200,
        looks: 5.0,
        seed,
        background: 0,
        classes,
        changes,
    }
}
