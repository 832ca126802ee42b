//! Pipeline configuration in the flat `key=value` dialect.
//!
//! Every key is optional except the `optical`, `sar` and `output` paths.
//! Overrides (typically command-line flags) replace file values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::change::ChangeParams;
use crate::ensemble::{Accumulation, EnsembleParams, DEFAULT_STACKED_CAP};
use crate::error::{Error, Result};
use crate::fcm::{CovarianceWeights, FcmParams, Metric};
use crate::kv;

/// Default `enl_tile`.
pub const PIPELINE_ENL_TILE: usize = 16;
pub const MIN_WINDOW_SIDE: usize = 10;

/// Number of looks: estimated from the SAR image or given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Looks {
    Auto,
    Fixed(f64),
}

impl FromStr for Looks {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Looks::Auto);
        }
        let v: f64 = kv::value("looks", s)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("looks must be positive, got {v}")));
        }
        Ok(Looks::Fixed(v))
    }
}

impl std::fmt::Display for Looks {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Looks::Auto => f.write_str("auto"),
            Looks::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub optical: PathBuf,
    pub sar: PathBuf,
    pub truth: Option<PathBuf>,
    pub output: PathBuf,
    pub window_side: usize,
    pub speckle_window: usize,
    pub looks: Looks,
    pub damping: f64,
    /// Tile side for automatic looks estimation. Kept below half a window so
    /// that tiles fit inside single land-cover patches.
    pub enl_tile: usize,
    pub fuzzifier: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub regularization: f64,
    pub covariance_weights: CovarianceWeights,
    pub accumulation: Accumulation,
    pub runs: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub stacked_cap: usize,
    pub change: ChangeParams,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl PipelineConfig {
    /// Defaults for everything but the paths.
    pub fn new(optical: impl Into<PathBuf>, sar: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            optical: optical.into(),
            sar: sar.into(),
            truth: None,
            output: output.into(),
            window_side: 50,
            speckle_window: 7,
            looks: Looks::Auto,
            damping: 1.0,
            enl_tile: PIPELINE_ENL_TILE,
            fuzzifier: 2.0,
            max_iter: 100,
            tol: 1e-5,
            regularization: 1e-6,
            covariance_weights: CovarianceWeights::Fuzzified,
            accumulation: Accumulation::Hard,
            runs: 20,
            k_min: 4,
            k_max: 7,
            stacked_cap: DEFAULT_STACKED_CAP,
            change: ChangeParams::default(),
            seed: 0,
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_side < MIN_WINDOW_SIDE {
            return Err(Error::Config(format!(
                "window_side must be at least {MIN_WINDOW_SIDE}, got {}",
                self.window_side
            )));
        }
        if self.enl_tile < 8 {
            return Err(Error::Config(format!(
                "enl_tile must be at least 8, got {}",
                self.enl_tile
            )));
        }
        if self.stacked_cap < 2 {
            return Err(Error::Config(format!(
                "stacked_cap must be at least 2, got {}",
                self.stacked_cap
            )));
        }
        self.ensemble(self.k_min, self.k_max, 0).validate()?;
        self.fcm(Metric::Euclidean).validate()?;
        self.change.validate()?;
        let mut speckle = crate::speckle::SpeckleParams::new(1.0);
        speckle.window_side = self.speckle_window;
        speckle.damping = self.damping;
        speckle.validate()
    }

    /// Ensemble settings for one view.
    pub fn ensemble(&self, k_min: usize, k_max: usize, seed: u64) -> EnsembleParams {
        EnsembleParams {
            accumulation: self.accumulation,
            ..EnsembleParams::new(self.runs, k_min, k_max, seed)
        }
    }

    /// FCM template; `k` and `seed` are set per run.
    pub fn fcm(&self, metric: Metric<f64>) -> FcmParams<f64> {
        FcmParams {
            fuzzifier: self.fuzzifier,
            max_iter: self.max_iter,
            tol: self.tol,
            regularization: self.regularization,
            covariance_weights: self.covariance_weights,
            ..FcmParams::new(2, metric, 0)
        }
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "optical" => self.optical = v.into(),
            "sar" => self.sar = v.into(),
            "truth" => self.truth = (!v.is_empty()).then(|| v.into()),
            "output" => self.output = v.into(),
            "window_side" => self.window_side = kv::value(key, v)?,
            "speckle_window" => self.speckle_window = kv::value(key, v)?,
            "looks" => self.looks = v.parse()?,
            "damping" => self.damping = kv::value(key, v)?,
            "enl_tile" => self.enl_tile = kv::value(key, v)?,
            "fuzzifier" => self.fuzzifier = kv::value(key, v)?,
            "max_iter" => self.max_iter = kv::value(key, v)?,
            "tol" => self.tol = kv::value(key, v)?,
            "regularization" => self.regularization = kv::value(key, v)?,
            "covariance_weights" => {
                self.covariance_weights = match v {
                    "membership" => CovarianceWeights::Membership,
                    "fuzzified" => CovarianceWeights::Fuzzified,
                    _ => {
                        return Err(Error::Config(format!(
                            "covariance_weights must be membership or fuzzified, got {v:?}"
                        )))
                    }
                }
            }
            "accumulation" => {
                self.accumulation = match v {
                    "hard" => Accumulation::Hard,
                    "fuzzy" => Accumulation::Fuzzy,
                    _ => {
                        return Err(Error::Config(format!(
                            "accumulation must be hard or fuzzy, got {v:?}"
                        )))
                    }
                }
            }
            "runs" => self.runs = kv::value(key, v)?,
            "k_min" => self.k_min = kv::value(key, v)?,
            "k_max" => self.k_max = kv::value(key, v)?,
            "stacked_cap" => self.stacked_cap = kv::value(key, v)?,
            "tau_split" => self.change.tau_split = kv::value(key, v)?,
            "tau_merge" => self.change.tau_merge = kv::value(key, v)?,
            "flag_mode" => self.change.flag_mode = v.parse()?,
            "smooth" => self.change.smooth = kv::boolean(key, v)?,
            "strict_split" => self.change.strict_split = kv::boolean(key, v)?,
            "seed" => self.seed = kv::value(key, v)?,
            "workers" => self.workers = kv::value(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in the config dialect.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Path| p.display().to_string();
        let _ = writeln!(s, "optical={}", path(&self.optical));
        let _ = writeln!(s, "sar={}", path(&self.sar));
        let _ = writeln!(s, "truth={}", self.truth.as_deref().map(path).unwrap_or_default());
        let _ = writeln!(s, "output={}", path(&self.output));
        let _ = writeln!(s, "window_side={}", self.window_side);
        let _ = writeln!(s, "speckle_window={}", self.speckle_window);
        let _ = writeln!(s, "looks={}", self.looks);
        let _ = writeln!(s, "damping={}", self.damping);
        let _ = writeln!(s, "enl_tile={}", self.enl_tile);
        let _ = writeln!(s, "fuzzifier={}", self.fuzzifier);
        let _ = writeln!(s, "max_iter={}", self.max_iter);
        let _ = writeln!(s, "tol={}", self.tol);
        let _ = writeln!(s, "regularization={}", self.regularization);
        let cw = match self.covariance_weights {
            CovarianceWeights::Membership => "membership",
            CovarianceWeights::Fuzzified => "fuzzified",
        };
        let _ = writeln!(s, "covariance_weights={cw}");
        let acc = match self.accumulation {
            Accumulation::Hard => "hard",
            Accumulation::Fuzzy => "fuzzy",
        };
        let _ = writeln!(s, "accumulation={acc}");
        let _ = writeln!(s, "runs={}", self.runs);
        let _ = writeln!(s, "k_min={}", self.k_min);
        let _ = writeln!(s, "k_max={}", self.k_max);
        let _ = writeln!(s, "stacked_cap={}", self.stacked_cap);
        let _ = writeln!(s, "tau_split={}", self.change.tau_split);
        let _ = writeln!(s, "tau_merge={}", self.change.tau_merge);
        let _ = writeln!(s, "flag_mode={}", self.change.flag_mode.as_str());
        let _ = writeln!(s, "smooth={}", self.change.smooth);
        let _ = writeln!(s, "strict_split={}", self.change.strict_split);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "workers={}", self.workers);
        s
    }
}

/// Builds a validated config from file text plus overrides.
///
/// Override keys use the same snake_case names as the file.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<PipelineConfig> {
    let mut pairs = kv::parse_pairs(text)?;
    for (k, v) in overrides {
        match pairs.iter_mut().find(|(key, _)| key == k) {
            Some(slot) => slot.1 = v.clone(),
            None => pairs.push((k.clone(), v.clone())),
        }
    }
    let mut cfg = PipelineConfig::new("", "", "");
    for (k, v) in &pairs {
        cfg.set(k, v)?;
    }
    for (key, p) in [
        ("optical", &cfg.optical),
        ("sar", &cfg.sar),
        ("output", &cfg.output),
    ] {
        if p.as_os_str().is_empty() {
            return Err(Error::Config(format!("required key {key} missing")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::change::FlagMode;

    fn paths() -> Vec<(String, String)> {
        [("optical", "o.hdr"), ("sar", "s.hdr"), ("output", "out")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn defaults_from_empty_file() {
        let cfg = parse_config("", &paths()).unwrap();
        assert_eq!(cfg, PipelineConfig::new("o.hdr", "s.hdr", "out"));
        assert_eq!(
            (cfg.window_side, cfg.runs, cfg.k_min, cfg.k_max, cfg.stacked_cap),
            (50, 20, 4, 7, 30)
        );
        assert_eq!(cfg.change.tau_split, 0.2);
        assert_eq!(cfg.change.flag_mode, FlagMode::Minority);
    }

    #[test]
    fn window_side_minimum() {
        let err = parse_config("window_side=5\n", &paths()).unwrap_err();
        assert!(err.to_string().contains("window_side"), "{err}");
    }

    #[test]
    fn overrides_win() {
        let mut o = paths();
        o.push(("tau_split".into(), "0.3".into()));
        let cfg = parse_config("tau_split=0.2\n", &o).unwrap();
        assert_eq!(cfg.change.tau_split, 0.3);
    }

    #[test]
    fn rejects_unknown_and_missing() {
        assert!(parse_config("colour=blue\n", &paths()).is_err());
        assert!(parse_config("optical=a\nsar=b\n", &[]).is_err());
        assert!(parse_config("k_min=5\nk_max=4\n", &paths()).is_err());
        assert!(parse_config("looks=-2\n", &paths()).is_err());
        assert!(parse_config("tau_merge=0.9\n", &paths()).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = PipelineConfig::new("a.hdr", "b.hdr", "out");
        cfg.looks = Looks::Fixed(4.5);
        cfg.truth = Some("t.pgm".into());
        cfg.change.flag_mode = FlagMode::All;
        assert_eq!(parse_config(&cfg.to_text(), &[]).unwrap(), cfg);
    }
}
