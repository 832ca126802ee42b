//! End-to-end change detection: global speckle filtering, tiling, three-view
//! ensemble clustering per window, split/merge detection and stitching.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::change::{
    change_map, detect_merges, detect_splits, ChangeEvent, ChangeKind, ChangeParams, EventHook, NoHook,
};
use crate::config::{Looks, PipelineConfig};
use crate::ensemble::{run_ensemble, stacked_k_bounds, ConsensusPartition, EnsembleResult};
use crate::error::{Error, Result};
use crate::evaluation::{confusion, metrics, metrics_block, Metrics};
use crate::fcm::Metric;
use crate::models::{default_log_offset, log_stack};
use crate::raster::{load_mask, load_raster, save_mask, save_raster, BandRole, Bounds, Mask, Raster};
use crate::seed::derive_seed;
use crate::speckle::{enhanced_lee, estimate_enl, SpeckleParams};

/// Non-overlapping cover of a `width × height` image by windows of `side`.
///
/// Along each axis a trailing remainder of at least `side / 2` becomes its
/// own window; a shorter one is absorbed by the last full window. Windows are
/// listed row by row.
pub fn tile(width: usize, height: usize, side: usize) -> Result<Vec<Bounds>> {
    if side < crate::config::MIN_WINDOW_SIDE {
        return Err(Error::Param(format!(
            "window side must be at least 10, got {side}"
        )));
    }
    let xs = segments(width, side);
    let ys = segments(height, side);
    Ok(ys
        .iter()
        .flat_map(|&(y0, h)| xs.iter().map(move |&(x0, w)| Bounds::new(x0, y0, w, h)))
        .collect())
}

fn segments(len: usize, side: usize) -> Vec<(usize, usize)> {
    let full = len / side;
    if full == 0 {
        return vec![(0, len)];
    }
    let mut out: Vec<(usize, usize)> = (0..full).map(|i| (i * side, side)).collect();
    let rem = len - full * side;
    if rem > 0 {
        if 2 * rem >= side {
            out.push((full * side, rem));
        } else {
            out.last_mut().expect("full > 0").1 += rem;
        }
    }
    out
}

/// One of the three clustered views of a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Optical,
    Sar,
    Stacked,
}

impl View {
    pub fn as_str(self) -> &'static str {
        match self {
            View::Optical => "opt",
            View::Sar => "sar",
            View::Stacked => "st",
        }
    }
}

impl std::str::FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "opt" | "optical" => Ok(View::Optical),
            "sar" => Ok(View::Sar),
            "st" | "stacked" => Ok(View::Stacked),
            _ => Err(Error::Config(format!("view must be opt, sar or st, got {s:?}"))),
        }
    }
}

/// Global quantities shared by all windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneContext {
    /// Looks used by the filter and the gamma metric.
    pub looks: f64,
    /// Offset making filtered SAR strictly positive.
    pub delta: f64,
}

/// Pixel-by-feature matrix of one view.
///
/// The SAR view is `sar + delta`; the stacked view is optical bands plus
/// `log(sar + delta)`, each channel z-scored over the window.
pub fn view_features(view: View, opt: &Raster, sar: &Raster, delta: f64) -> Result<Array2<f64>> {
    let n = opt.width() * opt.height();
    match view {
        View::Optical => {
            let d = opt.bands();
            Ok(
                Array2::from_shape_vec((n, d), opt.data().iter().map(|&v| v as f64).collect())
                    .expect("raster length checked"),
            )
        }
        View::Sar => Ok(Array2::from_shape_vec(
            (n, 1),
            sar.data().iter().map(|&v| v as f64 + delta).collect(),
        )
        .expect("raster length checked")),
        View::Stacked => {
            let st = log_stack(opt, sar, Some(delta))?;
            let d = st.bands();
            let mut x = Array2::from_shape_vec((n, d), st.data().iter().map(|&v| v as f64).collect())
                .expect("raster length checked");
            for mut col in x.columns_mut() {
                let mean = col.sum() / n as f64;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let sd = var.sqrt();
                col.mapv_inplace(|v| if sd > 0.0 { (v - mean) / sd } else { v - mean });
            }
            Ok(x)
        }
    }
}

/// Runs the ensemble of one view with cluster counts in `[k_min, k_max]`.
pub fn cluster_view(
    view: View,
    x: &Array2<f64>,
    cfg: &PipelineConfig,
    ctx: &SceneContext,
    k: (usize, usize),
    seed: u64,
) -> Result<EnsembleResult<f64>> {
    let metric = match view {
        View::Sar => Metric::HellingerGamma { looks: ctx.looks },
        View::Optical | View::Stacked => Metric::AdaptiveMahalanobis,
    };
    run_ensemble(x.view(), &cfg.ensemble(k.0, k.1, seed), &cfg.fcm(metric))
}

/// Split and merge events of a window and its change mask.
pub fn detect_window(
    opt: &[usize],
    sar: &[usize],
    stacked: &[usize],
    width: usize,
    height: usize,
    p: &ChangeParams,
) -> Result<(Vec<ChangeEvent>, Mask)> {
    let mut events = detect_splits(opt, stacked, Some(sar), p)?;
    events.extend(detect_merges(stacked, sar, p)?);
    let mask = change_map(&events, width, height, p)?;
    Ok((events, mask))
}

#[derive(Debug, Clone)]
pub struct WindowResult {
    pub id: usize,
    pub bounds: Bounds,
    pub opt: ConsensusPartition,
    pub sar: ConsensusPartition,
    pub stacked: ConsensusPartition,
    pub events: Vec<ChangeEvent>,
    pub mask: Mask,
    /// Clustering could not proceed; the mask is empty.
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

impl WindowResult {
    fn degenerate(id: usize, bounds: Bounds, why: String) -> Result<Self> {
        let n = bounds.pixels();
        let single = || ConsensusPartition::from_labels(vec![0; n]);
        Ok(Self {
            id,
            bounds,
            opt: single(),
            sar: single(),
            stacked: single(),
            events: Vec::new(),
            mask: Mask::filled(bounds.width, bounds.height, false)?,
            degenerate: true,
            warnings: vec![why],
        })
    }
}

fn all_degenerate(r: &EnsembleResult<f64>) -> bool {
    r.runs.iter().all(|run| run.degenerate)
}

/// Seed of one view's ensemble in window `id`.
pub fn view_seed(global: u64, id: usize, view: View) -> u64 {
    let stream = match view {
        View::Optical => 0,
        View::Sar => 1,
        View::Stacked => 2,
    };
    derive_seed(derive_seed(global, id as u64), stream)
}

/// Ensemble of one view of window `id`, seeded as in the full pipeline. The
/// stacked view first clusters the other two to get its `k` range.
pub fn cluster_window(
    prep: &Prepared,
    cfg: &PipelineConfig,
    id: usize,
    view: View,
) -> Result<EnsembleResult<f64>> {
    let (_, opt, sar) = prep.window(id)?;
    let ctx = &prep.context;
    let run = |view: View, k: (usize, usize)| -> Result<EnsembleResult<f64>> {
        let x = view_features(view, &opt, &sar, ctx.delta)?;
        cluster_view(view, &x, cfg, ctx, k, view_seed(cfg.seed, id, view))
    };
    match view {
        View::Optical | View::Sar => run(view, (cfg.k_min, cfg.k_max)),
        View::Stacked => {
            let n_opt = run(View::Optical, (cfg.k_min, cfg.k_max))?.consensus.k;
            let n_sar = run(View::Sar, (cfg.k_min, cfg.k_max))?.consensus.k;
            run(View::Stacked, stacked_k_bounds(n_opt, n_sar, cfg.stacked_cap))
        }
    }
}

/// Clusters the three views of one window and detects its changes.
///
/// `opt` and `sar` are the window crops; `sar` is already filtered. The
/// window seed is derived from the global seed and `id`. Windows that cannot
/// be clustered come back degenerate with an empty mask instead of failing.
pub fn process_window(
    id: usize,
    bounds: Bounds,
    opt: &Raster,
    sar: &Raster,
    cfg: &PipelineConfig,
    ctx: &SceneContext,
    hook: &dyn EventHook,
) -> Result<WindowResult> {
    if (opt.width(), opt.height()) != (sar.width(), sar.height())
        || (opt.width(), opt.height()) != (bounds.width, bounds.height)
    {
        return Err(Error::Shape(format!(
            "window {id}: optical, SAR and bounds disagree"
        )));
    }
    let run = |view: View, k: (usize, usize)| -> Result<EnsembleResult<f64>> {
        let x = view_features(view, opt, sar, ctx.delta)?;
        cluster_view(view, &x, cfg, ctx, k, view_seed(cfg.seed, id, view))
    };
    let outcome = (|| -> Result<Option<WindowResult>> {
        let ro = run(View::Optical, (cfg.k_min, cfg.k_max))?;
        let rs = run(View::Sar, (cfg.k_min, cfg.k_max))?;
        if all_degenerate(&ro) || all_degenerate(&rs) {
            return Ok(None);
        }
        let bounds_st = stacked_k_bounds(ro.consensus.k, rs.consensus.k, cfg.stacked_cap);
        let rt = run(View::Stacked, bounds_st)?;
        let (mut events, _) = detect_window(
            &ro.consensus.labels,
            &rs.consensus.labels,
            &rt.consensus.labels,
            bounds.width,
            bounds.height,
            &cfg.change,
        )?;
        hook.apply(id, bounds, &mut events);
        let mask = change_map(&events, bounds.width, bounds.height, &cfg.change)?;
        Ok(Some(WindowResult {
            id,
            bounds,
            opt: ro.consensus,
            sar: rs.consensus,
            stacked: rt.consensus,
            events,
            mask,
            degenerate: false,
            warnings: Vec::new(),
        }))
    })();
    match outcome {
        Ok(Some(r)) => Ok(r),
        Ok(None) => {
            let why = format!("window {id}: constant data, no clustering");
            log::warn!("{why}");
            WindowResult::degenerate(id, bounds, why)
        }
        Err(e @ (Error::Data(_) | Error::NotPositiveDefinite)) => {
            let why = format!("window {id}: clustering failed: {e}");
            log::warn!("{why}");
            WindowResult::degenerate(id, bounds, why)
        }
        Err(e) => Err(e),
    }
}

/// Extra knobs for [`run_pipeline_with`].
pub struct RunOptions<'a> {
    /// Order in which windows are handed to the workers; any permutation of
    /// the window ids. Outputs do not depend on it.
    pub order: Option<Vec<usize>>,
    pub hook: &'a dyn EventHook,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        Self {
            order: None,
            hook: &NoHook,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub windows: Vec<WindowResult>,
    pub change_map: Mask,
    pub context: SceneContext,
    pub metrics: Option<Metrics>,
}

impl PipelineSummary {
    pub fn count(&self, kind: ChangeKind) -> usize {
        self.windows
            .iter()
            .flat_map(|w| &w.events)
            .filter(|e| e.kind == kind)
            .count()
    }
}

/// Inputs loaded, checked and filtered; the shared state of all windows.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub optical: Raster,
    /// Despeckled SAR intensity.
    pub filtered: Raster,
    pub truth: Option<Mask>,
    pub context: SceneContext,
    pub windows: Vec<Bounds>,
}

impl Prepared {
    /// Optical and filtered SAR crops of window `id`.
    pub fn window(&self, id: usize) -> Result<(Bounds, Raster, Raster)> {
        let b = *self.windows.get(id).ok_or_else(|| {
            Error::Param(format!(
                "window {id} out of range ({} windows)",
                self.windows.len()
            ))
        })?;
        Ok((b, self.optical.crop(b)?, self.filtered.crop(b)?))
    }
}

/// Loads the inputs named by `cfg`, estimates the looks if asked to,
/// despeckles the whole SAR image and tiles the scene.
pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    for p in [&cfg.optical, &cfg.sar].into_iter().chain(cfg.truth.as_ref()) {
        if !p.exists() {
            return Err(Error::Config(format!("input {} does not exist", p.display())));
        }
    }
    let opt = load_raster(&cfg.optical)?;
    let sar = load_raster(&cfg.sar)?;
    if opt.roles().iter().any(|&r| r != BandRole::Optical) {
        return Err(Error::Config(format!(
            "{}: expected optical bands",
            cfg.optical.display()
        )));
    }
    if sar.bands() != 1 || sar.roles()[0] != BandRole::SarIntensity {
        return Err(Error::Config(format!(
            "{}: expected one sar_intensity band",
            cfg.sar.display()
        )));
    }
    let (w, h) = (opt.width(), opt.height());
    if (w, h) != (sar.width(), sar.height()) {
        return Err(Error::Shape(format!(
            "optical {w}x{h} vs SAR {}x{}",
            sar.width(),
            sar.height()
        )));
    }
    let truth = cfg
        .truth
        .as_ref()
        .map(|p| load_mask(p, Some((w, h))))
        .transpose()?;
    let windows = tile(w, h, cfg.window_side)?;

    let looks = match cfg.looks {
        Looks::Fixed(l) => l,
        Looks::Auto => {
            let tile_side = cfg.enl_tile.min(w).min(h);
            let est = estimate_enl(&sar, tile_side)?;
            log::info!("estimated {:.3} looks from {} tiles", est.looks, est.tiles_used);
            est.looks
        }
    };
    let speckle = SpeckleParams {
        window_side: cfg.speckle_window,
        looks,
        damping: cfg.damping,
    };
    let filtered = enhanced_lee(&sar, &speckle)?;
    let max = filtered.data().iter().fold(0.0f64, |m, &v| m.max(v as f64));
    Ok(Prepared {
        optical: opt,
        filtered,
        truth,
        context: SceneContext {
            looks,
            delta: default_log_offset(max),
        },
        windows,
    })
}

/// Full pipeline with default options.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    run_pipeline_with(cfg, RunOptions::default())
}

/// Full pipeline; writes `change_map.pgm`, `events.txt`, `report.txt`,
/// `metrics.txt` (with a truth mask) and `partition_{opt,sar,st}_<id>`
/// rasters under `cfg.output`.
pub fn run_pipeline_with(cfg: &PipelineConfig, opts: RunOptions<'_>) -> Result<PipelineSummary> {
    let prep = prepare(cfg)?;
    let windows = &prep.windows;
    let order = match opts.order {
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..windows.len()).collect::<Vec<_>>() {
                return Err(Error::Param(
                    "window order must be a permutation of the window ids".into(),
                ));
            }
            o
        }
        None => (0..windows.len()).collect(),
    };
    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let hook = opts.hook;
    let ctx = prep.context;
    let mut results = pool.install(|| {
        order
            .par_iter()
            .map(|&id| {
                let (b, o, s) = prep.window(id)?;
                process_window(id, b, &o, &s, cfg, &ctx, hook)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    results.sort_by_key(|r| r.id);

    let (w, h) = (prep.optical.width(), prep.optical.height());
    let mut stitched = Mask::filled(w, h, false)?;
    for r in &results {
        for y in 0..r.bounds.height {
            for x in 0..r.bounds.width {
                stitched.set(r.bounds.x0 + x, r.bounds.y0 + y, r.mask.get(x, y));
            }
        }
    }

    let metrics = match &prep.truth {
        Some(t) => {
            let c = confusion(&stitched, t)?;
            let m = metrics(&c)?;
            let block = metrics_block(&c, &m);
            write(&cfg.output.join("metrics.txt"), block.as_bytes())?;
            Some((c, m, block))
        }
        None => None,
    };

    save_mask(&stitched, cfg.output.join("change_map.pgm"))?;
    let mut events = String::new();
    for r in &results {
        for e in &r.events {
            events += &e.report_line(r.id);
            events.push('\n');
        }
    }
    write(&cfg.output.join("events.txt"), events.as_bytes())?;
    for r in &results {
        for (view, p) in [
            (View::Optical, &r.opt),
            (View::Sar, &r.sar),
            (View::Stacked, &r.stacked),
        ] {
            save_partition(
                p,
                r.bounds,
                &cfg.output
                    .join(format!("partition_{}_{}.hdr", view.as_str(), r.id)),
            )?;
        }
    }
    let report = report_text(cfg, &ctx, &results, metrics.as_ref().map(|m| m.2.as_str()));
    write(&cfg.output.join("report.txt"), report.as_bytes())?;

    Ok(PipelineSummary {
        windows: results,
        change_map: stitched,
        context: ctx,
        metrics: metrics.map(|m| m.1),
    })
}

/// Writes consensus labels as a one-band `label` raster.
pub fn save_partition(p: &ConsensusPartition, bounds: Bounds, path: &Path) -> Result<()> {
    let raster = Raster::single(
        bounds.width,
        bounds.height,
        BandRole::Label,
        p.labels.iter().map(|&l| l as f32).collect(),
    )?;
    save_raster(&raster, path)
}

/// Reads a label raster back into integer labels.
pub fn load_partition(path: &Path) -> Result<(usize, usize, Vec<usize>)> {
    let r = load_raster(path)?;
    if r.bands() != 1 || r.roles()[0] != BandRole::Label {
        return Err(Error::Config(format!(
            "{}: expected one label band",
            path.display()
        )));
    }
    let labels = r
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Data(format!(
                    "{}: label {v} is not a non-negative integer",
                    path.display()
                )))
            }
        })
        .collect::<Result<_>>()?;
    Ok((r.width(), r.height(), labels))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Human-readable run summary. Leaves out the output directory and the
/// worker count so that reruns compare equal.
fn report_text(
    cfg: &PipelineConfig,
    ctx: &SceneContext,
    results: &[WindowResult],
    metrics: Option<&str>,
) -> String {
    let mut s = String::from("[config]\n");
    for line in cfg.to_text().lines() {
        if !(line.starts_with("output=") || line.starts_with("workers=")) {
            s += line;
            s.push('\n');
        }
    }
    let _ = writeln!(
        s,
        "\n[scene]\nlooks={:.6}\nlog_offset={:e}\nwindows={}",
        ctx.looks,
        ctx.delta,
        results.len()
    );
    s += "\n[windows]\n";
    for r in results {
        let b = r.bounds;
        let _ = writeln!(
            s,
            "window={} x0={} y0={} width={} height={} k_opt={} k_sar={} k_st={} splits={} merges={} flagged={}{}",
            r.id,
            b.x0,
            b.y0,
            b.width,
            b.height,
            r.opt.k,
            r.sar.k,
            r.stacked.k,
            r.events.iter().filter(|e| e.kind == ChangeKind::Split).count(),
            r.events.iter().filter(|e| e.kind == ChangeKind::Merge).count(),
            r.mask.count(),
            if r.degenerate { " degenerate" } else { "" }
        );
        for w in &r.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
    }
    if let Some(m) = metrics {
        s += "\n[metrics]\n";
        s += m;
    }
    s
}
