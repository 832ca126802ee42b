use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use splitmerge_core::config::{load_config, parse_config, Looks, PipelineConfig, PIPELINE_ENL_TILE};
use splitmerge_core::pipeline::{self, View};
use splitmerge_core::raster::{load_mask, load_raster, save_mask, save_raster, Bounds};
use splitmerge_core::speckle::{enhanced_lee, estimate_enl, SpeckleParams};
use splitmerge_core::synth::{generate_pair, planted_scene, SceneSpec};
use splitmerge_core::{change, evaluation, ChangeKind};

#[derive(Parser)]
#[command(
    name = "splitmerge",
    version,
    about = "Optical/SAR change detection by split and merge analysis"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: filter, tile, cluster, detect, stitch, evaluate.
    Run(RunArgs),
    /// Despeckle a SAR intensity image.
    Filter(FilterArgs),
    /// Cluster one view of one window and save its consensus partition.
    Cluster(ClusterArgs),
    /// Detect splits and merges from saved partitions.
    Detect(DetectArgs),
    /// Score a change map against a truth mask.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic optical/SAR pair with planted changes.
    Synth(SynthArgs),
}

/// Pipeline settings; each flag overrides the config file key of the same
/// name with dashes for underscores.
#[derive(Args, Default)]
struct ConfigFlags {
    /// Config file in key=value form.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    optical: Option<String>,
    #[arg(long)]
    sar: Option<String>,
    #[arg(long)]
    truth: Option<String>,
    #[arg(long)]
    output: Option<String>,
    #[arg(long)]
    window_side: Option<String>,
    #[arg(long)]
    speckle_window: Option<String>,
    /// Looks of the SAR image, or `auto`.
    #[arg(long)]
    looks: Option<String>,
    #[arg(long)]
    damping: Option<String>,
    #[arg(long)]
    enl_tile: Option<String>,
    #[arg(long)]
    fuzzifier: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    regularization: Option<String>,
    /// `membership` or `fuzzified`.
    #[arg(long)]
    covariance_weights: Option<String>,
    /// `hard` or `fuzzy`.
    #[arg(long)]
    accumulation: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    k_min: Option<String>,
    #[arg(long)]
    k_max: Option<String>,
    #[arg(long)]
    stacked_cap: Option<String>,
    #[arg(long)]
    tau_split: Option<String>,
    #[arg(long)]
    tau_merge: Option<String>,
    /// `minority` or `all`.
    #[arg(long)]
    flag_mode: Option<String>,
    #[arg(long)]
    smooth: Option<String>,
    #[arg(long)]
    strict_split: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    workers: Option<String>,
}

impl ConfigFlags {
    fn overrides(&self) -> Vec<(String, String)> {
        let pairs = [
            ("optical", &self.optical),
            ("sar", &self.sar),
            ("truth", &self.truth),
            ("output", &self.output),
            ("window_side", &self.window_side),
            ("speckle_window", &self.speckle_window),
            ("looks", &self.looks),
            ("damping", &self.damping),
            ("enl_tile", &self.enl_tile),
            ("fuzzifier", &self.fuzzifier),
            ("max_iter", &self.max_iter),
            ("tol", &self.tol),
            ("regularization", &self.regularization),
            ("covariance_weights", &self.covariance_weights),
            ("accumulation", &self.accumulation),
            ("runs", &self.runs),
            ("k_min", &self.k_min),
            ("k_max", &self.k_max),
            ("stacked_cap", &self.stacked_cap),
            ("tau_split", &self.tau_split),
            ("tau_merge", &self.tau_merge),
            ("flag_mode", &self.flag_mode),
            ("smooth", &self.smooth),
            ("strict_split", &self.strict_split),
            ("seed", &self.seed),
            ("workers", &self.workers),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }

    fn load(&self) -> Result<PipelineConfig> {
        let o = self.overrides();
        Ok(match &self.config {
            Some(p) => load_config(p, &o).with_context(|| format!("config {}", p.display()))?,
            None => parse_config("", &o)?,
        })
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: ConfigFlags,
}

#[derive(Args)]
struct FilterArgs {
    /// SAR intensity header.
    #[arg(long)]
    sar: PathBuf,
    /// Header of the filtered image.
    #[arg(long)]
    output: PathBuf,
    /// Looks, or `auto` to estimate them.
    #[arg(long, default_value = "auto")]
    looks: String,
    #[arg(long, default_value_t = 7)]
    speckle_window: usize,
    #[arg(long, default_value_t = 1.0)]
    damping: f64,
    #[arg(long, default_value_t = PIPELINE_ENL_TILE)]
    enl_tile: usize,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    cfg: ConfigFlags,
    /// `opt`, `sar` or `st`.
    #[arg(long)]
    view: String,
    /// Window id in row-major tiling order.
    #[arg(long)]
    window: usize,
}

#[derive(Args)]
struct DetectArgs {
    /// Optical partition raster.
    #[arg(long)]
    opt: PathBuf,
    /// SAR partition raster.
    #[arg(long = "sar-partition")]
    sar: PathBuf,
    /// Stacked partition raster.
    #[arg(long)]
    stacked: PathBuf,
    /// Change mask to write (PGM).
    #[arg(long)]
    output: PathBuf,
    /// Window id used in the event lines.
    #[arg(long, default_value_t = 0)]
    window: usize,
    #[arg(long, default_value_t = 0.2)]
    tau_split: f64,
    #[arg(long, default_value_t = 0.2)]
    tau_merge: f64,
    #[arg(long, default_value = "minority")]
    flag_mode: String,
    #[arg(long, default_value = "true")]
    smooth: String,
    #[arg(long, default_value = "false")]
    strict_split: String,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted change map (PGM).
    #[arg(long)]
    pred: PathBuf,
    /// Truth mask (PGM).
    #[arg(long)]
    truth: PathBuf,
    /// Also write the metrics block here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec in key=value form; the built-in planted-change scene when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Seed for the built-in scene.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory for optical.hdr, sar.hdr, truth.pgm and scene.txt.
    #[arg(long)]
    output: PathBuf,
}

fn parse_bool(name: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => bail!("{name}: expected a boolean, got {v:?}"),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = args.cfg.load()?;
    let summary = pipeline::run_pipeline(&cfg)?;
    println!(
        "windows={} splits={} merges={} flagged={}",
        summary.windows.len(),
        summary.count(ChangeKind::Split),
        summary.count(ChangeKind::Merge),
        summary.change_map.count()
    );
    if let Some(m) = summary.metrics {
        println!("f1={:.4} kappa={:.4}", m.f1, m.kappa);
    }
    println!("artifacts in {}", cfg.output.display());
    Ok(())
}

fn filter(args: FilterArgs) -> Result<()> {
    let sar = load_raster(&args.sar)?;
    let looks = match args.looks.parse::<Looks>()? {
        Looks::Fixed(l) => l,
        Looks::Auto => {
            let tile = args.enl_tile.min(sar.width()).min(sar.height());
            estimate_enl(&sar, tile)?.looks
        }
    };
    let p = SpeckleParams {
        window_side: args.speckle_window,
        looks,
        damping: args.damping,
    };
    let out = enhanced_lee(&sar, &p)?;
    save_raster(&out, &args.output)?;
    println!("looks={looks:.4}");
    Ok(())
}

fn cluster(args: ClusterArgs) -> Result<()> {
    let cfg = args.cfg.load()?;
    let view: View = args.view.parse()?;
    let prep = pipeline::prepare(&cfg)?;
    let r = pipeline::cluster_window(&prep, &cfg, args.window, view)?;
    let bounds: Bounds = prep.windows[args.window];
    fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    let path = cfg
        .output
        .join(format!("partition_{}_{}.hdr", view.as_str(), args.window));
    pipeline::save_partition(&r.consensus, bounds, &path)?;
    let draws: Vec<String> = r.consensus.draws.iter().map(|k| k.to_string()).collect();
    println!(
        "k={} draws={} partition={}",
        r.consensus.k,
        draws.join(","),
        path.display()
    );
    Ok(())
}

fn detect(args: DetectArgs) -> Result<()> {
    let (w, h, opt) = pipeline::load_partition(&args.opt)?;
    let (ws, hs, sar) = pipeline::load_partition(&args.sar)?;
    let (wt, ht, st) = pipeline::load_partition(&args.stacked)?;
    if (w, h) != (ws, hs) || (w, h) != (wt, ht) {
        bail!("partitions differ in shape");
    }
    let p = change::ChangeParams {
        tau_split: args.tau_split,
        tau_merge: args.tau_merge,
        flag_mode: args.flag_mode.parse()?,
        smooth: parse_bool("smooth", &args.smooth)?,
        strict_split: parse_bool("strict_split", &args.strict_split)?,
    };
    p.validate()?;
    let (events, mask) = pipeline::detect_window(&opt, &sar, &st, w, h, &p)?;
    for e in &events {
        println!("{}", e.report_line(args.window));
    }
    save_mask(&mask, &args.output)?;
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let pred = load_mask(&args.pred, None)?;
    let truth = load_mask(&args.truth, Some((pred.width(), pred.height())))?;
    let c = evaluation::confusion(&pred, &truth)?;
    let m = evaluation::metrics(&c)?;
    let block = evaluation::metrics_block(&c, &m);
    print!("{block}");
    if let Some(p) = args.output {
        fs::write(&p, &block).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = match &args.scene {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SceneSpec::parse(&text)?
        }
        None => planted_scene(args.seed),
    };
    let (opt, sar, truth) = generate_pair(&spec)?;
    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    save_raster(&opt, args.output.join("optical.hdr"))?;
    save_raster(&sar, args.output.join("sar.hdr"))?;
    save_mask(&truth, args.output.join("truth.pgm"))?;
    fs::write(args.output.join("scene.txt"), spec.to_text())?;
    println!(
        "{}x{} scene, {} changed pixels, written to {}",
        spec.width,
        spec.height,
        truth.count(),
        args.output.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Filter(a) => filter(a),
        Command::Cluster(a) => cluster(a),
        Command::Detect(a) => detect(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
