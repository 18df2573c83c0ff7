//! `phsar`: train, apply and benchmark anchored-regression super-resolution
//! models.
//!
//! Exit codes: 0 success, 2 argument errors, 3 I/O and file-format errors,
//! 4 training failures (no usable pairs). Diagnostics go to stderr; data
//! goes to declared output files or stdout only.

mod config_file;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use phsar_core::bench::{evaluate, list_images, render_table, EvalOptions};
use phsar_core::features::FeatureWeights;
use phsar_core::image::{load_image, save_image, GrayImage};
use phsar_core::learner::{default_min_samples, train, PstParams, TrainConfig};
use phsar_core::model::{model_fingerprint, Model};
use phsar_core::pst::{apply_pst, build_kernel};
use phsar_core::upscaler::upscale;
use phsar_core::{Error, Result};

use config_file::{resolve, resolve_switch, ConfigFile};

#[derive(Parser)]
#[command(name = "phsar", version, about = "Anchored-regression single-image super-resolution with phase stretch features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Optional `key = value` config file; flags override it.
    #[arg(long, global = false)]
    config: Option<PathBuf>,
    /// Cap the worker thread count. Results are independent of this value.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory of high-resolution training images (PNG/PGM).
    #[arg(long)]
    hr_dir: Option<PathBuf>,
    /// Integer upscale factor (2, 3 or 4).
    #[arg(long)]
    scale: Option<usize>,
    /// Odd patch side length.
    #[arg(long)]
    patch: Option<usize>,
    /// Number of k-means anchor points.
    #[arg(long)]
    clusters: Option<usize>,
    /// Tikhonov ridge weight (scaled by trace/d).
    #[arg(long)]
    ridge: Option<f64>,
    /// Buckets with fewer samples fall back to the delta filter
    /// (default 4·patch²).
    #[arg(long)]
    min_samples: Option<usize>,
    /// PRNG seed; every source of randomness flows from it.
    #[arg(long)]
    seed: Option<u64>,
    /// PST phase strength S.
    #[arg(long)]
    pst_s: Option<f64>,
    /// PST frequency warp W.
    #[arg(long)]
    pst_w: Option<f64>,
    /// PST low-pass width as a fraction of the Nyquist radius.
    #[arg(long)]
    pst_sigma: Option<f64>,
    /// Drop the PST feature (RAISR-like ablation training).
    #[arg(long)]
    no_pst: bool,
    /// Use one bucket per cluster instead of scale² phase sub-buckets.
    #[arg(long)]
    no_phase_stratify: bool,
    /// k-means iteration cap.
    #[arg(long)]
    kmeans_max_iter: Option<usize>,
    /// k-means convergence tolerance (max centroid movement).
    #[arg(long)]
    kmeans_tol: Option<f64>,
    /// Cap on feature vectors fed to k-means (deterministic stride).
    #[arg(long)]
    feature_cap: Option<usize>,
    /// Output model file (.phsar).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct UpscaleArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Low-resolution input image.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output image path (.png or .pgm).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory of ground-truth images to evaluate against.
    #[arg(long)]
    hr_dir: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also run the PST-skipping ablated path (needs a --no-pst model).
    #[arg(long)]
    ablate: bool,
}

#[derive(Args)]
struct PstArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output phase image, rescaled to [0, 1].
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    pst_s: Option<f64>,
    #[arg(long)]
    pst_w: Option<f64>,
    #[arg(long)]
    pst_sigma: Option<f64>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a filter bank on a directory of images.
    Train(TrainArgs),
    /// Upscale one image with a trained model.
    Upscale(UpscaleArgs),
    /// Benchmark a model against bicubic over a directory.
    Eval(EvalArgs),
    /// Write the phase stretch transform of an image for inspection.
    Pst(PstArgs),
    /// Print a model's header, bucket counts and filter norms.
    Inspect(InspectArgs),
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) => 2,
        Error::Io { .. } | Error::Format(_) | Error::Model(_) => 3,
        Error::Training(_) => 4,
    }
}

/// Data to stdout; a consumer that closes the pipe early (`head`) is a
/// normal exit, not a panic.
fn write_stdout(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: stdout: {e}");
        std::process::exit(3);
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Upscale(args) => cmd_upscale(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Pst(args) => cmd_pst(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn setup(common: &CommonArgs) -> Result<ConfigFile> {
    let config = match &common.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let threads = match common.threads {
        Some(t) => Some(t),
        None => config.get::<usize>("threads")?,
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Argument("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Argument(format!("--threads: {e}")))?;
    }
    Ok(config)
}

fn finish_config(config: &ConfigFile) {
    let unused = config.unused_keys();
    if !unused.is_empty() {
        eprintln!("warning: unused config keys: {}", unused.join(", "));
    }
}

fn require(path: Option<PathBuf>, config: &ConfigFile, key: &str) -> Result<PathBuf> {
    if let Some(p) = path {
        return Ok(p);
    }
    if let Some(p) = config.get::<PathBuf>(key)? {
        return Ok(p);
    }
    Err(Error::Argument(format!("missing required --{key}")))
}

fn ensure(cond: bool, flag: &str, msg: String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Argument(format!("{flag}: {msg}")))
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = setup(&args.common)?;

    let scale = resolve(args.scale, &config, "scale", 2)?;
    let patch = resolve(args.patch, &config, "patch", 11)?;
    let clusters = resolve(args.clusters, &config, "clusters", 64)?;
    let ridge = resolve(args.ridge, &config, "ridge", 1e-6)?;
    let min_samples = resolve(
        args.min_samples,
        &config,
        "min-samples",
        default_min_samples(patch),
    )?;
    let seed = resolve(args.seed, &config, "seed", 0)?;
    let pst_s = resolve(args.pst_s, &config, "pst-s", phsar_core::pst::DEFAULT_STRENGTH)?;
    let pst_w = resolve(args.pst_w, &config, "pst-w", phsar_core::pst::DEFAULT_WARP)?;
    let pst_sigma = resolve(
        args.pst_sigma,
        &config,
        "pst-sigma",
        phsar_core::pst::DEFAULT_LP_SIGMA,
    )?;
    let no_pst = resolve_switch(args.no_pst, &config, "no-pst")?;
    let no_stratify = resolve_switch(args.no_phase_stratify, &config, "no-phase-stratify")?;
    let defaults = TrainConfig::default();
    let kmeans_max_iter = resolve(
        args.kmeans_max_iter,
        &config,
        "kmeans-max-iter",
        defaults.kmeans_max_iter,
    )?;
    let kmeans_tol = resolve(args.kmeans_tol, &config, "kmeans-tol", defaults.kmeans_tol)?;
    let feature_cap = resolve(args.feature_cap, &config, "feature-cap", defaults.feature_cap)?;
    let hr_dir = require(args.hr_dir, &config, "hr-dir")?;
    let out = require(args.out, &config, "out")?;

    // Validate every numeric flag before touching any file.
    ensure((2..=4).contains(&scale), "--scale", format!("must be 2, 3 or 4, got {scale}"))?;
    ensure(
        patch >= 3 && patch % 2 == 1,
        "--patch",
        format!("must be an odd integer >= 3, got {patch}"),
    )?;
    ensure(clusters >= 1, "--clusters", format!("must be >= 1, got {clusters}"))?;
    ensure(
        ridge.is_finite() && ridge >= 0.0,
        "--ridge",
        format!("must be finite and >= 0, got {ridge}"),
    )?;
    ensure(
        pst_s.is_finite() && pst_s >= 0.0,
        "--pst-s",
        format!("must be >= 0, got {pst_s}"),
    )?;
    ensure(
        pst_w.is_finite() && pst_w > 0.0,
        "--pst-w",
        format!("must be > 0, got {pst_w}"),
    )?;
    ensure(
        pst_sigma.is_finite() && pst_sigma > 0.0,
        "--pst-sigma",
        format!("must be > 0, got {pst_sigma}"),
    )?;
    ensure(
        kmeans_max_iter >= 1,
        "--kmeans-max-iter",
        format!("must be >= 1, got {kmeans_max_iter}"),
    )?;
    ensure(
        kmeans_tol.is_finite() && kmeans_tol >= 0.0,
        "--kmeans-tol",
        format!("must be finite and >= 0, got {kmeans_tol}"),
    )?;
    ensure(
        feature_cap >= 1,
        "--feature-cap",
        format!("must be >= 1, got {feature_cap}"),
    )?;
    finish_config(&config);

    let cfg = TrainConfig {
        scale,
        patch_size: patch,
        clusters,
        ridge_lambda: ridge,
        min_samples,
        pst: PstParams {
            strength: pst_s,
            warp: pst_w,
            lp_sigma: pst_sigma,
        },
        feature_weights: FeatureWeights {
            pst: if no_pst { 0.0 } else { 1.0 },
            ..FeatureWeights::default()
        },
        seed,
        phase_stratify: !no_stratify,
        kmeans_max_iter,
        kmeans_tol,
        feature_cap,
    };
    cfg.validate()?;

    let paths = list_images(&hr_dir)?;
    if paths.is_empty() {
        return Err(Error::Argument(format!(
            "--hr-dir: no PNG/PGM images in {}",
            hr_dir.display()
        )));
    }
    eprintln!("training on {} images from {}", paths.len(), hr_dir.display());

    let model = train(&paths, &cfg)?;
    model.save(&out)?;

    let counts = model.counts();
    let mut sorted: Vec<u64> = counts.to_vec();
    sorted.sort_unstable();
    let filled = counts
        .iter()
        .filter(|&&c| c >= min_samples as u64)
        .count();
    eprintln!(
        "model written to {} ({})",
        out.display(),
        model_fingerprint(&model)
    );
    eprintln!(
        "buckets: {} total, {} filled (>= {} samples), {} fallback to delta",
        model.bucket_count(),
        filled,
        min_samples,
        model.fallback_count()
    );
    eprintln!(
        "samples: total {}, per bucket min {} / median {} / max {}",
        counts.iter().sum::<u64>(),
        sorted.first().unwrap_or(&0),
        sorted.get(sorted.len() / 2).unwrap_or(&0),
        sorted.last().unwrap_or(&0),
    );
    let median = *sorted.get(sorted.len() / 2).unwrap_or(&0);
    if median < 8 * cfg.dim() as u64 {
        eprintln!(
            "hint: the median bucket holds {median} samples for {} filter \
             coefficients; filters may overfit. More training images or \
             fewer --clusters will help.",
            cfg.dim()
        );
    }
    Ok(())
}

fn cmd_upscale(args: UpscaleArgs) -> Result<()> {
    let config = setup(&args.common)?;
    let model_path = require(args.model, &config, "model")?;
    let input = require(args.input, &config, "input")?;
    let output = require(args.output, &config, "output")?;
    finish_config(&config);

    let model = Model::load(&model_path)?;
    let lr = load_image(&input)?;
    let out = upscale(&lr, &model)?;
    save_image(&out, &output)?;
    eprintln!(
        "{} ({}x{}) -> {} ({}x{})",
        input.display(),
        lr.width(),
        lr.height(),
        output.display(),
        out.width(),
        out.height()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let config = setup(&args.common)?;
    let model_path = require(args.model, &config, "model")?;
    let hr_dir = require(args.hr_dir, &config, "hr-dir")?;
    let report_path = require(args.report, &config, "report")?;
    let ablate = resolve_switch(args.ablate, &config, "ablate")?;
    finish_config(&config);

    let model = Model::load(&model_path)?;
    let opts = EvalOptions {
        ablate,
        ..EvalOptions::default()
    };
    let report = evaluate(&model, &hr_dir, &opts)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Argument(format!("report serialization: {e}")))?;
    std::fs::write(&report_path, json.as_bytes()).map_err(|e| Error::io(&report_path, e))?;
    write_stdout(&render_table(&report));
    eprintln!("report written to {}", report_path.display());
    Ok(())
}

fn cmd_pst(args: PstArgs) -> Result<()> {
    let config = setup(&args.common)?;
    let input = require(args.input, &config, "input")?;
    let output = require(args.output, &config, "output")?;
    let pst_s = resolve(args.pst_s, &config, "pst-s", phsar_core::pst::DEFAULT_STRENGTH)?;
    let pst_w = resolve(args.pst_w, &config, "pst-w", phsar_core::pst::DEFAULT_WARP)?;
    let pst_sigma = resolve(
        args.pst_sigma,
        &config,
        "pst-sigma",
        phsar_core::pst::DEFAULT_LP_SIGMA,
    )?;
    ensure(
        pst_s.is_finite() && pst_s >= 0.0,
        "--pst-s",
        format!("must be >= 0, got {pst_s}"),
    )?;
    ensure(
        pst_w.is_finite() && pst_w > 0.0,
        "--pst-w",
        format!("must be > 0, got {pst_w}"),
    )?;
    ensure(
        pst_sigma.is_finite() && pst_sigma > 0.0,
        "--pst-sigma",
        format!("must be > 0, got {pst_sigma}"),
    )?;
    finish_config(&config);

    let img = load_image(&input)?;
    let kernel = build_kernel(img.width(), img.height(), pst_s, pst_w, pst_sigma)?;
    let phase = apply_pst(&img, &kernel)?;
    let rescaled = GrayImage::from_fn(img.width(), img.height(), |x, y| {
        (phase.get(x, y) + std::f64::consts::PI) / (2.0 * std::f64::consts::PI)
    })?;
    save_image(&rescaled, &output)?;
    eprintln!("phase image written to {}", output.display());
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let config = setup(&args.common)?;
    let model_path = require(args.model, &config, "model")?;
    finish_config(&config);

    let model = Model::load(&model_path)?;
    let cfg = model.config();
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("model {}", model_fingerprint(&model)));
    line(format!("  scale: {}", cfg.scale));
    line(format!("  patch: {} (d = {})", cfg.patch_size, cfg.dim()));
    line(format!("  clusters: {}", cfg.clusters));
    line(format!(
        "  buckets: {} ({})",
        model.bucket_count(),
        if cfg.phase_stratify {
            format!("{} clusters x {} phases", cfg.clusters, cfg.phases())
        } else {
            "no phase stratification".to_string()
        }
    ));
    line(format!("  seed: {}", cfg.seed));
    line(format!(
        "  pst: S = {}, W = {}, lp-sigma = {}, feature weight = {}",
        cfg.pst.strength, cfg.pst.warp, cfg.pst.lp_sigma, cfg.feature_weights.pst
    ));
    line(format!("  ridge: {}", cfg.ridge_lambda));
    line(format!("  min samples: {}", cfg.min_samples));
    line(format!("  fallback buckets: {}", model.fallback_count()));
    line("  bucket  samples  fallback  |h|".to_string());
    for b in 0..model.bucket_count() {
        let norm: f64 = model.filter(b).iter().map(|v| v * v).sum::<f64>().sqrt();
        line(format!(
            "  {:>6}  {:>7}  {:>8}  {:.6}",
            b,
            model.counts()[b],
            if model.fallback_flags()[b] { "yes" } else { "no" },
            norm
        ));
    }
    write_stdout(&out);
    Ok(())
}
