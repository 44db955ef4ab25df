//! `graphdepth` command-line pipeline.
//!
//! Exit codes: 0 success, 2 file access, 3 malformed input or usage,
//! 4 numeric or parameter contract violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphdepth::benchmark::{pair_cloud, CORRUPT_STAGE};
use graphdepth::cloud::{c2c, c2c_symmetric, c2p, c2p_symmetric, normalize_cloud, PointCloud};
use graphdepth::config::PipelineConfig;
use graphdepth::enhance::enhance_pair;
use graphdepth::estimate::EstimatorOptions;
use graphdepth::io::{
    atomic_write, metrics_table, read_clusters, read_depth, read_mask, read_ply, write_depth, write_layer_map,
    write_ply, FitReport, ImageFormat, Metadata, MetricsRow,
};
use graphdepth::{corrupt_with, derive_seed, DepthImageF64};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] graphdepth::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(graphdepth::Error::Io { .. }) => 2,
            CliError::Core(graphdepth::Error::Parse { .. }) | CliError::Usage(_) => 3,
            CliError::Core(_) => 4,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "graphdepth", version, about = "Depth-image corruption, noise estimation and graph-based enhancement")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Image format of written depth maps.
    #[arg(long, global = true, default_value_t = ImageFormat::Pgm16)]
    format: ImageFormat,
    /// Write binary little-endian PLY instead of ASCII.
    #[arg(long, global = true)]
    binary: bool,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// More log output (-v progress, -vv solver detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Pair {
    /// Left depth image; defaults to `paths.left`.
    #[arg(long)]
    left: Option<PathBuf>,
    /// Right depth image; defaults to `paths.right`.
    #[arg(long)]
    right: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Adds sensor noise and quantization to a clean image pair.
    Corrupt(Pair),
    /// Estimates per-cluster noise SDs and fits the noise law.
    Estimate {
        /// CSV with columns cluster_id, x_star_mm, y_mm; defaults to `paths.clusters`.
        #[arg(long)]
        clusters: Option<PathBuf>,
    },
    /// Enhances an observed image pair.
    Enhance(Pair),
    /// Projects an image pair into one PLY cloud in the left camera frame.
    Synth {
        #[command(flatten)]
        pair: Pair,
        /// Output file stem inside the output directory.
        #[arg(long, default_value = "cloud")]
        name: String,
        /// Attach estimated normals.
        #[arg(long)]
        normals: bool,
    },
    /// Scores candidate clouds against a reference cloud.
    Metrics {
        /// Ground-truth PLY cloud.
        #[arg(long)]
        reference: PathBuf,
        /// PLY clouds to score, one table row each.
        #[arg(long, required = true, num_args = 1..)]
        candidate: Vec<PathBuf>,
        /// Average both directions instead of reference to candidate.
        #[arg(long)]
        symmetric: bool,
        /// Skip centring and scaling the clouds.
        #[arg(long)]
        raw: bool,
        /// Also write the table here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Corrupts, optionally estimates, enhances, projects and scores the configured pair.
    Pipeline,
}

struct Context {
    cfg: PipelineConfig,
    format: ImageFormat,
    binary: bool,
}

impl Context {
    fn from_cli(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        if let Some(d) = &cli.output_dir {
            cfg.paths.output_dir = d.clone();
        }
        cfg.validate()?;
        Ok(Context {
            cfg,
            format: cli.format,
            binary: cli.binary,
        })
    }

    fn out(&self, stem: &str) -> Result<PathBuf> {
        let dir = &self.cfg.paths.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| graphdepth::Error::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        Ok(dir.join(stem))
    }

    fn image_path(&self, stem: &str) -> Result<PathBuf> {
        Ok(self.out(stem)?.with_extension(self.format.extension()))
    }

    fn inputs(&self, pair: &Pair) -> Result<(PathBuf, PathBuf)> {
        let pick = |given: &Option<PathBuf>, configured: &Option<PathBuf>, side: &str| {
            given
                .clone()
                .or_else(|| configured.clone())
                .ok_or_else(|| CliError::Usage(format!("no {side} image: pass --{side} or set paths.{side}")))
        };
        Ok((
            pick(&pair.left, &self.cfg.paths.left, "left")?,
            pick(&pair.right, &self.cfg.paths.right, "right")?,
        ))
    }

    /// Reads a view and applies its configured mask.
    fn read_view(&self, path: &Path, mask: Option<&PathBuf>) -> Result<DepthImageF64> {
        let (img, _) = read_depth(path)?;
        let Some(mask) = mask else { return Ok(img) };
        let keep = read_mask(mask, img.height(), img.width())?;
        let combined: Vec<bool> = img.mask().iter().zip(&keep).map(|(&a, &b)| a && b).collect();
        let values = img.values().iter().zip(&combined).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
        Ok(DepthImageF64::new(img.height(), img.width(), values, combined, img.intrinsics)?)
    }

    fn read_pair(&self, pair: &Pair, masks: bool) -> Result<(DepthImageF64, DepthImageF64)> {
        let (l, r) = self.inputs(pair)?;
        let p = &self.cfg.paths;
        let lm = if masks { p.left_mask.as_ref() } else { None };
        let rm = if masks { p.right_mask.as_ref() } else { None };
        Ok((self.read_view(&l, lm)?, self.read_view(&r, rm)?))
    }

    fn metadata(&self, img: &DepthImageF64, stage: &str) -> Result<Metadata> {
        let q = self.cfg.quantizer()?;
        let n = &self.cfg.noise;
        Ok(Metadata::new(&img.intrinsics, &q)
            .with("stage", stage)
            .with("seed", self.cfg.seed)
            .with("theta", q.theta())
            .with("rho", q.rho())
            .with("phi", q.phi())
            .with("alpha", n.alpha)
            .with("mu", n.mu)
            .with("kappa", n.kappa)
            .with("family", format!("{:?}", n.family).to_lowercase()))
    }

    fn write_pair(&self, stem: &str, left: &DepthImageF64, right: &DepthImageF64) -> Result<(PathBuf, PathBuf)> {
        let lp = self.image_path(&format!("{stem}_left"))?;
        let rp = self.image_path(&format!("{stem}_right"))?;
        write_depth(&lp, left, self.format, &self.metadata(left, stem)?)?;
        write_depth(&rp, right, self.format, &self.metadata(right, stem)?)?;
        Ok((lp, rp))
    }
}

fn corrupt_pair(ctx: &Context, left: &DepthImageF64, right: &DepthImageF64) -> Result<(DepthImageF64, DepthImageF64)> {
    let q = ctx.cfg.quantizer()?;
    let m = ctx.cfg.noise_model()?;
    let opts = ctx.cfg.corrupt_options();
    let seed = ctx.cfg.seed;
    Ok((
        corrupt_with(left, &q, &m, derive_seed(seed, CORRUPT_STAGE, 0), &opts)?,
        corrupt_with(right, &q, &m, derive_seed(seed, CORRUPT_STAGE, 1), &opts)?,
    ))
}

fn cmd_corrupt(ctx: &Context, pair: &Pair) -> Result<()> {
    let (l, r) = ctx.read_pair(pair, true)?;
    let (cl, cr) = corrupt_pair(ctx, &l, &r)?;
    let (lp, rp) = ctx.write_pair("corrupted", &cl, &cr)?;
    println!("wrote {} and {}", lp.display(), rp.display());
    Ok(())
}

fn estimate(ctx: &Context, clusters: &Path) -> Result<PathBuf> {
    let q = ctx.cfg.quantizer()?;
    let named = read_clusters(clusters)?;
    let report = FitReport::fit(&named, &q, ctx.cfg.noise.family, &EstimatorOptions::default())?;
    let path = ctx.out("noise_fit.json")?;
    atomic_write(&path, report.to_json().as_bytes())?;
    println!(
        "alpha {:.6e}  mu {:.4}  kappa {:.4}  from {} clusters",
        report.alpha,
        report.mu,
        report.kappa,
        report.clusters.len()
    );
    for c in &report.clusters {
        match (c.sigma_mm, &c.error) {
            (Some(s), _) => println!("  {:<12} x* {:>9.2} mm  sigma* {:.4} mm", c.id, c.x_star_mm, s),
            (None, Some(e)) => println!("  {:<12} x* {:>9.2} mm  failed: {e}", c.id, c.x_star_mm),
            (None, None) => {}
        }
    }
    Ok(path)
}

fn cmd_estimate(ctx: &Context, clusters: &Option<PathBuf>) -> Result<()> {
    let path = clusters
        .clone()
        .or_else(|| ctx.cfg.paths.clusters.clone())
        .ok_or_else(|| CliError::Usage("no clusters: pass --clusters or set paths.clusters".into()))?;
    let out = estimate(ctx, &path)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Enhanced pair and the pre-filtered pair it started from.
type Enhanced = ((DepthImageF64, DepthImageF64), (DepthImageF64, DepthImageF64));

fn enhance(ctx: &Context, left: &DepthImageF64, right: &DepthImageF64) -> Result<Enhanced> {
    let q = ctx.cfg.quantizer()?;
    let m = ctx.cfg.noise_model()?;
    let opts = ctx.cfg.enhance_options();
    let res = enhance_pair(left, right, &q, &m, &opts)?;
    write_layer_map(ctx.out("layers_left.pgm")?, &res.left_view.layers)?;
    write_layer_map(ctx.out("layers_right.pgm")?, &res.right_view.layers)?;
    let iters: usize = res.left.rows.iter().chain(&res.right.rows).map(|r| r.iterations()).sum();
    log::info!(
        "enhanced {} rows per view with {iters} solver iterations; metric relearned at rows {:?}",
        res.left.rows.len(),
        res.left.metric_updates
    );
    Ok((
        (res.left.image, res.right.image),
        (res.left_view.prefiltered, res.right_view.prefiltered),
    ))
}

fn cmd_enhance(ctx: &Context, pair: &Pair) -> Result<()> {
    let (l, r) = ctx.read_pair(pair, true)?;
    let ((el, er), _) = enhance(ctx, &l, &r)?;
    let (lp, rp) = ctx.write_pair("enhanced", &el, &er)?;
    println!("wrote {} and {}", lp.display(), rp.display());
    Ok(())
}

fn synth(ctx: &Context, name: &str, left: &DepthImageF64, right: &DepthImageF64, normals: bool) -> Result<PathBuf> {
    let mut cloud = pair_cloud(left, right);
    if normals {
        cloud = cloud.with_estimated_normals();
    }
    let path = ctx.out(&format!("{name}.ply"))?;
    write_ply(&path, &cloud, ctx.binary)?;
    Ok(path)
}

fn cmd_synth(ctx: &Context, pair: &Pair, name: &str, normals: bool) -> Result<()> {
    let (l, r) = ctx.read_pair(pair, false)?;
    let p = synth(ctx, name, &l, &r, normals)?;
    println!("wrote {}", p.display());
    Ok(())
}

fn score(reference: &PointCloud<f64>, candidate: &PointCloud<f64>, symmetric: bool, raw: bool) -> Result<(f64, f64)> {
    let norm = |c: &PointCloud<f64>| if raw { c.clone() } else { normalize_cloud(c).0 };
    let (a, b) = (norm(reference), norm(candidate));
    Ok(if symmetric {
        (c2c_symmetric(&a, &b)?, c2p_symmetric(&a, &b)?)
    } else {
        (c2c(&a, &b)?, c2p(&a, &b)?)
    })
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn cmd_metrics(reference: &Path, candidates: &[PathBuf], symmetric: bool, raw: bool, output: Option<&Path>) -> Result<()> {
    let r = read_ply(reference)?;
    let rows = candidates
        .iter()
        .map(|c| {
            let (c2c, c2p) = score(&r, &read_ply(c)?, symmetric, raw)?;
            Ok(MetricsRow { name: stem(c), c2c, c2p })
        })
        .collect::<Result<Vec<_>>>()?;
    let table = metrics_table(&rows);
    print!("{table}");
    if let Some(o) = output {
        atomic_write(o, table.as_bytes())?;
    }
    Ok(())
}

fn cmd_pipeline(ctx: &Context) -> Result<()> {
    let none = Pair { left: None, right: None };
    let (gl, gr) = ctx.read_pair(&none, true)?;
    let (cl, cr) = corrupt_pair(ctx, &gl, &gr)?;
    ctx.write_pair("corrupted", &cl, &cr)?;
    log::info!("corrupted both views with seed {}", ctx.cfg.seed);
    if let Some(clusters) = &ctx.cfg.paths.clusters {
        estimate(ctx, clusters)?;
    }
    let ((el, er), (fl, fr)) = enhance(ctx, &cl, &cr)?;
    ctx.write_pair("enhanced", &el, &er)?;
    let truth = pair_cloud(&gl, &gr);
    write_ply(ctx.out("truth.ply")?, &truth, ctx.binary)?;
    let mut rows = Vec::new();
    for (name, l, r) in [("corrupted", &cl, &cr), ("prefiltered", &fl, &fr), ("enhanced", &el, &er)] {
        let cloud = pair_cloud(l, r);
        write_ply(ctx.out(&format!("{name}.ply"))?, &cloud, ctx.binary)?;
        let (c2c, c2p) = score(&truth, &cloud, false, false)?;
        rows.push(MetricsRow { name: name.to_string(), c2c, c2p });
    }
    let table = metrics_table(&rows);
    atomic_write(ctx.out("metrics.txt")?, table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Metrics { reference, candidate, symmetric, raw, output } = &cli.command {
        return cmd_metrics(reference, candidate, *symmetric, *raw, output.as_deref());
    }
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::Corrupt(p) => cmd_corrupt(&ctx, p),
        Command::Estimate { clusters } => cmd_estimate(&ctx, clusters),
        Command::Enhance(p) => cmd_enhance(&ctx, p),
        Command::Synth { pair, name, normals } => cmd_synth(&ctx, pair, name, *normals),
        Command::Pipeline => cmd_pipeline(&ctx),
        Command::Metrics { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
