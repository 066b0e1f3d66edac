use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use smoothstroke::apps::{abstract_job, areas_job, fill_job, load_target};
use smoothstroke::config::{load_config, JobConfig};
use smoothstroke::engine::{run_with, EngineError, OptimJob, RunHooks, RunOutput};
use smoothstroke::objectives::{SubprocessProvider, Term};
use smoothstroke::raster::{BitDepth, Canvas, RasterConfig};
use smoothstroke::scene::Scene;
use smoothstroke::smoothing::GramMode;
use smoothstroke::svg::{export_svg, import_svg};

/// Smooth vector strokes and areas from images.
#[derive(Parser)]
#[command(name = "smoothstroke", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fill the dark parts of a target with long smooth strokes.
    Fill(FillArgs),
    /// Fit a few strokes to a target or to gradients from a provider process.
    Abstract(AbstractArgs),
    /// Vectorize a target into closed areas with palette colors.
    Areas(AreasArgs),
    /// Rasterize a saved scene (JSON or exported SVG) to PNG.
    Render(RenderArgs),
    /// Write a saved scene as SVG.
    Export(ExportArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML job file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output SVG; the trace (.csv), scene (.json) and preview (.png) are
    /// written next to it.
    #[arg(long, default_value = "out.svg")]
    out: PathBuf,
    /// Trace CSV path (default: <out>.csv).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Spline degree.
    #[arg(long)]
    degree: Option<usize>,
    /// Derivative order penalized by the smoothing term.
    #[arg(long)]
    smooth_order: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    smooth_mode: Option<GramMode>,
    /// Resize the target to WxH.
    #[arg(long, value_parser = parse_size)]
    size: Option<[usize; 2]>,
    #[arg(long)]
    keypoints: Option<usize>,
    #[arg(long)]
    strokes: Option<usize>,
    /// Key-point multiplicity (3 gives sharp corners with quintics).
    #[arg(long)]
    multiplicity: Option<usize>,
    /// Initial stroke radius in pixels.
    #[arg(long)]
    width: Option<f64>,
    #[arg(long)]
    width_min: Option<f64>,
    #[arg(long)]
    width_max: Option<f64>,
    /// Fit the target as if painted at this opacity.
    #[arg(long)]
    opacity: Option<f64>,
    #[arg(long)]
    lambda_smooth: Option<f64>,
    #[arg(long)]
    lambda_box: Option<f64>,
    #[arg(long)]
    lambda_repulsion: Option<f64>,
    #[arg(long)]
    lambda_coverage: Option<f64>,
    #[arg(long)]
    lambda_overlap: Option<f64>,
    #[arg(long)]
    lambda_alignment: Option<f64>,
    #[arg(long)]
    lambda_balance: Option<f64>,
    #[arg(long)]
    lambda_external: Option<f64>,
    /// Write SVG and PNG checkpoints every N steps.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args)]
struct FillArgs {
    #[arg(long)]
    target: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AbstractArgs {
    #[arg(long)]
    target: Option<PathBuf>,
    /// Command line of a gradient provider speaking the SVPROV1 protocol.
    #[arg(long)]
    provider: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AreasArgs {
    #[arg(long)]
    target: Option<PathBuf>,
    /// Grayscale saliency map; brighter means more detail.
    #[arg(long)]
    saliency: Option<PathBuf>,
    /// Comma-separated hex colors; extracted from the target when absent.
    #[arg(long)]
    palette: Option<String>,
    /// Palette size for extraction.
    #[arg(long)]
    k: Option<usize>,
    /// Number of initial areas.
    #[arg(long)]
    areas: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RenderArgs {
    /// Scene JSON, or an SVG written by `export`.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    samples: usize,
    /// Write 16-bit PNG.
    #[arg(long)]
    sixteen_bit: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    samples: usize,
}

fn parse_mode(s: &str) -> Result<GramMode, String> {
    match s {
        "exact" => Ok(GramMode::Exact),
        "pspline" => Ok(GramMode::Pspline),
        _ => Err(format!("expected `exact` or `pspline`, got `{s}`")),
    }
}

fn parse_size(s: &str) -> Result<[usize; 2], String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let w = w.parse().map_err(|_| format!("bad width in `{s}`"))?;
    let h = h.parse().map_err(|_| format!("bad height in `{s}`"))?;
    Ok([w, h])
}

fn base_config(common: &Common) -> Result<JobConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => JobConfig::default(),
    };
    let c = common;
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(c.steps => cfg.job.steps);
    set!(c.seed => cfg.job.seed);
    set!(c.degree => cfg.spline.degree);
    set!(c.smooth_order => cfg.smoothing.order);
    set!(c.smooth_mode => cfg.smoothing.mode);
    set!(c.keypoints => cfg.seeding.keypoints);
    set!(c.strokes => cfg.seeding.strokes);
    set!(c.multiplicity => cfg.spline.multiplicity);
    set!(c.width => cfg.seeding.width);
    set!(c.width_min => cfg.optimizer.width_min);
    set!(c.width_max => cfg.optimizer.width_max);
    set!(c.opacity => cfg.job.target_opacity);
    set!(c.checkpoint_every => cfg.job.checkpoint_every);
    if c.size.is_some() {
        cfg.job.size = c.size;
    }
    for (flag, term) in [
        (c.lambda_smooth, Term::Smooth),
        (c.lambda_box, Term::Box),
        (c.lambda_repulsion, Term::Repulsion),
        (c.lambda_coverage, Term::Coverage),
        (c.lambda_overlap, Term::Overlap),
        (c.lambda_alignment, Term::Alignment),
        (c.lambda_balance, Term::Balance),
        (c.lambda_external, Term::External),
    ] {
        if let Some(v) = flag {
            cfg.weights.set(term, v);
        }
    }
    Ok(cfg)
}

fn target_path(flag: &Option<PathBuf>, cfg: &JobConfig) -> Option<PathBuf> {
    flag.clone().or_else(|| cfg.job.target.clone())
}

fn sibling(out: &Path, ext: &str) -> PathBuf {
    out.with_extension(ext)
}

fn write_outputs(common: &Common, cfg: &JobConfig, out: &RunOutput) -> Result<()> {
    let per = cfg.spline.samples_per_segment;
    let svg = export_svg(&out.scene, per)?;
    std::fs::write(&common.out, svg).with_context(|| format!("writing {}", common.out.display()))?;
    let trace = common.trace.clone().unwrap_or_else(|| sibling(&common.out, "csv"));
    let f = std::fs::File::create(&trace).with_context(|| format!("writing {}", trace.display()))?;
    out.trace.write_csv(f)?;
    out.scene.save(sibling(&common.out, "json"))?;
    let raster = RasterConfig {
        band: cfg.raster.band,
        sharpness: cfg.raster.sharpness,
    };
    out.scene.render(&raster, per)?.save_png(sibling(&common.out, "png"), BitDepth::Eight)?;
    Ok(())
}

fn execute(common: &Common, cfg: &JobConfig, job: &OptimJob, provider: Option<&str>) -> Result<()> {
    for p in [Some(&common.out), common.trace.as_ref()].into_iter().flatten() {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    let mut provider = provider.map(SubprocessProvider::from_command_line).transpose()?;
    let per = cfg.spline.samples_per_segment;
    let raster = job.raster;
    let out_path = common.out.clone();
    let mut checkpoint = |step: usize, scene: &Scene| -> Result<(), String> {
        let stem = out_path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
        let base = out_path.with_file_name(format!("{stem}_step{step:04}"));
        let svg = export_svg(scene, per).map_err(|e| e.to_string())?;
        std::fs::write(base.with_extension("svg"), svg).map_err(|e| e.to_string())?;
        scene
            .render(&raster, per)
            .map_err(|e| e.to_string())?
            .save_png(base.with_extension("png"), BitDepth::Eight)
            .map_err(|e| e.to_string())
    };
    let hooks = RunHooks {
        provider: provider.as_mut().map(|p| p as &mut dyn smoothstroke::objectives::ExternalGradientProvider),
        checkpoint: Some(&mut checkpoint),
    };
    match run_with(job, hooks) {
        Ok(out) => {
            write_outputs(common, cfg, &out)?;
            let first = out.trace.first().map_or(f64::NAN, |r| r.total);
            let last = out.trace.last().map_or(f64::NAN, |r| r.total);
            println!(
                "{} steps, loss {first:.6} -> {last:.6}, wrote {}",
                job.steps,
                common.out.display()
            );
            Ok(())
        }
        Err(EngineError::NonFinite { step, what, last_good }) => {
            let dump = sibling(&common.out, "lastgood.json");
            last_good.save(&dump)?;
            bail!("aborted at step {step}: {what} is not finite; last finite scene saved to {}", dump.display())
        }
        Err(e) => Err(e.into()),
    }
}

fn load_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg")) {
        Ok(import_svg(&text)?)
    } else {
        Ok(Scene::from_json(&text)?)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fill(a) => {
            let cfg = base_config(&a.common)?;
            cfg.validate()?;
            let path = target_path(&a.target, &cfg).ok_or_else(|| anyhow!("fill needs --target"))?;
            let target = load_target(&path, cfg.job.size)?;
            let job = fill_job(&cfg, target)?;
            execute(&a.common, &cfg, &job, None)
        }
        Command::Abstract(a) => {
            let cfg = base_config(&a.common)?;
            cfg.validate()?;
            let target = target_path(&a.target, &cfg).map(|p| load_target(&p, cfg.job.size)).transpose()?;
            let job = abstract_job(&cfg, target, a.provider.is_some())?;
            execute(&a.common, &cfg, &job, a.provider.as_deref())
        }
        Command::Areas(a) => {
            let mut cfg = base_config(&a.common)?;
            if a.palette.is_some() {
                cfg.palette.colors = a.palette.clone();
            }
            if let Some(k) = a.k {
                cfg.palette.k = k;
            }
            if let Some(n) = a.areas {
                cfg.seeding.areas = n;
            }
            cfg.validate()?;
            let path = target_path(&a.target, &cfg).ok_or_else(|| anyhow!("areas needs --target"))?;
            let target = load_target(&path, cfg.job.size)?;
            let saliency = match a.saliency.clone().or_else(|| cfg.job.saliency.clone()) {
                Some(p) => load_target(&p, Some([target.width, target.height]))?.to_gray(),
                None => Canvas::filled(target.width, target.height, &[1.0])?,
            };
            let job = areas_job(&cfg, target, &saliency)?;
            execute(&a.common, &cfg, &job, None)
        }
        Command::Render(a) => {
            let scene = load_scene(&a.scene)?;
            let img = scene.render(&RasterConfig::default(), a.samples)?;
            let depth = if a.sixteen_bit { BitDepth::Sixteen } else { BitDepth::Eight };
            img.save_png(&a.out, depth)?;
            Ok(())
        }
        Command::Export(a) => {
            let scene = load_scene(&a.scene)?;
            std::fs::write(&a.out, export_svg(&scene, a.samples)?).with_context(|| format!("writing {}", a.out.display()))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
