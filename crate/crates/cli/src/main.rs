use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use painterly::checks::{run_all, CheckConfig};
use painterly::image::{load_image, load_labels, psnr, save_image};
use painterly::losses::no_features;
use painterly::optimize::reconstruct;
use painterly::timeline::{TextureMode, Timeline};
use painterly_cli::bench::{render_table, run_bench, BenchKind, BenchSpec};
use painterly_cli::config::{Config, Overrides};
use painterly_cli::frames::emit_frames;

#[derive(Parser)]
#[command(
    name = "painterly",
    version,
    about = "Rebuilds an image as an ordered timeline of paint and smudge strokes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a stroke timeline against a target image
    Reconstruct(ReconstructArgs),
    /// Re-render a saved timeline into frames and a final image
    Replay(ReplayArgs),
    /// Time renderer variants and report speedup and output parity
    Bench(BenchArgs),
    /// Compare analytic gradients against central differences
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TextureFlag {
    None,
    Procedural,
    External,
}

impl From<TextureFlag> for TextureMode {
    fn from(t: TextureFlag) -> Self {
        match t {
            TextureFlag::None => TextureMode::None,
            TextureFlag::Procedural => TextureMode::Procedural,
            TextureFlag::External => TextureMode::External,
        }
    }
}

#[derive(Args)]
struct ReconstructArgs {
    /// Target image (PNG, PPM, or PGM)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Segment label map (PGM, one label per pixel)
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Timeline output path (default <out>/timeline.json)
    #[arg(long)]
    timeline: Option<PathBuf>,
    /// Seed for every random choice in the run
    #[arg(long)]
    seed: Option<u64>,
    /// Coarse-to-fine level count
    #[arg(long)]
    levels: Option<usize>,
    /// Total paint-stroke budget across all levels
    #[arg(long)]
    strokes: Option<usize>,
    /// Stamps per stroke (curve segments + 1)
    #[arg(long)]
    stamps: Option<usize>,
    /// Brush texture applied in the detail pass
    #[arg(long, value_enum)]
    texture: Option<TextureFlag>,
    /// Emit every k-th frame instead of the level-based default
    #[arg(long)]
    frames_stride: Option<usize>,
    /// TOML config file; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Timeline JSON to replay
    #[arg(long)]
    timeline: PathBuf,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Emit every k-th frame instead of the level-based default
    #[arg(long)]
    frames_stride: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchKindFlag {
    Paint,
    Smudge,
}

#[derive(Args)]
struct BenchArgs {
    /// Which renderer pair to time
    #[arg(value_enum)]
    kind: BenchKindFlag,
    /// Square canvas sizes, comma-separated
    #[arg(long = "size", value_delimiter = ',', default_value = "1024")]
    sizes: Vec<usize>,
    /// Stamp counts per stroke, comma-separated
    #[arg(long, value_delimiter = ',', default_value = "10,20,100")]
    stamps: Vec<usize>,
    /// Strokes per timed scene
    #[arg(long, default_value_t = 24)]
    strokes: usize,
    /// Stroke radius in pixels (default: paint 100, smudge 25)
    #[arg(long)]
    radius: Option<f64>,
    /// Timed repeats after one warmup pass
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Seed for scene generation
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write amplified per-pixel difference images into this directory
    #[arg(long)]
    diff_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random configurations per component
    #[arg(long, default_value_t = 200)]
    configs: usize,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Maximum allowed relative error
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Coverage-boundary softness under test
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Base seed; each component draws its own stream
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    cfg.apply(&Overrides {
        input: a.input,
        labels: a.labels,
        out: a.out,
        timeline: a.timeline,
        seed: a.seed,
        levels: a.levels,
        strokes: a.strokes,
        stamps: a.stamps,
        texture: a.texture.map(TextureMode::from),
        frames_stride: a.frames_stride,
    })?;

    let input = cfg
        .input
        .clone()
        .context("no target image: pass --input or set `input` in the config file")?;
    let target = load_image(&input).with_context(|| format!("reading {}", input.display()))?;
    let labels = match &cfg.labels {
        Some(p) => Some(load_labels(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };

    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))?;

    let started = Instant::now();
    let rec = reconstruct(&target, labels.as_ref(), &cfg.run, None, no_features())?;

    let config_path = cfg.out.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml())
        .with_context(|| format!("writing {}", config_path.display()))?;
    let timeline_path = cfg.timeline_path();
    std::fs::write(&timeline_path, rec.timeline.to_json())
        .with_context(|| format!("writing {}", timeline_path.display()))?;
    save_image(&rec.canvas, cfg.out.join("final.png"))?;
    emit_frames(&rec.timeline, &cfg.out, cfg.frames_stride)?;

    for (i, loss) in rec.level_pixel_loss.iter().enumerate() {
        println!("level {}: pixel L1 {:.6}", i + 1, loss);
    }
    println!(
        "committed {} events in {:.1}s",
        rec.timeline.events.len(),
        started.elapsed().as_secs_f64()
    );
    println!("final PSNR: {:.2} dB", psnr(&rec.canvas, &target)?);
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.timeline)
        .with_context(|| format!("reading timeline {}", a.timeline.display()))?;
    let tl = Timeline::from_json(&text)
        .with_context(|| format!("parsing timeline {}", a.timeline.display()))?;
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("creating output directory {}", a.out.display()))?;
    let final_canvas = emit_frames(&tl, &a.out, a.frames_stride)?;
    save_image(&final_canvas, a.out.join("final.png"))?;
    println!(
        "replayed {} events onto a {}x{} canvas",
        tl.events.len(),
        tl.width,
        tl.height
    );
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let kind = match a.kind {
        BenchKindFlag::Paint => BenchKind::Paint,
        BenchKindFlag::Smudge => BenchKind::Smudge,
    };
    let radius = a.radius.unwrap_or(match kind {
        BenchKind::Paint => 100.0,
        BenchKind::Smudge => 25.0,
    });
    let spec = BenchSpec {
        kind,
        sizes: a.sizes,
        stamps: a.stamps,
        strokes: a.strokes,
        radius,
        repeats: a.repeats,
        seed: a.seed,
        diff_dir: a.diff_dir,
    };
    let rows = run_bench(&spec)?;
    println!(
        "{} strokes, radius {}, {} timed repeats (1 warmup), seed {}",
        spec.strokes, spec.radius, spec.repeats, spec.seed
    );
    print!("{}", render_table(kind, &rows));
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let cfg = CheckConfig {
        configs: a.configs,
        eps: a.eps,
        tol: a.tol,
        tau: a.tau,
        seed: a.seed,
    };
    let started = Instant::now();
    let reports = run_all(&cfg);
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!(
        "{} components, {} failed, {:.2}s",
        reports.len(),
        failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        anyhow::bail!("{failed} gradient component(s) exceeded tolerance");
    }
    Ok(())
}
