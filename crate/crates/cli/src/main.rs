//! `dotflow` — generate synthetic structured-light sequences, run the
//! incremental disparity engine over them, evaluate the results and render
//! diagnostic images.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod config;
mod vis;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use dotflow_core::estimator::{self, Ablation, RefineParams};
use dotflow_core::eval::{self, InvalidPolicy, MetricsRow};
use dotflow_core::flow::{compute_pattern_flow, FlowParams};
use dotflow_core::io::{self, SequenceManifest};
use dotflow_core::pattern::{generate_pattern, verify_row_uniqueness, Pattern};
use dotflow_core::preprocess::{lcn, LCN_EPS, LCN_WINDOW};
use dotflow_core::simulator::gen_sequence;

use config::SceneFile;

#[derive(Debug)]
pub enum CliError {
    Core(dotflow_core::Error),
    /// Bad input data outside the core's jurisdiction (config files,
    /// missing directories, image encoding).
    Data(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Data(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<dotflow_core::Error> for CliError {
    fn from(e: dotflow_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => e.exit_class(),
            CliError::Data(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "dotflow",
    about = "Incremental structured-light disparity estimation on synthetic dot-pattern sequences",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic sequence (frames + ground truth + manifest).
    Gen(GenArgs),
    /// Run the incremental estimator over a rendered sequence.
    Run(RunArgs),
    /// Compute o(t)/avg metrics for a run against the ground truth.
    Eval(EvalArgs),
    /// Render flow color maps and error heatmaps as PNG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Scene specification (TOML).
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for frames, ground truth and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Overrides both the pattern seed and the noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the frame count from the scene file.
    #[arg(long)]
    frames: Option<usize>,
    /// Use an existing pattern PGM (with sidecar) instead of generating.
    #[arg(long)]
    pattern: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Manifest of the rendered sequence.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for disparity/validity/confidence maps and timing.
    #[arg(long)]
    out: PathBuf,
    /// Temporal ablation: full, no_warp or no_confidence.
    #[arg(long, default_value = "full")]
    ablation: Ablation,
    /// Attempt a full-range search at pixels with no valid prior.
    #[arg(long)]
    fill_holes: bool,
    #[command(flatten)]
    flow: FlowOverrides,
    #[command(flatten)]
    refine: RefineOverrides,
}

#[derive(Args)]
struct FlowOverrides {
    /// LK window side, reduced-resolution pixels (odd).
    #[arg(long, default_value_t = 7)]
    flow_window: usize,
    /// LK iterations per pixel.
    #[arg(long, default_value_t = 5)]
    flow_iters: usize,
    /// Minimum gradient energy per window.
    #[arg(long, default_value_t = 1e-4)]
    grad_floor: f32,
    /// Maximum |u| in reduced-resolution pixels.
    #[arg(long, default_value_t = 8.0)]
    u_max: f32,
}

#[derive(Args)]
struct RefineOverrides {
    /// ZNCC patch side (odd).
    #[arg(long, default_value_t = 9)]
    patch: usize,
    /// Residual search radius, px.
    #[arg(long, default_value_t = 6.0)]
    search_radius: f32,
    /// Initialization search step, px.
    #[arg(long, default_value_t = 2.0)]
    init_step: f32,
    /// Minimum acceptable ZNCC peak.
    #[arg(long, default_value_t = 0.3)]
    zncc_floor: f32,
    /// Peak-to-runner-up ratio for full confidence.
    #[arg(long, default_value_t = 1.1)]
    ratio_floor: f32,
    /// Prior weight in the confidence blend.
    #[arg(long, default_value_t = 0.1)]
    fuse_weight: f32,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory with the run outputs (disp_*.pfm, valid_*.pgm).
    #[arg(long)]
    pred: PathBuf,
    /// Manifest of the ground-truth sequence.
    #[arg(long)]
    manifest: PathBuf,
    /// CSV output path; the row is also printed to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sequence label for the CSV row.
    #[arg(long, default_value = "sequence")]
    sequence: String,
    /// Ablation label for the CSV row.
    #[arg(long, default_value = "full")]
    ablation: String,
    /// Pool pixels across frames instead of averaging per-frame metrics.
    #[arg(long)]
    pooled: bool,
    /// Charge invalid predictions this error (px) in avg instead of
    /// excluding them.
    #[arg(long)]
    penalty: Option<f64>,
    /// Bad-pixel thresholds, px.
    #[arg(long, num_args = 3, default_values_t = [1.0, 2.0, 5.0])]
    thresholds: Vec<f64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Manifest of the rendered sequence.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for the PNG files.
    #[arg(long)]
    out: PathBuf,
    /// Run outputs to compare against ground truth (error heatmaps).
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Also compute and dump pattern flow (PFM + red/blue PNG).
    #[arg(long)]
    flow: bool,
    /// Error (px) that saturates the heatmap.
    #[arg(long, default_value_t = 5.0)]
    error_scale: f32,
    /// |u| (px/frame) that saturates the flow colors.
    #[arg(long, default_value_t = 3.0)]
    flow_scale: f32,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, not usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn load_or_generate_pattern(
    scene: &SceneFile,
    explicit: &Option<PathBuf>,
    seed_override: Option<u64>,
) -> Result<Pattern, CliError> {
    if let Some(path) = explicit {
        let p = Pattern::load(path)?;
        let report = verify_row_uniqueness(&p);
        if !report.pass {
            let (row, x1, x2) = report.first_collision.expect("failed report has a witness");
            return Err(CliError::Data(format!(
                "pattern {} fails row uniqueness (row {row}: windows at {x1} and {x2})",
                path.display()
            )));
        }
        return Ok(p);
    }
    let seed = seed_override.unwrap_or(scene.pattern.seed);
    Ok(generate_pattern(
        seed,
        scene.pattern_width(),
        scene.pattern.period_rows,
        scene.pattern.dot_density,
        scene.pattern.dot_radius_px,
        scene.pattern.patch_width,
    )?)
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let scene_file = SceneFile::load(&args.scene)?;
    let rig = scene_file.rig()?;
    let noise = scene_file.noise(args.seed);
    let scene = scene_file.scene(args.frames)?;
    let pattern = load_or_generate_pattern(&scene_file, &args.pattern, args.seed)?;
    let manifest = gen_sequence(&scene, &rig, &pattern, &noise, &args.out)?;
    println!(
        "gen: {} frames at {}x{} (disparity [{}, {}]) -> {}",
        manifest.n_frames(),
        rig.width,
        rig.height,
        rig.d_min,
        rig.d_max,
        args.out.display()
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let manifest = SequenceManifest::read(&args.manifest)?;
    let rig = manifest.rig.clone();
    let pattern = Pattern::load(&manifest.pattern_path())?;
    let flow_params = FlowParams {
        window: args.flow.flow_window,
        iters: args.flow.flow_iters,
        grad_floor: args.flow.grad_floor,
        u_max: args.flow.u_max,
        factor: rig.downsample_factor,
    };
    let refine_params = RefineParams {
        patch: args.refine.patch,
        search_radius_px: args.refine.search_radius,
        init_step_px: args.refine.init_step,
        zncc_floor: args.refine.zncc_floor,
        ratio_floor: args.refine.ratio_floor,
        fuse_weight: args.refine.fuse_weight,
        fill_holes: args.fill_holes,
    };
    let (maps, timings) = estimator::run_sequence(
        &manifest,
        &rig,
        &pattern,
        &flow_params,
        &refine_params,
        args.ablation,
    )?;
    estimator::write_run_outputs(&args.out, &maps, &timings)?;
    let mean_total = timings.iter().map(|t| t.ms_total).sum::<f64>() / timings.len() as f64;
    println!(
        "run: {} frames, ablation {}, mean {:.1} ms/frame -> {}",
        maps.len(),
        args.ablation,
        mean_total,
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let manifest = SequenceManifest::read(&args.manifest)?;
    let policy = match args.penalty {
        Some(p) => InvalidPolicy::Penalty(p),
        None => InvalidPolicy::Exclude,
    };
    let row = eval::evaluate_sequence(&args.pred, &manifest, &args.thresholds, policy, args.pooled)?;
    let line = row.csv_row(&args.sequence, &args.ablation);
    println!("{}", MetricsRow::csv_header());
    println!("{line}");
    if let Some(out) = &args.out {
        write_csv(out, &[line])?;
    }
    Ok(())
}

fn write_csv(path: &Path, rows: &[String]) -> Result<(), CliError> {
    let mut text = String::from(MetricsRow::csv_header());
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn cmd_plot(args: PlotArgs) -> Result<(), CliError> {
    let manifest = SequenceManifest::read(&args.manifest)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out.display())))?;
    let mut wrote = 0usize;

    if let Some(pred_dir) = &args.pred {
        for t in 1..manifest.n_frames() {
            let pred = eval::load_prediction(pred_dir, t)?;
            let gt = eval::load_ground_truth(&manifest, t)?;
            if !pred.d.same_shape(&gt.d) {
                return Err(CliError::Core(dotflow_core::Error::LengthMismatch(format!(
                    "frame {t}: prediction and ground truth dimensions differ"
                ))));
            }
            let img = vis::error_heatmap(&pred, &gt, args.error_scale);
            vis::save_png(
                &image::DynamicImage::ImageLuma8(img),
                &args.out.join(format!("err_{t:04}.png")),
            )?;
            wrote += 1;
        }
    }

    if args.flow {
        let params = FlowParams {
            factor: manifest.rig.downsample_factor,
            ..FlowParams::default()
        };
        let mut prev: Option<dotflow_core::Grid<f32>> = None;
        for t in 0..manifest.n_frames() {
            let frame = io::read_pgm(&manifest.frame_path(t))?;
            let frame_lcn = lcn(&frame, LCN_WINDOW, LCN_EPS)?;
            if let Some(prev_lcn) = &prev {
                let flow = compute_pattern_flow(&frame_lcn, prev_lcn, &params)?;
                io::write_pfm(&args.out.join(io::flow_filename(t)), &flow.u)?;
                let img = vis::flow_color_map(&flow, args.flow_scale);
                vis::save_png(
                    &image::DynamicImage::ImageRgb8(img),
                    &args.out.join(format!("flow_{t:04}.png")),
                )?;
                wrote += 1;
            }
            prev = Some(frame_lcn);
        }
    }

    println!("plot: {wrote} images -> {}", args.out.display());
    Ok(())
}
