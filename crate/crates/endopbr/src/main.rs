//! Command-line entry point: train, render, eval, augment, gradcheck, synth.
//!
//! Options come from an optional JSON config file plus flags; flags win.
//! Every command writes a `run_meta.json` (resolved config, seed, version)
//! into its output directory. Exit codes: 0 success, 1 validation error,
//! 2 runtime/numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use endopbr::brdf::BrdfSample;
use endopbr::data::augment::{export_augmented, planned_samples, AugmentationSpec};
use endopbr::data::synth::{generate_analytic_scene, AnalyticSceneSpec, SceneKind};
use endopbr::data::{load_dataset, read_pose, Dataset, Split};
use endopbr::diffcore::checkpoint;
use endopbr::diffcore::gradcheck::grad_check;
use endopbr::diffcore::train::{train, TrainConfig};
use endopbr::diffcore::LossWeights;
use endopbr::error::Error;
use endopbr::geometry::ForwardAxis;
use endopbr::hashgrid::HashGridConfig;
use endopbr::lighting::SpotlightValues;
use endopbr::metrics::{psnr, ssim, EvalReport, FrameEval};
use endopbr::model::ModelConfig;
use endopbr::renderer::{render_image, splat_depth};

#[derive(Parser)]
#[command(name = "endopbr", version, about = "Physically-based inverse rendering for endoscopic scenes")]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker thread cap (falls back to ENDOPBR_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit material and light parameters to a dataset.
    Train(TrainArgs),
    /// Render frames from a checkpoint.
    Render(RenderArgs),
    /// PSNR/SSIM on the held-out test split.
    Eval(EvalArgs),
    /// Export an augmented synthetic dataset.
    Augment(AugmentArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate an analytic oracle scene.
    Synth(SynthArgs),
}

/// Optional values loadable from the JSON config file.
#[derive(Debug, Default, Deserialize, Serialize, Clone)]
#[serde(default)]
struct FileConfig {
    seed: Option<u64>,
    epochs: Option<u32>,
    lr: Option<f64>,
    lambda_m: Option<f64>,
    lambda_b: Option<f64>,
    frames_per_iter: Option<usize>,
    pixels_per_frame: Option<usize>,
    checkpoint_every: Option<u32>,
    grid: Option<HashGridConfig>,
    forward_axis: Option<ForwardAxis>,
    specular_factor4: Option<bool>,
    threads: Option<usize>,
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig, Error> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(Error::from)
        }
    }
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Dataset directory or manifest.json path.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint and logs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_m: Option<f64>,
    #[arg(long)]
    lambda_b: Option<f64>,
    #[arg(long)]
    frames_per_iter: Option<usize>,
    #[arg(long)]
    pixels_per_frame: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u32>,
    #[arg(long)]
    levels: Option<u32>,
    #[arg(long)]
    features_per_level: Option<u32>,
    #[arg(long)]
    table_size: Option<u32>,
    #[arg(long)]
    base_resolution: Option<u32>,
    #[arg(long)]
    finest_resolution: Option<u32>,
    #[arg(long)]
    specular_factor4: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Serialize)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Which split to render: train, test or all.
    #[arg(long, default_value = "all")]
    split: String,
    /// Directory of extra 4x4 pose .txt files to render as novel views.
    #[arg(long)]
    poses_dir: Option<PathBuf>,
    /// Synthesize depth by splatting dataset frames (needed for poses_dir).
    #[arg(long)]
    splat: bool,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct AugmentArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// AugmentationSpec JSON; omitted fields use defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples_per_frame: Option<u32>,
}

#[derive(Args, Serialize)]
struct GradcheckArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// sphere or plane.
    #[arg(long, default_value = "sphere")]
    kind: String,
    #[arg(long, default_value_t = 20)]
    views: u32,
    #[arg(long, default_value_t = 128)]
    resolution: u32,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth base color as r,g,b.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    albedo: Option<Vec<f64>>,
    #[arg(long)]
    roughness: Option<f64>,
    #[arg(long)]
    metallic: Option<f64>,
    #[arg(long)]
    l0: Option<f64>,
    #[arg(long)]
    n_exp: Option<f64>,
    #[arg(long)]
    q_exp: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

fn write_run_meta(dir: &Path, command: &str, seed: u64, config: serde_json::Value) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = serde_json::json!({
        "command": command,
        "version": format!("endopbr {}", env!("CARGO_PKG_VERSION")),
        "seed": seed,
        "config": config,
    });
    let path = dir.join("run_meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

fn setup_threads(cli_threads: Option<usize>, file: &FileConfig) {
    let n = cli_threads
        .or(file.threads)
        .or_else(|| std::env::var("ENDOPBR_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn model_config(ds: &Dataset, file: &FileConfig, args: &TrainArgs) -> ModelConfig {
    let mut grid = file.grid.unwrap_or_default();
    if let Some(v) = args.levels {
        grid.levels = v;
    }
    if let Some(v) = args.features_per_level {
        grid.features_per_level = v;
    }
    if let Some(v) = args.table_size {
        grid.table_size = v;
    }
    if let Some(v) = args.base_resolution {
        grid.base_resolution = v;
    }
    if let Some(v) = args.finest_resolution {
        grid.finest_resolution = v;
    }
    ModelConfig {
        grid,
        forward_axis: file.forward_axis.unwrap_or(ds.manifest.forward_axis),
        specular_factor4: args.specular_factor4 || file.specular_factor4.unwrap_or(false),
    }
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), Error> {
    let file = load_file_config(&cli.config)?;
    setup_threads(cli.threads, &file);
    let ds = load_dataset(&args.data)?;
    if ds.test_frames().count() == 0 {
        eprintln!("warning: fewer than 9 frames; test split is empty, all frames train");
    }
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let cfg = TrainConfig {
        epochs: args.epochs.or(file.epochs).unwrap_or(1500),
        lr: args.lr.or(file.lr).unwrap_or(1e-4),
        weights: LossWeights {
            lambda_m: args.lambda_m.or(file.lambda_m).unwrap_or(1e-4),
            lambda_b: args.lambda_b.or(file.lambda_b).unwrap_or(1e-3),
        },
        seed,
        frames_per_iter: args.frames_per_iter.or(file.frames_per_iter).unwrap_or(5),
        pixels_per_frame: args.pixels_per_frame.or(file.pixels_per_frame).unwrap_or(6000),
        jitter_radius: 0.01,
        checkpoint_every: args.checkpoint_every.or(file.checkpoint_every).unwrap_or(0),
        out_dir: args.out.clone(),
        verbose: !args.quiet,
    };
    let mcfg = model_config(&ds, &file, args);
    write_run_meta(
        &args.out,
        "train",
        seed,
        serde_json::json!({
            "epochs": cfg.epochs, "lr": cfg.lr,
            "lambda_m": cfg.weights.lambda_m, "lambda_b": cfg.weights.lambda_b,
            "frames_per_iter": cfg.frames_per_iter, "pixels_per_frame": cfg.pixels_per_frame,
            "model": mcfg, "data": args.data,
        }),
    )?;
    let outcome = train(&ds, mcfg, &cfg)?;
    println!(
        "final loss: total={:.6e} l1={:.6e} metallic={:.6e} smoothness={:.6e}",
        outcome.final_loss.total,
        outcome.final_loss.l1,
        outcome.final_loss.metallic_penalty,
        outcome.final_loss.albedo_smoothness
    );
    println!("checkpoint: {}", outcome.checkpoint_path.display());
    println!("log: {}", outcome.log_path.display());
    Ok(())
}

fn cmd_render(cli: &Cli, args: &RenderArgs) -> Result<(), Error> {
    let file = load_file_config(&cli.config)?;
    setup_threads(cli.threads, &file);
    let model = checkpoint::load(&args.checkpoint)?;
    let ds = load_dataset(&args.data)?;
    let k = *ds.intrinsics();
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_run_meta(&args.out, "render", 0, serde_json::json!({
        "checkpoint": args.checkpoint, "data": args.data, "split": args.split, "splat": args.splat,
    }))?;

    let want = |s: Split| match args.split.as_str() {
        "train" => s == Split::Train,
        "test" => s == Split::Test,
        _ => true,
    };
    for frame in ds.frames.iter().filter(|f| want(f.split)) {
        let img = render_image(&model, &frame.pose, &frame.depth, &k)?;
        if img.valid_fraction() < 0.5 {
            eprintln!(
                "warning: frame {} is only {:.0}% valid",
                frame.frame_id,
                100.0 * img.valid_fraction()
            );
        }
        let path = args.out.join(format!("render_{:04}.png", frame.frame_id));
        img.to_rgb8().save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            msg: e.to_string(),
        })?;
    }

    if let Some(dir) = &args.poses_dir {
        if !args.splat {
            return Err(Error::Config(
                "rendering novel poses requires --splat to synthesize depth".into(),
            ));
        }
        let mut pose_files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        pose_files.sort();
        for (i, pf) in pose_files.iter().enumerate() {
            let pose = read_pose(pf)?;
            pose.validate(1e-4)?;
            let depth = splat_depth(&pose, &ds.frames, &k)?;
            let img = render_image(&model, &pose, &depth, &k)?;
            if img.valid_fraction() < 0.5 {
                eprintln!(
                    "warning: novel pose {} is only {:.0}% valid",
                    pf.display(),
                    100.0 * img.valid_fraction()
                );
            }
            let path = args.out.join(format!("novel_{i:04}.png"));
            img.to_rgb8().save(&path).map_err(|e| Error::Image {
                path: path.clone(),
                msg: e.to_string(),
            })?;
        }
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<(), Error> {
    let file = load_file_config(&cli.config)?;
    setup_threads(cli.threads, &file);
    let model = checkpoint::load(&args.checkpoint)?;
    let ds = load_dataset(&args.data)?;
    let k = *ds.intrinsics();
    let test: Vec<_> = ds.test_frames().collect();
    if test.is_empty() {
        return Err(Error::Dataset("test split is empty; need at least 9 frames".into()));
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_run_meta(&args.out, "eval", 0, serde_json::json!({
        "checkpoint": args.checkpoint, "data": args.data,
    }))?;

    let mut rows = Vec::new();
    for frame in test {
        let img = render_image(&model, &frame.pose, &frame.depth, &k)?;
        let gt: Vec<Vector3<f64>> = (0..k.num_pixels()).map(|i| frame.gt_pixel(i)).collect();
        let p = psnr(&img.ldr, &gt, &img.valid)?;
        let s = ssim(&img.ldr, &gt, &img.valid, k.width as usize, k.height as usize)?;
        println!("frame {:>4}: psnr {:6.2} dB  ssim {:.4}", frame.frame_id, p, s);
        rows.push(FrameEval {
            frame_id: frame.frame_id,
            psnr: p,
            ssim: s,
        });
    }
    let report = EvalReport::from_frames(rows);
    println!("mean: psnr {:6.2} dB  ssim {:.4}", report.mean_psnr, report.mean_ssim);
    report.write_csv(&args.out.join("eval.csv"))?;
    report.write_json(&args.out.join("eval.json"))?;
    Ok(())
}

fn cmd_augment(cli: &Cli, args: &AugmentArgs) -> Result<(), Error> {
    let file = load_file_config(&cli.config)?;
    setup_threads(cli.threads, &file);
    let model = checkpoint::load(&args.checkpoint)?;
    if model.store.step() == 0 {
        eprintln!("warning: checkpoint has step 0 (untrained); exporting anyway");
    }
    let ds = load_dataset(&args.data)?;
    let k = *ds.intrinsics();
    let mut spec = match &args.spec {
        None => AugmentationSpec::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.samples_per_frame {
        spec.samples_per_frame = n;
    }
    write_run_meta(&args.out, "augment", spec.seed, serde_json::to_value(&spec)?)?;

    let excluded: Vec<_> = ds.train_frames().map(|f| f.pose).collect();
    let planned = planned_samples(ds.frames.len(), &spec);
    let report = export_augmented(&model, &ds.frames, &k, &spec, &excluded, &args.out)?;
    println!(
        "exported {} of {} planned samples ({} skipped for low splat coverage, {} for excluded poses)",
        report.exported, planned, report.skipped_low_coverage, report.skipped_excluded_pose
    );
    Ok(())
}

fn cmd_gradcheck(cli: &Cli, args: &GradcheckArgs) -> Result<(), Error> {
    let file = load_file_config(&cli.config)?;
    setup_threads(cli.threads, &file);
    let mut model = checkpoint::load(&args.checkpoint)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let report = grad_check(&mut model, args.samples, seed, &LossWeights::default())?;
    report.print();
    if let Some(out) = &args.out {
        let text = serde_json::to_string_pretty(&report)?;
        fs::write(out, text).map_err(|e| Error::io(out, e))?;
    }
    if !report.passes(1e-4) {
        return Err(Error::Config(format!(
            "gradient check failed: max relative error {:.3e} exceeds 1e-4",
            report.max_rel_err()
        )));
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<(), Error> {
    let file = load_file_config(&cli.config)?;
    setup_threads(cli.threads, &file);
    let kind = match args.kind.as_str() {
        "sphere" => SceneKind::Sphere,
        "plane" => SceneKind::Plane,
        other => {
            return Err(Error::Config(format!(
                "unknown scene kind '{other}' (expected sphere or plane)"
            )))
        }
    };
    let mut spec = AnalyticSceneSpec::sphere_fixture(args.views, args.resolution);
    spec.kind = kind;
    if let Some(a) = &args.albedo {
        spec.material.base_color = Vector3::new(a[0], a[1], a[2]);
    }
    if let Some(v) = args.roughness {
        spec.material.roughness = v;
    }
    if let Some(v) = args.metallic {
        spec.material.metallic = v;
    }
    let mut light = SpotlightValues {
        l0: spec.light.l0,
        n_exp: spec.light.n_exp,
        q_exp: spec.light.q_exp,
        gamma: spec.light.gamma,
    };
    if let Some(v) = args.l0 {
        light.l0 = v;
    }
    if let Some(v) = args.n_exp {
        light.n_exp = v;
    }
    if let Some(v) = args.q_exp {
        light.q_exp = v;
    }
    if let Some(v) = args.gamma {
        light.gamma = v;
    }
    spec.light = light;

    write_run_meta(&args.out, "synth", 0, serde_json::json!({
        "kind": args.kind, "views": args.views, "resolution": args.resolution,
    }))?;
    let manifest = generate_analytic_scene(&spec, &args.out)?;
    let sample_mat = BrdfSample {
        base_color: spec.material.base_color,
        roughness: spec.material.roughness,
        metallic: spec.material.metallic,
    };
    println!("wrote {} ({} views, material {:?})", manifest.display(), args.views, sample_mat);
    Ok(())
}

fn run() -> Result<(), Error> {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help/version requests are success; bad arguments are validation
            // failures (exit 1).
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    match &cli.cmd {
        Cmd::Train(a) => cmd_train(&cli, a),
        Cmd::Render(a) => cmd_render(&cli, a),
        Cmd::Eval(a) => cmd_eval(&cli, a),
        Cmd::Augment(a) => cmd_augment(&cli, a),
        Cmd::Gradcheck(a) => cmd_gradcheck(&cli, a),
        Cmd::Synth(a) => cmd_synth(&cli, a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
