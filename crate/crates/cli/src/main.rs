use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use frog_core::deform::FusionMode;
use frog_core::scene::{canned, generate_synthetic, load_dataset, write_dataset, SceneDataset, CANNED};
use frog_core::train::{evaluate_model, load_checkpoint, split_assignment, EvalReport, TrainConfig, Trainer};
use frog_core::{par, Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "frog", version, about = "Deformable Gaussian splatting on the CPU")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Training config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset manifest, or the name of a canned synthetic scene.
    #[arg(long, global = true)]
    data: Option<String>,
    /// Output directory (created if absent).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially. Defaults to $FROG_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Config override `key=value`, applied after the file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, metrics.csv and eval.json.
    Train,
    /// Render held-out views (or one camera/time) from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        camera: Option<usize>,
        #[arg(long)]
        time: Option<f64>,
    },
    /// Evaluate a checkpoint on the held-out views.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write a mean or median depth map as .npy plus a PNG preview.
    Depth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        camera: usize,
        #[arg(long, default_value_t = 0.0)]
        time: f64,
        #[arg(long, default_value = "median", value_parser = ["mean", "median"])]
        mode: String,
    },
    /// Train once per fusion mode with a shared seed and tabulate the results.
    AblateFusion {
        #[arg(long, value_delimiter = ',', default_value = "product,dual")]
        modes: Vec<String>,
    },
    /// Generate a canned synthetic dataset.
    GenSynthetic {
        #[arg(long, default_value = "orbit-blobs")]
        scene: String,
        #[arg(long)]
        frames: Option<usize>,
    },
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

fn setup_threads(flag: Option<usize>) -> Result<()> {
    let env = std::env::var("FROG_THREADS").ok();
    let threads = match (flag, env) {
        (Some(n), _) => Some(n),
        (None, Some(v)) => Some(v.trim().parse().map_err(|_| Error::Config(format!("FROG_THREADS=`{v}` is not a number")))?),
        (None, None) => None,
    };
    match threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(1) => {
            par::set_sequential(true);
            Ok(())
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string())),
        None => Ok(()),
    }
}

fn load_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
    }
    for o in &common.overrides {
        let (k, v) = split_assignment(o)?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(common: &Common) -> Result<SceneDataset> {
    let data = common.data.as_deref().ok_or_else(|| Error::Config("--data is required".into()))?;
    let path = Path::new(data);
    if path.exists() {
        load_dataset(path)
    } else if CANNED.contains(&data) {
        generate_synthetic(&canned(data)?)
    } else {
        Err(Error::Dataset(format!("`{data}` is neither a manifest nor a canned scene ({})", CANNED.join(", "))))
    }
}

fn eval_json(e: Option<&EvalReport>, gaussians: usize, train_seconds: f64) -> serde_json::Value {
    serde_json::json!({
        "psnr": e.map(|e| e.psnr),
        "ssim": e.map(|e| e.ssim),
        "N": gaussians,
        "train_seconds": train_seconds,
    })
}

fn cmd_train(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let data = load_data(common)?;
    let out = &common.out;
    let mut trainer = Trainer::new(cfg, data)?;
    let total = trainer.cfg.iterations;
    let summary = trainer.run(out, |m| {
        if m.iter % 500 == 0 || m.iter == total {
            log::info!("iter {} loss {:.5} psnr {:.2} N {}", m.iter, m.loss, m.psnr, m.gaussians);
        }
    })?;
    for a in &summary.artifacts {
        announce(a);
    }
    let json = eval_json(summary.eval.as_ref(), summary.gaussians, summary.train_seconds);
    let path = out.join("eval.json");
    std::fs::write(&path, serde_json::to_string_pretty(&json)?)?;
    announce(&path);
    println!("{json}");
    Ok(())
}

fn frame_for(data: &SceneDataset, camera: usize, time: f64) -> Result<frog_core::raster::Camera> {
    data.frames
        .iter()
        .find(|f| f.camera_id == camera)
        .map(|f| f.camera.clone())
        .ok_or_else(|| Error::Config(format!("camera index {camera} not in dataset (cameras {:?}); time {time}", data.camera_ids())))
}

fn cmd_render(common: &Common, checkpoint: &Path, camera: Option<usize>, time: Option<f64>) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let data = load_data(common)?;
    std::fs::create_dir_all(&common.out)?;
    if let Some(c) = camera {
        let t = time.unwrap_or(0.0);
        let cam = frame_for(&data, c, t)?;
        let path = common.out.join(format!("render_c{c:02}_t{t:.4}.png"));
        model.render(&cam, t)?.save_png(&path)?;
        announce(&path);
        return Ok(());
    }
    for (i, f) in data.frames.iter().enumerate().filter(|(_, f)| f.split == frog_core::scene::Split::Test) {
        let path = common.out.join(format!("render_{i:05}_c{:02}.png", f.camera_id));
        model.render(&f.camera, f.time)?.save_png(&path)?;
        announce(&path);
    }
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let data = load_data(common)?;
    let e = evaluate_model(&model, &data.split(frog_core::scene::Split::Test))?;
    std::fs::create_dir_all(&common.out)?;
    let json = eval_json(Some(&e), model.cloud.len(), 0.0);
    let path = common.out.join("eval.json");
    std::fs::write(&path, serde_json::to_string_pretty(&json)?)?;
    announce(&path);
    println!("{json}");
    Ok(())
}

fn cmd_depth(common: &Common, checkpoint: &Path, camera: usize, time: f64, mode: &str) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let data = load_data(common)?;
    if !(0.0..=1.0).contains(&time) {
        return Err(Error::Config(format!("time {time} outside [0, 1]")));
    }
    let cam = frame_for(&data, camera, time)?;
    let out = model.forward_frame(&cam, time, false)?.frame.output;
    let map = if mode == "mean" { out.mean_depth } else { out.median_depth };
    std::fs::create_dir_all(&common.out)?;
    let npy = common.out.join(format!("depth_{mode}_c{camera:02}.npy"));
    map.save_npy(&npy)?;
    announce(&npy);
    let png = common.out.join(format!("depth_{mode}_c{camera:02}.png"));
    map.to_gray_image().save_png(&png)?;
    announce(&png);
    Ok(())
}

fn cmd_ablate(common: &Common, modes: &[String]) -> Result<()> {
    if modes.is_empty() {
        return Err(Error::Config("--modes needs at least one fusion mode".into()));
    }
    let parsed: Vec<FusionMode> = modes.iter().map(|m| FusionMode::parse(m)).collect::<Result<_>>()?;
    let base = load_config(common)?;
    let data = load_data(common)?;
    std::fs::create_dir_all(&common.out)?;
    let mut rows = vec!["mode,status,psnr,ssim,deform_ms_per_frame,mlp_passes".to_string()];
    for mode in parsed {
        let mut cfg = base.clone();
        cfg.field.fusion = mode;
        let dir = common.out.join(mode.name());
        let result = Trainer::new(cfg, data.clone()).and_then(|mut t| t.run(&dir, |_| {}));
        rows.push(match result {
            Ok(s) => {
                let (p, q) = s.eval.map(|e| (format!("{:.4}", e.psnr), format!("{:.5}", e.ssim))).unwrap_or_default();
                format!("{},ok,{p},{q},{:.3},{}", mode.name(), s.deform_ms_per_step, s.mlp_passes)
            }
            Err(e) => {
                eprintln!("mode {} failed: {e}", mode.name());
                format!("{},failed,,,,{}", mode.name(), mode.passes())
            }
        });
    }
    let path = common.out.join("ablation.csv");
    std::fs::write(&path, rows.join("\n") + "\n")?;
    announce(&path);
    print!("{}", rows.join("\n") + "\n");
    Ok(())
}

fn cmd_gen(common: &Common, scene: &str, frames: Option<usize>) -> Result<()> {
    let mut spec = canned(scene)?;
    if let Some(f) = frames {
        spec.frames = f;
    }
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let ds = generate_synthetic(&spec)?;
    let manifest = write_dataset(&ds, &common.out)?;
    announce(&manifest);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    setup_threads(cli.common.threads)?;
    let c = &cli.common;
    match &cli.command {
        Command::Train => cmd_train(c),
        Command::Render { checkpoint, camera, time } => cmd_render(c, checkpoint, *camera, *time),
        Command::Eval { checkpoint } => cmd_eval(c, checkpoint),
        Command::Depth { checkpoint, camera, time, mode } => cmd_depth(c, checkpoint, *camera, *time, mode),
        Command::AblateFusion { modes } => cmd_ablate(c, modes),
        Command::GenSynthetic { scene, frames } => cmd_gen(c, scene, *frames),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
