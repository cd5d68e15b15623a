//! Command-line entry points: scenario generation, training, evaluation,
//! qualitative plots, and dataset inspection.

use clap::{Args, Parser, Subcommand};
use ptinet::config::{apply_key, load_config_file};
use ptinet::data::GlobalToggles;
use ptinet::error::{PtiError, Result};
use ptinet::eval::{
    evaluate, ConstantVelocityPredictor, EvalOptions, ModelPredictor, OraclePredictor, Predictor,
};
use ptinet::plot::emit_qualitative_plot;
use ptinet::synth::{generate_scenario, ScenarioConfig};
use ptinet::train::{train, Checkpoint, Dataset, TrainConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "ptinet",
    version,
    about = "Joint pedestrian trajectory and crossing-intention prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic driving scenario (frames, flow, annotations).
    Synth(SynthArgs),
    /// Train a model and write checkpoints plus a JSONL log.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a baseline) on a dataset.
    Eval(EvalArgs),
    /// Render one sample's prediction against ground truth.
    Plot(PlotArgs),
    /// Summarize a dataset directory.
    InspectData(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for frames, flow files, and annotations.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    num_pedestrians: usize,
    #[arg(long, default_value_t = 100)]
    frames_per_track: usize,
    #[arg(long, default_value_t = 240)]
    height: usize,
    #[arg(long, default_value_t = 420)]
    width: usize,
    #[arg(long, default_value_t = 0.5)]
    crossing_fraction: f64,
    #[arg(long, default_value_t = 2.0)]
    ego_speed_x: f64,
    #[arg(long, default_value_t = 0.0)]
    ego_speed_y: f64,
    #[arg(long, default_value_t = 2.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 2.0)]
    walk_speed: f64,
    #[arg(long, default_value_t = 2.5)]
    turn_speed: f64,
    /// Relative per-track spread applied to walk/turn speeds, in [0,1).
    #[arg(long, default_value_t = 0.0)]
    speed_jitter: f64,
    #[arg(long, default_value_t = 1.2)]
    wobble: f64,
    #[arg(long, default_value_t = 15)]
    intent_lead: usize,
    #[arg(long, default_value_t = 15)]
    precue_lead: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Key=value config file applied before any flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training dataset directory (tracks.jsonl + frames).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out dataset directory; defaults to the training set.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Prediction horizon in seconds (0.5, 1.0, or 1.5).
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stride: Option<usize>,
    /// Model input resolution as HxW, e.g. 240x420.
    #[arg(long)]
    target_dims: Option<String>,
    /// Zero the global image segment (ablation).
    #[arg(long)]
    no_images: bool,
    /// Zero the global optical-flow segment (ablation).
    #[arg(long)]
    no_flow: bool,
    /// Feed predicted boxes to the intention decoder.
    #[arg(long)]
    couple_intention: bool,
    /// Trajectory head: offset or absolute.
    #[arg(long)]
    head: Option<String>,
    /// Extra key=value overrides using config-file keys (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory; defaults to the checkpoint's validation set.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated horizons in seconds, e.g. 0.5,1.0.
    #[arg(long)]
    horizons: Option<String>,
    /// Score horizons shorter than the trained one on the rollout prefix.
    #[arg(long)]
    allow_prefix: bool,
    /// Predictor: model, constant-velocity, or oracle.
    #[arg(long, default_value = "model")]
    predictor: String,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Write the JSON report here as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory; defaults to the checkpoint's validation set.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sample index within the windowed dataset.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 16)]
    m: usize,
    #[arg(long, default_value_t = 0.5)]
    horizon: f64,
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

/// Print a line to stdout, exiting quietly if the reader hung up (e.g. the
/// output is piped into `head`).
fn emit(text: impl AsRef<str>) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let ok = out
        .write_all(text.as_ref().as_bytes())
        .and_then(|_| out.write_all(b"\n"))
        .is_ok();
    if !ok {
        std::process::exit(0);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Plot(args) => run_plot(args),
        Command::InspectData(args) => run_inspect(args),
    }
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let cfg = ScenarioConfig {
        num_pedestrians: args.num_pedestrians,
        frames_per_track: args.frames_per_track,
        image_dims: (args.height, args.width),
        crossing_fraction: args.crossing_fraction,
        ego_speed: (args.ego_speed_x, args.ego_speed_y),
        noise_std: args.noise_std,
        walk_speed: args.walk_speed,
        turn_speed: args.turn_speed,
        speed_jitter: args.speed_jitter,
        wobble: args.wobble,
        intent_lead: args.intent_lead,
        precue_lead: args.precue_lead,
        seed: args.seed,
    };
    let out = generate_scenario(&cfg, &args.out)?;
    emit(format!(
        "wrote {} tracks to {}",
        out.tracks.len(),
        out.tracks_path.display()
    ));
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        load_config_file(&mut cfg, path)?;
    }
    for pair in &args.set {
        let (k, v) = pair.split_once('=').ok_or_else(|| {
            PtiError::Config(format!("--set expects KEY=VALUE, got {pair:?}"))
        })?;
        apply_key(&mut cfg, k.trim(), v.trim())?;
    }
    if let Some(v) = &args.data {
        cfg.train_data = v.clone();
    }
    if let Some(v) = &args.val {
        cfg.val_data = Some(v.clone());
    }
    if let Some(v) = &args.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = args.epochs {
        cfg.max_epoch = v;
    }
    if let Some(v) = args.m {
        cfg.m = v;
    }
    if let Some(v) = args.horizon {
        cfg.horizon_seconds = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr_init = v;
    }
    if let Some(v) = args.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.stride {
        cfg.stride = v;
    }
    if let Some(v) = &args.target_dims {
        apply_key(&mut cfg, "target_dims", v)?;
    }
    if let Some(v) = &args.head {
        apply_key(&mut cfg, "trajectory_head", v)?;
    }
    if args.no_images {
        cfg.use_images = false;
    }
    if args.no_flow {
        cfg.use_flow = false;
    }
    if args.couple_intention {
        cfg.couple_intention = true;
    }
    if cfg.train_data.as_os_str().is_empty() {
        return Err(PtiError::Config(
            "no training data: pass --data or set train_data in the config file".into(),
        ));
    }
    if cfg.out_dir.as_os_str().is_empty() {
        cfg.out_dir = PathBuf::from("ptinet-run");
    }

    let out = train(&cfg)?;
    let last = out.records.last().expect("max_epoch >= 1");
    emit(format!(
        "trained {} epochs: loss {:.6}, val ADE {:.3} px, val F1 {:.3}",
        out.records.len(),
        last.loss_total,
        last.val_ade,
        last.val_f1
    ));
    emit(format!("log: {}", out.log_path.display()));
    emit(format!("last checkpoint: {}", out.last_checkpoint.display()));
    emit(format!("best checkpoint: {}", out.best_checkpoint.display()));
    emit(format!(
        "final report (reloaded last checkpoint): {}",
        serde_json::to_string(&out.final_report).expect("report serialization")
    ));
    Ok(())
}

/// Dataset directory for eval/plot: explicit flag, else the checkpoint's
/// validation set, else its training set.
fn resolve_data_dir(explicit: Option<PathBuf>, ckpt: &Checkpoint) -> PathBuf {
    explicit.unwrap_or_else(|| {
        ckpt.config
            .val_data
            .clone()
            .unwrap_or_else(|| ckpt.config.train_data.clone())
    })
}

fn load_eval_dataset(ckpt: &Checkpoint, dir: &PathBuf) -> Result<Dataset> {
    let cfg = &ckpt.config;
    Dataset::load(
        dir,
        Some(&ckpt.vocab),
        cfg.m,
        cfg.n(),
        cfg.stride,
        cfg.target_dims,
        GlobalToggles {
            use_images: cfg.use_images,
            use_flow: cfg.use_flow,
        },
        cfg.normalize,
    )
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let data_dir = resolve_data_dir(args.data, &ckpt);
    let mut data = load_eval_dataset(&ckpt, &data_dir)?;
    let horizons = match &args.horizons {
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| PtiError::Config(format!("bad horizon {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?,
        None => vec![ckpt.config.horizon_seconds],
    };
    let opts = EvalOptions {
        horizons,
        allow_prefix: args.allow_prefix,
        distance: ckpt.config.distance_mode,
        pooling: ckpt.config.intent_pooling,
        threshold: args.threshold,
    };
    let mut model;
    let mut cv;
    let mut oracle;
    let predictor: &mut dyn Predictor = match args.predictor.as_str() {
        "model" => {
            model = ModelPredictor {
                store: &ckpt.params,
                encoder: &ckpt.config.encoder,
                head: ckpt.config.trajectory_head,
                couple: ckpt.config.couple_intention,
            };
            &mut model
        }
        "constant-velocity" => {
            cv = ConstantVelocityPredictor;
            &mut cv
        }
        "oracle" => {
            oracle = OraclePredictor;
            &mut oracle
        }
        other => {
            return Err(PtiError::Config(format!(
                "unknown predictor {other:?} (use model, constant-velocity, or oracle)"
            )));
        }
    };
    let report = evaluate(predictor, &mut data, ckpt.config.n(), &opts)?;
    let json = serde_json::to_string_pretty(&report).expect("report serialization");
    emit(&json);
    if let Some(path) = &args.out {
        std::fs::write(path, json).map_err(|e| PtiError::io(path, e))?;
    }
    Ok(())
}

fn run_plot(args: PlotArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let data_dir = resolve_data_dir(args.data, &ckpt);
    let mut data = load_eval_dataset(&ckpt, &data_dir)?;
    if args.index >= data.len() {
        return Err(PtiError::Config(format!(
            "sample index {} out of range ({} samples)",
            args.index,
            data.len()
        )));
    }
    let sample = data.materialize(args.index)?;
    let mut predictor = ModelPredictor {
        store: &ckpt.params,
        encoder: &ckpt.config.encoder,
        head: ckpt.config.trajectory_head,
        couple: ckpt.config.couple_intention,
    };
    let prediction = predictor.predict(&sample, ckpt.config.n())?;
    emit_qualitative_plot(
        &sample,
        data.source_dims[args.index],
        &prediction,
        data.normalize,
        &args.out,
    )?;
    emit(format!("wrote {}", args.out.display()));
    Ok(())
}

fn run_inspect(args: InspectArgs) -> Result<()> {
    let n = ptinet::metrics::horizon_steps(args.horizon, ptinet::train::DATASET_FPS);
    let data = Dataset::load(
        &args.data,
        None,
        args.m,
        n,
        args.stride,
        (1, 1),
        GlobalToggles {
            use_images: false,
            use_flow: false,
        },
        ptinet::data::NormalizeMode::None,
    )?;
    let mut crossing_steps = 0usize;
    let mut total_steps = 0usize;
    for s in &data.samples {
        crossing_steps += s.future_intentions.iter().filter(|&&l| l == 1).count();
        total_steps += s.future_intentions.len();
    }
    let summary = serde_json::json!({
        "tracks": data.tracks.len(),
        "samples": data.len(),
        "m": args.m,
        "n": n,
        "stride": args.stride,
        "crossing_step_fraction": if total_steps > 0 {
            crossing_steps as f64 / total_steps as f64
        } else {
            0.0
        },
        "vocabulary": data.vocab,
        "attrs_width": data.model_dims().attrs_in,
        "behavior_width": data.model_dims().behavior_in,
        "scene_width": data.model_dims().scene_in,
    });
    emit(format!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serialization")
    ));
    Ok(())
}
