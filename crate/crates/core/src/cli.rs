//! The `midframe` command line.
//!
//! Every subcommand is a plain function over parsed arguments so the same
//! workflows can be driven from tests without spawning a process.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::arch::ArchitectureSpec;
use crate::checkpoint::{load_generator, save_model};
use crate::data::{
    extract_triplets, generate_synthetic, load_dataset, write_dataset, write_frame, ExtractOptions, FlowField, Frame,
    Manifest, ManifestEntry, SyntheticSpec, Texture, DEDUP_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, DEFAULT_EPSILON, DEFAULT_TOLERANCE};
use crate::metrics::count_flops;
use crate::tensor::no_grad;
use crate::training::{evaluate, TrainConfig, Trainer};

#[derive(Debug, Parser)]
#[command(name = "midframe", version, about = "Multi-scale video frame interpolation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a triplet dataset.
    Train(TrainArgs),
    /// Synthesize the middle frame between two frames.
    Interpolate(InterpolateArgs),
    /// Score a checkpoint on a triplet dataset.
    Eval(EvalArgs),
    /// Analytic FLOPs and parameter counts of an architecture.
    Flops(FlopsArgs),
    /// Finite-difference gradient checks of every differentiable operation.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic translation dataset with ground-truth flow.
    Synth(SynthArgs),
    /// Cut a numbered frame sequence into triplets.
    Extract(ExtractArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat `key = value` TOML configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training state written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for the synthesis features as an image and a `.flo` file.
    #[arg(long)]
    pub dump_flow: Option<PathBuf>,
    /// Directory for the per-scale syntheses.
    #[arg(long)]
    pub dump_scales: Option<PathBuf>,
    /// Architecture the checkpoint must match.
    #[arg(long)]
    pub arch: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long, default_value = "ms")]
    pub arch: String,
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    #[arg(long, default_value_t = 360)]
    pub height: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// First seed of the run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value = "checker")]
    pub texture: Texture,
    #[arg(long, default_value_t = 4.0)]
    pub max_motion: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of numbered PNG frames.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Frames between the starts of consecutive triplets.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = DEDUP_THRESHOLD)]
    pub dedup_threshold: f64,
}

/// Parses the process arguments, runs the command and maps the outcome to
/// an exit code: 0 on success, 1 on failure, 2 on bad usage.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Interpolate(a) => cmd_interpolate(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Flops(a) => cmd_flops(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Extract(a) => cmd_extract(&a),
    }
}

/// Config file first, then `--set` overrides, then `--seed`.
pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(p) = &args.config {
        config.apply_flat_toml(&std::fs::read_to_string(p)?)?;
    }
    for o in &args.overrides {
        config.set_pair(o)?;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = train_config(args)?;
    let train_set = load_dataset(&args.data)?;
    let val_set = load_dataset(&args.val)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), config.to_flat_toml())?;

    let mut trainer = match &args.resume {
        Some(p) => Trainer::resume(config.clone(), p)?,
        None => Trainer::new(config.clone())?,
    };
    trainer.dump_dir = Some(args.out.clone());
    let outcome = trainer.run(&train_set, &val_set)?;
    info!("stopped ({:?}); best validation PSNR {:.3} dB at epoch {}", outcome.stop, outcome.best_psnr, outcome.best_epoch);

    save_model(args.out.join("model.ckpt"), &outcome.generator, outcome.discriminator.as_ref())?;
    trainer.save_state(args.out.join("state.ckpt"))?;
    write_jsonl(&args.out.join("history.jsonl"), &outcome.history)?;
    write_jsonl(&args.out.join("losses.jsonl"), &outcome.loss_log)?;

    let (h, w) = train_set[0].dims();
    let report = count_flops(&config.arch, h, w)?;
    std::fs::write(args.out.join("complexity.json"), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(args.out.join("complexity.txt"), report.table("trained model"))?;
    Ok(())
}

/// Synthesis features mapped from `[-1, 1]` to an RGB image.
fn features_image(features: &crate::tensor::Tensor) -> Result<Frame> {
    let f = Frame::from_tensor(features, 0)?;
    let data = f.data.iter().map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).collect();
    Frame::new(f.height, f.width, data)
}

pub fn cmd_interpolate(args: &InterpolateArgs) -> Result<()> {
    let expected = args.arch.as_deref().map(ArchitectureSpec::by_name).transpose()?;
    let generator = load_generator(&args.checkpoint, expected.as_ref())?;
    let a = crate::data::read_frame(&args.a)?;
    let b = crate::data::read_frame(&args.b)?;
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("frames differ in size: {:?} and {:?}", a.dims(), b.dims())));
    }
    let out = no_grad(|| generator.interpolate(&a.to_tensor(), &b.to_tensor()))?;
    write_frame(&Frame::from_tensor(&out.visible(), 0)?, &args.out)?;

    if let Some(dir) = &args.dump_flow {
        let features = out
            .features
            .as_ref()
            .ok_or_else(|| Error::Config("this architecture estimates no flow".into()))?;
        std::fs::create_dir_all(dir)?;
        write_frame(&features_image(features)?, dir.join("features.png"))?;
        let (h, w) = a.dims();
        let scale = generator.flow_scale(h, w, 1);
        let d = features.data();
        let plane = h * w;
        let flow = FlowField {
            height: h,
            width: w,
            u: d[..plane].iter().map(|u| u * scale.x / w as f64).collect(),
            v: d[plane..2 * plane].iter().map(|v| v * scale.y / h as f64).collect(),
        };
        crate::data::write_flow(&flow, dir.join("flow.flo"))?;
    }
    if let Some(dir) = &args.dump_scales {
        std::fs::create_dir_all(dir)?;
        for (j, f) in out.scale_frames.iter().enumerate() {
            let f = no_grad(|| f.clamp(0.0, 1.0));
            write_frame(&Frame::from_tensor(&f, 0)?, dir.join(format!("scale_x{}.png", j + 1)))?;
        }
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let generator = load_generator(&args.checkpoint, None)?;
    let set = load_dataset(&args.data)?;
    let report = evaluate(&generator, &set)?;
    print!("{}", report.table());
    if let Some(p) = &args.report {
        std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

pub fn cmd_flops(args: &FlopsArgs) -> Result<()> {
    let spec = ArchitectureSpec::by_name(&args.arch)?;
    let report = count_flops(&spec, args.height, args.width)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.table(&args.arch));
    }
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let seeds: Vec<u64> = (args.seed..args.seed + args.seeds).collect();
    let report = run_suite(&seeds, args.epsilon, args.tolerance)?;
    for (op, worst, cases) in report.worst_by_op() {
        let verdict = if worst < args.tolerance { "ok" } else { "FAILED" };
        println!("{op:<12} {cases:>3} cases  max rel err {worst:.3e}  {verdict}");
    }
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<String> = report.failures().iter().map(|f| format!("{} (seed {})", f.op, f.seed)).collect();
        Err(Error::Numeric(format!("gradient check failed: {}", names.join(", "))))
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        width: args.width,
        height: args.height,
        texture: args.texture,
        max_motion: args.max_motion,
        count: args.count,
        seed: args.seed,
    };
    let samples = generate_synthetic(&spec)?;
    let triplets: Vec<_> = samples.iter().map(|s| s.triplet.clone()).collect();
    let flows: Vec<_> = samples.iter().map(|s| s.flow.clone()).collect();
    let manifest = Manifest {
        source: format!("synthetic {:?} seed {}", args.texture, args.seed),
        dedup_threshold: 0.0,
        stride: 1,
        entries: triplets
            .iter()
            .enumerate()
            .map(|(i, t)| ManifestEntry {
                source: t.source.clone(),
                indices: t.indices,
                frames: Default::default(),
                pair_mse: None,
                decision: crate::data::Decision::Kept,
                output: Some(crate::data::triplet_dir_name(i)),
            })
            .collect(),
    };
    write_dataset(&args.out, &triplets, Some(&flows), &manifest)?;
    info!("wrote {} triplets to {}", triplets.len(), args.out.display());
    Ok(())
}

pub fn cmd_extract(args: &ExtractArgs) -> Result<()> {
    let opts = ExtractOptions { dedup_threshold: args.dedup_threshold, stride: args.stride };
    let (triplets, manifest) = extract_triplets(&args.input, opts)?;
    write_dataset(&args.out, &triplets, None, &manifest)?;
    info!("kept {} of {} triplets", manifest.kept(), manifest.entries.len());
    Ok(())
}
