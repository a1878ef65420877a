//! Trains on the synthetic translation dataset and compares against the
//! frame-average baseline.
//!
//! ```text
//! cargo run --release --example train_toy -- --arch ms --crop 64
//! ```

use clap::Parser;
use midframe::toy;
use midframe::training::{evaluate, validate, FrameAverage, Trainer};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "ms")]
    arch: String,
    #[arg(long, default_value_t = toy::SIDE)]
    crop: usize,
    #[arg(long, default_value_t = toy::STEPS)]
    steps: u64,
    #[arg(long, default_value_t = toy::TRAIN_COUNT)]
    train: usize,
    #[arg(long, default_value_t = toy::VAL_COUNT)]
    val: usize,
    #[arg(long, default_value_t = toy::TRAIN_SEED)]
    seed: u64,
    /// Extra `key=value` training settings.
    #[arg(long = "set")]
    overrides: Vec<String>,
}

fn main() -> midframe::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let train = toy::dataset(args.train, args.seed)?;
    let val = toy::dataset(args.val, args.seed + 1)?;

    let mut config = toy::config(&args.arch, args.crop)?;
    config.max_steps = Some(args.steps);
    config.seed = args.seed;
    for o in &args.overrides {
        config.set_pair(o)?;
    }

    let baseline = validate(&FrameAverage, &val)?;
    println!("frame-average baseline: {baseline:.3} dB");
    let start = std::time::Instant::now();
    let outcome = Trainer::new(config)?.run(&train, &val)?;
    let report = evaluate(&outcome.generator, &val)?;
    println!(
        "best epoch {} of {} ({:?}) in {:.1}s",
        outcome.best_epoch,
        outcome.history.len(),
        outcome.stop,
        start.elapsed().as_secs_f64()
    );
    println!("model: {:.3} dB ({:+.3} dB over baseline)", report.mean_psnr, report.mean_psnr - baseline);
    for (j, p) in report.mean_scale_psnr.iter().enumerate() {
        println!("  scale x{}: {p:.3} dB", j + 1);
    }
    Ok(())
}
