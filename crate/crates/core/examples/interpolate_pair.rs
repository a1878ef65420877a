//! Interpolates a held-out synthetic pair with a checkpoint, writing the
//! inputs, the prediction and every per-scale synthesis as PNG files.
//! Without a checkpoint a small model is trained first.
//!
//! ```text
//! cargo run --release --example interpolate_pair -- --out pair_out
//! ```

use std::path::PathBuf;

use clap::Parser;
use midframe::checkpoint::{load_generator, save_model};
use midframe::data::{write_frame, Frame};
use midframe::metrics::psnr;
use midframe::tensor::no_grad;
use midframe::toy;
use midframe::training::Trainer;

#[derive(Parser)]
struct Args {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "pair_out")]
    out: PathBuf,
    /// Training steps when no checkpoint is given.
    #[arg(long, default_value_t = 300)]
    steps: u64,
}

fn main() -> midframe::Result<()> {
    let args = Args::parse();
    std::fs::create_dir_all(&args.out)?;
    let checkpoint = match args.checkpoint {
        Some(p) => p,
        None => {
            let (train, val) = (toy::dataset(200, 0)?, toy::dataset(8, 1)?);
            let mut config = toy::config("ms", 32)?;
            config.max_steps = Some(args.steps);
            let outcome = Trainer::new(config)?.run(&train, &val)?;
            let p = args.out.join("model.ckpt");
            save_model(&p, &outcome.generator, None)?;
            p
        }
    };
    let generator = load_generator(&checkpoint, None)?;

    let pair = toy::dataset(1, 99)?.remove(0);
    let out = no_grad(|| generator.interpolate(&pair.first.to_tensor(), &pair.last.to_tensor()))?;
    let pred = Frame::from_tensor(&out.visible(), 0)?;
    write_frame(&pair.first, args.out.join("a.png"))?;
    write_frame(&pair.last, args.out.join("b.png"))?;
    write_frame(&pair.middle, args.out.join("gt.png"))?;
    write_frame(&pred, args.out.join("pred.png"))?;
    for (j, f) in out.scale_frames.iter().enumerate() {
        let f = Frame::from_tensor(&no_grad(|| f.clamp(0.0, 1.0)), 0)?;
        write_frame(&f, args.out.join(format!("scale_x{}.png", j + 1)))?;
    }
    let average = pair.first.average(&pair.last)?;
    println!("prediction {:.2} dB, frame average {:.2} dB", psnr(&pred.data, &pair.middle.data)?, psnr(&average.data, &pair.middle.data)?);
    println!("frames written to {}", args.out.display());
    Ok(())
}
