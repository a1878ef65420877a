//! Alternating discriminator and generator updates on the toy set,
//! tracking the range of discriminator outputs.

use midframe::data::make_batches;
use midframe::toy;
use midframe::training::Trainer;

fn main() -> midframe::Result<()> {
    let train = toy::dataset(100, 0)?;
    let mut config = toy::config("ms", 32)?;
    config.set("gan_mode", "non_saturating")?;
    let mut trainer = Trainer::new(config.clone())?;

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut step = 0;
    'outer: for epoch in 0.. {
        for batch in make_batches(&train, Some(config.crop), config.batch_size, config.seed, epoch)? {
            let rec = trainer.train_step(&batch)?;
            let (real, fake) = trainer.last_discriminator_outputs.clone().unwrap_or_default();
            for v in real.iter().chain(&fake) {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
            if step == 0 || (step + 1) % 50 == 0 {
                println!(
                    "step {:>3}: D loss {:.4}  G adversarial {:.4}  total {:.5}",
                    step + 1,
                    rec.l_gan_d.unwrap_or(f64::NAN),
                    rec.l_gan_g.unwrap_or(f64::NAN),
                    rec.total
                );
            }
            step += 1;
            if step == 200 {
                break 'outer;
            }
        }
    }
    println!("discriminator outputs stayed in [{lo:.4}, {hi:.4}]; 2 ln 2 = {:.4}", 2.0 * 2f64.ln());
    Ok(())
}
