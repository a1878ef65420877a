use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{validate, Adam, EarlyStopping, Moments, TrainConfig};
use crate::checkpoint::{Archive, StoredTensor};
use crate::data::{make_batches, Batch, FrameTriplet};
use crate::error::{Error, Result};
use crate::layers::{Discriminator, Parameterized};
use crate::losses::{gan_losses, GanMode, LossBreakdown, LossRecord, Objective, RandomFeatureExtractor};
use crate::pyramid::{Generator, InterpolationOutput};
use crate::tensor::{BatchNormMode, Tensor};

/// Mixed into the seed for discriminator initialization.
const DISCRIMINATOR_SEED_SALT: u64 = 0x5eed_d15c;

/// Per-epoch summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub steps: u64,
    pub total: f64,
    pub l_x1: Option<f64>,
    pub l_x2: Option<f64>,
    pub l_x3: Option<f64>,
    pub l_refine: Option<f64>,
    pub l_vgg: f64,
    pub l_gan_g: Option<f64>,
    pub l_gan_d: Option<f64>,
    pub val_psnr: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: u64,
    /// Optimizer steps taken.
    pub step: u64,
    pub early: EarlyStopping,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Generator weights from the best validation epoch.
    pub generator: Generator,
    pub discriminator: Option<Discriminator>,
    pub best_psnr: f64,
    pub best_epoch: u64,
    pub history: Vec<EpochRecord>,
    pub loss_log: Vec<LossRecord>,
    pub stop: StopReason,
}

/// Owns the networks, optimizers and bookkeeping of one training run.
#[derive(Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Option<Discriminator>,
    pub objective: Objective,
    pub g_optimizer: Adam,
    pub d_optimizer: Option<Adam>,
    pub state: TrainState,
    best: Option<Generator>,
    /// Where to write diagnostics when the loss diverges.
    pub dump_dir: Option<PathBuf>,
    /// Discriminator outputs on the real and fake frames of the latest
    /// discriminator update.
    pub last_discriminator_outputs: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Default)]
struct Averages {
    n: f64,
    sums: BTreeMap<&'static str, (f64, usize)>,
}

impl Averages {
    fn add(&mut self, r: &LossRecord) {
        self.n += 1.0;
        let mut put = |k: &'static str, v: Option<f64>| {
            if let Some(v) = v {
                let e = self.sums.entry(k).or_default();
                e.0 += v;
                e.1 += 1;
            }
        };
        put("total", Some(r.total));
        put("l_x1", r.l_x1);
        put("l_x2", r.l_x2);
        put("l_x3", r.l_x3);
        put("l_refine", r.l_refine);
        put("l_vgg", Some(r.l_vgg));
        put("l_gan_g", r.l_gan_g);
        put("l_gan_d", r.l_gan_d);
    }

    fn get(&self, k: &str) -> Option<f64> {
        self.sums.get(k).map(|(s, n)| s / *n as f64)
    }
}

fn mse_stats(t: &Tensor) -> (f64, f64) {
    let d = t.data();
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config.arch.clone(), config.seed)?;
        let discriminator = config.arch.discriminator.map(|spec| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ DISCRIMINATOR_SEED_SALT);
            Discriminator::new(spec, &mut rng)
        });
        let objective = if config.loss.lambda_vgg > 0.0 {
            Objective::with_extractor(config.loss.clone(), Rc::new(RandomFeatureExtractor::new(config.seed)))
        } else {
            Objective::new(config.loss.clone())
        };
        let gan = config.loss.gan_mode != GanMode::Off;
        Ok(Self {
            g_optimizer: Adam::new(config.learning_rate, config.adam),
            d_optimizer: gan.then(|| Adam::new(config.learning_rate, config.adam)),
            state: TrainState { epoch: 0, step: 0, early: EarlyStopping::new(config.patience), history: Vec::new() },
            best: None,
            dump_dir: None,
            last_discriminator_outputs: None,
            generator,
            discriminator,
            objective,
            config,
        })
    }

    fn gan_enabled(&self) -> bool {
        self.config.loss.gan_mode != GanMode::Off && self.discriminator.is_some()
    }

    fn discriminator_mut(&mut self) -> Result<&mut Discriminator> {
        self.discriminator
            .as_mut()
            .ok_or_else(|| Error::Config("adversarial training needs a discriminator".into()))
    }

    /// One discriminator update on real middle frames and detached fakes.
    /// Returns the discriminator loss.
    pub fn discriminator_update(&mut self, real: &Tensor, fake: &Tensor) -> Result<f64> {
        let mode = self.config.loss.gan_mode;
        let d = self.discriminator_mut()?;
        let d_real = d.forward(real, BatchNormMode::Train)?;
        let d_fake = d.forward(&fake.detach(), BatchNormMode::Train)?;
        let (d_loss, _) = gan_losses(&d_real, &d_fake, mode)?;
        let outputs = (d_real.to_vec(), d_fake.to_vec());
        d.zero_grad();
        d_loss.backward()?;
        let value = d_loss.item();
        let d = self.discriminator.as_mut().expect("checked above");
        self.d_optimizer
            .as_mut()
            .ok_or_else(|| Error::Config("no discriminator optimizer".into()))?
            .update(d.params_mut())?;
        self.last_discriminator_outputs = Some(outputs);
        Ok(value)
    }

    /// Discriminator step alone, with fakes from the current generator.
    pub fn discriminator_step(&mut self, batch: &Batch) -> Result<f64> {
        let fake = crate::tensor::no_grad(|| self.generator.interpolate(&batch.first, &batch.last))?;
        self.discriminator_update(&batch.middle, &fake.frame)
    }

    /// Generator update from an already computed forward pass.
    pub fn generator_update(&mut self, out: &InterpolationOutput, target: &Tensor) -> Result<LossBreakdown> {
        let gan_term = if self.gan_enabled() {
            let mode = self.config.loss.gan_mode;
            let d = self.discriminator_mut()?;
            let d_fake = d.forward(&out.frame, BatchNormMode::Train)?;
            let (_, g) = gan_losses(&Tensor::full(d_fake.shape(), 1.0), &d_fake, mode)?;
            Some(g)
        } else {
            None
        };
        let breakdown = self.objective.total_loss(out, target, gan_term.as_ref())?;
        let total = breakdown.total.item();
        if !total.is_finite() {
            return Ok(breakdown);
        }
        self.generator.zero_grad();
        breakdown.total.backward()?;
        self.g_optimizer.update(self.generator.params_mut())?;
        Ok(breakdown)
    }

    /// Generator step alone.
    pub fn generator_step(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let out = self.generator.interpolate(&batch.first, &batch.last)?;
        self.generator_update(&out, &batch.middle)
    }

    /// One step on a batch: a discriminator update (when adversarial
    /// training is on) followed by a generator update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossRecord> {
        let out = self.generator.interpolate(&batch.first, &batch.last)?;
        let d_loss = if self.gan_enabled() {
            Some(self.discriminator_update(&batch.middle, &out.frame)?)
        } else {
            None
        };
        let mut breakdown = self.generator_update(&out, &batch.middle)?;
        breakdown.gan_discriminator = d_loss;
        self.state.step += 1;
        let record = breakdown.record(self.state.step);
        let finite = record.total.is_finite() && d_loss.is_none_or(f64::is_finite);
        if !finite {
            return Err(self.divergence(batch, &record));
        }
        Ok(record)
    }

    fn divergence(&self, batch: &Batch, record: &LossRecord) -> Error {
        let mut msg = format!(
            "loss diverged at epoch {} step {}: {}",
            self.state.epoch,
            record.step,
            serde_json::to_string(record).unwrap_or_default()
        );
        let (lo, hi) = mse_stats(&batch.first);
        msg.push_str(&format!("; batch items {:?}, input range [{lo}, {hi}]", batch.items));
        if let Some(dir) = &self.dump_dir {
            match self.dump_batch(dir, batch, record) {
                Ok(p) => msg.push_str(&format!("; dump written to {}", p.display())),
                Err(e) => msg.push_str(&format!("; dump failed: {e}")),
            }
        }
        Error::Numeric(msg)
    }

    fn dump_batch(&self, dir: &Path, batch: &Batch, record: &LossRecord) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        #[derive(Serialize)]
        struct Dump<'a> {
            epoch: u64,
            record: &'a LossRecord,
            items: &'a [(usize, usize, usize)],
        }
        let meta = serde_json::to_string_pretty(&Dump { epoch: self.state.epoch, record, items: &batch.items })?;
        let mut archive = Archive { meta, tensors: BTreeMap::new() };
        for (k, t) in [("first", &batch.first), ("middle", &batch.middle), ("last", &batch.last)] {
            archive.tensors.insert(format!("batch.{k}"), StoredTensor::from_tensor(t));
        }
        archive.insert_params("generator", &self.generator.parameters());
        let p = dir.join(format!("divergence_step{}.ckpt", record.step));
        archive.save(&p)?;
        Ok(p)
    }

    fn steps_exhausted(&self) -> bool {
        self.config.max_steps.is_some_and(|m| self.state.step >= m)
    }

    /// Runs epochs until early stopping, `max_epochs` or `max_steps`.
    pub fn run(&mut self, train_set: &[FrameTriplet], val_set: &[FrameTriplet]) -> Result<TrainOutcome> {
        if train_set.is_empty() || val_set.is_empty() {
            return Err(Error::Config("training and validation sets must be non-empty".into()));
        }
        let mut loss_log = Vec::new();
        let stop = loop {
            if self.state.early.should_stop() {
                break StopReason::Patience;
            }
            if self.state.epoch >= self.config.max_epochs as u64 {
                break StopReason::MaxEpochs;
            }
            if self.steps_exhausted() {
                break StopReason::MaxSteps;
            }
            let epoch = self.state.epoch;
            let batches = make_batches(
                train_set,
                Some(self.config.crop),
                self.config.batch_size,
                self.config.seed,
                epoch,
            )?;
            let mut avg = Averages::default();
            for batch in &batches {
                if self.steps_exhausted() {
                    break;
                }
                let rec = self.train_step(batch)?;
                avg.add(&rec);
                loss_log.push(rec);
            }
            let val_psnr = validate(&self.generator, val_set)?;
            let improved = self.state.early.observe(epoch, val_psnr);
            if improved {
                self.best = Some(self.generator.clone());
            }
            let record = EpochRecord {
                epoch,
                steps: avg.n as u64,
                total: avg.get("total").unwrap_or(f64::NAN),
                l_x1: avg.get("l_x1"),
                l_x2: avg.get("l_x2"),
                l_x3: avg.get("l_x3"),
                l_refine: avg.get("l_refine"),
                l_vgg: avg.get("l_vgg").unwrap_or(0.0),
                l_gan_g: avg.get("l_gan_g"),
                l_gan_d: avg.get("l_gan_d"),
                val_psnr,
                improved,
            };
            info!(
                "epoch {epoch}: {} steps, loss {:.5}, val PSNR {val_psnr:.3} dB{}",
                record.steps,
                record.total,
                if improved { " (best)" } else { "" }
            );
            self.state.history.push(record);
            self.state.epoch += 1;
        };
        let generator = self.best.clone().unwrap_or_else(|| self.generator.clone());
        Ok(TrainOutcome {
            generator,
            discriminator: self.discriminator.clone(),
            best_psnr: self.state.early.best.unwrap_or(f64::NAN),
            best_epoch: self.state.early.best_epoch.unwrap_or(0),
            history: self.state.history.clone(),
            loss_log,
            stop,
        })
    }

    /// Everything needed to continue this run later.
    pub fn save_state(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Meta<'a> {
            arch: &'a crate::arch::ArchitectureSpec,
            config: &'a TrainConfig,
            state: &'a TrainState,
            g_step: u64,
            d_step: Option<u64>,
        }
        let meta = Meta {
            arch: &self.config.arch,
            config: &self.config,
            state: &self.state,
            g_step: self.g_optimizer.step,
            d_step: self.d_optimizer.as_ref().map(|o| o.step),
        };
        let mut a = Archive { meta: toml::to_string(&meta)?, tensors: BTreeMap::new() };
        a.insert_params("generator", &self.generator.parameters());
        if let Some(b) = &self.best {
            a.insert_params("best", &b.parameters());
        }
        if let Some(d) = &self.discriminator {
            a.insert_params("discriminator", &d.parameters());
            for (k, v) in d.buffers() {
                a.tensors.insert(format!("discriminator_stats.{k}"), StoredTensor::vector(v));
            }
        }
        let mut put_moments = |prefix: &str, opt: &Adam| {
            for (k, m) in &opt.moments {
                a.tensors.insert(format!("{prefix}.m.{k}"), StoredTensor::vector(m.m.clone()));
                a.tensors.insert(format!("{prefix}.v.{k}"), StoredTensor::vector(m.v.clone()));
            }
        };
        put_moments("adam_g", &self.g_optimizer);
        if let Some(o) = &self.d_optimizer {
            put_moments("adam_d", o);
        }
        a.save(path)
    }

    /// Restores a run written by [`save_state`](Self::save_state). The stored
    /// configuration must match `config` apart from the stopping limits.
    pub fn resume(config: TrainConfig, path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            config: TrainConfig,
            state: TrainState,
            g_step: u64,
            d_step: Option<u64>,
        }
        let a = Archive::load(path)?;
        let meta: Meta =
            toml::from_str(&a.meta).map_err(|e| Error::Checkpoint(format!("invalid training state: {e}")))?;
        let comparable = |c: &TrainConfig| TrainConfig { max_epochs: 0, max_steps: None, patience: 1, ..c.clone() };
        if comparable(&meta.config) != comparable(&config) {
            let diff = crate::checkpoint::spec_diff(&config.arch, &meta.config.arch);
            return Err(Error::Checkpoint(format!(
                "training state was written with a different configuration{}",
                if diff.is_empty() { String::new() } else { format!(":\n  {}", diff.join("\n  ")) }
            )));
        }
        let mut t = Trainer::new(config)?;
        t.generator.load_parameters(&a.params("generator")?)?;
        if a.tensors.keys().any(|k| k.starts_with("best.")) {
            let mut b = t.generator.clone();
            b.load_parameters(&a.params("best")?)?;
            t.best = Some(b);
        }
        if let Some(d) = t.discriminator.as_mut() {
            d.load_parameters(&a.params("discriminator")?)?;
            d.load_buffers(&a.vectors("discriminator_stats"))?;
        }
        let moments = |prefix: &str| -> BTreeMap<String, Moments> {
            let m = a.vectors(&format!("{prefix}.m"));
            let v = a.vectors(&format!("{prefix}.v"));
            m.into_iter()
                .filter_map(|(k, m)| v.get(&k).map(|v| (k, Moments { m, v: v.clone() })))
                .collect()
        };
        t.g_optimizer.moments = moments("adam_g");
        t.g_optimizer.step = meta.g_step;
        if let Some(o) = t.d_optimizer.as_mut() {
            o.moments = moments("adam_d");
            o.step = meta.d_step.unwrap_or(0);
        }
        t.state = meta.state;
        t.state.early.patience = t.config.patience;
        Ok(t)
    }
}

/// Trains a fresh model from `config`.
pub fn train(config: TrainConfig, train_set: &[FrameTriplet], val_set: &[FrameTriplet]) -> Result<TrainOutcome> {
    Trainer::new(config)?.run(train_set, val_set)
}
