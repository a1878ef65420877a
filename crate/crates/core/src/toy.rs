//! The desk-scale setup: a synthetic translation dataset small enough to
//! train on a single CPU core, and the training settings used with it.

use crate::data::{generate_synthetic, FrameTriplet, SyntheticSpec, Texture};
use crate::error::Result;
use crate::training::TrainConfig;

pub const SIDE: usize = 64;
pub const MAX_MOTION: f64 = 4.0;
pub const TEXTURE: Texture = Texture::Checker;
pub const TRAIN_COUNT: usize = 500;
pub const VAL_COUNT: usize = 50;
pub const TRAIN_SEED: u64 = 0;
pub const VAL_SEED: u64 = 1;
pub const STEPS: u64 = 2000;
pub const BATCH: usize = 8;
pub const LEARNING_RATE: f64 = 1e-3;
pub const FLOW_UNIT_PX: f64 = 16.0;

pub fn spec(count: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec { width: SIDE, height: SIDE, texture: TEXTURE, max_motion: MAX_MOTION, count, seed }
}

pub fn dataset(count: usize, seed: u64) -> Result<Vec<FrameTriplet>> {
    Ok(generate_synthetic(&spec(count, seed))?.into_iter().map(|s| s.triplet).collect())
}

/// `(train, validation)` sets.
pub fn datasets() -> Result<(Vec<FrameTriplet>, Vec<FrameTriplet>)> {
    Ok((dataset(TRAIN_COUNT, TRAIN_SEED)?, dataset(VAL_COUNT, VAL_SEED)?))
}

/// Training settings for `arch` ("ms", "ms-refine" or "baseline") on
/// `crop x crop` windows.
pub fn config(arch: &str, crop: usize) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    c.set("arch", arch)?;
    c.arch.flow_unit_px = Some(FLOW_UNIT_PX);
    c.learning_rate = LEARNING_RATE;
    c.batch_size = BATCH;
    c.crop = crop;
    c.max_steps = Some(STEPS);
    c.validate()?;
    Ok(c)
}
