use serde::{Deserialize, Serialize};

use crate::arch::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::layers::DiscriminatorSpec;
use crate::losses::{GanMode, LossConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Side of the square training crops.
    pub crop: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub arch: ArchitectureSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            crop: 128,
            patience: 10,
            max_epochs: 100,
            max_steps: None,
            seed: 0,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            arch: ArchitectureSpec::ms(),
        }
    }
}

/// Keys accepted by [`TrainConfig::set`] and the flat config file.
pub const CONFIG_KEYS: &[&str] = &[
    "arch",
    "levels",
    "width",
    "depth",
    "refinement",
    "flow_unit_px",
    "discriminator",
    "learning_rate",
    "batch_size",
    "crop",
    "patience",
    "max_epochs",
    "max_steps",
    "seed",
    "beta1",
    "beta2",
    "epsilon",
    "lambda_vgg",
    "lambda_syn_finest",
    "lambda_syn_coarse",
    "lambda_gan",
    "gan_mode",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn is_none(value: &str) -> bool {
    matches!(value.trim(), "none" | "off" | "")
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        let m = self.arch.size_multiple();
        if self.crop == 0 || !self.crop.is_multiple_of(m) {
            return Err(Error::Config(format!("crop {} must be a positive multiple of {m}", self.crop)));
        }
        if let Some(d) = &self.arch.discriminator {
            if !self.crop.is_multiple_of(d.reduction()) {
                return Err(Error::Config(format!(
                    "crop {} must be a multiple of the discriminator reduction {}",
                    self.crop,
                    d.reduction()
                )));
            }
        }
        if self.loss.gan_mode != GanMode::Off && self.arch.discriminator.is_none() {
            return Err(Error::Config("gan_mode needs a discriminator".into()));
        }
        let AdamConfig { beta1, beta2, epsilon } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
            return Err(Error::Config("invalid Adam hyper-parameters".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim().trim_matches('"');
        match key.trim() {
            "arch" => {
                let disc = self.arch.discriminator;
                self.arch = ArchitectureSpec::by_name(v)?;
                self.arch.discriminator = disc;
            }
            "levels" => self.arch.levels = parse(key, v)?,
            "width" => self.arch.width = parse(key, v)?,
            "depth" => self.arch.depth = parse(key, v)?,
            "refinement" => self.arch.refinement = parse(key, v)?,
            "flow_unit_px" => self.arch.flow_unit_px = if is_none(v) { None } else { Some(parse(key, v)?) },
            "discriminator" => {
                self.arch.discriminator = parse::<bool>(key, v)?.then(DiscriminatorSpec::default);
            }
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "crop" => self.crop = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "max_steps" => self.max_steps = if is_none(v) { None } else { Some(parse(key, v)?) },
            "seed" => self.seed = parse(key, v)?,
            "beta1" => self.adam.beta1 = parse(key, v)?,
            "beta2" => self.adam.beta2 = parse(key, v)?,
            "epsilon" => self.adam.epsilon = parse(key, v)?,
            "lambda_vgg" => self.loss.lambda_vgg = parse(key, v)?,
            "lambda_syn_finest" => self.loss.lambda_syn_finest = parse(key, v)?,
            "lambda_syn_coarse" => self.loss.lambda_syn_coarse = parse(key, v)?,
            "lambda_gan" => self.loss.lambda_gan = parse(key, v)?,
            "gan_mode" => {
                self.loss.gan_mode = match v {
                    "off" => GanMode::Off,
                    "minimax" => GanMode::Minimax,
                    "non_saturating" => GanMode::NonSaturating,
                    _ => return Err(Error::Config(format!("unknown gan_mode `{v}`"))),
                };
                if self.loss.gan_mode != GanMode::Off && self.arch.discriminator.is_none() {
                    self.arch.discriminator = Some(DiscriminatorSpec::default());
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown config key `{other}`; expected one of {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses `key=value` as given on a command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k, v)
    }

    /// Applies a flat TOML document on top of `self`. `arch` is applied
    /// first so that the remaining keys refine the preset.
    pub fn apply_flat_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text.parse()?;
        let mut entries: Vec<_> = table.into_iter().collect();
        entries.sort_by_key(|(k, _)| k != "arch");
        for (k, v) in entries {
            let s = match v {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => {
                    return Err(Error::Config(format!("`{k}` must be a scalar, found {}", other.type_str())))
                }
            };
            self.set(&k, &s)?;
        }
        Ok(())
    }

    /// Flat TOML that [`apply_flat_toml`](Self::apply_flat_toml) reads back
    /// into an identical configuration, for every config reachable from the
    /// supported keys.
    pub fn to_flat_toml(&self) -> String {
        let gan = match self.loss.gan_mode {
            GanMode::Off => "off",
            GanMode::Minimax => "minimax",
            GanMode::NonSaturating => "non_saturating",
        };
        let arch = match (self.arch.kind, self.arch.refinement) {
            (crate::arch::ArchKind::Baseline, _) => "baseline",
            (_, true) => "ms-refine",
            _ => "ms",
        };
        let mut lines = vec![
            format!("arch = \"{arch}\""),
            format!("levels = {}", self.arch.levels),
            format!("width = {}", self.arch.width),
            format!("depth = {}", self.arch.depth),
            format!("refinement = {}", self.arch.refinement),
            format!(
                "flow_unit_px = \"{}\"",
                self.arch.flow_unit_px.map_or("none".to_string(), |v| v.to_string())
            ),
            format!("discriminator = {}", self.arch.discriminator.is_some()),
            format!("learning_rate = {:e}", self.learning_rate),
            format!("batch_size = {}", self.batch_size),
            format!("crop = {}", self.crop),
            format!("patience = {}", self.patience),
            format!("max_epochs = {}", self.max_epochs),
        ];
        if let Some(s) = self.max_steps {
            lines.push(format!("max_steps = {s}"));
        }
        lines.extend([
            format!("seed = {}", self.seed),
            format!("beta1 = {:?}", self.adam.beta1),
            format!("beta2 = {:?}", self.adam.beta2),
            format!("epsilon = {:e}", self.adam.epsilon),
            format!("lambda_vgg = {:?}", self.loss.lambda_vgg),
            format!("lambda_syn_finest = {:?}", self.loss.lambda_syn_finest),
            format!("lambda_syn_coarse = {:?}", self.loss.lambda_syn_coarse),
            format!("lambda_gan = {:?}", self.loss.lambda_gan),
            format!("gan_mode = \"{gan}\""),
        ]);
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_protocol() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.crop, 128);
        assert_eq!(c.patience, 10);
        assert_eq!((c.adam.beta1, c.adam.beta2, c.adam.epsilon), (0.9, 0.999, 1e-8));
        c.validate().unwrap();
    }

    #[test]
    fn flat_file_and_overrides() {
        let mut c = TrainConfig::default();
        c.apply_flat_toml("crop = 32\nlearning_rate = 1e-3\narch = \"ms-refine\"\ngan_mode = \"minimax\"\n")
            .unwrap();
        assert_eq!(c.crop, 32);
        assert!(c.arch.refinement);
        assert!(c.arch.discriminator.is_some());
        c.set_pair("max_steps=20").unwrap();
        assert_eq!(c.max_steps, Some(20));
        assert!(c.set_pair("bogus=1").is_err());
        assert!(c.set("crop", "abc").is_err());
        c.validate().unwrap();
    }

    #[test]
    fn flat_toml_roundtrip() {
        let mut c = TrainConfig::default();
        c.set_pair("arch=ms-refine").unwrap();
        c.set_pair("flow_unit_px=none").unwrap();
        c.set_pair("gan_mode=non_saturating").unwrap();
        c.set_pair("max_steps=7").unwrap();
        c.set_pair("learning_rate=0.00037").unwrap();
        let mut d = TrainConfig::default();
        d.apply_flat_toml(&c.to_flat_toml()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn invalid_configs() {
        let mut c = TrainConfig { crop: 12, ..Default::default() };
        assert!(c.validate().is_err());
        c.crop = 32;
        c.patience = 0;
        assert!(c.validate().is_err());
    }
}
