//! Training objectives: the per-scale distance, its multi-scale weighting,
//! the refinement term, a frozen-feature perceptual distance and the
//! adversarial terms.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Conv2d, WeightInit, ORTHOGONAL_GAIN};
use crate::pyramid::InterpolationOutput;
use crate::tensor::Tensor;

/// Probabilities are kept this far from 0 and 1 before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanMode {
    Off,
    /// Generator minimizes `log(1 - D(G))`.
    Minimax,
    /// Generator minimizes `-log D(G)`.
    NonSaturating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_vgg: f64,
    /// Weight of the finest-scale synthesis loss.
    pub lambda_syn_finest: f64,
    /// Weight of every coarser synthesis loss.
    pub lambda_syn_coarse: f64,
    pub lambda_gan: f64,
    pub gan_mode: GanMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_vgg: 0.001,
            lambda_syn_finest: 1.0,
            lambda_syn_coarse: 0.5,
            lambda_gan: 0.0001,
            gan_mode: GanMode::Off,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_vgg, self.lambda_syn_finest, self.lambda_syn_coarse, self.lambda_gan];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {weights:?}")));
        }
        Ok(())
    }

    /// Weight of synthesis scale `j` (1-based, 1 is finest).
    pub fn scale_weight(&self, j: usize) -> f64 {
        if j == 1 {
            self.lambda_syn_finest
        } else {
            self.lambda_syn_coarse
        }
    }
}

/// A fixed map from images to feature tensors used for perceptual distance.
pub trait FeatureExtractor {
    fn features(&self, image: &Tensor) -> Result<Tensor>;
}

/// Frozen stack of strided 3x3 convolutions with ReLU, orthogonally
/// initialized from a seed. Its parameters never require gradients.
#[derive(Debug, Clone)]
pub struct RandomFeatureExtractor {
    layers: Vec<Conv2d>,
}

impl RandomFeatureExtractor {
    pub const CHANNELS: [usize; 4] = [16, 32, 64, 64];

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut n_in = 3;
        let layers = Self::CHANNELS
            .iter()
            .map(|&n_out| {
                let conv = Conv2d::new(n_in, n_out, 3, 2, WeightInit::Orthogonal(ORTHOGONAL_GAIN), &mut rng);
                n_in = n_out;
                Conv2d {
                    weight: conv.weight.detach(),
                    bias: conv.bias.detach(),
                    ..conv
                }
            })
            .collect();
        Self { layers }
    }

    /// Input sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.layers.len()
    }
}

impl FeatureExtractor for RandomFeatureExtractor {
    fn features(&self, image: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = image.dims4()?;
        let m = self.size_multiple();
        if c != 3 || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "feature extractor needs 3-channel input with sides divisible by {m}, got {:?}",
                image.shape()
            )));
        }
        let mut x = image.clone();
        for l in &self.layers {
            x = l.forward(&x)?.relu();
        }
        Ok(x)
    }
}

/// Loss settings plus the (non-serializable) feature extractor.
#[derive(Clone)]
pub struct Objective {
    pub config: LossConfig,
    pub extractor: Option<Rc<dyn FeatureExtractor>>,
}

impl std::fmt::Debug for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Objective")
            .field("config", &self.config)
            .field("extractor", &self.extractor.is_some())
            .finish()
    }
}

/// Value of one distance evaluation split into its two terms.
#[derive(Debug, Clone)]
pub struct TauValue {
    pub total: Tensor,
    pub pixel: f64,
    /// Already multiplied by `lambda_vgg`.
    pub perceptual: f64,
}

impl Objective {
    pub fn new(config: LossConfig) -> Self {
        Self { config, extractor: None }
    }

    pub fn with_extractor(config: LossConfig, extractor: Rc<dyn FeatureExtractor>) -> Self {
        Self { config, extractor: Some(extractor) }
    }

    /// Mean absolute error plus `lambda_vgg` times the mean squared feature
    /// distance (skipped when the weight is zero or no extractor is set).
    pub fn tau(&self, a: &Tensor, b: &Tensor) -> Result<TauValue> {
        let pixel = a.mean_abs_error(b)?;
        let pixel_value = pixel.item();
        match (&self.extractor, self.config.lambda_vgg) {
            (Some(ex), lambda) if lambda > 0.0 => {
                let fa = ex.features(a)?;
                let fb = ex.features(b)?;
                let perceptual = fa.mean_squared_error(&fb)?.scale(lambda);
                let pv = perceptual.item();
                Ok(TauValue { total: pixel.add(&perceptual)?, pixel: pixel_value, perceptual: pv })
            }
            _ => Ok(TauValue { total: pixel, pixel: pixel_value, perceptual: 0.0 }),
        }
    }

    /// `sum_j lambda_j * tau(scale_frame_j, target)` with the per-scale taus.
    pub fn multi_scale_loss(&self, outputs: &InterpolationOutput, target: &Tensor) -> Result<(Tensor, Vec<TauValue>)> {
        if outputs.scale_frames.is_empty() {
            return Err(Error::Contract("no per-scale syntheses to supervise".into()));
        }
        let mut taus = Vec::with_capacity(outputs.scale_frames.len());
        let mut total: Option<Tensor> = None;
        for (i, frame) in outputs.scale_frames.iter().enumerate() {
            let tau = self.tau(frame, target)?;
            let term = tau.total.scale(self.config.scale_weight(i + 1));
            total = Some(match total {
                None => term,
                Some(t) => t.add(&term)?,
            });
            taus.push(tau);
        }
        Ok((total.expect("at least one scale"), taus))
    }

    /// Multi-scale loss, plus the refinement term when a refined frame is
    /// present, plus `lambda_gan` times `generator_gan` when given.
    pub fn total_loss(
        &self,
        outputs: &InterpolationOutput,
        target: &Tensor,
        generator_gan: Option<&Tensor>,
    ) -> Result<LossBreakdown> {
        let (mut total, taus) = self.multi_scale_loss(outputs, target)?;
        let mut perceptual: f64 = taus
            .iter()
            .enumerate()
            .map(|(i, t)| self.config.scale_weight(i + 1) * t.perceptual)
            .sum();
        let mut refine = None;
        if let Some(r) = &outputs.refined {
            let tau = self.tau(r, target)?;
            perceptual += tau.perceptual;
            refine = Some(tau.total.item());
            total = total.add(&tau.total)?;
        }
        let mut gan_g = None;
        if let (Some(g), true) = (generator_gan, self.config.gan_mode != GanMode::Off) {
            gan_g = Some(g.item());
            total = total.add(&g.scale(self.config.lambda_gan))?;
        }
        Ok(LossBreakdown {
            scales: taus.iter().map(|t| t.total.item()).collect(),
            scale_weights: (1..=taus.len()).map(|j| self.config.scale_weight(j)).collect(),
            refine,
            perceptual,
            gan_generator: gan_g,
            gan_weight: self.config.lambda_gan,
            gan_discriminator: None,
            total,
        })
    }
}

/// Loss terms of one step:
/// `total == sum_j scale_weights[j] * scales[j] + refine + gan_weight * gan_generator`.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub scales: Vec<f64>,
    pub scale_weights: Vec<f64>,
    pub refine: Option<f64>,
    /// Weighted perceptual share, already inside `scales` and `refine`.
    pub perceptual: f64,
    pub gan_generator: Option<f64>,
    pub gan_weight: f64,
    pub gan_discriminator: Option<f64>,
    pub total: Tensor,
}

impl LossBreakdown {
    /// Weighted contributions, in the order scales..., refine, gan.
    pub fn contributions(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.scales.iter().zip(&self.scale_weights).map(|(s, w)| s * w).collect();
        v.push(self.refine.unwrap_or(0.0));
        v.push(self.gan_generator.map_or(0.0, |g| g * self.gan_weight));
        v
    }

    pub fn record(&self, step: u64) -> LossRecord {
        LossRecord {
            step,
            l_x1: self.scales.first().copied(),
            l_x2: self.scales.get(1).copied(),
            l_x3: self.scales.get(2).copied(),
            l_refine: self.refine,
            l_vgg: self.perceptual,
            l_gan_g: self.gan_generator,
            l_gan_d: self.gan_discriminator,
            total: self.total.item(),
        }
    }
}

/// One line of the per-step loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub l_x1: Option<f64>,
    pub l_x2: Option<f64>,
    pub l_x3: Option<f64>,
    pub l_refine: Option<f64>,
    pub l_vgg: f64,
    pub l_gan_g: Option<f64>,
    pub l_gan_d: Option<f64>,
    pub total: f64,
}

fn check_probabilities(p: &Tensor, what: &str) -> Result<()> {
    if let Some(v) = p.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Contract(format!("{what} contains {v}, outside [0, 1]")));
    }
    Ok(())
}

/// `(discriminator_loss, generator_loss)` from discriminator outputs on real
/// and generated frames.
///
/// Discriminator: `-mean log D(real) - mean log(1 - D(fake))`.
/// Generator: `mean log(1 - D(fake))` (minimax) or `-mean log D(fake)`.
pub fn gan_losses(d_real: &Tensor, d_fake: &Tensor, mode: GanMode) -> Result<(Tensor, Tensor)> {
    check_probabilities(d_real, "d_real")?;
    check_probabilities(d_fake, "d_fake")?;
    let (lo, hi) = (PROB_CLAMP, 1.0 - PROB_CLAMP);
    let real = d_real.clamp(lo, hi);
    let fake = d_fake.clamp(lo, hi);
    let log_real = real.ln().mean();
    let log_not_fake = fake.affine(-1.0, 1.0).ln().mean();
    let d_loss = log_real.add(&log_not_fake)?.neg();
    let g_loss = match mode {
        GanMode::Minimax => log_not_fake,
        GanMode::NonSaturating | GanMode::Off => fake.ln().mean().neg(),
    };
    Ok((d_loss, g_loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    fn img(v: f64) -> Tensor {
        Tensor::full(&[1, 3, 16, 16], v)
    }

    fn outputs(frames: Vec<Tensor>, refined: Option<Tensor>) -> InterpolationOutput {
        InterpolationOutput {
            frame: refined.clone().unwrap_or_else(|| frames[0].clone()),
            scale_frames: frames,
            features: None,
            scale_features: Vec::new(),
            refined,
        }
    }

    #[test]
    fn tau_basics() {
        let obj = Objective::with_extractor(LossConfig::default(), Rc::new(RandomFeatureExtractor::new(0)));
        let a = Tensor::new(&[1, 3, 16, 16], (0..768).map(|i| (i % 13) as f64 / 13.0).collect()).unwrap();
        assert_eq!(obj.tau(&a, &a).unwrap().total.item(), 0.0);
        let plain = Objective::new(LossConfig { lambda_vgg: 0.0, ..Default::default() });
        let v = plain.tau(&img(0.6), &img(0.5)).unwrap().total.item();
        assert!((v - 0.1).abs() < 1e-12);
        let with = obj.tau(&a, &img(0.5)).unwrap();
        assert!(with.perceptual > 0.0);
        assert!((with.total.item() - with.pixel - with.perceptual).abs() < 1e-12);
    }

    #[test]
    fn extractor_rejects_bad_sizes() {
        let obj = Objective::with_extractor(LossConfig::default(), Rc::new(RandomFeatureExtractor::new(0)));
        let a = Tensor::zeros(&[1, 3, 12, 12]);
        assert!(obj.tau(&a, &a).is_err());
    }

    #[test]
    fn multi_scale_weighting() {
        let obj = Objective::new(LossConfig { lambda_vgg: 0.0, ..Default::default() });
        let target = img(0.0);
        let out = outputs(vec![img(1.0), img(0.8), img(0.6)], None);
        let (total, taus) = obj.multi_scale_loss(&out, &target).unwrap();
        assert_eq!(taus.len(), 3);
        assert!((total.item() - 1.7).abs() < 1e-12);
        let single = outputs(vec![img(0.25)], None);
        assert!((obj.multi_scale_loss(&single, &target).unwrap().0.item() - 0.25).abs() < 1e-12);
        let empty = InterpolationOutput { scale_frames: vec![], ..outputs(vec![img(0.0)], None) };
        assert!(matches!(obj.multi_scale_loss(&empty, &target), Err(Error::Contract(_))));
    }

    #[test]
    fn total_loss_breakdown_adds_up() {
        let obj = Objective::new(LossConfig { lambda_vgg: 0.0, gan_mode: GanMode::NonSaturating, ..Default::default() });
        let target = img(0.0);
        let out = outputs(vec![img(0.3), img(0.2), img(0.1)], Some(img(0.05)));
        let g = Tensor::scalar(0.7);
        let b = obj.total_loss(&out, &target, Some(&g)).unwrap();
        let sum: f64 = b.contributions().iter().sum();
        assert!((sum - b.total.item()).abs() < 1e-6);
        let perfect = outputs(vec![img(0.0); 3], None);
        assert_eq!(obj.total_loss(&perfect, &target, None).unwrap().total.item(), 0.0);
    }

    #[test]
    fn gan_uninformative_point() {
        let half = t(&[0.5; 4]);
        let (d, g) = gan_losses(&half, &half, GanMode::NonSaturating).unwrap();
        assert!((d.item() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((g.item() - 2f64.ln()).abs() < 1e-12);
        let (_, gm) = gan_losses(&half, &half, GanMode::Minimax).unwrap();
        assert!((gm.item() + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gan_perfect_discriminator_and_contract() {
        let (d, _) = gan_losses(&t(&[1.0]), &t(&[0.0]), GanMode::Minimax).unwrap();
        assert!(d.item() < 1e-6);
        assert!(gan_losses(&t(&[1.2]), &t(&[0.5]), GanMode::Minimax).is_err());
        assert!(gan_losses(&t(&[0.5]), &t(&[-0.1]), GanMode::Minimax).is_err());
    }
}
