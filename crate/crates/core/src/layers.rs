//! Network building blocks: the six-layer convolutional block shared by
//! every flow and refinement stage, its initialization, and the
//! adversarial discriminator.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{batch_norm, conv2d, Activation, BatchNormMode, RunningStats, Tensor};

/// Named trainable tensors of a model.
pub type ModelParameters = BTreeMap<String, Tensor>;

/// Gain applied to orthogonal initialization of hidden convolutions.
pub const ORTHOGONAL_GAIN: f64 = std::f64::consts::SQRT_2;
/// Standard deviation of the final layer of each block at initialization.
pub const FINAL_LAYER_STD: f64 = 0.01;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Anything holding named trainable tensors.
pub trait Parameterized {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>);

    fn parameters(&self) -> ModelParameters {
        let mut v = Vec::new();
        self.visit_params("", &mut v);
        v.into_iter().map(|(k, t)| (k, t.clone())).collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = Vec::new();
        self.visit_params_mut("", &mut v);
        v
    }

    /// Number of trainable scalars.
    fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.visit_params("", &mut v);
        v.iter().map(|(_, t)| t.len()).sum()
    }

    fn zero_grad(&self) {
        let mut v = Vec::new();
        self.visit_params("", &mut v);
        v.iter().for_each(|(_, t)| t.zero_grad());
    }

    /// Replaces every parameter with the same-named entry of `params`.
    fn load_parameters(&mut self, params: &ModelParameters) -> Result<()> {
        let mut targets = self.params_mut();
        let mut problems = Vec::new();
        for (name, slot) in targets.iter() {
            match params.get(name) {
                None => problems.push(format!("missing tensor `{name}`")),
                Some(t) if t.shape() != slot.shape() => problems.push(format!(
                    "`{name}`: expected shape {:?}, found {:?}",
                    slot.shape(),
                    t.shape()
                )),
                _ => {}
            }
        }
        for name in params.keys() {
            if !targets.iter().any(|(n, _)| n == name) {
                problems.push(format!("unexpected tensor `{name}`"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint(problems.join("; ")));
        }
        for (name, slot) in targets.iter_mut() {
            **slot = Tensor::param(slot.shape(), params[name.as_str()].to_vec())?;
        }
        Ok(())
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `rows x cols` matrix with orthonormal rows (or columns, when taller than
/// wide), scaled by `gain`, returned row-major.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix signs so the decomposition is unique
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let m = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(gain * m[(i, j)]);
        }
    }
    out
}

fn normal(len: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("positive standard deviation");
    (0..len).map(|_| dist.sample(rng)).collect()
}

/// Single convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

/// How a convolution's weights are drawn.
#[derive(Debug, Clone, Copy)]
pub enum WeightInit {
    Orthogonal(f64),
    Normal(f64),
}

impl Conv2d {
    pub fn new(
        n_in: usize,
        n_out: usize,
        kernel: usize,
        stride: usize,
        init: WeightInit,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan = n_in * kernel * kernel;
        let w = match init {
            WeightInit::Orthogonal(gain) => orthogonal(n_out, fan, gain, rng),
            WeightInit::Normal(std) => normal(n_out * fan, std, rng),
        };
        Conv2d {
            weight: Tensor::param(&[n_out, n_in, kernel, kernel], w).expect("sized above"),
            bias: Tensor::param(&[n_out], vec![0.0; n_out]).expect("sized above"),
            stride,
            padding: (kernel - 1) / 2,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, Some(&self.bias), self.stride, self.padding)
    }
}

impl Parameterized for Conv2d {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Shape of a stride-1 convolutional block: `n_in -> width` (ReLU),
/// `depth - 2` hidden `width -> width` layers (ReLU), `width -> n_out` (`final_activation`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub n_in: usize,
    pub n_out: usize,
    pub width: usize,
    pub depth: usize,
    pub kernel: usize,
    pub final_activation: Activation,
}

impl ConvBlockSpec {
    /// The six-layer, 32-wide, 3x3 block.
    pub fn standard(n_in: usize, n_out: usize, final_activation: Activation) -> Self {
        Self { n_in, n_out, width: 32, depth: 6, kernel: 3, final_activation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 || self.kernel.is_multiple_of(2) || self.width == 0 || self.n_in == 0 || self.n_out == 0 {
            return Err(Error::Config(format!("invalid conv block {self:?}")));
        }
        Ok(())
    }

    /// `(n_in, n_out)` of each layer in order.
    pub fn layer_channels(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|i| {
                let n_in = if i == 0 { self.n_in } else { self.width };
                let n_out = if i + 1 == self.depth { self.n_out } else { self.width };
                (n_in, n_out)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub spec: ConvBlockSpec,
    pub layers: Vec<Conv2d>,
}

impl ConvBlock {
    /// Hidden layers are orthogonal with gain sqrt(2); the last layer is
    /// drawn from N(0, 0.01^2) so the block starts close to zero output.
    pub fn new(spec: ConvBlockSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let channels = spec.layer_channels();
        let last = channels.len() - 1;
        let layers = channels
            .into_iter()
            .enumerate()
            .map(|(i, (n_in, n_out))| {
                let init = if i == last {
                    WeightInit::Normal(FINAL_LAYER_STD)
                } else {
                    WeightInit::Orthogonal(ORTHOGONAL_GAIN)
                };
                Conv2d::new(n_in, n_out, spec.kernel, 1, init, rng)
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            h = if i == last {
                self.spec.final_activation.apply(&h)
            } else {
                h.relu()
            };
        }
        Ok(h)
    }
}

impl Parameterized for ConvBlock {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_params(&join(prefix, &format!("conv{i}")), out);
        }
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params_mut(&join(prefix, &format!("conv{i}")), out);
        }
    }
}

/// Strided conv + batch-norm + leaky-ReLU discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub initial_filters: usize,
    pub block_count: usize,
    pub kernel: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self { in_channels: 3, initial_filters: 32, block_count: 8, kernel: 3, leaky_slope: LEAKY_SLOPE }
    }
}

impl DiscriminatorSpec {
    /// Strides alternate 2, 1, 2, 1, ...
    pub fn strides(&self) -> Vec<usize> {
        (0..self.block_count).map(|i| if i % 2 == 0 { 2 } else { 1 }).collect()
    }

    /// Output features per block; doubled at every stride-2 block.
    pub fn features(&self) -> Vec<usize> {
        let mut f = self.initial_filters;
        self.strides()
            .into_iter()
            .map(|s| {
                if s == 2 {
                    f *= 2;
                }
                f
            })
            .collect()
    }

    /// Total spatial reduction factor.
    pub fn reduction(&self) -> usize {
        self.strides().iter().product()
    }

    pub fn final_features(&self) -> usize {
        self.features().last().copied().unwrap_or(self.initial_filters)
    }
}

#[derive(Debug, Clone)]
struct DiscBlock {
    conv: Conv2d,
    scale: Tensor,
    shift: Tensor,
    running: RunningStats,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    stem: Conv2d,
    blocks: Vec<DiscBlock>,
    head_weight: Tensor,
    head_bias: Tensor,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, rng: &mut ChaCha8Rng) -> Self {
        let gain = WeightInit::Orthogonal(ORTHOGONAL_GAIN);
        let stem = Conv2d::new(spec.in_channels, spec.initial_filters, spec.kernel, 1, gain, rng);
        let mut n_in = spec.initial_filters;
        let blocks = spec
            .strides()
            .into_iter()
            .zip(spec.features())
            .map(|(stride, n_out)| {
                let block = DiscBlock {
                    conv: Conv2d::new(n_in, n_out, spec.kernel, stride, gain, rng),
                    scale: Tensor::param(&[n_out], vec![1.0; n_out]).expect("sized"),
                    shift: Tensor::param(&[n_out], vec![0.0; n_out]).expect("sized"),
                    running: RunningStats::new(n_out),
                };
                n_in = n_out;
                block
            })
            .collect();
        let head_weight = Tensor::param(&[1, n_in], normal(n_in, FINAL_LAYER_STD, rng)).expect("sized");
        let head_bias = Tensor::param(&[1], vec![0.0]).expect("sized");
        Self { spec, stem, blocks, head_weight, head_bias }
    }

    /// Probability that each image in `[N, C, H, W]` is real, shape `[N]`.
    pub fn forward(&mut self, x: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        let (n, _, h, w) = x.dims4()?;
        let r = self.spec.reduction();
        if h % r != 0 || w % r != 0 {
            return Err(Error::Shape(format!(
                "discriminator input {h}x{w} is not divisible by {r}"
            )));
        }
        let slope = self.spec.leaky_slope;
        let mut h = self.stem.forward(x)?.leaky_relu(slope);
        for b in &mut self.blocks {
            h = b.conv.forward(&h)?;
            h = batch_norm(&h, &b.scale, &b.shift, &mut b.running, mode)?.leaky_relu(slope);
        }
        let pooled = h.global_avg_pool()?;
        pooled.linear(&self.head_weight, &self.head_bias)?.sigmoid().reshape(&[n])
    }

    /// Running batch-norm statistics, by name.
    pub fn buffers(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.insert(format!("block{i}.bn.running_mean"), b.running.mean.clone());
            out.insert(format!("block{i}.bn.running_var"), b.running.var.clone());
        }
        out
    }

    pub fn load_buffers(&mut self, buffers: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (suffix, slot) in [("running_mean", &mut b.running.mean), ("running_var", &mut b.running.var)] {
                let key = format!("block{i}.bn.{suffix}");
                let v = buffers
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing buffer `{key}`")))?;
                if v.len() != slot.len() {
                    return Err(Error::Checkpoint(format!("buffer `{key}` has wrong length")));
                }
                slot.clone_from(v);
            }
        }
        Ok(())
    }
}

impl Parameterized for Discriminator {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.stem.visit_params(&join(prefix, "stem"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            b.conv.visit_params(&join(&p, "conv"), out);
            out.push((join(&p, "bn.scale"), &b.scale));
            out.push((join(&p, "bn.shift"), &b.shift));
        }
        out.push((join(prefix, "head.weight"), &self.head_weight));
        out.push((join(prefix, "head.bias"), &self.head_bias));
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.stem.visit_params_mut(&join(prefix, "stem"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            b.conv.visit_params_mut(&join(&p, "conv"), out);
            out.push((join(&p, "bn.scale"), &mut b.scale));
            out.push((join(&p, "bn.shift"), &mut b.shift));
        }
        out.push((join(prefix, "head.weight"), &mut self.head_weight));
        out.push((join(prefix, "head.bias"), &mut self.head_bias));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn block_parameter_counts() {
        let a = ConvBlock::new(ConvBlockSpec::standard(6, 3, Activation::Tanh), &mut rng(0)).unwrap();
        assert_eq!(a.param_count(), 39_619);
        let b = ConvBlock::new(ConvBlockSpec::standard(9, 3, Activation::Tanh), &mut rng(0)).unwrap();
        assert_eq!(b.param_count(), 40_483);
    }

    #[test]
    fn block_preserves_spatial_size() {
        let spec = ConvBlockSpec { width: 4, ..ConvBlockSpec::standard(6, 3, Activation::Tanh) };
        let block = ConvBlock::new(spec, &mut rng(1)).unwrap();
        let y = block.forward(&Tensor::zeros(&[1, 6, 45, 80])).unwrap();
        assert_eq!(y.shape(), &[1, 3, 45, 80]);
    }

    #[test]
    fn hidden_layers_are_orthogonal_with_gain() {
        let block = ConvBlock::new(ConvBlockSpec::standard(6, 3, Activation::Tanh), &mut rng(2)).unwrap();
        for layer in &block.layers[..5] {
            let (rows, cols) = (layer.weight.shape()[0], layer.weight.len() / layer.weight.shape()[0]);
            assert!(rows <= cols);
            let w = layer.weight.data();
            for i in 0..rows {
                for j in 0..rows {
                    let dot: f64 = (0..cols).map(|k| w[i * cols + k] * w[j * cols + k]).sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((dot / 2.0 - target).abs() < 1e-5);
                }
            }
            assert!(layer.bias.data().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn tall_orthogonal_has_orthonormal_columns() {
        let w = orthogonal(32, 27, 1.0, &mut rng(3));
        for i in 0..27 {
            for j in 0..27 {
                let dot: f64 = (0..32).map(|k| w[k * 27 + i] * w[k * 27 + j]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn final_layer_std() {
        let mut samples = Vec::new();
        let mut r = rng(4);
        while samples.len() < 10_000 {
            let b = ConvBlock::new(ConvBlockSpec::standard(9, 3, Activation::Tanh), &mut r).unwrap();
            samples.extend_from_slice(b.layers[5].weight.data());
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((0.008..=0.012).contains(&std), "std {std}");
    }

    /// Share of block outputs with magnitude at least 0.1 for uniform
    /// inputs in `[0, 1]`, over `seeds` initializations.
    fn large_output_share(seeds: u64) -> f64 {
        let (mut large, mut total) = (0usize, 0usize);
        for seed in 0..seeds {
            let mut r = rng(seed);
            let block = ConvBlock::new(ConvBlockSpec::standard(6, 3, Activation::Tanh), &mut r).unwrap();
            let x: Vec<f64> = (0..6 * 24 * 24).map(|_| r.random::<f64>()).collect();
            let y = block.forward(&Tensor::new(&[1, 6, 24, 24], x).unwrap()).unwrap();
            large += y.data().iter().filter(|v| v.abs() >= 0.1).count();
            total += y.len();
        }
        large as f64 / total as f64
    }

    #[test]
    fn initial_outputs_are_small_and_finite() {
        let mut r = rng(3);
        let block = ConvBlock::new(ConvBlockSpec::standard(6, 3, Activation::Identity), &mut r).unwrap();
        let x: Vec<f64> = (0..6 * 16 * 16).map(|_| r.random_range(-1.0..1.0)).collect();
        let y = block.forward(&Tensor::new(&[1, 6, 16, 16], x).unwrap()).unwrap();
        assert!(y.data().iter().all(|v| v.is_finite() && v.abs() < 1.0));
        assert!(large_output_share(4) < 0.5);
    }

    /// With orthogonal gain sqrt(2) and a final layer of std 0.01 over 288
    /// inputs, the output std is about 0.1, so roughly a quarter of the
    /// outputs exceed 0.1 rather than one in a thousand.
    #[test]
    #[ignore = "does not hold for the stated initialization; see the measured share"]
    fn initial_outputs_below_tenth_with_high_probability() {
        let share = large_output_share(20);
        assert!(share < 1e-3, "share of outputs >= 0.1: {share}");
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = ConvBlockSpec::standard(6, 3, Activation::Tanh);
        let a = ConvBlock::new(spec, &mut rng(5)).unwrap().parameters();
        let b = ConvBlock::new(spec, &mut rng(5)).unwrap().parameters();
        for (k, t) in &a {
            assert_eq!(t.data(), b[k].data());
        }
    }

    #[test]
    fn discriminator_layout() {
        let spec = DiscriminatorSpec::default();
        assert_eq!(spec.strides(), vec![2, 1, 2, 1, 2, 1, 2, 1]);
        assert_eq!(spec.features(), vec![64, 64, 128, 128, 256, 256, 512, 512]);
        assert_eq!(spec.reduction(), 16);
        assert_eq!(128 / spec.reduction(), 8);
    }

    #[test]
    fn discriminator_outputs_probabilities() {
        let spec = DiscriminatorSpec { initial_filters: 4, ..Default::default() };
        let mut d = Discriminator::new(spec, &mut rng(6));
        let x = Tensor::new(&[2, 3, 16, 16], (0..1536).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let p = d.forward(&x, BatchNormMode::Train).unwrap();
        assert_eq!(p.shape(), &[2]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let e1 = d.forward(&x, BatchNormMode::Eval).unwrap();
        let e2 = d.forward(&x, BatchNormMode::Eval).unwrap();
        assert_eq!(e1.to_vec(), e2.to_vec());
        assert!(d.forward(&Tensor::zeros(&[1, 3, 24, 24]), BatchNormMode::Eval).is_err());
    }

    #[test]
    fn load_parameters_reports_mismatch() {
        let spec = ConvBlockSpec { width: 4, depth: 3, ..ConvBlockSpec::standard(6, 3, Activation::Tanh) };
        let mut block = ConvBlock::new(spec, &mut rng(7)).unwrap();
        let mut params = block.parameters();
        params.remove("conv0.bias");
        let err = block.load_parameters(&params).unwrap_err().to_string();
        assert!(err.contains("conv0.bias"), "{err}");
    }
}
