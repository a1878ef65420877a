//! Coarse-to-fine estimation of synthesis features and the full
//! interpolation pipeline.
//!
//! Level `j` runs at `1 / 2^j` of the input resolution. The coarsest level
//! estimates features from the downsampled frames directly; every finer
//! level warps its frames with the upsampled coarser flow and adds a
//! residual before a `tanh`. Each level's features are also upsampled to
//! full resolution to synthesize a per-scale frame for supervision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{ArchKind, ArchitectureSpec};
use crate::error::{Error, Result};
use crate::layers::{ConvBlock, ModelParameters, Parameterized};
use crate::synthesis::synthesize;
use crate::tensor::{downsample2, no_grad, upsample2, warp, FlowScale, Tensor};

/// Everything an interpolation pass produces.
#[derive(Debug, Clone)]
pub struct InterpolationOutput {
    /// Final prediction before clamping (refined frame when refinement is on).
    pub frame: Tensor,
    /// Full-resolution synthesis from each level; index 0 is the finest.
    pub scale_frames: Vec<Tensor>,
    /// Full-resolution synthesis features used for the final synthesis.
    pub features: Option<Tensor>,
    /// Features of each level at that level's resolution; index 0 is the finest.
    pub scale_features: Vec<Tensor>,
    pub refined: Option<Tensor>,
}

impl InterpolationOutput {
    /// The displayable frame, clamped to `[0, 1]` and cut from the graph.
    pub fn visible(&self) -> Tensor {
        no_grad(|| self.frame.clamp(0.0, 1.0)).detach()
    }
}

/// Per-level features from [`Generator::estimate_pyramid`].
#[derive(Debug, Clone)]
pub struct PyramidFeatures {
    /// `levels[j - 1]` holds the features at level `j`.
    pub levels: Vec<Tensor>,
    /// Finest level features upsampled once more to full resolution.
    pub full: Tensor,
}

/// The generator network: a flow pyramid (optionally refined) or the
/// direct-prediction baseline.
#[derive(Debug, Clone)]
pub struct Generator {
    arch: ArchitectureSpec,
    /// Blocks in the order of [`ArchitectureSpec::blocks`].
    blocks: Vec<(String, ConvBlock)>,
}

fn frame_pair_check(first: &Tensor, last: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let dims = first.dims4()?;
    if first.shape() != last.shape() {
        return Err(Error::Shape(format!(
            "input frames differ in shape: {:?} vs {:?}",
            first.shape(),
            last.shape()
        )));
    }
    Ok(dims)
}

impl Generator {
    /// Builds and initializes every block deterministically from `seed`.
    pub fn new(arch: ArchitectureSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = arch
            .blocks()
            .into_iter()
            .map(|b| Ok((b.name, ConvBlock::new(b.spec, &mut rng)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { arch, blocks })
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn block(&self, name: &str) -> Option<&ConvBlock> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut ConvBlock> {
        self.blocks.iter_mut().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    fn require(&self, name: &str) -> Result<&ConvBlock> {
        self.block(name)
            .ok_or_else(|| Error::Config(format!("architecture has no `{name}` block")))
    }

    /// Pixel scale of one flow unit at a level running at `1 / divisor`
    /// of an `h x w` input.
    pub fn flow_scale(&self, h: usize, w: usize, divisor: usize) -> FlowScale {
        match self.arch.flow_unit_px {
            Some(px) => FlowScale::uniform(px / divisor as f64),
            None => FlowScale::image_extent(h / divisor, w / divisor),
        }
    }

    /// Synthesis features at every level for frames whose sides are
    /// multiples of `2^levels`.
    pub fn estimate_pyramid(&self, first: &Tensor, last: &Tensor) -> Result<PyramidFeatures> {
        if self.arch.kind != ArchKind::Pyramid {
            return Err(Error::Config("the baseline network has no flow pyramid".into()));
        }
        let (_, _, h, w) = frame_pair_check(first, last)?;
        let levels = self.arch.levels;
        let m = self.arch.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "pyramid with {levels} levels needs sides divisible by {m}, got {h}x{w}"
            )));
        }

        // downsampled[j] = D^j applied to the inputs
        let mut downsampled = vec![(first.clone(), last.clone())];
        for j in 1..=levels {
            let (a, b) = &downsampled[j - 1];
            downsampled.push((downsample2(a)?, downsample2(b)?));
        }

        let (a, b) = &downsampled[levels];
        let mut current = self
            .require("coarse")?
            .forward(&Tensor::concat_channels(&[a.clone(), b.clone()])?)?;
        let mut per_level = vec![current.clone()];
        for j in (1..levels).rev() {
            let up = upsample2(&current)?;
            let flow = up.narrow_channels(0, 2)?;
            let scale = self.flow_scale(h, w, 1 << j);
            let (a, b) = &downsampled[j];
            let warped_a = warp(a, &flow.neg(), scale)?;
            let warped_b = warp(b, &flow, scale)?;
            let residual = self
                .require(&format!("residual{j}"))?
                .forward(&Tensor::concat_channels(&[warped_a, warped_b, up.clone()])?)?;
            current = up.add(&residual)?.tanh();
            per_level.push(current.clone());
        }
        per_level.reverse();
        let full = upsample2(&per_level[0])?;
        Ok(PyramidFeatures { levels: per_level, full })
    }

    /// Applies the refinement block to `(synthesized, first, last)`.
    pub fn refine_synthesis(&self, synthesized: &Tensor, first: &Tensor, last: &Tensor) -> Result<Tensor> {
        frame_pair_check(first, last)?;
        if synthesized.shape() != first.shape() {
            return Err(Error::Shape(format!(
                "synthesized frame {:?} does not match inputs {:?}",
                synthesized.shape(),
                first.shape()
            )));
        }
        self.require("refine")?
            .forward(&Tensor::concat_channels(&[synthesized.clone(), first.clone(), last.clone()])?)
    }

    /// Full pipeline for `[N, 3, H, W]` frames in `[0, 1]`. Inputs whose
    /// sides are not multiples of `2^levels` are reflection-padded and every
    /// full-resolution output is cropped back.
    pub fn interpolate(&self, first: &Tensor, last: &Tensor) -> Result<InterpolationOutput> {
        let (_, _, h, w) = frame_pair_check(first, last)?;
        let m = self.arch.size_multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        if (ph, pw) != (h, w) {
            let pad = |t: &Tensor| t.pad_reflect(ph - h, pw - w);
            let out = self.interpolate_aligned(&pad(first)?, &pad(last)?)?;
            let crop = |t: &Tensor| t.crop(h, w);
            return Ok(InterpolationOutput {
                frame: crop(&out.frame)?,
                scale_frames: out.scale_frames.iter().map(crop).collect::<Result<_>>()?,
                features: out.features.as_ref().map(crop).transpose()?,
                scale_features: out.scale_features,
                refined: out.refined.as_ref().map(crop).transpose()?,
            });
        }
        self.interpolate_aligned(first, last)
    }

    fn interpolate_aligned(&self, first: &Tensor, last: &Tensor) -> Result<InterpolationOutput> {
        let (_, _, h, w) = first.dims4()?;
        if self.arch.kind == ArchKind::Baseline {
            let pred = self
                .require("baseline")?
                .forward(&Tensor::concat_channels(&[first.clone(), last.clone()])?)?;
            return Ok(InterpolationOutput {
                frame: pred.clone(),
                scale_frames: vec![pred],
                features: None,
                scale_features: Vec::new(),
                refined: None,
            });
        }

        let pyramid = self.estimate_pyramid(first, last)?;
        let scale = self.flow_scale(h, w, 1);
        let mut scale_frames = Vec::with_capacity(pyramid.levels.len());
        for (i, level) in pyramid.levels.iter().enumerate() {
            let full = if i == 0 {
                pyramid.full.clone()
            } else {
                let mut f = level.clone();
                for _ in 0..=i {
                    f = upsample2(&f)?;
                }
                f
            };
            scale_frames.push(synthesize(first, last, &full, scale)?);
        }
        let refined = if self.arch.refinement {
            Some(self.refine_synthesis(&scale_frames[0], first, last)?)
        } else {
            None
        };
        Ok(InterpolationOutput {
            frame: refined.clone().unwrap_or_else(|| scale_frames[0].clone()),
            scale_frames,
            features: Some(pyramid.full),
            scale_features: pyramid.levels,
            refined,
        })
    }
}

impl Parameterized for Generator {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (name, b) in &self.blocks {
            let p = if prefix.is_empty() { name.clone() } else { format!("{prefix}.{name}") };
            b.visit_params(&p, out);
        }
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (name, b) in &mut self.blocks {
            let p = if prefix.is_empty() { name.clone() } else { format!("{prefix}.{name}") };
            b.visit_params_mut(&p, out);
        }
    }
}

/// Clones a generator's weights into a fresh instance of the same architecture.
pub fn with_parameters(arch: &ArchitectureSpec, params: &ModelParameters) -> Result<Generator> {
    let mut g = Generator::new(arch.clone(), 0)?;
    g.load_parameters(params)?;
    Ok(g)
}
