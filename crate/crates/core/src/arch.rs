//! Declarative description of an interpolation network. The same
//! description instantiates the model and drives complexity accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{ConvBlockSpec, DiscriminatorSpec};
use crate::tensor::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    /// Coarse-to-fine flow pyramid with warping-based synthesis.
    Pyramid,
    /// Plain CNN predicting the middle frame directly.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ArchKind,
    /// Pyramid levels; level `levels` is the coarsest.
    pub levels: usize,
    pub width: usize,
    pub depth: usize,
    pub kernel: usize,
    pub refinement: bool,
    /// Layer count of the baseline CNN.
    pub baseline_depth: usize,
    /// Full-resolution pixels covered by one unit of flow. When absent,
    /// one unit spans the whole image at every level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_unit_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<DiscriminatorSpec>,
}

/// One convolution as seen by complexity accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerDescriptor {
    pub module: String,
    pub n_in: usize,
    pub n_out: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Output resolution is the input frame resolution divided by this.
    pub divisor: usize,
}

/// A block of the generator and the resolution divisor it runs at.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlacement {
    pub name: String,
    pub spec: ConvBlockSpec,
    pub divisor: usize,
}

pub const DEFAULT_FLOW_UNIT_PX: f64 = 128.0;

impl ArchitectureSpec {
    /// Three-level pyramid without synthesis refinement.
    pub fn ms() -> Self {
        Self {
            kind: ArchKind::Pyramid,
            levels: 3,
            width: 32,
            depth: 6,
            kernel: 3,
            refinement: false,
            baseline_depth: 15,
            flow_unit_px: Some(DEFAULT_FLOW_UNIT_PX),
            discriminator: None,
        }
    }

    pub fn ms_refine() -> Self {
        Self { refinement: true, ..Self::ms() }
    }

    /// Fifteen-layer, 32-wide CNN mapping both frames to the middle frame.
    pub fn baseline() -> Self {
        Self { kind: ArchKind::Baseline, levels: 0, refinement: false, ..Self::ms() }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "ms" => Ok(Self::ms()),
            "ms-refine" => Ok(Self::ms_refine()),
            "baseline" => Ok(Self::baseline()),
            other => Err(Error::Config(format!(
                "unknown architecture `{other}` (expected baseline, ms or ms-refine)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.kernel.is_multiple_of(2) || self.depth < 2 {
            return Err(Error::Config(format!(
                "invalid block shape: width {}, depth {}, kernel {}",
                self.width, self.depth, self.kernel
            )));
        }
        match self.kind {
            ArchKind::Pyramid if self.levels == 0 => {
                return Err(Error::Config("a pyramid needs at least one level".into()))
            }
            ArchKind::Baseline if self.baseline_depth < 2 => {
                return Err(Error::Config("baseline needs at least two layers".into()))
            }
            ArchKind::Baseline if self.refinement => {
                return Err(Error::Config("refinement applies to the pyramid only".into()))
            }
            _ => {}
        }
        if let Some(px) = self.flow_unit_px {
            if !(px > 0.0 && px.is_finite()) {
                return Err(Error::Config(format!("flow_unit_px must be positive, got {px}")));
            }
        }
        Ok(())
    }

    /// Input dimensions must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        match self.kind {
            ArchKind::Pyramid => 1 << self.levels,
            ArchKind::Baseline => 1,
        }
    }

    fn block(&self, n_in: usize, n_out: usize, act: Activation) -> ConvBlockSpec {
        ConvBlockSpec { n_in, n_out, width: self.width, depth: self.depth, kernel: self.kernel, final_activation: act }
    }

    /// Generator blocks in execution order.
    pub fn blocks(&self) -> Vec<BlockPlacement> {
        match self.kind {
            ArchKind::Baseline => vec![BlockPlacement {
                name: "baseline".into(),
                spec: ConvBlockSpec { depth: self.baseline_depth, ..self.block(6, 3, Activation::Identity) },
                divisor: 1,
            }],
            ArchKind::Pyramid => {
                let mut v = vec![BlockPlacement {
                    name: "coarse".into(),
                    spec: self.block(6, 3, Activation::Tanh),
                    divisor: 1 << self.levels,
                }];
                for j in (1..self.levels).rev() {
                    v.push(BlockPlacement {
                        name: format!("residual{j}"),
                        spec: self.block(9, 3, Activation::Tanh),
                        divisor: 1 << j,
                    });
                }
                if self.refinement {
                    v.push(BlockPlacement {
                        name: "refine".into(),
                        spec: self.block(9, 3, Activation::Identity),
                        divisor: 1,
                    });
                }
                v
            }
        }
    }

    /// Every generator convolution.
    pub fn generator_layers(&self) -> Vec<LayerDescriptor> {
        self.blocks()
            .into_iter()
            .flat_map(|b| {
                b.spec.layer_channels().into_iter().map(move |(n_in, n_out)| LayerDescriptor {
                    module: b.name.clone(),
                    n_in,
                    n_out,
                    kernel: b.spec.kernel,
                    stride: 1,
                    divisor: b.divisor,
                })
            })
            .collect()
    }

    /// Every discriminator convolution (empty without a discriminator).
    pub fn discriminator_layers(&self) -> Vec<LayerDescriptor> {
        let Some(d) = self.discriminator else {
            return Vec::new();
        };
        let mut v = vec![LayerDescriptor {
            module: "discriminator".into(),
            n_in: d.in_channels,
            n_out: d.initial_filters,
            kernel: d.kernel,
            stride: 1,
            divisor: 1,
        }];
        let (mut n_in, mut divisor) = (d.initial_filters, 1);
        for (stride, n_out) in d.strides().into_iter().zip(d.features()) {
            divisor *= stride;
            v.push(LayerDescriptor { module: "discriminator".into(), n_in, n_out, kernel: d.kernel, stride, divisor });
            n_in = n_out;
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pyramid_block_order_and_resolution() {
        let blocks = ArchitectureSpec::ms_refine().blocks();
        let names: Vec<_> = blocks.iter().map(|b| (b.name.as_str(), b.divisor, b.spec.n_in)).collect();
        assert_eq!(
            names,
            vec![("coarse", 8, 6), ("residual2", 4, 9), ("residual1", 2, 9), ("refine", 1, 9)]
        );
    }

    #[test]
    fn baseline_has_fifteen_layers() {
        let layers = ArchitectureSpec::baseline().generator_layers();
        assert_eq!(layers.len(), 15);
        assert_eq!((layers[0].n_in, layers[0].n_out), (6, 32));
        assert_eq!((layers[14].n_in, layers[14].n_out), (32, 3));
    }

    #[test]
    fn toml_roundtrip() {
        let mut spec = ArchitectureSpec::ms_refine();
        spec.discriminator = Some(DiscriminatorSpec::default());
        let text = toml::to_string(&spec).unwrap();
        let back: ArchitectureSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn unknown_name_rejected() {
        assert!(ArchitectureSpec::by_name("unet").is_err());
    }
}
