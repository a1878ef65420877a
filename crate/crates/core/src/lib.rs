//! Video frame interpolation with a coarse-to-fine flow pyramid.
//!
//! Two frames go in, the middle frame comes out. A stack of small
//! convolutional blocks estimates per-pixel flow and a blending weight at
//! three resolutions, the inputs are warped towards the middle and
//! blended, and an optional refinement block post-processes the result.
//! Everything runs on [`Tensor`], a double-precision tensor with
//! reverse-mode differentiation, so training needs no external framework.
//!
//! ```no_run
//! use midframe::{ArchitectureSpec, Generator};
//! use midframe::data::read_frame;
//!
//! # fn main() -> midframe::Result<()> {
//! let g = Generator::new(ArchitectureSpec::ms(), 0)?;
//! let (a, b) = (read_frame("a.png")?, read_frame("b.png")?);
//! let middle = g.interpolate(&a.to_tensor(), &b.to_tensor())?.visible();
//! # Ok(())
//! # }
//! ```

pub mod arch;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod pyramid;
pub mod synthesis;
pub mod tensor;
pub mod toy;
pub mod training;

pub use arch::ArchitectureSpec;
pub use error::{Error, Result};
pub use pyramid::{Generator, InterpolationOutput};
pub use tensor::Tensor;
