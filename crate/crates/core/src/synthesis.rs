//! Voxel-flow style frame synthesis from two warped inputs.
//!
//! Synthesis features are a 3-channel field `(u, v, w)` with every channel
//! in `[-1, 1]`. `(u, v)` is the flow from the middle frame towards the
//! second frame; `w` maps to a blending weight `W = (w + 1) / 2`.

use crate::error::{Error, Result};
use crate::tensor::{warp, FlowScale, Tensor};

/// Channels of a synthesis feature tensor.
pub const FEATURE_CHANNELS: usize = 3;

/// Splits `[N, 3, H, W]` features into flow `[N, 2, H, W]` and raw weight `[N, 1, H, W]`.
pub fn split_features(features: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, c, _, _) = features.dims4()?;
    if c != FEATURE_CHANNELS {
        return Err(Error::Shape(format!("synthesis features need 3 channels, got {c}")));
    }
    Ok((features.narrow_channels(0, 2)?, features.narrow_channels(2, 1)?))
}

/// Blending weight `(w + 1) / 2`.
pub fn blend_weight(raw: &Tensor) -> Tensor {
    raw.affine(0.5, 0.5)
}

/// `W * first(-flow) + (1 - W) * last(+flow)`.
pub fn synthesize(first: &Tensor, last: &Tensor, features: &Tensor, scale: FlowScale) -> Result<Tensor> {
    let (n, c, h, w) = first.dims4()?;
    if last.shape() != first.shape() {
        return Err(Error::Shape(format!(
            "synthesize: frames {:?} and {:?} differ",
            first.shape(),
            last.shape()
        )));
    }
    let (fn_, _, fh, fw) = features.dims4()?;
    if (fn_, fh, fw) != (n, h, w) {
        return Err(Error::Shape(format!(
            "synthesize: features {:?} do not match frames {:?}",
            features.shape(),
            first.shape()
        )));
    }
    let (flow, raw) = split_features(features)?;
    let from_first = warp(first, &flow.neg(), scale)?;
    let from_last = warp(last, &flow, scale)?;
    let weight = blend_weight(&raw).expand_channels(c)?;
    let complement = weight.affine(-1.0, 1.0);
    weight.mul(&from_first)?.add(&complement.mul(&from_last)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> Tensor {
        let mut d = Vec::new();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    d.push(f(c, y, x));
                }
            }
        }
        Tensor::new(&[1, 3, h, w], d).unwrap()
    }

    fn features(h: usize, w: usize, u: f64, v: f64, wr: f64) -> Tensor {
        let mut d = vec![u; h * w];
        d.extend(vec![v; h * w]);
        d.extend(vec![wr; h * w]);
        Tensor::new(&[1, 3, h, w], d).unwrap()
    }

    fn texture(c: usize, y: usize, x: isize) -> f64 {
        (((c * 7 + y * 13) as isize + x * 5).rem_euclid(17)) as f64 / 17.0
    }

    #[test]
    fn zero_features_average_frames() {
        let a = frame(4, 5, |c, y, x| texture(c, y, x as isize));
        let b = frame(4, 5, |c, y, x| texture(c + 1, y, x as isize));
        let out = synthesize(&a, &b, &features(4, 5, 0.0, 0.0, 0.0), FlowScale::image_extent(4, 5)).unwrap();
        for ((o, x), y) in out.data().iter().zip(a.data()).zip(b.data()) {
            assert!((o - (x + y) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn full_weight_selects_first_frame_warp() {
        let (h, w) = (4, 8);
        let a = frame(h, w, |c, y, x| texture(c, y, x as isize));
        let b = frame(h, w, |_, _, _| 0.3);
        let feats = features(h, w, 0.5 / w as f64, 0.0, 1.0);
        let scale = FlowScale::image_extent(h, w);
        let out = synthesize(&a, &b, &feats, scale).unwrap();
        let expect = warp(&a, &features(h, w, -0.5 / w as f64, 0.0, 0.0).narrow_channels(0, 2).unwrap(), scale).unwrap();
        assert_eq!(out.to_vec(), expect.to_vec());
    }

    #[test]
    fn linear_motion_midpoint() {
        // second frame is the first shifted right by 2 px; the midpoint is a 1 px shift
        let (h, w) = (5, 16);
        let a = frame(h, w, |c, y, x| texture(c, y, x as isize));
        let b = frame(h, w, |c, y, x| texture(c, y, x as isize - 2));
        let feats = features(h, w, 1.0 / w as f64, 0.0, 0.0);
        let out = synthesize(&a, &b, &feats, FlowScale::image_extent(h, w)).unwrap();
        for c in 0..3 {
            for y in 0..h {
                for x in 1..w - 1 {
                    let got = out.data()[(c * h + y) * w + x];
                    assert_eq!(got, texture(c, y, x as isize - 1));
                }
            }
        }
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let a = frame(4, 4, |_, _, _| 0.0);
        let b = frame(4, 6, |_, _, _| 0.0);
        let f = features(4, 4, 0.0, 0.0, 0.0);
        assert!(synthesize(&a, &b, &f, FlowScale::uniform(1.0)).is_err());
    }
}
