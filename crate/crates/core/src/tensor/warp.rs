//! Differentiable backward warping with bilinear sampling.

use super::{Adjoint, Tensor};
use crate::error::{Error, Result};

/// Pixels per unit of flow along each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowScale {
    pub x: f64,
    pub y: f64,
}

impl FlowScale {
    /// Flow of 1.0 spans the full image width / height.
    pub fn image_extent(height: usize, width: usize) -> Self {
        Self { x: width as f64, y: height as f64 }
    }

    /// Flow of 1.0 spans `pixels` pixels on both axes.
    pub fn uniform(pixels: f64) -> Self {
        Self { x: pixels, y: pixels }
    }
}

struct Sample {
    i00: usize,
    i01: usize,
    i10: usize,
    i11: usize,
    fx: f64,
    fy: f64,
    /// whether the sample position moved with the flow (not clamped)
    live_x: bool,
    live_y: bool,
}

fn axis(pos: f64, size: usize) -> (usize, usize, f64, bool) {
    let max = (size - 1) as f64;
    let live = (0.0..=max).contains(&pos);
    let p = pos.clamp(0.0, max);
    let i0 = (p.floor() as usize).min(size - 1);
    let i1 = (i0 + 1).min(size - 1);
    (i0, i1, p - i0 as f64, live)
}

/// `output(x, y) = image(x + u * scale.x, y + v * scale.y)`, sampled
/// bilinearly with clamp-to-edge. `flow` is `[N, 2, H, W]` holding `(u, v)`.
pub fn warp(image: &Tensor, flow: &Tensor, scale: FlowScale) -> Result<Tensor> {
    let (n, c, h, w) = image.dims4()?;
    let (fnb, fc, fh, fw) = flow.dims4()?;
    if (fnb, fc, fh, fw) != (n, 2, h, w) {
        return Err(Error::Shape(format!(
            "warp: flow {:?} does not match image {:?}",
            flow.shape(),
            image.shape()
        )));
    }
    let plane = h * w;
    let fl = flow.data();
    let mut samples = Vec::with_capacity(n * plane);
    for b in 0..n {
        let (u, v) = (&fl[(2 * b) * plane..], &fl[(2 * b + 1) * plane..]);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let (x0, x1, fx, live_x) = axis(x as f64 + u[p] * scale.x, w);
                let (y0, y1, fy, live_y) = axis(y as f64 + v[p] * scale.y, h);
                samples.push(Sample {
                    i00: y0 * w + x0,
                    i01: y0 * w + x1,
                    i10: y1 * w + x0,
                    i11: y1 * w + x1,
                    fx,
                    fy,
                    live_x,
                    live_y,
                });
            }
        }
    }

    let img = image.data();
    let mut out = vec![0.0; n * c * plane];
    for b in 0..n {
        for ch in 0..c {
            let src = &img[(b * c + ch) * plane..(b * c + ch + 1) * plane];
            let dst = &mut out[(b * c + ch) * plane..(b * c + ch + 1) * plane];
            for (o, s) in dst.iter_mut().zip(&samples[b * plane..(b + 1) * plane]) {
                *o = (1.0 - s.fy) * ((1.0 - s.fx) * src[s.i00] + s.fx * src[s.i01])
                    + s.fy * ((1.0 - s.fx) * src[s.i10] + s.fx * src[s.i11]);
            }
        }
    }

    Ok(Tensor::from_op(
        vec![n, c, h, w],
        out,
        vec![image.clone(), flow.clone()],
        Box::new(move |a: &Adjoint<'_>| {
            let (image, flow) = (&a.parents[0], &a.parents[1]);
            let img = image.data();
            let g_image = image.requires_grad().then(|| {
                let mut g = vec![0.0; n * c * plane];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        let gs = &a.grad[off..off + plane];
                        let gd = &mut g[off..off + plane];
                        for (&go, s) in gs.iter().zip(&samples[b * plane..(b + 1) * plane]) {
                            gd[s.i00] += go * (1.0 - s.fy) * (1.0 - s.fx);
                            gd[s.i01] += go * (1.0 - s.fy) * s.fx;
                            gd[s.i10] += go * s.fy * (1.0 - s.fx);
                            gd[s.i11] += go * s.fy * s.fx;
                        }
                    }
                }
                g
            });
            let g_flow = flow.requires_grad().then(|| {
                let mut g = vec![0.0; n * 2 * plane];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        let src = &img[off..off + plane];
                        let gs = &a.grad[off..off + plane];
                        for (p, (&go, s)) in gs.iter().zip(&samples[b * plane..(b + 1) * plane]).enumerate() {
                            if s.live_x {
                                let d = (1.0 - s.fy) * (src[s.i01] - src[s.i00])
                                    + s.fy * (src[s.i11] - src[s.i10]);
                                g[2 * b * plane + p] += go * d * scale.x;
                            }
                            if s.live_y {
                                let d = (1.0 - s.fx) * (src[s.i10] - src[s.i00])
                                    + s.fx * (src[s.i11] - src[s.i01]);
                                g[(2 * b + 1) * plane + p] += go * d * scale.y;
                            }
                        }
                    }
                }
                g
            });
            vec![g_image, g_flow]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).map(|(y, x)| f(y, x)).collect();
        Tensor::new(&[1, 1, h, w], data).unwrap()
    }

    fn constant_flow(h: usize, w: usize, u: f64, v: f64) -> Tensor {
        let mut d = vec![u; h * w];
        d.extend(vec![v; h * w]);
        Tensor::new(&[1, 2, h, w], d).unwrap()
    }

    #[test]
    fn zero_flow_is_identity() {
        let img = image(5, 7, |y, x| (y * 7 + x) as f64 * 0.1);
        let out = warp(&img, &constant_flow(5, 7, 0.0, 0.0), FlowScale::image_extent(5, 7)).unwrap();
        assert_eq!(out.to_vec(), img.to_vec());
    }

    #[test]
    fn one_pixel_shift_matches_brute_force() {
        let (h, w) = (6, 8);
        let img = image(h, w, |y, x| ((y * 31 + x * 17) % 13) as f64);
        let scale = FlowScale::image_extent(h, w);
        let out = warp(&img, &constant_flow(h, w, 1.0 / w as f64, 0.0), scale).unwrap();
        for y in 0..h {
            for x in 0..w - 1 {
                assert_eq!(out.data()[y * w + x], img.data()[y * w + x + 1]);
            }
        }
    }

    #[test]
    fn half_pixel_on_ramp() {
        let (h, w) = (3, 10);
        let img = image(h, w, |_, x| x as f64);
        let out = warp(&img, &constant_flow(h, w, 0.5 / w as f64, 0.0), FlowScale::image_extent(h, w)).unwrap();
        for y in 0..h {
            for x in 0..w - 1 {
                assert!((out.data()[y * w + x] - (x as f64 + 0.5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clamps_to_border() {
        let img = image(2, 4, |_, x| x as f64);
        let out = warp(&img, &constant_flow(2, 4, 10.0, 0.0), FlowScale::uniform(1.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn flow_shape_checked() {
        let img = image(2, 4, |_, _| 0.0);
        let flow = constant_flow(2, 3, 0.0, 0.0);
        assert!(warp(&img, &flow, FlowScale::uniform(1.0)).is_err());
    }
}
