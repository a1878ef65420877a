//! Factor-2 bilinear resampling.
//!
//! Downsampling averages 2x2 blocks. Upsampling places output pixel centres
//! at half-pixel offsets of the input grid (taps 0.75 / 0.25) and clamps at
//! the border, so constant images stay constant in both directions.

use super::{Adjoint, Tensor};
use crate::error::{Error, Result};

/// Two source taps per output index along one axis: `(i0, w0, i1, w1)`.
fn up_taps(size: usize) -> Vec<(usize, f64, usize, f64)> {
    (0..2 * size)
        .map(|o| {
            let k = o / 2;
            let other = if o % 2 == 0 {
                k.saturating_sub(1)
            } else {
                (k + 1).min(size - 1)
            };
            (k, 0.75, other, 0.25)
        })
        .collect()
}

fn upsample_plane(src: &[f64], h: usize, w: usize, ty: &[(usize, f64, usize, f64)], tx: &[(usize, f64, usize, f64)], dst: &mut [f64]) {
    let wo = 2 * w;
    for (oy, &(y0, wy0, y1, wy1)) in ty.iter().enumerate() {
        let r0 = &src[y0 * w..(y0 + 1) * w];
        let r1 = &src[y1 * w..(y1 + 1) * w];
        let out = &mut dst[oy * wo..(oy + 1) * wo];
        for (o, &(x0, wx0, x1, wx1)) in out.iter_mut().zip(tx) {
            *o = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
        }
    }
    debug_assert_eq!(src.len(), h * w);
}

/// `[N, C, H, W] -> [N, C, 2H, 2W]`.
pub fn upsample2(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    if h == 0 || w == 0 {
        return Err(Error::Shape("upsample2 of an empty image".into()));
    }
    let (ty, tx) = (up_taps(h), up_taps(w));
    let (plane, out_plane) = (h * w, 4 * h * w);
    let mut out = vec![0.0; n * c * out_plane];
    for (src, dst) in input.data().chunks(plane).zip(out.chunks_mut(out_plane)) {
        upsample_plane(src, h, w, &ty, &tx, dst);
    }
    Ok(Tensor::from_op(
        vec![n, c, 2 * h, 2 * w],
        out,
        vec![input.clone()],
        Box::new(move |a: &Adjoint<'_>| {
            let wo = 2 * w;
            let mut g = vec![0.0; n * c * plane];
            for (gdst, gsrc) in g.chunks_mut(plane).zip(a.grad.chunks(out_plane)) {
                for (oy, &(y0, wy0, y1, wy1)) in ty.iter().enumerate() {
                    for (ox, &(x0, wx0, x1, wx1)) in tx.iter().enumerate() {
                        let v = gsrc[oy * wo + ox];
                        gdst[y0 * w + x0] += wy0 * wx0 * v;
                        gdst[y0 * w + x1] += wy0 * wx1 * v;
                        gdst[y1 * w + x0] += wy1 * wx0 * v;
                        gdst[y1 * w + x1] += wy1 * wx1 * v;
                    }
                }
            }
            vec![Some(g)]
        }),
    ))
}

/// `[N, C, H, W] -> [N, C, H/2, W/2]`; `H` and `W` must be even.
pub fn downsample2(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("downsample2 needs even dimensions, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let (plane, out_plane) = (h * w, ho * wo);
    let mut out = vec![0.0; n * c * out_plane];
    for (src, dst) in input.data().chunks(plane).zip(out.chunks_mut(out_plane)) {
        for oy in 0..ho {
            let (r0, r1) = (2 * oy * w, (2 * oy + 1) * w);
            for ox in 0..wo {
                let x = 2 * ox;
                dst[oy * wo + ox] = 0.25 * (src[r0 + x] + src[r0 + x + 1] + src[r1 + x] + src[r1 + x + 1]);
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, ho, wo],
        out,
        vec![input.clone()],
        Box::new(move |a: &Adjoint<'_>| {
            let mut g = vec![0.0; n * c * plane];
            for (gdst, gsrc) in g.chunks_mut(plane).zip(a.grad.chunks(out_plane)) {
                for y in 0..h {
                    for x in 0..w {
                        gdst[y * w + x] = 0.25 * gsrc[(y / 2) * wo + x / 2];
                    }
                }
            }
            vec![Some(g)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_survives_upsampling() {
        let x = Tensor::full(&[1, 2, 3, 5], 0.7);
        let y = upsample2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 6, 10]);
        assert!(y.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn down_then_up_restores_shape() {
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        let y = upsample2(&downsample2(&x).unwrap()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
    }

    #[test]
    fn block_means_golden() {
        let golden = include_str!("../../tests/fixtures/downsample_block_means.txt");
        let rows: Vec<Vec<f64>> = golden
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
            .collect();
        let input: Vec<f64> = rows[..4].concat();
        let expected: Vec<f64> = rows[4..].concat();
        let x = Tensor::new(&[1, 1, 4, 4], input).unwrap();
        assert_eq!(downsample2(&x).unwrap().to_vec(), expected);
    }

    #[test]
    fn upsample_golden_ramp() {
        // 1-d ramp [0, 1] -> half-pixel taps give [0, 0.25, 0.75, 1].
        let x = Tensor::new(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = upsample2(&x).unwrap();
        assert_eq!(&y.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn odd_size_rejected() {
        assert!(matches!(downsample2(&Tensor::zeros(&[1, 1, 3, 4])), Err(Error::Shape(_))));
    }
}
