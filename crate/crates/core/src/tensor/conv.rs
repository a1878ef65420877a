//! 2-d cross-correlation via im2col and a dense matrix product.

use super::{Adjoint, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Visits `(col_row, col_col, input_index)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let Geometry { cin, h, w, k, stride, pad, ho, wo } = *self;
        for c in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = (c * h + iy as usize) * w;
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            f(row, oy * wo + ox, in_row + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, input: &[f64], col: &mut [f64]) {
        col.fill(0.0);
        let cols = self.cols();
        self.for_each_tap(|r, c, i| col[r * cols + c] = input[i]);
    }

    fn col2im(&self, col: &[f64], input_grad: &mut [f64]) {
        let cols = self.cols();
        self.for_each_tap(|r, c, i| input_grad[i] += col[r * cols + c]);
    }
}

/// `c[m x n] = beta * c + a[m x k] * b[k x n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers size `a`, `b`, and `c` to cover every index reached
    // through the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cross-correlation of `input [N, Ci, H, W]` with `kernel [Co, Ci, k, k]`
/// plus an optional per-output-channel `bias`, using zero padding.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, cin, h, w) = input.dims4()?;
    let (cout, kcin, k, k2) = kernel.dims4()?;
    if kcin != cin {
        return Err(Error::Shape(format!(
            "conv2d: input has {cin} channels but kernel expects {kcin}"
        )));
    }
    if k != k2 {
        return Err(Error::Shape(format!("conv2d: non-square kernel {k}x{k2}")));
    }
    if stride == 0 {
        return Err(Error::Shape("conv2d: stride must be positive".into()));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::Shape(format!(
                "conv2d: bias shape {:?} does not match {cout} output channels",
                b.shape()
            )));
        }
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::Shape(format!(
            "conv2d: kernel {k} larger than padded input {h}x{w}"
        )));
    }
    let ho = (h + 2 * padding - k) / stride + 1;
    let wo = (w + 2 * padding - k) / stride + 1;
    let geo = Geometry { cin, h, w, k, stride, pad: padding, ho, wo };
    let (rows, cols) = (geo.rows(), geo.cols());
    let in_plane = cin * h * w;
    let out_plane = cout * cols;

    let mut out = vec![0.0; n * out_plane];
    let mut col = vec![0.0; rows * cols];
    for b in 0..n {
        geo.im2col(&input.data()[b * in_plane..(b + 1) * in_plane], &mut col);
        let dst = &mut out[b * out_plane..(b + 1) * out_plane];
        if let Some(bias) = bias {
            for (chan, &bv) in dst.chunks_mut(cols).zip(bias.data()) {
                chan.fill(bv);
            }
        }
        gemm(
            cout,
            rows,
            cols,
            kernel.data(),
            (rows as isize, 1),
            &col,
            (cols as isize, 1),
            1.0,
            dst,
        );
    }

    let mut parents = vec![input.clone(), kernel.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![n, cout, ho, wo],
        out,
        parents,
        Box::new(move |a: &Adjoint<'_>| {
            let (input, kernel) = (&a.parents[0], &a.parents[1]);
            let want_input = input.requires_grad();
            let want_kernel = kernel.requires_grad();
            let mut g_input = want_input.then(|| vec![0.0; n * in_plane]);
            let mut g_kernel = want_kernel.then(|| vec![0.0; cout * rows]);
            let mut col = vec![0.0; rows * cols];
            let mut g_col = vec![0.0; rows * cols];
            for b in 0..n {
                let g_out = &a.grad[b * out_plane..(b + 1) * out_plane];
                if let Some(gk) = g_kernel.as_mut() {
                    geo.im2col(&input.data()[b * in_plane..(b + 1) * in_plane], &mut col);
                    // gk[Co x R] += g_out[Co x P] * col^T[P x R]
                    gemm(
                        cout,
                        cols,
                        rows,
                        g_out,
                        (cols as isize, 1),
                        &col,
                        (1, cols as isize),
                        1.0,
                        gk,
                    );
                }
                if let Some(gi) = g_input.as_mut() {
                    // g_col[R x P] = kernel^T[R x Co] * g_out[Co x P]
                    gemm(
                        rows,
                        cout,
                        cols,
                        kernel.data(),
                        (1, rows as isize),
                        g_out,
                        (cols as isize, 1),
                        0.0,
                        &mut g_col,
                    );
                    geo.col2im(&g_col, &mut gi[b * in_plane..(b + 1) * in_plane]);
                }
            }
            let mut grads = vec![g_input, g_kernel];
            if a.parents.len() == 3 {
                let g_bias = a.parents[2].requires_grad().then(|| {
                    let mut gb = vec![0.0; cout];
                    for b in 0..n {
                        let g_out = &a.grad[b * out_plane..(b + 1) * out_plane];
                        for (acc, chan) in gb.iter_mut().zip(g_out.chunks(cols)) {
                            *acc += chan.iter().sum::<f64>();
                        }
                    }
                    gb
                });
                grads.push(g_bias);
            }
            grads
        }),
    ))
}
