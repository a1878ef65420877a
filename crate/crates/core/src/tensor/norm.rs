use serde::{Deserialize, Serialize};

use super::{Adjoint, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight kept on the previous running statistics at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

/// Per-channel normalization of `[N, C, H, W]` followed by `scale * x + shift`.
///
/// In train mode the batch statistics are used and `running` is updated;
/// in eval mode `running` is used as-is.
pub fn batch_norm(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    running: &mut RunningStats,
    mode: BatchNormMode,
) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(Error::Shape(format!(
            "batch_norm: affine parameters must be [{c}], got {:?} and {:?}",
            scale.shape(),
            shift.shape()
        )));
    }
    if running.mean.len() != c || running.var.len() != c {
        return Err(Error::Shape(format!("batch_norm: running stats do not cover {c} channels")));
    }
    let plane = h * w;
    let count = n * plane;
    let x = input.data();
    let channel_values = |ch: usize| {
        (0..n).flat_map(move |b| x[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().copied())
    };

    let (mean, var) = match mode {
        BatchNormMode::Train => {
            if count < 2 {
                return Err(Error::Numeric(format!(
                    "batch_norm: {count} element(s) per channel gives a degenerate variance"
                )));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let m = channel_values(ch).sum::<f64>() / count as f64;
                let v = channel_values(ch).map(|v| (v - m) * (v - m)).sum::<f64>() / count as f64;
                mean[ch] = m;
                var[ch] = v;
                let unbiased = v * count as f64 / (count - 1) as f64;
                running.mean[ch] = BN_MOMENTUM * running.mean[ch] + (1.0 - BN_MOMENTUM) * m;
                running.var[ch] = BN_MOMENTUM * running.var[ch] + (1.0 - BN_MOMENTUM) * unbiased;
            }
            (mean, var)
        }
        BatchNormMode::Eval => (running.mean.clone(), running.var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let (g, s) = (scale.data()[ch], shift.data()[ch]);
            let range = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            for i in range {
                xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                out[i] = g * xhat[i] + s;
            }
        }
    }

    Ok(Tensor::from_op(
        vec![n, c, h, w],
        out,
        vec![input.clone(), scale.clone(), shift.clone()],
        Box::new(move |a: &Adjoint<'_>| {
            let gamma = a.parents[1].data();
            let mut g_scale = vec![0.0; c];
            let mut g_shift = vec![0.0; c];
            for b in 0..n {
                for ch in 0..c {
                    for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                        g_scale[ch] += a.grad[i] * xhat[i];
                        g_shift[ch] += a.grad[i];
                    }
                }
            }
            let g_input = a.parents[0].requires_grad().then(|| {
                let mut gi = vec![0.0; n * c * plane];
                for b in 0..n {
                    for ch in 0..c {
                        let k = gamma[ch] * inv_std[ch];
                        for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                            gi[i] = match mode {
                                BatchNormMode::Eval => k * a.grad[i],
                                BatchNormMode::Train => {
                                    let m = count as f64;
                                    k * (a.grad[i] - g_shift[ch] / m - xhat[i] * g_scale[ch] / m)
                                }
                            };
                        }
                    }
                }
                gi
            });
            vec![g_input, Some(g_scale), Some(g_shift)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standardized(n: usize, c: usize, plane: usize) -> Vec<f64> {
        // each channel: alternating +1/-1 -> mean 0, biased variance 1
        let mut v = vec![0.0; n * c * plane];
        for b in 0..n {
            for ch in 0..c {
                for i in 0..plane {
                    v[(b * c + ch) * plane + i] = if (b * plane + i).is_multiple_of(2) { 1.0 } else { -1.0 };
                }
            }
        }
        v
    }

    #[test]
    fn normalized_input_passes_through() {
        let x = Tensor::new(&[2, 3, 2, 2], standardized(2, 3, 4)).unwrap();
        let mut rs = RunningStats::new(3);
        let y = batch_norm(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), &mut rs, BatchNormMode::Train)
            .unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn affine_contract() {
        let x = Tensor::new(&[2, 2, 2, 2], (0..16).map(|i| (i * i) as f64).collect()).unwrap();
        let mut rs = RunningStats::new(2);
        let y = batch_norm(&x, &Tensor::full(&[2], 2.0), &Tensor::full(&[2], 1.0), &mut rs, BatchNormMode::Train)
            .unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|b| y.data()[(b * 2 + ch) * 4..(b * 2 + ch + 1) * 4].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / 8.0;
            let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 8.0).sqrt();
            assert!((m - 1.0).abs() < 1e-9);
            assert!((sd - 2.0).abs() < 1e-3);
        }
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let x = Tensor::new(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let mut rs = RunningStats::new(1);
        batch_norm(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), &mut rs, BatchNormMode::Train).unwrap();
        assert!((rs.mean[0] - 0.2).abs() < 1e-12);
        // unbiased variance of {1, 3} is 2
        assert!((rs.var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let x = Tensor::new(&[1, 2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let mut rs = RunningStats { mean: vec![0.5, -0.5], var: vec![2.0, 0.5] };
        let (g, s) = (Tensor::full(&[2], 1.5), Tensor::full(&[2], 0.1));
        let a = batch_norm(&x, &g, &s, &mut rs, BatchNormMode::Eval).unwrap();
        let b = batch_norm(&x, &g, &s, &mut rs, BatchNormMode::Eval).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
        assert_eq!(rs.mean, vec![0.5, -0.5]);
    }

    #[test]
    fn single_element_per_channel_is_degenerate() {
        let x = Tensor::zeros(&[1, 2, 1, 1]);
        let mut rs = RunningStats::new(2);
        let r = batch_norm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &mut rs, BatchNormMode::Train);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
