use serde::{Deserialize, Serialize};

use super::{numel, Adjoint, Tensor};
use crate::error::{Error, Result};

/// Elementwise non-linearities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Identity => x.clone(),
            Activation::Relu => x.relu(),
            Activation::LeakyRelu(slope) => x.leaky_relu(slope),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Applies `f` elementwise; `df(x, y)` is the local derivative given input
/// `x` and output `y`.
fn unary(
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |a: &Adjoint<'_>| {
            let input = a.parents[0].data();
            let g = input
                .iter()
                .zip(a.output)
                .zip(a.grad)
                .map(|((&x, &y), &g)| g * df(x, y))
                .collect();
            vec![Some(g)]
        }),
    )
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "add")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|a: &Adjoint<'_>| vec![Some(a.grad.to_vec()), Some(a.grad.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "sub")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|a: &Adjoint<'_>| {
                vec![Some(a.grad.to_vec()), Some(a.grad.iter().map(|g| -g).collect())]
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "mul")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|a: &Adjoint<'_>| {
                let (x, y) = (&a.parents[0], &a.parents[1]);
                let gx = x
                    .requires_grad()
                    .then(|| a.grad.iter().zip(y.data()).map(|(g, v)| g * v).collect());
                let gy = y
                    .requires_grad()
                    .then(|| a.grad.iter().zip(x.data()).map(|(g, v)| g * v).collect());
                vec![gx, gy]
            }),
        ))
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.affine(factor, 0.0)
    }

    pub fn add_scalar(&self, offset: f64) -> Tensor {
        self.affine(1.0, offset)
    }

    /// `factor * x + offset`.
    pub fn affine(&self, factor: f64, offset: f64) -> Tensor {
        unary(self, move |v| factor * v + offset, move |_, _| factor)
    }

    pub fn relu(&self) -> Tensor {
        // derivative at exactly 0 is taken as 0
        unary(self, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        unary(
            self,
            move |v| if v > 0.0 { v } else { slope * v },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn ln(&self) -> Tensor {
        unary(self, f64::ln, |x, _| 1.0 / x)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        unary(
            self,
            move |v| v.clamp(lo, hi),
            move |x, _| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }

    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.len();
        Tensor::from_op(
            vec![],
            vec![total],
            vec![self.clone()],
            Box::new(move |a: &Adjoint<'_>| vec![Some(vec![a.grad[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn mean_abs_error(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "mean_abs_error")?;
        let n = self.len().max(1) as f64;
        let total: f64 = self.data().iter().zip(other.data()).map(|(a, b)| (a - b).abs()).sum();
        Ok(Tensor::from_op(
            vec![],
            vec![total / n],
            vec![self.clone(), other.clone()],
            Box::new(move |a: &Adjoint<'_>| {
                let s = a.grad[0] / n;
                let ga: Vec<f64> = a.parents[0]
                    .data()
                    .iter()
                    .zip(a.parents[1].data())
                    .map(|(x, y)| s * sign(x - y))
                    .collect();
                let gb = a.parents[1].requires_grad().then(|| ga.iter().map(|g| -g).collect());
                vec![Some(ga), gb]
            }),
        ))
    }

    pub fn mean_squared_error(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "mean_squared_error")?;
        let n = self.len().max(1) as f64;
        let total: f64 = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(Tensor::from_op(
            vec![],
            vec![total / n],
            vec![self.clone(), other.clone()],
            Box::new(move |a: &Adjoint<'_>| {
                let s = 2.0 * a.grad[0] / n;
                let ga: Vec<f64> = a.parents[0]
                    .data()
                    .iter()
                    .zip(a.parents[1].data())
                    .map(|(x, y)| s * (x - y))
                    .collect();
                let gb = a.parents[1].requires_grad().then(|| ga.iter().map(|g| -g).collect());
                vec![Some(ga), gb]
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|a: &Adjoint<'_>| vec![Some(a.grad.to_vec())]),
        ))
    }

    /// Channels `start..start + len` of an `[N, C, H, W]` tensor.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if start + len > c {
            return Err(Error::Shape(format!(
                "channel range {start}..{} out of bounds for {c} channels",
                start + len
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            data.extend_from_slice(&self.data()[base..base + len * plane]);
        }
        Ok(Tensor::from_op(
            vec![n, len, h, w],
            data,
            vec![self.clone()],
            Box::new(move |a: &Adjoint<'_>| {
                let mut g = vec![0.0; n * c * plane];
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    let src = b * len * plane;
                    g[dst..dst + len * plane].copy_from_slice(&a.grad[src..src + len * plane]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let (n, _, h, w) = first.dims4()?;
        let mut channels = Vec::with_capacity(parts.len());
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat: {:?} incompatible with {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for (p, &pc) in parts.iter().zip(&channels) {
                let base = b * pc * plane;
                data.extend_from_slice(&p.data()[base..base + pc * plane]);
            }
        }
        Ok(Tensor::from_op(
            vec![n, total, h, w],
            data,
            parts.to_vec(),
            Box::new(move |a: &Adjoint<'_>| {
                let mut grads: Vec<Vec<f64>> =
                    channels.iter().map(|&pc| Vec::with_capacity(n * pc * plane)).collect();
                let mut offset = 0;
                for _ in 0..n {
                    for (g, &pc) in grads.iter_mut().zip(&channels) {
                        g.extend_from_slice(&a.grad[offset..offset + pc * plane]);
                        offset += pc * plane;
                    }
                }
                grads
                    .into_iter()
                    .zip(a.parents)
                    .map(|(g, p)| p.requires_grad().then_some(g))
                    .collect()
            }),
        ))
    }

    /// `output[i] = self[index[i]]`; the adjoint scatters back with summation.
    pub(crate) fn gather(&self, shape: Vec<usize>, index: Vec<usize>) -> Tensor {
        debug_assert_eq!(numel(&shape), index.len());
        let data = index.iter().map(|&i| self.data()[i]).collect();
        let n = self.len();
        Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |a: &Adjoint<'_>| {
                let mut g = vec![0.0; n];
                for (&i, &v) in index.iter().zip(a.grad) {
                    g[i] += v;
                }
                vec![Some(g)]
            }),
        )
    }

    /// Contiguous run of `len` elements from `start`, reshaped to `shape`.
    pub fn slice_flat(&self, start: usize, len: usize, shape: &[usize]) -> Result<Tensor> {
        if start + len > self.len() || numel(shape) != len {
            return Err(Error::Shape(format!(
                "slice of {len} at {start} into {shape:?} from {} elements",
                self.len()
            )));
        }
        Ok(self.gather(shape.to_vec(), (start..start + len).collect()))
    }

    /// Untracked 1-D concatenation of the elements of `parts`.
    pub fn concat_flat(parts: &[&Tensor]) -> Tensor {
        let data: Vec<f64> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
        Tensor::new(&[data.len()], data).expect("sized")
    }

    /// Repeats a single-channel `[N, 1, H, W]` tensor to `channels` channels.
    pub fn expand_channels(&self, channels: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if c != 1 {
            return Err(Error::Shape(format!("expand_channels needs 1 channel, got {c}")));
        }
        let plane = h * w;
        let mut index = Vec::with_capacity(n * channels * plane);
        for b in 0..n {
            for _ in 0..channels {
                index.extend(b * plane..(b + 1) * plane);
            }
        }
        Ok(self.gather(vec![n, channels, h, w], index))
    }

    /// Reflection padding (edge pixel not repeated) on the spatial axes.
    pub fn pad_reflect(&self, bottom: usize, right: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if (bottom > 0 && bottom >= h) || (right > 0 && right >= w) {
            return Err(Error::Shape(format!(
                "reflection pad ({bottom}, {right}) too large for {h}x{w}"
            )));
        }
        let (ho, wo) = (h + bottom, w + right);
        let reflect = |i: usize, size: usize| if i < size { i } else { 2 * (size - 1) - i };
        let mut index = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            for y in 0..ho {
                let sy = reflect(y, h);
                for x in 0..wo {
                    index.push((plane * h + sy) * w + reflect(x, w));
                }
            }
        }
        Ok(self.gather(vec![n, c, ho, wo], index))
    }

    /// Top-left `height x width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Tensor> {
        self.crop_at(0, 0, height, width)
    }

    pub fn crop_at(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if top + height > h || left + width > w {
            return Err(Error::Shape(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {h}x{w}"
            )));
        }
        let mut index = Vec::with_capacity(n * c * height * width);
        for plane in 0..n * c {
            for y in top..top + height {
                let row = (plane * h + y) * w;
                index.extend(row + left..row + left + width);
            }
        }
        Ok(self.gather(vec![n, c, height, width], index))
    }

    /// Spatial mean: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&self) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        let plane = h * w;
        let data = self
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        Ok(Tensor::from_op(
            vec![n, c],
            data,
            vec![self.clone()],
            Box::new(move |a: &Adjoint<'_>| {
                let g = a
                    .grad
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g / plane as f64, plane))
                    .collect();
                vec![Some(g)]
            }),
        ))
    }

    /// Affine map `[N, F] -> [N, O]` with `weight: [O, F]`, `bias: [O]`.
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (n, f) = match *self.shape() {
            [n, f] => (n, f),
            ref s => return Err(Error::Shape(format!("linear input must be 2-d, got {s:?}"))),
        };
        let o = match *weight.shape() {
            [o, wf] if wf == f => o,
            ref s => {
                return Err(Error::Shape(format!(
                    "linear weight {s:?} incompatible with {f} features"
                )))
            }
        };
        if bias.shape() != [o] {
            return Err(Error::Shape(format!("linear bias must be [{o}], got {:?}", bias.shape())));
        }
        let (x, wt, bs) = (self.data(), weight.data(), bias.data());
        let mut data = vec![0.0; n * o];
        for b in 0..n {
            for j in 0..o {
                let row = &wt[j * f..(j + 1) * f];
                data[b * o + j] =
                    bs[j] + row.iter().zip(&x[b * f..(b + 1) * f]).map(|(p, q)| p * q).sum::<f64>();
            }
        }
        Ok(Tensor::from_op(
            vec![n, o],
            data,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |a: &Adjoint<'_>| {
                let (x, wt) = (a.parents[0].data(), a.parents[1].data());
                let mut gx = vec![0.0; n * f];
                let mut gw = vec![0.0; o * f];
                let mut gb = vec![0.0; o];
                for b in 0..n {
                    for j in 0..o {
                        let g = a.grad[b * o + j];
                        gb[j] += g;
                        for k in 0..f {
                            gx[b * f + k] += g * wt[j * f + k];
                            gw[j * f + k] += g * x[b * f + k];
                        }
                    }
                }
                vec![Some(gx), Some(gw), Some(gb)]
            }),
        ))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Tanh.apply(&Tensor::scalar(0.0)).item(), 0.0);
        let x = t(&[2], &[-2.5, 3.0]);
        assert_eq!(Activation::Relu.apply(&x).to_vec(), vec![0.0, 3.0]);
        let y = Activation::LeakyRelu(0.2).apply(&Tensor::scalar(-1.0)).item();
        assert!((y + 0.2).abs() < 1e-15);
        let s = Activation::Sigmoid.apply(&t(&[3], &[-800.0, 0.0, 800.0]));
        assert_eq!(s.to_vec(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn relu_grad_at_zero_is_zero() {
        let x = Tensor::param(&[3], vec![-1.0, 0.0, 1.0]).unwrap();
        x.relu().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn reductions() {
        let x = t(&[4], &[0.0; 4]);
        let y = t(&[4], &[1.0; 4]);
        assert_eq!(x.mean_abs_error(&x).unwrap().item(), 0.0);
        assert_eq!(x.mean_abs_error(&y).unwrap().item(), 1.0);
        let a = t(&[2], &[0.0, 2.0]);
        let b = t(&[2], &[2.0, 0.0]);
        assert_eq!(a.mean_squared_error(&b).unwrap().item(), 4.0);
        assert_eq!(a.sum().item(), 2.0);
        assert_eq!(a.mean().item(), 1.0);
        assert!(matches!(a.mean_abs_error(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn mul_grads_both_sides() {
        let a = Tensor::param(&[2], vec![2.0, 3.0]).unwrap();
        let b = Tensor::param(&[2], vec![5.0, 7.0]).unwrap();
        a.mul(&b).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![5.0, 7.0]);
        assert_eq!(b.grad().unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn channel_slicing_and_concat_roundtrip() {
        let x = t(&[2, 3, 1, 2], &(0..12).map(f64::from).collect::<Vec<_>>());
        let a = x.narrow_channels(0, 2).unwrap();
        let b = x.narrow_channels(2, 1).unwrap();
        assert_eq!(b.to_vec(), vec![4.0, 5.0, 10.0, 11.0]);
        let y = Tensor::concat_channels(&[a, b]).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn reflect_pad_then_crop() {
        let x = t(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = x.pad_reflect(1, 2).unwrap();
        assert_eq!(p.shape(), &[1, 1, 3, 5]);
        assert_eq!(&p.data()[..5], &[1.0, 2.0, 3.0, 2.0, 1.0]);
        assert_eq!(&p.data()[10..], &[1.0, 2.0, 3.0, 2.0, 1.0]);
        assert_eq!(p.crop(2, 3).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn linear_and_pool() {
        let x = t(&[1, 2, 1, 2], &[1.0, 3.0, 2.0, 4.0]);
        let pooled = x.global_avg_pool().unwrap();
        assert_eq!(pooled.to_vec(), vec![2.0, 3.0]);
        let w = t(&[1, 2], &[1.0, -1.0]);
        let b = t(&[1], &[0.5]);
        assert_eq!(pooled.linear(&w, &b).unwrap().to_vec(), vec![-0.5]);
    }
}
