//! Central-difference verification of analytic gradients.

use serde::Serialize;

use super::Tensor;
use crate::error::Result;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub coordinates: usize,
    pub max_relative_error: f64,
    /// Coordinate with the largest error, with `(analytic, numeric)` there.
    pub worst: Option<(usize, f64, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Denominator floor so that vanishing gradients are compared absolutely.
const SCALE_FLOOR: f64 = 1e-3;

/// Compares the gradient of the scalar `f(x)` at `input` against
/// `(f(x + eps) - f(x - eps)) / 2 eps`, coordinate by coordinate.
///
/// `coords` restricts the check to a subset of coordinates (all when `None`).
/// The relative error at a coordinate is `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn finite_diff_check(
    f: impl Fn(&Tensor) -> Result<Tensor>,
    input: &Tensor,
    epsilon: f64,
    tolerance: f64,
    coords: Option<&[usize]>,
) -> Result<CheckReport> {
    let x = Tensor::param(input.shape(), input.to_vec())?;
    let loss = f(&x)?;
    loss.backward()?;
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.len()]);

    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };

    let mut base = input.to_vec();
    let eval = |values: &[f64]| -> Result<f64> {
        let t = Tensor::new(input.shape(), values.to_vec())?;
        Ok(super::no_grad(|| f(&t))?.item())
    };

    let mut worst: Option<(usize, f64, f64)> = None;
    let mut max_err = 0.0f64;
    for &i in coords {
        let orig = base[i];
        base[i] = orig + epsilon;
        let up = eval(&base)?;
        base[i] = orig - epsilon;
        let down = eval(&base)?;
        base[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(SCALE_FLOOR);
        if err > max_err || worst.is_none() || err.is_nan() {
            max_err = if err.is_nan() { f64::INFINITY } else { err.max(max_err) };
            worst = Some((i, a, numeric));
        }
    }
    Ok(CheckReport {
        coordinates: coords.len(),
        max_relative_error: max_err,
        worst,
        tolerance,
        passed: max_err < tolerance,
    })
}

/// Largest disagreement between forward and backward one-sided differences
/// over `coords`, relative to the same floor as [`finite_diff_check`].
///
/// Smooth functions give `O(eps)` values; a non-differentiable point
/// within `eps` of the input shows up as a jump.
pub fn one_sided_spread(
    f: impl Fn(&Tensor) -> Result<Tensor>,
    input: &Tensor,
    epsilon: f64,
    coords: &[usize],
) -> Result<f64> {
    let mut base = input.to_vec();
    let eval = |values: &[f64]| -> Result<f64> {
        let t = Tensor::new(input.shape(), values.to_vec())?;
        Ok(super::no_grad(|| f(&t))?.item())
    };
    let centre = eval(&base)?;
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = base[i];
        base[i] = orig + epsilon;
        let fwd = (eval(&base)? - centre) / epsilon;
        base[i] = orig - epsilon;
        let bwd = (centre - eval(&base)?) / epsilon;
        base[i] = orig;
        let spread = (fwd - bwd).abs() / 2.0 / fwd.abs().max(bwd.abs()).max(SCALE_FLOOR);
        worst = worst.max(if spread.is_nan() { f64::INFINITY } else { spread });
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Adjoint, Tensor};

    #[test]
    fn spread_detects_kinks() {
        let x = Tensor::new(&[2], vec![0.5e-4, 0.3]).unwrap();
        let relu = |t: &Tensor| Ok(t.relu().sum());
        assert!(one_sided_spread(relu, &x, 1e-4, &[0]).unwrap() > 0.1);
        assert!(one_sided_spread(relu, &x, 1e-4, &[1]).unwrap() < 1e-9);
        let smooth = |t: &Tensor| Ok(t.tanh().sum());
        assert!(one_sided_spread(smooth, &x, 1e-4, &[0, 1]).unwrap() < 1e-4);
    }

    #[test]
    fn tanh_passes() {
        let x = Tensor::new(&[5], vec![-1.5, -0.3, 0.0, 0.4, 2.0]).unwrap();
        let r = finite_diff_check(|t| Ok(t.tanh().sum()), &x, 1e-4, 1e-4, None).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn wrong_adjoint_fails() {
        // doubles its input but claims a unit derivative
        let broken = |t: &Tensor| -> Result<Tensor> {
            let data = t.data().iter().map(|v| 2.0 * v).collect();
            let y = Tensor::from_op(
                t.shape().to_vec(),
                data,
                vec![t.clone()],
                Box::new(|a: &Adjoint<'_>| vec![Some(a.grad.to_vec())]),
            );
            Ok(y.sum())
        };
        let x = Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        let r = finite_diff_check(broken, &x, 1e-4, 1e-4, None).unwrap();
        assert!(!r.passed);
        assert!((r.max_relative_error - 0.5).abs() < 1e-6);
    }
}
