//! Finite-difference verification suite covering every differentiable
//! operation and the assembled pipeline.
//!
//! Inputs are drawn per seed and kept away from the non-differentiable
//! points of each operation (ReLU at zero, integer sample positions in
//! bilinear warping, equal arguments of absolute differences).

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arch::ArchitectureSpec;
use crate::error::Result;
use crate::layers::Parameterized;
use crate::losses::{gan_losses, GanMode, LossConfig, Objective, RandomFeatureExtractor};
use crate::pyramid::Generator;
use crate::synthesis::synthesize;
use crate::tensor::{
    batch_norm, conv2d, downsample2, finite_diff_check, one_sided_spread, upsample2, warp, BatchNormMode, CheckReport, FlowScale,
    RunningStats, Tensor,
};

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub op: String,
    pub seed: u64,
    pub report: CheckReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub results: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.report.passed)
    }

    pub fn failures(&self) -> Vec<&CaseResult> {
        self.results.iter().filter(|r| !r.report.passed).collect()
    }

    /// Largest relative error per operation, in suite order.
    pub fn worst_by_op(&self) -> Vec<(String, f64, usize)> {
        let mut out: Vec<(String, f64, usize)> = Vec::new();
        for r in &self.results {
            match out.iter_mut().find(|(op, _, _)| *op == r.op) {
                Some(e) => {
                    e.1 = e.1.max(r.report.max_relative_error);
                    e.2 += 1;
                }
                None => out.push((r.op.clone(), r.report.max_relative_error, 1)),
            }
        }
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

/// Values with magnitude in `[0.1, 1]` and random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, v).expect("sized")
}

/// Pixel flow whose fractional parts lie in `[0.1, 0.9]` and whose samples
/// stay inside an `h x w` image.
fn interior_flow(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor {
    let mut v = Vec::with_capacity(n * 2 * h * w);
    for _ in 0..n {
        for (c, size) in [(0, w), (1, h)] {
            for y in 0..h {
                for x in 0..w {
                    let pos = if c == 0 { x } else { y } as isize;
                    let lo = (-pos).max(-2) as f64;
                    let hi = ((size as isize - 2 - pos).min(2)) as f64;
                    let whole = rng.random_range(lo as i64..=hi as i64 - 1) as f64;
                    v.push(whole + rng.random_range(0.1..0.9));
                }
            }
        }
    }
    Tensor::new(&[n, 2, h, w], v).expect("sized")
}

fn subset(rng: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..len).collect();
    for i in 0..k.min(len) {
        let j = rng.random_range(i..len);
        v.swap(i, j);
    }
    v.truncate(k.min(len));
    v
}

/// Weighted sum with fixed random weights so that every output element
/// contributes a distinct gradient.
fn projection(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, -1.0, 1.0)
}

fn project(t: &Tensor, p: &Tensor) -> Result<Tensor> {
    Ok(t.mul(p)?.sum())
}

pub type CaseFn = fn(u64, f64, f64) -> Result<CheckReport>;

fn case_conv(seed: u64, eps: f64, tol: f64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &[2, 3, 6, 5], -1.0, 1.0);
    let k = uniform(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
    let b = uniform(&mut rng, &[4], -0.5, 0.5);
    let stride = 1 + (seed as usize % 2);
    let out_shape = conv2d(&x, &k, Some(&b), stride, 1)?.shape().to_vec();
    let p = projection(&mut rng, &out_shape);
    let all = Tensor::concat_flat(&[&x, &k, &b]);
    let (nx, nk) = (x.len(), k.len());
    let f = |t: &Tensor| {
        let xi = t.slice_flat(0, nx, x.shape())?;
        let ki = t.slice_flat(nx, nk, k.shape())?;
        let bi = t.slice_flat(nx + nk, b.len(), b.shape())?;
        project(&conv2d(&xi, &ki, Some(&bi), stride, 1)?, &p)
    };
    finite_diff_check(f, &all, eps, tol, None)
}

fn case_activations(seed: u64, eps: f64, tol: f64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = away_from_zero(&mut rng, &[40]);
    let p = projection(&mut rng, &[40]);
    let f = |t: &Tensor| {
        let y = t.relu().add(&t.leaky_relu(0.2))?.add(&t.tanh())?.add(&t.sigmoid())?;
        project(&y, &p)
    };
    finite_diff_check(f, &x, eps, tol, None)
}

fn case_batch_norm(seed: u64, eps: f64, tol: f64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
    let scale = uniform(&mut rng, &[2], 0.5, 1.5);
    let shift = uniform(&mut rng, &[2], -0.5, 0.5);
    let p = projection(&mut rng, &[3, 2, 3, 3]);
    let mode = if seed.is_multiple_of(2) { BatchNormMode::Train } else { BatchNormMode::Eval };
    let running = RunningStats { mean: vec![0.1, -0.2], var: vec![0.8, 1.3] };
    let all = Tensor::concat_flat(&[&x, &scale, &shift]);
    let n = x.len();
    let f = |t: &Tensor| {
        let xi = t.slice_flat(0, n, x.shape())?;
        let si = t.slice_flat(n, 2, &[2])?;
        let hi = t.slice_flat(n + 2, 2, &[2])?;
        let mut stats = running.clone();
        project(&batch_norm(&xi, &si, &hi, &mut stats, mode)?, &p)
    };
    finite_diff_check(f, &all, eps, tol, None)
}

fn case_resize(seed: u64, eps: f64, tol: f64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &[1, 2, 4, 6], 0.0, 1.0);
    let pu = projection(&mut rng, &[1, 2, 8, 12]);
    let pd = projection(&mut rng, &[1, 2, 2, 3]);
    let f = |t: &Tensor| project(&upsample2(t)?, &pu)?.add(&project(&downsample2(t)?, &pd)?);
    finite_diff_check(f, &x, eps, tol, None)
}

fn case_warp(seed: u64, eps: f64, tol: f64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (5, 6);
    let img = uniform(&mut rng, &[1, 2, h, w], 0.0, 1.0);
    let flow = interior_flow(&mut rng, 1, h, w);
    let p = projection(&mut rng, &[1, 2, h, w]);
    let all = Tensor::concat_flat(&[&img, &flow]);
    let n = img.len();
    let f = |t: &Tensor| {
        let i = t.slice_flat(0, n, img.shape())?;
        let fl = t.slice_flat(n, flow.len(), flow.shape())?;
        project(&warp(&i, &fl, FlowScale::uniform(1.0))?, &p)
    };
    finite_diff_check(f, &all, eps, tol, None)
}

fn case_synthesize(seed: u64, eps: f64, tol: f64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (5, 6);
    let a = uniform(&mut rng, &[1, 3, h, w], 0.0, 1.0);
    let b = uniform(&mut rng, &[1, 3, h, w], 0.0, 1.0);
    // both warps sample at +-flow, so keep |flow| inside one pixel
    let flow: Vec<f64> = (0..2 * h * w).map(|_| rng.random_range(0.1..0.9) * if rng.random() { 1.0 } else { -1.0 }).collect();
    let mut feats = flow;
    feats.extend((0..h * w).map(|_| rng.random_range(-0.9..0.9)));
    let feats = Tensor::new(&[1, 3, h, w], feats)?;
    let p = projection(&mut rng, &[1, 3, h, w]);
    let all = Tensor::concat_flat(&[&a, &b, &feats]);
    let n = a.len();
    let f = |t: &Tensor| {
        let ai = t.slice_flat(0, n, a.shape())?;
        let bi = t.slice_flat(n, n, b.shape())?;
        let fi = t.slice_flat(2 * n, feats.len(), feats.shape())?;
        project(&synthesize(&ai, &bi, &fi, FlowScale::uniform(1.0))?, &p)
    };
    finite_diff_check(f, &all, eps, tol, None)
}

fn small_arch(refinement: bool) -> ArchitectureSpec {
    ArchitectureSpec { levels: 2, width: 4, depth: 3, refinement, flow_unit_px: Some(8.0), ..ArchitectureSpec::ms() }
}

/// Redraws of a pyramid configuration before giving up on finding one
/// without a non-differentiable point near the checked coordinates.
const PYRAMID_ATTEMPTS: u64 = 16;

/// Multi-scale loss of a small pyramid, differentiated with respect to a
/// subset of one block's weights and of the first input frame.
///
/// ReLU and bilinear sampling make the loss piecewise smooth, so a draw is
/// discarded when the one-sided differences at any checked coordinate
/// disagree by more than the tolerance; the gradient itself is compared
/// only on the first draw that is smooth to that precision.
fn case_pyramid(seed: u64, eps: f64, tol: f64) -> Result<CheckReport> {
    let mut last = None;
    for attempt in 0..PYRAMID_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let arch = small_arch(seed % 2 == 1);
        let g = Generator::new(arch, rng.random())?;
        let (h, w) = (8, 8);
        let a = uniform(&mut rng, &[1, 3, h, w], 0.0, 1.0);
        let b = uniform(&mut rng, &[1, 3, h, w], 0.0, 1.0);
        let target = uniform(&mut rng, &[1, 3, h, w], 0.0, 1.0);
        let names: Vec<String> = g.parameters().keys().cloned().collect();
        let name = names[rng.random_range(0..names.len())].clone();
        let weight = g.parameters()[&name].clone();
        let objective = Objective::new(LossConfig { lambda_vgg: 0.0, ..LossConfig::default() });
        let all = Tensor::concat_flat(&[&weight, &a]);
        let nw = weight.len();
        let mut coords = subset(&mut rng, nw, 8);
        coords.extend(subset(&mut rng, a.len(), 8).into_iter().map(|i| i + nw));
        let f = |t: &Tensor| {
            let mut gen = g.clone();
            for (n, slot) in gen.params_mut() {
                if n == name {
                    *slot = t.slice_flat(0, nw, weight.shape())?;
                }
            }
            let ai = t.slice_flat(nw, a.len(), a.shape())?;
            let out = gen.interpolate(&ai, &b)?;
            Ok(objective.total_loss(&out, &target, None)?.total)
        };
        if one_sided_spread(f, &all, eps, &coords)? < tol {
            return finite_diff_check(f, &all, eps, tol, Some(&coords));
        }
        last = Some(finite_diff_check(f, &all, eps, tol, Some(&coords))?);
    }
    Ok(last.expect("at least one attempt"))
}

fn case_losses(seed: u64, eps: f64, tol: f64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = uniform(&mut rng, &[1, 3, 16, 16], 0.0, 1.0);
    let target = uniform(&mut rng, &[1, 3, 16, 16], 0.0, 1.0);
    let d_real = uniform(&mut rng, &[4], 0.05, 0.95);
    let d_fake = uniform(&mut rng, &[4], 0.05, 0.95);
    let objective = Objective::with_extractor(
        LossConfig { lambda_vgg: 0.5, ..LossConfig::default() },
        Rc::new(RandomFeatureExtractor::new(seed)),
    );
    let mode = if seed.is_multiple_of(2) { GanMode::Minimax } else { GanMode::NonSaturating };
    let all = Tensor::concat_flat(&[&pred, &d_real, &d_fake]);
    let n = pred.len();
    let mut coords = subset(&mut rng, n, 24);
    coords.extend(n..n + 8);
    let f = |t: &Tensor| {
        let p = t.slice_flat(0, n, pred.shape())?;
        let dr = t.slice_flat(n, 4, &[4])?;
        let df = t.slice_flat(n + 4, 4, &[4])?;
        let (dl, gl) = gan_losses(&dr, &df, mode)?;
        objective.tau(&p, &target)?.total.add(&dl)?.add(&gl)
    };
    finite_diff_check(f, &all, eps, tol, Some(&coords))
}

/// Every case of the suite, by name.
pub fn cases() -> Vec<(&'static str, CaseFn)> {
    vec![
        ("conv2d", case_conv),
        ("activations", case_activations),
        ("batch_norm", case_batch_norm),
        ("resize", case_resize),
        ("warp", case_warp),
        ("synthesize", case_synthesize),
        ("pyramid", case_pyramid),
        ("losses", case_losses),
    ]
}

/// Runs every case once per seed.
pub fn run_suite(seeds: &[u64], epsilon: f64, tolerance: f64) -> Result<SuiteReport> {
    let mut results = Vec::new();
    for (op, case) in cases() {
        for &seed in seeds {
            results.push(CaseResult { op: op.to_string(), seed, report: case(seed, epsilon, tolerance)? });
        }
    }
    Ok(SuiteReport { epsilon, tolerance, results })
}
