//! Procedural triplets under a known global translation.
//!
//! Each sequence renders a texture on a canvas larger than the frame and
//! samples it at times 0, 0.5 and 1 while the content moves by `d` pixels,
//! using bilinear interpolation for subpixel positions.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, FrameTriplet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Blobs,
    Ramps,
    Checker,
}

impl std::str::FromStr for Texture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Texture::Blobs),
            "ramps" => Ok(Texture::Ramps),
            "checker" => Ok(Texture::Checker),
            _ => Err(Error::Config(format!("unknown texture `{s}` (blobs, ramps, checker)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub texture: Texture,
    /// Largest displacement between the first and last frame, in pixels.
    pub max_motion: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { width: 64, height: 64, texture: Texture::Blobs, max_motion: 4.0, count: 16, seed: 0 }
    }
}

/// Dense flow field `(u, v)` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn uniform(height: usize, width: usize, u: f64, v: f64) -> Self {
        Self { height, width, u: vec![u; height * width], v: vec![v; height * width] }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub triplet: FrameTriplet,
    /// Content displacement from first to last frame, in pixels.
    pub displacement: (f64, f64),
    /// Flow from the middle frame to the last one, normalized by the
    /// frame's width and height.
    pub flow: FlowField,
    /// Seed of the texture canvas, see [`render_texture`].
    pub texture_seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 4 || self.height < 4 {
            return Err(Error::Config("synthetic frames must be at least 4x4".into()));
        }
        if !self.max_motion.is_finite() || self.max_motion < 0.0 {
            return Err(Error::Config("max_motion must be finite and non-negative".into()));
        }
        let limit = self.width.min(self.height) as f64 / 4.0;
        if self.max_motion > limit {
            return Err(Error::Config(format!(
                "motion of {} px is too large for a {}x{} canvas (limit {limit})",
                self.max_motion, self.width, self.height
            )));
        }
        Ok(())
    }
}

struct Canvas {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn sample(&self, c: usize, y: f64, x: f64) -> f64 {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let clampi = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        let (ya, yb) = (clampi(y0, self.h), clampi(y0 + 1.0, self.h));
        let (xa, xb) = (clampi(x0, self.w), clampi(x0 + 1.0, self.w));
        let p = |yy: usize, xx: usize| self.data[(c * self.h + yy) * self.w + xx];
        let top = (1.0 - fx) * p(ya, xa) + fx * p(ya, xb);
        let bot = (1.0 - fx) * p(yb, xa) + fx * p(yb, xb);
        (1.0 - fy) * top + fy * bot
    }
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-12))
}

/// Separable Gaussian blur with clamped borders.
fn gaussian_blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let pass = |input: &[f64], horizontal: bool| {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let o = k as isize - r;
                    let (yy, xx) = if horizontal {
                        (y, (x as isize + o).clamp(0, w as isize - 1) as usize)
                    } else {
                        ((y as isize + o).clamp(0, h as isize - 1) as usize, x)
                    };
                    acc += t * input[yy * w + xx];
                }
                out[y * w + x] = acc / norm;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

fn render(texture: Texture, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Canvas {
    let mut data = vec![0.0; 3 * h * w];
    let scale = h.min(w) as f64;
    match texture {
        Texture::Blobs => {
            // band-limited noise: a fine and a coarse octave of blurred white noise
            let octaves = [(1.5, 0.6), (5.0, 1.0)];
            for c in 0..3 {
                let mut acc = vec![0.0; h * w];
                for &(sigma, amp) in &octaves {
                    let noise: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>() - 0.5).collect();
                    let blurred = gaussian_blur(&noise, h, w, sigma);
                    let (mean, std) = moments(&blurred);
                    for (a, b) in acc.iter_mut().zip(&blurred) {
                        *a += amp * (b - mean) / std;
                    }
                }
                let (mean, std) = moments(&acc);
                let centre = 0.3 + 0.4 * rng.random::<f64>();
                for (i, v) in acc.iter().enumerate() {
                    data[c * h * w + i] = (centre + 0.18 * (v - mean) / std).clamp(0.0, 1.0);
                }
            }
        }
        Texture::Ramps => {
            let waves: Vec<_> = (0..3)
                .map(|_| {
                    let k = rng.random_range(1.0..4.0) * std::f64::consts::TAU / scale;
                    let a = rng.random::<f64>() * std::f64::consts::TAU;
                    (k * a.cos(), k * a.sin(), rng.random::<f64>() * std::f64::consts::TAU, color(rng))
                })
                .collect();
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let s: f64 = waves
                            .iter()
                            .map(|(kx, ky, ph, col)| col[c] * (kx * x as f64 + ky * y as f64 + ph).sin())
                            .sum();
                        data[(c * h + y) * w + x] = (0.5 + s / 6.0).clamp(0.0, 1.0);
                    }
                }
            }
        }
        Texture::Checker => {
            let (c0, c1) = (color(rng), color(rng));
            let cell = rng.random_range(8..17);
            for y in 0..h {
                for x in 0..w {
                    let col = if (y / cell + x / cell) % 2 == 0 { c0 } else { c1 };
                    for c in 0..3 {
                        data[(c * h + y) * w + x] = col[c];
                    }
                }
            }
        }
    }
    Canvas { h, w, data }
}

fn frame_at(canvas: &Canvas, h: usize, w: usize, margin: usize, dy: f64, dx: f64) -> Frame {
    let mut data = vec![0.0; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                data[(c * h + y) * w + x] =
                    canvas.sample(c, (y + margin) as f64 - dy, (x + margin) as f64 - dx);
            }
        }
    }
    Frame { height: h, width: w, data }
}

/// Border added on every side of the frame to form the texture canvas.
pub fn canvas_margin(max_motion: f64) -> usize {
    max_motion.ceil() as usize + 2
}

/// The texture canvas of one sample. Frame pixel `(y, x)` at time `t`
/// shows the canvas at `(y + margin - t * dy, x + margin - t * dx)`.
pub fn render_texture(texture: Texture, height: usize, width: usize, seed: u64) -> Frame {
    let c = render(texture, height, width, &mut ChaCha8Rng::seed_from_u64(seed));
    Frame { height: c.h, width: c.w, data: c.data }
}

/// Renders `spec.count` triplets.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let margin = canvas_margin(spec.max_motion);
    let (h, w) = (spec.height, spec.width);
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let radius = spec.max_motion * rng.random::<f64>().sqrt();
        let angle = rng.random::<f64>() * std::f64::consts::TAU;
        let (dx, dy) = (radius * angle.cos(), radius * angle.sin());
        let texture_seed = rng.random::<u64>();
        let canvas = render(spec.texture, h + 2 * margin, w + 2 * margin, &mut ChaCha8Rng::seed_from_u64(texture_seed));
        let triplet = FrameTriplet {
            first: frame_at(&canvas, h, w, margin, 0.0, 0.0),
            middle: frame_at(&canvas, h, w, margin, dy / 2.0, dx / 2.0),
            last: frame_at(&canvas, h, w, margin, dy, dx),
            source: format!("synthetic:{:?}:{}", spec.texture, spec.seed).to_lowercase(),
            indices: [3 * i, 3 * i + 1, 3 * i + 2],
        };
        let flow = FlowField::uniform(h, w, dx / 2.0 / w as f64, dy / 2.0 / h as f64);
        out.push(SyntheticSample { triplet, displacement: (dx, dy), flow, texture_seed });
    }
    Ok(out)
}

const FLO_TAG: f32 = 202021.25;

/// Middlebury-style `.flo`: tag, width, height, then interleaved `u, v` as f32.
pub fn write_flow(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 8 * flow.u.len());
    buf.extend_from_slice(&FLO_TAG.to_le_bytes());
    buf.extend_from_slice(&(flow.width as i32).to_le_bytes());
    buf.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for (u, v) in flow.u.iter().zip(&flow.v) {
        buf.extend_from_slice(&(*u as f32).to_le_bytes());
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = |m: &str| Error::Image { path: path.to_path_buf(), message: m.to_string() };
    if buf.len() < 12 {
        return Err(bad("truncated flow header"));
    }
    let word = |i: usize| [buf[i], buf[i + 1], buf[i + 2], buf[i + 3]];
    if f32::from_le_bytes(word(0)) != FLO_TAG {
        return Err(bad("missing flow tag"));
    }
    let (w, h) = (i32::from_le_bytes(word(4)), i32::from_le_bytes(word(8)));
    if w <= 0 || h <= 0 {
        return Err(bad("invalid flow dimensions"));
    }
    let (w, h) = (w as usize, h as usize);
    if buf.len() != 12 + 8 * w * h {
        return Err(bad("flow payload size mismatch"));
    }
    let (mut u, mut v) = (Vec::with_capacity(w * h), Vec::with_capacity(w * h));
    for p in 0..w * h {
        u.push(f32::from_le_bytes(word(12 + 8 * p)) as f64);
        v.push(f32::from_le_bytes(word(16 + 8 * p)) as f64);
    }
    Ok(FlowField { height: h, width: w, u, v })
}
