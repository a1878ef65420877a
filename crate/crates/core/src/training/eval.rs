use serde::{Deserialize, Serialize};

use crate::data::{stack_frames, FrameTriplet};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::pyramid::Generator;
use crate::tensor::{no_grad, Tensor};

/// Triplets evaluated together in one forward pass.
const EVAL_CHUNK: usize = 8;

/// Anything that predicts middle frames for `[N, 3, H, W]` frame pairs.
pub trait Interpolator {
    fn predict(&self, first: &Tensor, last: &Tensor) -> Result<Tensor>;
}

impl Interpolator for Generator {
    fn predict(&self, first: &Tensor, last: &Tensor) -> Result<Tensor> {
        Ok(self.interpolate(first, last)?.visible())
    }
}

/// The pixel-wise mean of the two input frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrameAverage;

impl Interpolator for FrameAverage {
    fn predict(&self, first: &Tensor, last: &Tensor) -> Result<Tensor> {
        Ok(first.add(last)?.scale(0.5))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletScore {
    pub index: usize,
    pub source: String,
    pub psnr: f64,
    pub baseline_psnr: f64,
    /// PSNR of each per-scale synthesis, finest first.
    pub scale_psnr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<TripletScore>,
    pub mean_psnr: f64,
    pub mean_baseline_psnr: f64,
    pub mean_scale_psnr: Vec<f64>,
}

fn chunks(set: &[FrameTriplet]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < set.len() {
        let dims = set[start].dims();
        let mut end = start + 1;
        while end < set.len() && end - start < EVAL_CHUNK && set[end].dims() == dims {
            end += 1;
        }
        out.push(start..end);
        start = end;
    }
    out
}

fn stacked(set: &[FrameTriplet]) -> Result<(Tensor, Tensor, Tensor)> {
    let pick = |f: fn(&FrameTriplet) -> &crate::data::Frame| stack_frames(&set.iter().map(f).collect::<Vec<_>>());
    Ok((pick(|t| &t.first)?, pick(|t| &t.middle)?, pick(|t| &t.last)?))
}

fn per_item_psnr(pred: &Tensor, target: &Tensor) -> Result<Vec<f64>> {
    let n = target.shape()[0];
    let plane = target.len() / n;
    (0..n)
        .map(|i| {
            let r = i * plane..(i + 1) * plane;
            psnr(&pred.data()[r.clone()], &target.data()[r])
        })
        .collect()
}

fn non_empty(set: &[FrameTriplet]) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Config("cannot evaluate an empty dataset".into()));
    }
    Ok(())
}

/// Mean PSNR of `model`'s predictions over whole frames.
pub fn validate(model: &impl Interpolator, set: &[FrameTriplet]) -> Result<f64> {
    non_empty(set)?;
    no_grad(|| {
        let mut total = 0.0;
        for r in chunks(set) {
            let (a, gt, b) = stacked(&set[r])?;
            total += per_item_psnr(&model.predict(&a, &b)?, &gt)?.iter().sum::<f64>();
        }
        Ok(total / set.len() as f64)
    })
}

/// Per-triplet PSNR of the final output, of every per-scale synthesis and
/// of the frame-average baseline.
pub fn evaluate(generator: &Generator, set: &[FrameTriplet]) -> Result<EvalReport> {
    non_empty(set)?;
    let mut entries = Vec::with_capacity(set.len());
    no_grad(|| -> Result<()> {
        for r in chunks(set) {
            let (a, gt, b) = stacked(&set[r.clone()])?;
            let out = generator.interpolate(&a, &b)?;
            let main = per_item_psnr(&out.visible(), &gt)?;
            let base = per_item_psnr(&FrameAverage.predict(&a, &b)?, &gt)?;
            let scales = out
                .scale_frames
                .iter()
                .map(|f| per_item_psnr(&f.clamp(0.0, 1.0), &gt))
                .collect::<Result<Vec<_>>>()?;
            for (k, i) in r.enumerate() {
                entries.push(TripletScore {
                    index: i,
                    source: set[i].source.clone(),
                    psnr: main[k],
                    baseline_psnr: base[k],
                    scale_psnr: scales.iter().map(|s| s[k]).collect(),
                });
            }
        }
        Ok(())
    })?;
    let n = entries.len() as f64;
    let scales = entries[0].scale_psnr.len();
    Ok(EvalReport {
        mean_psnr: entries.iter().map(|e| e.psnr).sum::<f64>() / n,
        mean_baseline_psnr: entries.iter().map(|e| e.baseline_psnr).sum::<f64>() / n,
        mean_scale_psnr: (0..scales).map(|j| entries.iter().map(|e| e.scale_psnr[j]).sum::<f64>() / n).collect(),
        entries,
    })
}

impl EvalReport {
    /// Plain-text table with one row per triplet and a mean row.
    pub fn table(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = write!(s, "{:>6} {:>10} {:>10}", "index", "model_dB", "average_dB");
        for j in 0..self.mean_scale_psnr.len() {
            let _ = write!(s, " {:>10}", format!("x{}_dB", j + 1));
        }
        s.push('\n');
        let row = |s: &mut String, label: &str, p: f64, b: f64, sc: &[f64]| {
            let _ = write!(s, "{label:>6} {p:>10.3} {b:>10.3}");
            for v in sc {
                let _ = write!(s, " {v:>10.3}");
            }
            s.push('\n');
        };
        for e in &self.entries {
            row(&mut s, &e.index.to_string(), e.psnr, e.baseline_psnr, &e.scale_psnr);
        }
        row(&mut s, "mean", self.mean_psnr, self.mean_baseline_psnr, &self.mean_scale_psnr);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchitectureSpec;
    use crate::data::Frame;
    use crate::metrics::PSNR_CAP_DB;

    struct Oracle(Vec<FrameTriplet>);

    impl Interpolator for Oracle {
        fn predict(&self, first: &Tensor, _: &Tensor) -> Result<Tensor> {
            // the sets below give every triplet distinct first frames
            let n = first.shape()[0];
            let plane = first.len() / n;
            let mut out = Vec::new();
            for i in 0..n {
                let f = &first.data()[i * plane..(i + 1) * plane];
                let t = self.0.iter().find(|t| t.first.data == f).expect("known frame");
                out.extend_from_slice(&t.middle.data);
            }
            Tensor::new(first.shape(), out)
        }
    }

    fn set(n: usize, moving: bool) -> Vec<FrameTriplet> {
        (0..n)
            .map(|i| {
                let base = (i as f64 + 1.0) / (n as f64 + 2.0);
                let f = Frame::filled(8, 8, base);
                let m = if moving { Frame::filled(8, 8, 1.0 - base) } else { f.clone() };
                FrameTriplet { first: f.clone(), middle: m, last: f, source: "s".into(), indices: [i; 3] }
            })
            .collect()
    }

    #[test]
    fn perfect_model_hits_cap() {
        let s = set(11, true);
        assert_eq!(validate(&Oracle(s.clone()), &s).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn average_on_static_pairs_hits_cap() {
        assert_eq!(validate(&FrameAverage, &set(3, false)).unwrap(), PSNR_CAP_DB);
        assert!(validate(&FrameAverage, &[]).is_err());
    }

    #[test]
    fn report_means_are_consistent() {
        let g = Generator::new(ArchitectureSpec::ms(), 1).unwrap();
        let s = set(10, false);
        let r = evaluate(&g, &s).unwrap();
        assert_eq!(r.entries.len(), 10);
        assert_eq!(r.mean_scale_psnr.len(), 3);
        let mean = r.entries.iter().map(|e| e.psnr).sum::<f64>() / 10.0;
        assert!((mean - r.mean_psnr).abs() < 1e-12);
        // constant frames are reproduced by any weights
        assert!(r.entries.iter().all(|e| e.psnr > 60.0 && e.baseline_psnr == PSNR_CAP_DB));
        assert!(r.table().lines().count() == 12);
    }
}
