//! Triplet extraction from frame sequences and the on-disk dataset layout.
//!
//! A dataset directory holds `triplet_%06d/{a,b,gt}.png` (first, last and
//! middle frame) plus `manifest.json`.

use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::synthetic::{read_flow, write_flow, FlowField};
use super::{read_frame, write_frame, Frame};
use crate::error::{Error, Result};

/// Default threshold on the MSE between consecutive frames below which a
/// pair counts as a duplicate.
pub const DEDUP_THRESHOLD: f64 = 1e-4;

/// First, middle and last frame of a sequence window.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTriplet {
    pub first: Frame,
    pub middle: Frame,
    pub last: Frame,
    pub source: String,
    pub indices: [usize; 3],
}

impl FrameTriplet {
    pub fn dims(&self) -> (usize, usize) {
        self.first.dims()
    }

    pub fn check(&self) -> Result<()> {
        let d = self.first.dims();
        if self.middle.dims() != d || self.last.dims() != d {
            return Err(Error::Shape(format!("triplet from `{}` has mismatched frame sizes", self.source)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions {
    pub dedup_threshold: f64,
    /// Step between the first frames of successive windows.
    pub stride: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { dedup_threshold: DEDUP_THRESHOLD, stride: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Kept,
    Duplicate,
    Unreadable,
    SizeMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source: String,
    pub indices: [usize; 3],
    pub frames: [String; 3],
    /// MSE of (first, middle) and (middle, last) when both were readable.
    pub pair_mse: Option<[f64; 2]>,
    pub decision: Decision,
    /// Output directory name for kept triplets.
    pub output: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: String,
    pub dedup_threshold: f64,
    pub stride: usize,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn kept(&self) -> usize {
        self.entries.iter().filter(|e| e.decision == Decision::Kept).count()
    }
}

fn is_png(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// PNG files of a directory in lexicographic order.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir.as_ref())? {
        let p = entry?.path();
        if p.is_file() && is_png(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// True when any consecutive pair of the window is a near-duplicate.
pub fn is_duplicate(pair_mse: [f64; 2], threshold: f64) -> bool {
    pair_mse.iter().any(|&m| m < threshold)
}

/// Slides a three-frame window over the sorted frames of `dir`.
///
/// A window is discarded as a whole when either consecutive pair falls
/// below the dedup threshold. Unreadable frames and size mismatches are
/// reported and their windows skipped.
pub fn extract_triplets(dir: impl AsRef<Path>, opts: ExtractOptions) -> Result<(Vec<FrameTriplet>, Manifest)> {
    let dir = dir.as_ref();
    if opts.stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let paths = list_frames(dir)?;
    let frames: Vec<Option<Frame>> = paths
        .iter()
        .map(|p| match read_frame(p) {
            Ok(f) => Some(f),
            Err(e) => {
                warn!("skipping unreadable frame {}: {e}", p.display());
                None
            }
        })
        .collect();
    let source = dir.display().to_string();
    let mut manifest = Manifest {
        source: source.clone(),
        dedup_threshold: opts.dedup_threshold,
        stride: opts.stride,
        entries: Vec::new(),
    };
    let mut triplets = Vec::new();
    let name = |i: usize| paths[i].file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut start = 0;
    while start + 2 < paths.len() {
        let idx = [start, start + 1, start + 2];
        let mut entry = ManifestEntry {
            source: source.clone(),
            indices: idx,
            frames: idx.map(name),
            pair_mse: None,
            decision: Decision::Kept,
            output: None,
        };
        match (&frames[idx[0]], &frames[idx[1]], &frames[idx[2]]) {
            (Some(a), Some(b), Some(c)) => {
                if a.dims() != b.dims() || b.dims() != c.dims() {
                    warn!("skipping window at {} with mismatched frame sizes", entry.frames[0]);
                    entry.decision = Decision::SizeMismatch;
                } else {
                    let mse = [a.mse(b)?, b.mse(c)?];
                    entry.pair_mse = Some(mse);
                    if is_duplicate(mse, opts.dedup_threshold) {
                        entry.decision = Decision::Duplicate;
                    } else {
                        entry.output = Some(triplet_dir_name(triplets.len()));
                        triplets.push(FrameTriplet {
                            first: a.clone(),
                            middle: b.clone(),
                            last: c.clone(),
                            source: source.clone(),
                            indices: idx,
                        });
                    }
                }
            }
            _ => entry.decision = Decision::Unreadable,
        }
        manifest.entries.push(entry);
        start += opts.stride;
    }
    Ok((triplets, manifest))
}

pub fn triplet_dir_name(i: usize) -> String {
    format!("triplet_{i:06}")
}

/// Writes triplets (and optional ground-truth flows) plus a manifest.
pub fn write_dataset(
    out: impl AsRef<Path>,
    triplets: &[FrameTriplet],
    flows: Option<&[FlowField]>,
    manifest: &Manifest,
) -> Result<()> {
    let out = out.as_ref();
    std::fs::create_dir_all(out)?;
    for (i, t) in triplets.iter().enumerate() {
        let d = out.join(triplet_dir_name(i));
        std::fs::create_dir_all(&d)?;
        write_frame(&t.first, d.join("a.png"))?;
        write_frame(&t.last, d.join("b.png"))?;
        write_frame(&t.middle, d.join("gt.png"))?;
        if let Some(f) = flows.and_then(|f| f.get(i)) {
            write_flow(f, d.join("flow.flo"))?;
        }
    }
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

/// Loads every `triplet_*` directory of a dataset in name order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<FrameTriplet>> {
    let dir = dir.as_ref();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("triplet_")))
        .collect();
    dirs.sort();
    let mut out = Vec::with_capacity(dirs.len());
    for (i, d) in dirs.iter().enumerate() {
        let t = FrameTriplet {
            first: read_frame(d.join("a.png"))?,
            middle: read_frame(d.join("gt.png"))?,
            last: read_frame(d.join("b.png"))?,
            source: d.display().to_string(),
            indices: [3 * i, 3 * i + 1, 3 * i + 2],
        };
        t.check()?;
        out.push(t);
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no triplet_* directories under {}", dir.display())));
    }
    Ok(out)
}

/// Ground-truth flow stored next to a triplet, if present.
pub fn load_flow(triplet_dir: impl AsRef<Path>) -> Result<Option<FlowField>> {
    let p = triplet_dir.as_ref().join("flow.flo");
    if p.exists() {
        read_flow(p).map(Some)
    } else {
        Ok(None)
    }
}
