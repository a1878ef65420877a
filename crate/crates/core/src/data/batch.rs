use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Frame, FrameTriplet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stacked crops, each `[B, 3, crop, crop]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub first: Tensor,
    pub middle: Tensor,
    pub last: Tensor,
    /// Dataset index and crop origin `(top, left)` of each item.
    pub items: Vec<(usize, usize, usize)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

pub fn stack_frames(frames: &[&Frame]) -> Result<Tensor> {
    let first = frames.first().ok_or_else(|| Error::Shape("cannot stack zero frames".into()))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(frames.len() * 3 * h * w);
    for f in frames {
        if f.dims() != (h, w) {
            return Err(Error::Shape("cannot stack frames of different size".into()));
        }
        data.extend_from_slice(&f.data);
    }
    Tensor::new(&[frames.len(), 3, h, w], data)
}

/// Deterministic shuffled mini-batches of random crops for one epoch.
///
/// The same window is cut from all three frames of a triplet. A `crop` of
/// `None` uses whole frames, which must then share one size.
pub fn make_batches(
    dataset: &[FrameTriplet],
    crop: Option<usize>,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut batches = Vec::with_capacity(dataset.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let mut items = Vec::with_capacity(chunk.len());
        let mut parts: [Vec<Frame>; 3] = Default::default();
        for &i in chunk {
            let t = &dataset[i];
            let (h, w) = t.dims();
            let (top, left, ch, cw) = match crop {
                Some(c) => {
                    if c > h || c > w {
                        return Err(Error::Config(format!("crop {c} exceeds frame {h}x{w}")));
                    }
                    (rng.random_range(0..=h - c), rng.random_range(0..=w - c), c, c)
                }
                None => (0, 0, h, w),
            };
            for (dst, f) in parts.iter_mut().zip([&t.first, &t.middle, &t.last]) {
                dst.push(f.crop(top, left, ch, cw)?);
            }
            items.push((i, top, left));
        }
        let stack = |v: &Vec<Frame>| stack_frames(&v.iter().collect::<Vec<_>>());
        batches.push(Batch {
            first: stack(&parts[0])?,
            middle: stack(&parts[1])?,
            last: stack(&parts[2])?,
            items,
        });
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(n: usize) -> Vec<FrameTriplet> {
        (0..n)
            .map(|i| {
                let f = Frame::new(8, 8, (0..192).map(|k| ((k + i) % 7) as f64 / 7.0).collect()).unwrap();
                FrameTriplet { first: f.clone(), middle: f.clone(), last: f, source: "t".into(), indices: [i; 3] }
            })
            .collect()
    }

    #[test]
    fn remainder_batch_is_kept() {
        let b = make_batches(&dataset(20), Some(4), 8, 1, 0).unwrap();
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), vec![8, 8, 4]);
        assert_eq!(b[0].first.shape(), &[8, 3, 4, 4]);
        let mut seen: Vec<usize> = b.iter().flat_map(|x| x.items.iter().map(|i| i.0)).collect();
        seen.sort();
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_per_seed_and_epoch() {
        let d = dataset(10);
        let a = make_batches(&d, Some(5), 3, 7, 2).unwrap();
        let b = make_batches(&d, Some(5), 3, 7, 2).unwrap();
        let c = make_batches(&d, Some(5), 3, 7, 3).unwrap();
        let items = |x: &[Batch]| x.iter().flat_map(|b| b.items.clone()).collect::<Vec<_>>();
        assert_eq!(items(&a), items(&b));
        assert_eq!(a[0].middle.to_vec(), b[0].middle.to_vec());
        assert_ne!(items(&a), items(&c));
    }

    #[test]
    fn oversized_crop_rejected() {
        assert!(make_batches(&dataset(2), Some(9), 2, 0, 0).is_err());
    }
}
