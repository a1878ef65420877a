use midframe::arch::ArchitectureSpec;
use midframe::data::{
    canvas_margin, generate_synthetic, is_duplicate, make_batches, render_texture, Frame, FrameTriplet, SyntheticSpec,
    Texture,
};
use midframe::metrics::psnr;
use midframe::synthesis::synthesize;
use midframe::tensor::{downsample2, no_grad, upsample2, FlowScale, Tensor};
use midframe::Generator;
use proptest::prelude::*;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

fn image(n: usize, c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0..2.0f64, n * c * h * w).prop_map(move |d| tensor(&[n, c, h, w], d))
}

fn combine(a: f64, x: &Tensor, b: f64, y: &Tensor) -> Tensor {
    x.scale(a).add(&y.scale(b)).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Bilinear sample from a plain buffer by explicit neighbour weights,
/// for positions whose neighbours are all inside.
fn oracle_sample(f: &Frame, c: usize, y: f64, x: f64) -> f64 {
    let (iy, ix) = (y.floor() as usize, x.floor() as usize);
    let mut v = 0.0;
    for (yy, wy) in [(iy, 1.0 - (y - iy as f64)), (iy + 1, y - iy as f64)] {
        for (xx, wx) in [(ix, 1.0 - (x - ix as f64)), (ix + 1, x - ix as f64)] {
            if wy * wx != 0.0 {
                v += wy * wx * f.data[(c * f.height + yy) * f.width + xx];
            }
        }
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn resize_is_linear(x in image(1, 2, 4, 6), y in image(1, 2, 4, 6), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let lhs = downsample2(&combine(a, &x, b, &y)).unwrap();
        let rhs = combine(a, &downsample2(&x).unwrap(), b, &downsample2(&y).unwrap());
        prop_assert!(close(lhs.data(), rhs.data(), 1e-12));
        let lhs = upsample2(&combine(a, &x, b, &y)).unwrap();
        let rhs = combine(a, &upsample2(&x).unwrap(), b, &upsample2(&y).unwrap());
        prop_assert!(close(lhs.data(), rhs.data(), 1e-12));
    }

    #[test]
    fn synthesis_is_a_convex_combination(
        a in prop::collection::vec(0.0..1.0f64, 3 * 36),
        b in prop::collection::vec(0.0..1.0f64, 3 * 36),
        f in prop::collection::vec(-1.0..1.0f64, 3 * 36),
        px in 0.5..8.0f64,
    ) {
        let (a, b) = (tensor(&[1, 3, 6, 6], a), tensor(&[1, 3, 6, 6], b));
        let out = synthesize(&a, &b, &tensor(&[1, 3, 6, 6], f), FlowScale::uniform(px)).unwrap();
        let lo = a.data().iter().chain(b.data()).copied().fold(f64::INFINITY, f64::min);
        let hi = a.data().iter().chain(b.data()).copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out.data().iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
    }

    #[test]
    fn psnr_is_symmetric_and_monotone(
        a in prop::collection::vec(0.0..1.0f64, 48),
        noise in prop::collection::vec(-1.0..1.0f64, 48),
        s in 0.01..0.5f64,
    ) {
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, n)| x + s * n).collect();
        let c: Vec<f64> = a.iter().zip(&noise).map(|(x, n)| x + 2.0 * s * n).collect();
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        if noise.iter().any(|n| n.abs() > 1e-6) {
            prop_assert!(psnr(&a, &c).unwrap() < psnr(&a, &b).unwrap());
        }
    }

    #[test]
    fn dedup_is_monotone_in_threshold(m0 in 0.0..0.01f64, m1 in 0.0..0.01f64, t in 0.0..0.01f64, dt in 0.0..0.01f64) {
        if is_duplicate([m0, m1], t) {
            prop_assert!(is_duplicate([m0, m1], t + dt));
        }
        if !is_duplicate([m0, m1], t + dt) {
            prop_assert!(!is_duplicate([m0, m1], t));
        }
    }

    #[test]
    fn batches_depend_only_on_seed_and_epoch(seed in 0u64..1000, epoch in 0u64..20, size in 1usize..6) {
        let set: Vec<FrameTriplet> = (0..7)
            .map(|i| {
                let f = Frame::filled(8, 8, i as f64 / 7.0);
                FrameTriplet { first: f.clone(), middle: f.clone(), last: f, source: String::new(), indices: [i; 3] }
            })
            .collect();
        let a = make_batches(&set, Some(4), size, seed, epoch).unwrap();
        let b = make_batches(&set, Some(4), size, seed, epoch).unwrap();
        prop_assert_eq!(a.len(), 7usize.div_ceil(size));
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.items, &y.items);
            prop_assert_eq!(x.first.data(), y.first.data());
        }
        let mut seen: Vec<usize> = a.iter().flat_map(|b| b.items.iter().map(|i| i.0)).collect();
        seen.sort();
        prop_assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthetic_frames_match_shift_oracle(seed in 0u64..10_000, motion in 0.5..4.0f64, texture in 0usize..3) {
        let texture = [Texture::Blobs, Texture::Ramps, Texture::Checker][texture];
        let spec = SyntheticSpec { width: 20, height: 16, texture, max_motion: motion, count: 2, seed };
        let m = canvas_margin(motion);
        for s in generate_synthetic(&spec).unwrap() {
            let canvas = render_texture(texture, 16 + 2 * m, 20 + 2 * m, s.texture_seed);
            let (dx, dy) = s.displacement;
            for (frame, t) in [(&s.triplet.first, 0.0), (&s.triplet.middle, 0.5), (&s.triplet.last, 1.0)] {
                for c in 0..3 {
                    for y in 0..16 {
                        for x in 0..20 {
                            let want = oracle_sample(&canvas, c, (y + m) as f64 - t * dy, (x + m) as f64 - t * dx);
                            prop_assert!((frame.at(c, y, x) - want).abs() < 1e-6);
                        }
                    }
                }
            }
            prop_assert!((s.flow.u[0] - dx / 2.0 / 20.0).abs() < 1e-12);
            prop_assert!((s.flow.v[0] - dy / 2.0 / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pyramid_features_stay_in_range(seed in 0u64..1000, refine in any::<bool>()) {
        let mut arch = if refine { ArchitectureSpec::ms_refine() } else { ArchitectureSpec::ms() };
        arch.width = 8;
        let g = Generator::new(arch, seed).unwrap();
        let mut rng_state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        let a = tensor(&[1, 3, 16, 24], (0..3 * 16 * 24).map(|_| next()).collect());
        let b = tensor(&[1, 3, 16, 24], (0..3 * 16 * 24).map(|_| next()).collect());
        let out = no_grad(|| g.interpolate(&a, &b)).unwrap();
        for f in out.scale_features.iter().chain(out.features.as_ref()) {
            prop_assert!(f.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn zero_motion_gives_identical_frames() {
    let spec = SyntheticSpec { max_motion: 0.0, count: 3, ..Default::default() };
    for s in generate_synthetic(&spec).unwrap() {
        assert_eq!(s.triplet.first, s.triplet.middle);
        assert_eq!(s.triplet.middle, s.triplet.last);
        assert!(s.flow.u.iter().chain(&s.flow.v).all(|v| *v == 0.0));
    }
}
