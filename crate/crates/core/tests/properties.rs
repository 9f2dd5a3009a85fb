use fusion_core::infrared::{
    compute_crop_box, crop_sequence, hflip, midpoint_windows, sample_windows, window_interval, IrSequence,
};
use fusion_core::resample::resize_bilinear;
use fusion_core::rng::rng_for;
use fusion_core::skeleton::{
    encode_skeleton_map, normalize_sequence, rotate_sequence, CoordinateExtrema, Rotation, SkeletonSequence,
    SubjectTrack, JOINTS,
};
use proptest::prelude::*;

fn track(frames: usize) -> impl Strategy<Value = SubjectTrack> {
    prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), frames * JOINTS)
        .prop_map(|joints3d| SubjectTrack { joints3d, joints2d: None })
}

fn sequence() -> impl Strategy<Value = SkeletonSequence> {
    (1usize..6, 1usize..=2).prop_flat_map(|(frames, subjects)| {
        prop::collection::vec(track(frames), subjects)
            .prop_map(move |tracks| SkeletonSequence::new(frames, JOINTS, tracks).unwrap())
    })
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_zeroes_origin_and_is_idempotent(seq in sequence()) {
        let once = normalize_sequence(&seq).unwrap();
        prop_assert_eq!(once.joint(0, 0, once.spine_mid_index), [0.0; 3]);
        let twice = normalize_sequence(&once).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn encoded_pixels_stay_in_unit_interval(seq in sequence(), lo in -2.0f64..0.0, span in 0.01f64..3.0) {
        let extrema = CoordinateExtrema::new(lo, lo + span).unwrap();
        let map = encode_skeleton_map(&seq, &extrema).unwrap();
        prop_assert!(map.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn swapping_subjects_swaps_row_blocks(a in track(4), b in track(4)) {
        let seq = SkeletonSequence::new(4, JOINTS, vec![a.clone(), b.clone()]).unwrap();
        let swapped = SkeletonSequence::new(4, JOINTS, vec![b, a]).unwrap();
        let extrema = CoordinateExtrema::new(-3.0, 3.0).unwrap();
        let m = encode_skeleton_map(&seq, &extrema).unwrap();
        let s = encode_skeleton_map(&swapped, &extrema).unwrap();
        for k in 0..3 {
            for row in 0..2 * JOINTS {
                let other = (row + JOINTS) % (2 * JOINTS);
                for col in 0..4 {
                    prop_assert_eq!(m.pixel(k, row, col), s.pixel(k, other, col));
                }
            }
        }
    }

    #[test]
    fn rotations_are_isometries(seq in sequence(), x in -20.0f64..=20.0, y in -20.0f64..=20.0, z in -20.0f64..=20.0) {
        let r = Rotation::from_degrees(x, y, z);
        let rot = rotate_sequence(&seq, &r);
        let pts: Vec<[f64; 3]> = seq.subjects.iter().flat_map(|s| s.joints3d.iter().copied()).take(60).collect();
        let rpts: Vec<[f64; 3]> = rot.subjects.iter().flat_map(|s| s.joints3d.iter().copied()).take(60).collect();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let d0 = dist(pts[i], pts[j]);
                let d1 = dist(rpts[i], rpts[j]);
                prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1e-300), "{} vs {}", d0, d1);
            }
        }
    }

    #[test]
    fn crop_box_is_order_invariant_and_strictly_contains(
        pts in prop::collection::vec(prop::array::uniform2(-50.0f64..600.0), 1..60),
        offset in 1.0f64..40.0,
    ) {
        let b = compute_crop_box(pts.iter().copied(), offset).unwrap();
        let mut rev = pts.clone();
        rev.reverse();
        prop_assert_eq!(b, compute_crop_box(rev, offset).unwrap());
        for p in &pts {
            prop_assert!(b.contains(*p));
            prop_assert!(p[0] - b.x_min as f64 >= offset && b.x_max as f64 - p[0] >= offset);
            prop_assert!(p[1] - b.y_min as f64 >= offset && b.y_max as f64 - p[1] >= offset);
        }
    }

    #[test]
    fn crop_keeps_overlap_and_zeros_the_rest(
        w in 4usize..20, h in 4usize..20, x0 in -10i64..15, y0 in -10i64..15, bw in 1i64..25, bh in 1i64..25,
    ) {
        let pixels: Vec<f32> = (0..w * h).map(|i| 1.0 + i as f32).collect();
        let seq = IrSequence::new(w, h, 1, pixels).unwrap();
        let b = fusion_core::infrared::CropBox { x_min: x0, y_min: y0, x_max: x0 + bw, y_max: y0 + bh };
        let c = crop_sequence(&seq, &b);
        prop_assert_eq!((c.width, c.height), (bw as usize, bh as usize));
        for y in 0..bh {
            for x in 0..bw {
                let (sx, sy) = (x + x0, y + y0);
                let inside = sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64;
                let expected = if inside { seq.pixel(0, sy as usize, sx as usize) } else { 0.0 };
                prop_assert_eq!(c.pixel(0, y as usize, x as usize), expected);
            }
        }
    }

    #[test]
    fn sampled_indices_fall_in_their_windows(frames in 1usize..300, windows in 1usize..40, seed in any::<u64>()) {
        let mut rng = rng_for(seed);
        let idx = sample_windows(frames, windows, &mut rng);
        let mid = midpoint_windows(frames, windows);
        prop_assert_eq!(idx.len(), windows);
        prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
        for w in 0..windows {
            let (a, b) = window_interval(frames, windows, w);
            for i in [idx[w], mid[w]] {
                prop_assert!(i < frames);
                // frame i spans [i, i+1); it must overlap the window.
                prop_assert!((i as f64) < b && (i as f64 + 1.0) > a, "w={} i={} [{}, {})", w, i, a, b);
            }
        }
    }

    #[test]
    fn double_flip_is_identity(w in 1usize..12, h in 1usize..12, f in 1usize..4, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = rng_for(seed);
        let pixels: Vec<f32> = (0..w * h * f).map(|_| rng.random()).collect();
        let seq = IrSequence::new(w, h, f, pixels).unwrap();
        let mut s = seq.clone();
        hflip(&mut s);
        hflip(&mut s);
        prop_assert_eq!(s, seq);
    }

    #[test]
    fn resize_preserves_range_and_constants(
        h in 1usize..10, w in 1usize..10, oh in 1usize..20, ow in 1usize..20, c in 0.0f64..1.0, seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = rng_for(seed);
        let src: Vec<f64> = (0..h * w).map(|_| rng.random()).collect();
        let out = resize_bilinear(&src, 1, h, w, oh, ow);
        prop_assert_eq!(out.len(), oh * ow);
        prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        let flat = resize_bilinear(&vec![c; h * w], 1, h, w, oh, ow);
        prop_assert!(flat.iter().all(|v| (v - c).abs() < 1e-12));
    }
}
