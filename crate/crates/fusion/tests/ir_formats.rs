use std::path::Path;

use fusion::irio::{decode_raw, encode_raw, load_ir, write_frame_dir, write_raw, BitDepth, FrameFormat};
use fusion_core::infrared::IrSequence;

/// Values already on the 8-bit grid so every format reproduces them exactly.
fn ramp(w: usize, h: usize, f: usize) -> IrSequence {
    let px = (0..w * h * f).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
    IrSequence::new(w, h, f, px).unwrap()
}

#[test]
fn raw_files_round_trip_at_both_depths() {
    let seq = ramp(7, 5, 3);
    let dir = tempfile::tempdir().unwrap();
    for (depth, name) in [(BitDepth::Eight, "a.ir"), (BitDepth::Sixteen, "b.raw")] {
        let p = dir.path().join(name);
        write_raw(&p, &seq, depth).unwrap();
        let back = load_ir(&p).unwrap();
        assert_eq!((back.width, back.height, back.frames), (7, 5, 3));
        for (a, b) in seq.pixels.iter().zip(&back.pixels) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn sixteen_bit_keeps_finer_levels() {
    let seq = IrSequence::new(2, 1, 1, vec![0.3, 0.7001]).unwrap();
    let back = decode_raw(&encode_raw(&seq, BitDepth::Sixteen), Path::new("x")).unwrap();
    assert!((back.pixels[1] - 0.7001).abs() < 1.0 / 65535.0);
}

#[test]
fn frame_directories_round_trip_png_and_pgm() {
    let seq = ramp(6, 4, 12);
    let dir = tempfile::tempdir().unwrap();
    for (fmt, depth, sub) in [
        (FrameFormat::Png, BitDepth::Eight, "png8"),
        (FrameFormat::Png, BitDepth::Sixteen, "png16"),
        (FrameFormat::Pgm, BitDepth::Eight, "pgm8"),
    ] {
        let d = dir.path().join(sub);
        write_frame_dir(&d, &seq, fmt, depth).unwrap();
        let back = load_ir(&d).unwrap();
        assert_eq!(back.frames, 12, "{sub}");
        for (a, b) in seq.pixels.iter().zip(&back.pixels) {
            assert!((a - b).abs() < 1e-6, "{sub}: {a} vs {b}");
        }
    }
}

#[test]
fn frames_sort_numerically_not_lexically() {
    let dir = tempfile::tempdir().unwrap();
    let seq = ramp(2, 2, 11);
    write_frame_dir(dir.path(), &seq, FrameFormat::Png, BitDepth::Eight).unwrap();
    // Rename to unpadded numbers: frame_10 must come after frame_9.
    for t in 0..11 {
        std::fs::rename(dir.path().join(format!("frame_{t:05}.png")), dir.path().join(format!("f{t}.png"))).unwrap();
    }
    let back = load_ir(dir.path()).unwrap();
    assert_eq!(back.frame(10), seq.frame(10));
}

#[test]
fn corrupt_raw_files_are_rejected() {
    let good = encode_raw(&ramp(3, 3, 2), BitDepth::Eight);
    let p = Path::new("bad.ir");
    assert!(decode_raw(&good[..10], p).is_err());
    assert!(decode_raw(&good[..good.len() - 1], p).is_err());
    let mut magic = good.clone();
    magic[..4].copy_from_slice(b"NOPE");
    let err = decode_raw(&magic, p).unwrap_err().to_string();
    assert!(err.contains("magic"), "{err}");
    assert!(load_ir(Path::new("frames.mp4")).is_err());
}
