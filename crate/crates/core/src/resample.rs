//! Bilinear resampling of planar multi-channel images.
//!
//! Corner samples are aligned (`x_src = x_dst · (W−1)/(W'−1)`), so equal-size
//! resizes are exact identities and linear ramps stay linear.

use alloc::vec::Vec;

use crate::real::Real;

fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (libm::floor(pos) as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Resize `channels` planes of `h×w` (row-major, plane after plane) to `out_h×out_w`.
pub fn resize_bilinear<S: Real>(src: &[S], channels: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<S> {
    assert_eq!(src.len(), channels * h * w, "resize source length");
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    let rows = axis_weights(h, out_h);
    let cols = axis_weights(w, out_w);
    let mut out = Vec::with_capacity(channels * out_h * out_w);
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for &(r0, r1, fy) in &rows {
            for &(c0, c1, fx) in &cols {
                let p00 = plane[r0 * w + c0].as_f64();
                let p01 = plane[r0 * w + c1].as_f64();
                let p10 = plane[r1 * w + c0].as_f64();
                let p11 = plane[r1 * w + c1].as_f64();
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                out.push(S::of(top + (bottom - top) * fy));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let src = alloc::vec![0.25f64; 2 * 5 * 7];
        let out = resize_bilinear(&src, 2, 5, 7, 11, 3);
        assert!(out.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn single_pixel_source_broadcasts() {
        let out = resize_bilinear(&[0.7f64], 1, 1, 1, 4, 4);
        assert_eq!(out.len(), 16);
        assert!(out.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn equal_size_is_identity() {
        let src: Vec<f64> = (0..50 * 224).map(|i| (i % 97) as f64 / 97.0).collect();
        assert_eq!(resize_bilinear(&src, 1, 50, 224, 50, 224), src);
    }
}
