//! Infrared stream preprocessing: pose-conditioned fixed crop, window
//! sampling, resizing, mirroring and grayscale-to-three-channel expansion.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::resample::resize_bilinear;
use crate::tensor::Tensor;

pub const CROP_OFFSET_PX: f64 = 20.0;
pub const CLIP_SIZE: usize = 112;

/// Single-channel frames with intensities in `[0, 1]`, stored `[F][H][W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IrSequence {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub pixels: Vec<f32>,
}

impl IrSequence {
    pub fn new(width: usize, height: usize, frames: usize, pixels: Vec<f32>) -> Result<Self> {
        if frames == 0 || width == 0 || height == 0 {
            return Err(Error::Empty("infrared sequence extents"));
        }
        if pixels.len() != width * height * frames {
            return Err(Error::BufferLength { shape: vec![frames, height, width], len: pixels.len() });
        }
        Ok(IrSequence { width, height, frames, pixels })
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.pixels[t * n..(t + 1) * n]
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize) -> f32 {
        self.pixels[(t * self.height + y) * self.width + x]
    }

    /// Keep only the listed frames, in order.
    pub fn select(&self, indices: &[usize]) -> Result<IrSequence> {
        let mut pixels = Vec::with_capacity(indices.len() * self.width * self.height);
        for &i in indices {
            if i >= self.frames {
                return Err(Error::InvalidArgument(format!("frame {i} of {}", self.frames)));
            }
            pixels.extend_from_slice(self.frame(i));
        }
        IrSequence::new(self.width, self.height, indices.len(), pixels)
    }
}

/// Crop rectangle `[x_min, x_max) × [y_min, y_max)` in frame pixels; it may
/// reach outside the frame, which is zero-filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl CropBox {
    pub fn width(&self) -> usize {
        (self.x_max - self.x_min) as usize
    }

    pub fn height(&self) -> usize {
        (self.y_max - self.y_min) as usize
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] > self.x_min as f64 && p[0] < self.x_max as f64 && p[1] > self.y_min as f64 && p[1] < self.y_max as f64
    }
}

/// Bounding box of every projected joint over all frames and subjects,
/// expanded by `offset` pixels on each side. Non-finite points are skipped.
pub fn compute_crop_box(points: impl IntoIterator<Item = [f64; 2]>, offset: f64) -> Result<CropBox> {
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points.into_iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    if !x0.is_finite() {
        return Err(Error::Empty("no valid 2D joints for the crop box"));
    }
    if !(offset > 0.0) {
        return Err(Error::InvalidArgument(format!("crop offset must be positive, got {offset}")));
    }
    Ok(CropBox {
        x_min: libm::floor(x0 - offset) as i64,
        y_min: libm::floor(y0 - offset) as i64,
        x_max: libm::ceil(x1 + offset) as i64,
        y_max: libm::ceil(y1 + offset) as i64,
    })
}

/// Crop every frame to the same box, zero-filling outside the frame.
pub fn crop_sequence(seq: &IrSequence, b: &CropBox) -> IrSequence {
    let (w, h) = (b.width(), b.height());
    let mut pixels = vec![0.0f32; w * h * seq.frames];
    // Intersection of the box with the frame, in box coordinates.
    let x_lo = (-b.x_min).clamp(0, w as i64) as usize;
    let x_hi = (seq.width as i64 - b.x_min).clamp(0, w as i64) as usize;
    let y_lo = (-b.y_min).clamp(0, h as i64) as usize;
    let y_hi = (seq.height as i64 - b.y_min).clamp(0, h as i64) as usize;
    if x_lo < x_hi {
        for t in 0..seq.frames {
            for y in y_lo..y_hi {
                let sy = (y as i64 + b.y_min) as usize;
                let sx = (x_lo as i64 + b.x_min) as usize;
                let src = &seq.frame(t)[sy * seq.width + sx..sy * seq.width + sx + (x_hi - x_lo)];
                let dst = (t * h + y) * w + x_lo;
                pixels[dst..dst + (x_hi - x_lo)].copy_from_slice(src);
            }
        }
    }
    IrSequence { width: w, height: h, frames: seq.frames, pixels }
}

/// Integer frames `[lo, hi)` inside window `w` of `T` equal windows over
/// `F` frames; empty when the window holds no frame start.
pub fn window_frames(frames: usize, windows: usize, w: usize) -> (usize, usize) {
    let lo = (w * frames).div_ceil(windows);
    let hi = ((w + 1) * frames).div_ceil(windows);
    (lo, hi)
}

/// Real interval `[w·F/T, (w+1)·F/T)` covered by window `w`.
pub fn window_interval(frames: usize, windows: usize, w: usize) -> (f64, f64) {
    let (f, t) = (frames as f64, windows as f64);
    (w as f64 * f / t, (w + 1) as f64 * f / t)
}

/// One uniformly drawn frame per window. Windows narrower than a frame
/// fall back to the floor of their start, repeating frames when `F < T`.
pub fn sample_windows<R: Rng + ?Sized>(frames: usize, windows: usize, rng: &mut R) -> Vec<usize> {
    (0..windows)
        .map(|w| {
            let (lo, hi) = window_frames(frames, windows, w);
            if lo < hi {
                rng.random_range(lo..hi)
            } else {
                w * frames / windows
            }
        })
        .collect()
}

/// Deterministic evaluation-time sampling: the frame under each window's midpoint.
pub fn midpoint_windows(frames: usize, windows: usize) -> Vec<usize> {
    (0..windows).map(|w| ((2 * w + 1) * frames / (2 * windows)).min(frames - 1)).collect()
}

/// Bilinear resize of every frame.
pub fn resize_frames(seq: &IrSequence, height: usize, width: usize) -> IrSequence {
    IrSequence {
        width,
        height,
        frames: seq.frames,
        pixels: resize_bilinear(&seq.pixels, seq.frames, seq.height, seq.width, height, width),
    }
}

/// Mirror every frame left-right.
pub fn hflip(seq: &mut IrSequence) {
    let w = seq.width;
    for row in seq.pixels.chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Mirror the whole clip with probability one half; returns the decision.
pub fn augment_hflip<R: Rng + ?Sized>(seq: &mut IrSequence, rng: &mut R) -> bool {
    let flip = rng.random_bool(0.5);
    if flip {
        hflip(seq);
    }
    flip
}

/// `3 × T × H × W` network input with identical channels.
#[derive(Debug, Clone, PartialEq)]
pub struct IrClip {
    pub length: usize,
    pub height: usize,
    pub width: usize,
    /// Planar `[3][T][H][W]`.
    pub pixels: Vec<f32>,
    pub source_indices: Vec<usize>,
}

impl IrClip {
    pub fn to_tensor<S: Real>(&self) -> Tensor<S> {
        Tensor::from_vec(
            &[3, self.length, self.height, self.width],
            self.pixels.iter().map(|&v| S::of(v as f64)).collect(),
        )
        .expect("clip extents")
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.length * self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }
}

/// Duplicate the single grayscale channel three times.
pub fn to_three_channels(seq: &IrSequence, source_indices: Vec<usize>) -> IrClip {
    let mut pixels = Vec::with_capacity(seq.pixels.len() * 3);
    for _ in 0..3 {
        pixels.extend_from_slice(&seq.pixels);
    }
    IrClip { length: seq.frames, height: seq.height, width: seq.width, pixels, source_indices }
}

/// Select frames from an already cropped sequence, resize, optionally
/// mirror, and expand to three channels.
pub fn assemble_clip(cropped: &IrSequence, indices: &[usize], size: usize, flip: bool) -> Result<IrClip> {
    let mut clip = resize_frames(&cropped.select(indices)?, size, size);
    if flip {
        hflip(&mut clip);
    }
    Ok(to_three_channels(&clip, indices.to_vec()))
}
