//! Infrared frame storage.
//!
//! Two layouts are understood. A packed raw file starts with a 16-byte
//! header (4-byte magic, then height, width and frame count as little-endian
//! u32) followed by row-major frames; `IR08` stores one byte per pixel and
//! `IR16` two little-endian bytes. A directory of sequentially numbered PNG or
//! PGM frames is the other. Both normalize codes by the bit-depth maximum.

use std::path::{Path, PathBuf};

use fusion_core::infrared::IrSequence;
use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, IoContext, Result};

pub const MAGIC_8: [u8; 4] = *b"IR08";
pub const MAGIC_16: [u8; 4] = *b"IR16";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_code(self) -> f32 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }

    fn quantize(self, v: f32) -> u16 {
        (v.clamp(0.0, 1.0) * self.max_code()).round() as u16
    }
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<IrSequence> {
    let bad = |m: String| Error::data(format!("{}: {m}", path.display()));
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the 16-byte header", bytes.len())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, f) = (word(0), word(1), word(2));
    let depth = match &bytes[..4] {
        m if m == MAGIC_8.as_slice() => BitDepth::Eight,
        m if m == MAGIC_16.as_slice() => BitDepth::Sixteen,
        _ => return Err(bad(format!("unknown magic {:?}", &bytes[..4]))),
    };
    let bpp = if depth == BitDepth::Eight { 1 } else { 2 };
    let expected = h.checked_mul(w).and_then(|n| n.checked_mul(f)).and_then(|n| n.checked_mul(bpp));
    let payload = &bytes[HEADER_LEN..];
    if expected != Some(payload.len()) {
        return Err(bad(format!("header says {h}x{w}x{f} at {bpp} byte(s) per pixel, payload is {} bytes", payload.len())));
    }
    let max = depth.max_code();
    let pixels = match depth {
        BitDepth::Eight => payload.iter().map(|&b| b as f32 / max).collect(),
        BitDepth::Sixteen => payload.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as f32 / max).collect(),
    };
    Ok(IrSequence::new(w, h, f, pixels)?)
}

pub fn encode_raw(seq: &IrSequence, depth: BitDepth) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + seq.pixels.len() * 2);
    out.extend_from_slice(if depth == BitDepth::Eight { &MAGIC_8 } else { &MAGIC_16 });
    for v in [seq.height, seq.width, seq.frames] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &p in &seq.pixels {
        let q = depth.quantize(p);
        match depth {
            BitDepth::Eight => out.push(q as u8),
            BitDepth::Sixteen => out.extend_from_slice(&q.to_le_bytes()),
        }
    }
    out
}

pub fn write_raw(path: &Path, seq: &IrSequence, depth: BitDepth) -> Result<()> {
    std::fs::write(path, encode_raw(seq, depth)).at(path)
}

fn frame_number(p: &Path) -> Option<u64> {
    let stem = p.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).at(dir)? {
        let p = entry.at(dir)?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "pgm")) {
            let n = frame_number(&p).ok_or_else(|| Error::data(format!("{}: frame file without a number", p.display())))?;
            files.push((n, p));
        }
    }
    if files.is_empty() {
        return Err(Error::data(format!("{}: no PNG or PGM frames", dir.display())));
    }
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

fn decode_frame(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match &img {
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p.0[0] as f32 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            img.to_luma16().pixels().map(|p| p.0[0] as f32 / 65535.0).collect()
        }
        _ => img.to_luma8().pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
    };
    Ok((w, h, pixels))
}

pub fn read_frame_dir(dir: &Path) -> Result<IrSequence> {
    let files = frame_files(dir)?;
    let mut pixels = Vec::new();
    let mut extents = None;
    for f in &files {
        let (w, h, px) = decode_frame(f)?;
        match extents {
            None => extents = Some((w, h)),
            Some(e) if e != (w, h) => {
                return Err(Error::data(format!("{}: frame is {w}x{h}, earlier frames {}x{}", f.display(), e.0, e.1)))
            }
            _ => {}
        }
        pixels.extend(px);
    }
    let (w, h) = extents.unwrap();
    Ok(IrSequence::new(w, h, files.len(), pixels)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Png,
    Pgm,
}

/// Write `frame_00000.png` (or `.pgm`), one file per frame.
pub fn write_frame_dir(dir: &Path, seq: &IrSequence, format: FrameFormat, depth: BitDepth) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    let ext = if format == FrameFormat::Png { "png" } else { "pgm" };
    let (w, h) = (seq.width as u32, seq.height as u32);
    for t in 0..seq.frames {
        let path = dir.join(format!("frame_{t:05}.{ext}"));
        let frame = seq.frame(t);
        let img = match depth {
            BitDepth::Eight => DynamicImage::ImageLuma8(
                ImageBuffer::<Luma<u8>, _>::from_raw(w, h, frame.iter().map(|&v| depth.quantize(v) as u8).collect()).unwrap(),
            ),
            BitDepth::Sixteen => DynamicImage::ImageLuma16(
                ImageBuffer::<Luma<u16>, _>::from_raw(w, h, frame.iter().map(|&v| depth.quantize(v)).collect()).unwrap(),
            ),
        };
        let fmt = if format == FrameFormat::Png { image::ImageFormat::Png } else { image::ImageFormat::Pnm };
        img.save_with_format(&path, fmt).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// Load an IR sequence, choosing the decoder from the path: a directory of
/// frames, or a packed `.ir` / `.raw` file.
pub fn load_ir(path: &Path) -> Result<IrSequence> {
    if path.is_dir() {
        return read_frame_dir(path);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("ir" | "raw") => decode_raw(&std::fs::read(path).at(path)?, path),
        _ => Err(Error::data(format!("{}: unrecognized IR input (expected a frame directory, .ir or .raw)", path.display()))),
    }
}

/// Save an 8-bit grayscale or RGB debug image.
pub fn save_png(path: &Path, width: usize, height: usize, channels: usize, bytes: Vec<u8>) -> Result<()> {
    let (w, h) = (width as u32, height as u32);
    let img = match channels {
        1 => DynamicImage::ImageLuma8(ImageBuffer::from_raw(w, h, bytes).ok_or_else(|| Error::data("bad image buffer"))?),
        3 => DynamicImage::ImageRgb8(ImageBuffer::from_raw(w, h, bytes).ok_or_else(|| Error::data("bad image buffer"))?),
        c => return Err(Error::data(format!("{c}-channel PNG not supported"))),
    };
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}
