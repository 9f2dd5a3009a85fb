//! Convolution geometry and the im2col/GEMM kernels behind the 2D, 3D and
//! factorized (2+1)D convolutions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::real::{gemm, Mat, Real};

/// Hyper-parameters of one convolution. The spatial kernel is square.
///
/// Axes are ordered `[time, height, width]`; a 2D convolution uses
/// `kernel_time = 1`, unit time stride and zero time padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_time: usize,
    pub kernel_space: usize,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel_time: usize, kernel_space: usize) -> Self {
        ConvSpec { in_channels, out_channels, kernel_time, kernel_space, stride: [1; 3], padding: [0; 3] }
    }

    /// A `d×d` 2D convolution.
    pub fn spatial(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_time: 1,
            kernel_space: kernel,
            stride: [1, stride, stride],
            padding: [0, padding, padding],
        }
    }

    pub fn with_stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [self.in_channels, self.out_channels, self.kernel_time, self.kernel_space];
        if extents.iter().chain(self.stride.iter()).any(|&v| v == 0) {
            return Err(Error::InvalidArgument(format!("conv extents must be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn kernel(&self) -> [usize; 3] {
        [self.kernel_time, self.kernel_space, self.kernel_space]
    }

    /// Weight shape `[out, in, kt, d, d]`.
    pub fn weight_shape(&self) -> [usize; 5] {
        [self.out_channels, self.in_channels, self.kernel_time, self.kernel_space, self.kernel_space]
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    /// Output extent along each of the three axes for an input of `[t, h, w]`.
    pub fn output_extent(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let kernel = self.kernel();
        let mut out = [0; 3];
        for axis in 0..3 {
            let padded = input[axis] + 2 * self.padding[axis];
            if padded < kernel[axis] {
                return Err(shape_err(
                    "conv",
                    format!("axis {axis}: input {} + 2*pad {} smaller than kernel {}", input[axis], self.padding[axis], kernel[axis]),
                ));
            }
            out[axis] = (padded - kernel[axis]) / self.stride[axis] + 1;
        }
        Ok(out)
    }
}

/// Mid-channel count for a (2+1)D factorization of a `t×d×d` convolution
/// that keeps the parameter count of the full 3D kernel.
///
/// Degenerate configurations that floor to zero are clamped to one channel.
pub fn mid_channels(n_in: usize, n_out: usize, t: usize, d: usize) -> usize {
    let d2 = d * d;
    let m = (t * d2 * n_in * n_out) / (d2 * n_in + t * n_out);
    m.max(1)
}

/// Weight count of a factorized block with `mid` intermediate channels.
pub fn factorized_params(n_in: usize, n_out: usize, t: usize, d: usize, mid: usize) -> usize {
    d * d * n_in * mid + t * mid * n_out
}

/// Weight count of the full `t×d×d` 3D convolution.
pub fn full_3d_params(n_in: usize, n_out: usize, t: usize, d: usize) -> usize {
    t * d * d * n_in * n_out
}

/// Resolved extents of one convolution call on a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub input: [usize; 3],
    pub c_out: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeometry {
    pub fn resolve(spec: &ConvSpec, input_shape: &[usize]) -> Result<Self> {
        if input_shape.len() != 5 {
            return Err(shape_err("conv3d", format!("expected [N,C,T,H,W], got {input_shape:?}")));
        }
        if input_shape[1] != spec.in_channels {
            return Err(shape_err(
                "conv",
                format!("input has {} channels, spec expects {}", input_shape[1], spec.in_channels),
            ));
        }
        let input = [input_shape[2], input_shape[3], input_shape[4]];
        let output = spec.output_extent(input)?;
        Ok(ConvGeometry {
            batch: input_shape[0],
            c_in: spec.in_channels,
            input,
            c_out: spec.out_channels,
            kernel: spec.kernel(),
            stride: spec.stride,
            padding: spec.padding,
            output,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.c_out, self.output[0], self.output[1], self.output[2]]
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    fn patch(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.padding == [0; 3]
    }
}

/// Unfold one sample `[C, T, H, W]` into `[C·kt·kh·kw, To·Ho·Wo]`.
fn im2col<S: Real>(g: &ConvGeometry, input: &[S], cols: &mut [S]) {
    let [t_in, h_in, w_in] = g.input;
    let [kt, kh, kw] = g.kernel;
    let [to, ho, wo] = g.output;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let plane = ho * wo;
    let mut row = 0;
    for c in 0..g.c_in {
        let chan = &input[c * t_in * h_in * w_in..(c + 1) * t_in * h_in * w_in];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let dst = &mut cols[row * to * plane..(row + 1) * to * plane];
                    for ot in 0..to {
                        let ti = (ot * st + dt) as isize - pt as isize;
                        let frame_dst = &mut dst[ot * plane..(ot + 1) * plane];
                        if ti < 0 || ti >= t_in as isize {
                            frame_dst.fill(S::zero());
                            continue;
                        }
                        let frame = &chan[ti as usize * h_in * w_in..(ti as usize + 1) * h_in * w_in];
                        for oh in 0..ho {
                            let hi = (oh * sh + dh) as isize - ph as isize;
                            let line_dst = &mut frame_dst[oh * wo..(oh + 1) * wo];
                            if hi < 0 || hi >= h_in as isize {
                                line_dst.fill(S::zero());
                                continue;
                            }
                            let line = &frame[hi as usize * w_in..(hi as usize + 1) * w_in];
                            for (ow, d) in line_dst.iter_mut().enumerate() {
                                let wi = (ow * sw + dw) as isize - pw as isize;
                                *d = if wi < 0 || wi >= w_in as isize { S::zero() } else { line[wi as usize] };
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into one sample.
fn col2im<S: Real>(g: &ConvGeometry, cols: &[S], input_grad: &mut [S]) {
    let [t_in, h_in, w_in] = g.input;
    let [kt, kh, kw] = g.kernel;
    let [to, ho, wo] = g.output;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let plane = ho * wo;
    let mut row = 0;
    for c in 0..g.c_in {
        let chan = &mut input_grad[c * t_in * h_in * w_in..(c + 1) * t_in * h_in * w_in];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let src = &cols[row * to * plane..(row + 1) * to * plane];
                    for ot in 0..to {
                        let ti = (ot * st + dt) as isize - pt as isize;
                        if ti < 0 || ti >= t_in as isize {
                            continue;
                        }
                        let frame = &mut chan[ti as usize * h_in * w_in..(ti as usize + 1) * h_in * w_in];
                        for oh in 0..ho {
                            let hi = (oh * sh + dh) as isize - ph as isize;
                            if hi < 0 || hi >= h_in as isize {
                                continue;
                            }
                            let line = &mut frame[hi as usize * w_in..(hi as usize + 1) * w_in];
                            let line_src = &src[ot * plane + oh * wo..ot * plane + (oh + 1) * wo];
                            for (ow, &v) in line_src.iter().enumerate() {
                                let wi = (ow * sw + dw) as isize - pw as isize;
                                if wi >= 0 && wi < w_in as isize {
                                    line[wi as usize] += v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub(crate) fn conv_forward<S: Real>(g: &ConvGeometry, input: &[S], weight: &[S], bias: Option<&[S]>) -> Vec<S> {
    let (vin, vout, patch) = (g.in_volume(), g.out_volume(), g.patch());
    let mut out = vec![S::zero(); g.batch * g.c_out * vout];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![S::zero(); patch * vout] };
    for n in 0..g.batch {
        let x = &input[n * g.c_in * vin..(n + 1) * g.c_in * vin];
        let y = &mut out[n * g.c_out * vout..(n + 1) * g.c_out * vout];
        let cols_ref: &[S] = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut cols);
            &cols
        };
        let beta = match bias {
            Some(b) => {
                for (o, chunk) in y.chunks_exact_mut(vout).enumerate() {
                    chunk.fill(b[o]);
                }
                S::one()
            }
            None => S::zero(),
        };
        gemm(Mat::new(weight, g.c_out, patch), Mat::new(cols_ref, patch, vout), beta, y);
    }
    out
}

/// Gradients with respect to whichever of input, weight and bias are requested.
pub(crate) struct ConvGrads<S> {
    pub input: Option<Vec<S>>,
    pub weight: Option<Vec<S>>,
    pub bias: Option<Vec<S>>,
}

pub(crate) fn conv_backward<S: Real>(
    g: &ConvGeometry,
    input: &[S],
    weight: &[S],
    out_grad: &[S],
    want: [bool; 3],
) -> ConvGrads<S> {
    let (vin, vout, patch) = (g.in_volume(), g.out_volume(), g.patch());
    let mut dinput = want[0].then(|| vec![S::zero(); input.len()]);
    let mut dweight = want[1].then(|| vec![S::zero(); weight.len()]);
    let mut dbias = want[2].then(|| vec![S::zero(); g.c_out]);
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![S::zero(); patch * vout] };
    let mut dcols = if pointwise || dinput.is_none() { Vec::new() } else { vec![S::zero(); patch * vout] };
    for n in 0..g.batch {
        let x = &input[n * g.c_in * vin..(n + 1) * g.c_in * vin];
        let dy = &out_grad[n * g.c_out * vout..(n + 1) * g.c_out * vout];
        if let Some(db) = dbias.as_mut() {
            for (o, chunk) in dy.chunks_exact(vout).enumerate() {
                db[o] += chunk.iter().fold(S::zero(), |a, &v| a + v);
            }
        }
        if let Some(dw) = dweight.as_mut() {
            let cols_ref: &[S] = if pointwise {
                x
            } else {
                im2col(g, x, &mut cols);
                &cols
            };
            gemm(Mat::new(dy, g.c_out, vout), Mat::new(cols_ref, patch, vout).t(), S::one(), dw);
        }
        if let Some(dx) = dinput.as_mut() {
            let dx = &mut dx[n * g.c_in * vin..(n + 1) * g.c_in * vin];
            if pointwise {
                gemm(Mat::new(weight, g.c_out, patch).t(), Mat::new(dy, g.c_out, vout), S::one(), dx);
            } else {
                gemm(Mat::new(weight, g.c_out, patch).t(), Mat::new(dy, g.c_out, vout), S::zero(), &mut dcols);
                col2im(g, &dcols, dx);
            }
        }
    }
    ConvGrads { input: dinput, weight: dweight, bias: dbias }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_channels_matches_arithmetic() {
        assert_eq!(mid_channels(64, 64, 3, 3), 144);
        assert_eq!(factorized_params(64, 64, 3, 3, 144), 110_592);
        assert_eq!(full_3d_params(64, 64, 3, 3), 110_592);
        assert_eq!(mid_channels(16, 32, 3, 3), 57);
        assert_eq!(mid_channels(1, 1, 1, 1), 1);
    }

    #[test]
    fn output_extent_formula() {
        let spec = ConvSpec::new(3, 8, 3, 3).with_padding([1, 1, 1]).with_stride([1, 2, 2]);
        assert_eq!(spec.output_extent([8, 16, 16]).unwrap(), [8, 8, 8]);
        let spec = ConvSpec::spatial(3, 8, 7, 2, 3);
        assert_eq!(spec.output_extent([1, 224, 224]).unwrap(), [1, 112, 112]);
        assert!(ConvSpec::new(1, 1, 3, 3).output_extent([1, 3, 3]).is_err());
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(ConvSpec::new(0, 1, 1, 1).validate().is_err());
        assert!(ConvSpec::new(1, 1, 1, 1).with_stride([1, 0, 1]).validate().is_err());
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)>
        let spec = ConvSpec::new(2, 1, 2, 3).with_stride([1, 2, 1]).with_padding([1, 1, 0]);
        let g = ConvGeometry::resolve(&spec, &[1, 2, 3, 5, 4]).unwrap();
        let x: Vec<f64> = (0..g.c_in * g.in_volume()).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let c: Vec<f64> = (0..g.patch() * g.out_volume()).map(|i| ((i * 3 % 13) as f64) * 0.5).collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &c, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
