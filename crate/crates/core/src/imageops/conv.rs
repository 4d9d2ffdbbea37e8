//! Zero-padded "same" cross-correlation, lowered to a matrix product.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor, Trans};

/// Channel-major stack of equally sized planes: `data[c * h * w + y * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<F> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<F>,
}

impl<F: Real> FeatureMap<F> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![F::zero(); channels * height * width],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> F {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Validated convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
}

impl ConvShape {
    pub fn from_weights<F: Real>(weights: &Tensor<F>) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 4 || s[2] != s[3] {
            return Err(Error::Shape(format!(
                "conv weights must be (out, in, k, k), got {s:?}"
            )));
        }
        if s[2] % 2 == 0 {
            return Err(Error::Unsupported(format!(
                "even kernel size {} cannot preserve spatial size",
                s[2]
            )));
        }
        Ok(Self {
            out_channels: s[0],
            in_channels: s[1],
            kernel: s[2],
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Unfolds `(channels, h*w)` input into `(channels*k*k, h*w)` columns with
/// zero padding of `k/2`.
pub fn im2col<F: Real>(input: &[F], channels: usize, h: usize, w: usize, k: usize) -> Vec<F> {
    let n = h * w;
    let pad = (k / 2) as isize;
    let mut cols = vec![F::zero(); channels * k * k * n];
    for c in 0..channels {
        let plane = &input[c * n..(c + 1) * n];
        for dy in 0..k {
            for dx in 0..k {
                let row = (c * k + dy) * k + dx;
                let out = &mut cols[row * n..(row + 1) * n];
                let oy = dy as isize - pad;
                let ox = dx as isize - pad;
                let (x0, x1) = valid_range(w, ox);
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut out[y * w..(y + 1) * w];
                    for x in x0..x1 {
                        dst[x] = src[(x as isize + ox) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im<F: Real>(cols: &[F], channels: usize, h: usize, w: usize, k: usize) -> Vec<F> {
    let n = h * w;
    let pad = (k / 2) as isize;
    let mut out = vec![F::zero(); channels * n];
    for c in 0..channels {
        let plane = &mut out[c * n..(c + 1) * n];
        for dy in 0..k {
            for dx in 0..k {
                let row = (c * k + dy) * k + dx;
                let src = &cols[row * n..(row + 1) * n];
                let oy = dy as isize - pad;
                let ox = dx as isize - pad;
                let (x0, x1) = valid_range(w, ox);
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let s = &src[y * w..(y + 1) * w];
                    for x in x0..x1 {
                        let t = (x as isize + ox) as usize;
                        dst[t] = dst[t] + s[x];
                    }
                }
            }
        }
    }
    out
}

// output columns x for which x + offset lies inside [0, w)
fn valid_range(w: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (w as isize - offset).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

/// Calls `f(tap, input_offset, output_offset, len)` for every contiguous row
/// segment that kernel tap `tap` reads from the input and writes to the
/// output of a same-size cross-correlation.
fn for_each_segment(channels: usize, h: usize, w: usize, k: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let n = h * w;
    let pad = (k / 2) as isize;
    for c in 0..channels {
        for dy in 0..k {
            for dx in 0..k {
                let tap = (c * k + dy) * k + dx;
                let oy = dy as isize - pad;
                let ox = dx as isize - pad;
                let (x0, x1) = valid_range(w, ox);
                if x0 == x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = c * n + sy as usize * w + (x0 as isize + ox) as usize;
                    f(tap, src, y * w + x0, x1 - x0);
                }
            }
        }
    }
}

/// Single-output-channel convolution computed directly; `weights` holds
/// `channels * k * k` taps. Equals [`conv_from_cols`] on [`im2col`] columns.
pub fn conv_single_out<F: Real>(input: &[F], channels: usize, h: usize, w: usize, k: usize, weights: &[F], bias: F) -> Vec<F> {
    let mut out = vec![bias; h * w];
    for_each_segment(channels, h, w, k, |tap, src, dst, len| {
        let wv = weights[tap];
        for (o, &i) in out[dst..dst + len].iter_mut().zip(&input[src..src + len]) {
            *o = *o + wv * i;
        }
    });
    out
}

/// Gradients of [`conv_single_out`] with respect to the weights and the
/// input, given the output gradient `g`.
pub fn conv_single_out_backward<F: Real>(
    input: &[F],
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    weights: &[F],
    g: &[F],
) -> (Vec<F>, Vec<F>) {
    let mut dw = vec![F::zero(); channels * k * k];
    let mut din = vec![F::zero(); channels * h * w];
    for_each_segment(channels, h, w, k, |tap, src, dst, len| {
        let gs = &g[dst..dst + len];
        dw[tap] = dw[tap] + gs.iter().zip(&input[src..src + len]).fold(F::zero(), |a, (&x, &y)| a + x * y);
        let wv = weights[tap];
        for (d, &gv) in din[src..src + len].iter_mut().zip(gs) {
            *d = *d + wv * gv;
        }
    });
    (dw, din)
}

/// Convolution on already unfolded columns; returns `(out_channels, h*w)`.
pub fn conv_from_cols<F: Real>(cols: &[F], weights: &Tensor<F>, bias: &[F], n: usize) -> Vec<F> {
    let o = weights.shape()[0];
    let kk = weights.len() / o;
    let mut out = vec![F::zero(); o * n];
    for (row, &b) in out.chunks_mut(n).zip(bias) {
        row.iter_mut().for_each(|v| *v = b);
    }
    gemm(
        o,
        kk,
        n,
        F::one(),
        weights.data(),
        Trans::No,
        cols,
        Trans::No,
        F::one(),
        &mut out,
    );
    out
}

/// Zero-padded cross-correlation preserving spatial size. `weights` has
/// shape `(out, in, k, k)` with odd `k`; `bias` has one entry per output
/// channel.
pub fn conv2d_same<F: Real>(
    input: &FeatureMap<F>,
    weights: &Tensor<F>,
    bias: &[F],
) -> Result<FeatureMap<F>> {
    let shape = ConvShape::from_weights(weights)?;
    if shape.in_channels != input.channels {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            shape.in_channels, input.channels
        )));
    }
    if bias.len() != shape.out_channels {
        return Err(Error::Shape(format!(
            "conv bias has {} entries for {} output channels",
            bias.len(),
            shape.out_channels
        )));
    }
    let (h, w) = (input.height, input.width);
    let cols = im2col(&input.data, input.channels, h, w, shape.kernel);
    let data = conv_from_cols(&cols, weights, bias, h * w);
    FeatureMap::new(shape.out_channels, h, w, data)
}
