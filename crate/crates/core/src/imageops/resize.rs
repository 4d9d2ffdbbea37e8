//! Separable cubic-convolution resampling (Keys kernel, `a = -0.5`) with
//! edge clamping and pixel-center alignment.

use super::ImagePlane;
use crate::error::{Error, Result};

pub const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn cubic_kernel(x: f64) -> f64 {
    let a = CUBIC_A;
    let t = x.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

struct Taps {
    index: [usize; 4],
    weight: [f64; 4],
}

// Source position of output sample i is (i + 0.5) * in / out - 0.5.
fn taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    let last = in_len as isize - 1;
    (0..out_len)
        .map(|i| {
            let src = (i as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let mut t = Taps {
                index: [0; 4],
                weight: [0.0; 4],
            };
            for k in 0..4 {
                let j = base as isize - 1 + k as isize;
                t.index[k] = j.clamp(0, last) as usize;
                t.weight[k] = cubic_kernel(src - j as f64);
            }
            t
        })
        .collect()
}

/// Resamples `img` to `out_w x out_h`.
pub fn bicubic_resize(img: &ImagePlane, out_w: usize, out_h: usize) -> Result<ImagePlane> {
    if img.is_empty() {
        return Err(Error::Shape("cannot resize an empty image".into()));
    }
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidParameter(format!(
            "output size must be positive, got {out_w}x{out_h}"
        )));
    }
    let (w, h) = img.dims();
    let px = img.pixels();
    let tx = taps(w, out_w);
    let ty = taps(h, out_h);

    let mut rows = vec![0.0; out_w * h];
    for y in 0..h {
        let src = &px[y * w..(y + 1) * w];
        for (x, t) in tx.iter().enumerate() {
            rows[y * out_w + x] = (0..4).map(|k| t.weight[k] * src[t.index[k]]).sum();
        }
    }
    let mut out = vec![0.0; out_w * out_h];
    for (y, t) in ty.iter().enumerate() {
        for x in 0..out_w {
            out[y * out_w + x] = (0..4).map(|k| t.weight[k] * rows[t.index[k] * out_w + x]).sum();
        }
    }
    ImagePlane::new(out_w, out_h, out)
}
