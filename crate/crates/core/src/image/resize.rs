//! Bilinear resampling and its adjoint.
//!
//! Resampling is linear in the pixel values, so the adjoint is the exact
//! transpose needed to pull gradients back through a resize.

use super::{Image, Shape};
use crate::error::{Error, Result};

/// One output coordinate's two source taps and their weights.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    w_hi: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                w_hi: pos - lo as f64,
            }
        })
        .collect()
}

/// Converts channels (grey to RGB by replication, RGB to grey by luminance)
/// and resizes bilinearly to `shape`.
pub fn conform(img: &Image, shape: Shape) -> Result<Image> {
    let img = match (img.channels(), shape.channels) {
        (1, 3) => img.to_rgb(),
        (3, 1) => Image::new(img.height(), img.width(), 1, img.luminance())?,
        (a, b) if a == b => img.clone(),
        (a, b) => return Err(Error::Image(format!("cannot convert {a} channels to {b}"))),
    };
    resize_bilinear(&img, shape.height, shape.width)
}

/// Resamples `img` to `height x width` with pixel-center aligned bilinear
/// interpolation. Same-size resizes return an exact copy.
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::Image("cannot resize to a zero dimension".into()));
    }
    if img.height() == height && img.width() == width {
        return Ok(img.clone());
    }
    let c = img.channels();
    let ty = taps(img.height(), height);
    let tx = taps(img.width(), width);
    let mut out = vec![0.0; height * width * c];
    for (y, ry) in ty.iter().enumerate() {
        for (x, rx) in tx.iter().enumerate() {
            for ch in 0..c {
                let top = img.get(ry.lo, rx.lo, ch) * (1.0 - rx.w_hi) + img.get(ry.lo, rx.hi, ch) * rx.w_hi;
                let bot = img.get(ry.hi, rx.lo, ch) * (1.0 - rx.w_hi) + img.get(ry.hi, rx.hi, ch) * rx.w_hi;
                out[(y * width + x) * c + ch] = top * (1.0 - ry.w_hi) + bot * ry.w_hi;
            }
        }
    }
    Image::new(height, width, c, out)
}

/// Transpose of [`resize_bilinear`] from `source_shape` to the shape of
/// `grad`: scatters an output-space gradient back onto the source grid.
pub fn resize_bilinear_adjoint(grad: &Image, source_shape: Shape) -> Result<Image> {
    if grad.channels() != source_shape.channels {
        return Err(Error::shape("imagecore", source_shape, grad.shape()));
    }
    let (sh, sw, c) = (source_shape.height, source_shape.width, source_shape.channels);
    if sh == grad.height() && sw == grad.width() {
        return Ok(grad.clone());
    }
    let ty = taps(sh, grad.height());
    let tx = taps(sw, grad.width());
    let mut out = vec![0.0; source_shape.len()];
    let idx = |y: usize, x: usize, ch: usize| (y * sw + x) * c + ch;
    for (y, ry) in ty.iter().enumerate() {
        for (x, rx) in tx.iter().enumerate() {
            for ch in 0..c {
                let g = grad.get(y, x, ch);
                let (wy0, wy1) = (1.0 - ry.w_hi, ry.w_hi);
                let (wx0, wx1) = (1.0 - rx.w_hi, rx.w_hi);
                out[idx(ry.lo, rx.lo, ch)] += g * wy0 * wx0;
                out[idx(ry.lo, rx.hi, ch)] += g * wy0 * wx1;
                out[idx(ry.hi, rx.lo, ch)] += g * wy1 * wx0;
                out[idx(ry.hi, rx.hi, ch)] += g * wy1 * wx1;
            }
        }
    }
    Image::from_shape(source_shape, out)
}
