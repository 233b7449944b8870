//! Frequency-domain Gaussian filtering and multi-band merging.
//!
//! Two merge modes are provided. [`merge_literal`] sums the mask-weighted
//! differences of Gaussian levels exactly as the classic per-level loop does,
//! without a coarse base band, so it cannot reconstruct its inputs.
//! [`merge_complete`] adds the blended coarsest level and is what the
//! pipeline uses. With `D^l = G^l - G^(l+1)`:
//!
//! ```text
//! result = sum_{l=1..n-1} [ G_M^l * D_face^l + (1 - G_M^l) * D_back^l ]
//!        + G_M^n * G_face^n + (1 - G_M^n) * G_back^n
//! ```
//!
//! Since `sigma_1 = 0`, `G^1` is the image itself and a constant mask
//! reconstructs the selected input exactly.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facemask::BlendMask;
use crate::image::{histogram_match, Image};

pub const DEFAULT_LEVELS: usize = 10;

/// Per-level Gaussian widths. Level 1 is the identity (`sigma = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    sigmas: Vec<f64>,
}

impl Default for FilterBank {
    fn default() -> Self {
        FilterBank::doubling(DEFAULT_LEVELS).expect("default bank is valid")
    }
}

impl FilterBank {
    /// `sigma_1 = 0` and `sigma_l = 2^(l-2)` for `l >= 2`.
    pub fn doubling(levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(Error::Blend(format!("filter bank needs at least 2 levels, got {levels}")));
        }
        let sigmas = std::iter::once(0.0)
            .chain((0..levels - 1).map(|k| (1u64 << k) as f64))
            .collect();
        Ok(FilterBank { sigmas })
    }

    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(Error::Blend("filter bank needs at least 2 levels".into()));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Blend("filter widths must be finite and non-negative".into()));
        }
        if sigmas[1..].windows(2).any(|w| w[0] >= w[1]) || sigmas[0] >= sigmas[1] {
            return Err(Error::Blend(format!("filter widths must strictly increase: {sigmas:?}")));
        }
        Ok(FilterBank { sigmas })
    }

    pub fn levels(&self) -> usize {
        self.sigmas.len()
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

/// Which input a mask value of 1 selects in [`merge_complete`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskRole {
    /// Mask 1 selects the generated (second) image.
    #[default]
    Generated,
    /// Mask 1 selects the input (first) image, as the per-level formula is
    /// literally written.
    Input,
}

struct Plan2d {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Plan2d {
    fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Plan2d {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn transform(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        for row in data.chunks_exact_mut(self.width) {
            rows.process(row);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); self.height];
        for x in 0..self.width {
            for (y, c) in column.iter_mut().enumerate() {
                *c = data[y * self.width + x];
            }
            cols.process(&mut column);
            for (y, c) in column.iter().enumerate() {
                data[y * self.width + x] = *c;
            }
        }
    }

    fn forward(&self, plane: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.row_fwd, &self.col_fwd);
        data
    }

    fn inverse_real(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut data, &self.row_inv, &self.col_inv);
        let norm = (self.height * self.width) as f64;
        data.iter().map(|c| c.re / norm).collect()
    }
}

/// Transfer function of the unit-sum sampled Gaussian on a periodic grid of
/// length `n`, evaluated at every DFT bin. It is the continuous Gaussian
/// response `exp(-2 pi^2 sigma^2 u^2)` summed over its aliases `u + k`, and
/// normalized to exactly 1 at zero frequency.
fn transfer_1d(n: usize, sigma: f64) -> Vec<f64> {
    let reach = (0.5 + 1.5 / sigma).ceil().min(64.0) as i64;
    let c = -2.0 * std::f64::consts::PI.powi(2) * sigma * sigma;
    let response = |u: f64| -> f64 {
        (-reach..=reach)
            .map(|k| {
                let f = u + k as f64;
                (c * f * f).exp()
            })
            .sum()
    };
    let dc = response(0.0);
    (0..n)
        .map(|k| {
            let u = if 2 * k <= n { k as f64 } else { k as f64 - n as f64 } / n as f64;
            response(u) / dc
        })
        .collect()
}

/// Gaussian-filters several planes of one size at several widths, reusing
/// each plane's spectrum across widths.
struct GaussianStack {
    plan: Plan2d,
}

impl GaussianStack {
    fn new(height: usize, width: usize) -> Self {
        GaussianStack {
            plan: Plan2d::new(height, width),
        }
    }

    /// Filtered copies of `img` at every width in `sigmas`.
    fn levels(&self, img: &Image, sigmas: &[f64]) -> Vec<Image> {
        let spectra: Vec<Vec<Complex64>> = img.planes().iter().map(|p| self.plan.forward(p)).collect();
        sigmas
            .iter()
            .map(|&sigma| {
                if sigma == 0.0 {
                    return img.clone();
                }
                let ty = transfer_1d(self.plan.height, sigma);
                let tx = transfer_1d(self.plan.width, sigma);
                let planes: Vec<Vec<f64>> = spectra
                    .iter()
                    .map(|spec| {
                        let filtered: Vec<Complex64> = spec
                            .iter()
                            .enumerate()
                            .map(|(i, c)| c * (ty[i / self.plan.width] * tx[i % self.plan.width]))
                            .collect();
                        self.plan.inverse_real(filtered)
                    })
                    .collect();
                Image::from_planes(img.height(), img.width(), &planes).expect("same dimensions")
            })
            .collect()
    }
}

/// Circular Gaussian blur computed by multiplication in the frequency domain.
/// `sigma = 0` returns the input unchanged.
pub fn gaussian_filter(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Blend(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let stack = GaussianStack::new(img.height(), img.width());
    Ok(stack.levels(img, &[sigma]).remove(0))
}

struct Pyramids {
    a: Vec<Image>,
    b: Vec<Image>,
    m: Vec<Vec<f64>>,
}

fn check_dims(a: &Image, b: &Image, m: &BlendMask) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape("blend images", a.shape(), b.shape()));
    }
    if (m.height(), m.width()) != (a.height(), a.width()) {
        return Err(Error::shape(
            "blend mask",
            (a.height(), a.width()),
            (m.height(), m.width()),
        ));
    }
    Ok(())
}

fn pyramids(a: &Image, b: &Image, m: &BlendMask, bank: &FilterBank) -> Result<Pyramids> {
    check_dims(a, b, m)?;
    let stack = GaussianStack::new(a.height(), a.width());
    let m_levels = stack
        .levels(&m.to_image(), bank.sigmas())
        .into_iter()
        .map(Image::into_data)
        .collect();
    Ok(Pyramids {
        a: stack.levels(a, bank.sigmas()),
        b: stack.levels(b, bank.sigmas()),
        m: m_levels,
    })
}

/// Per-level mask-weighted blend of the Gaussian differences
/// `L^(l-1) = G^l - G^(l-1)`, accumulated for `l = 2..n` in increasing order,
/// with the mask weighting the first image. No base band is added.
pub fn merge_literal(a: &Image, b: &Image, m: &BlendMask, bank: &FilterBank) -> Result<Image> {
    let p = pyramids(a, b, m, bank)?;
    let c = a.channels();
    let mut result = vec![0.0; a.data().len()];
    for l in 1..bank.levels() {
        let (ga, ga_prev) = (p.a[l].data(), p.a[l - 1].data());
        let (gb, gb_prev) = (p.b[l].data(), p.b[l - 1].data());
        let gm = &p.m[l - 1];
        for (i, r) in result.iter_mut().enumerate() {
            let w = gm[i / c];
            let la = ga[i] - ga_prev[i];
            let lb = gb[i] - gb_prev[i];
            *r += w * la + (1.0 - w) * lb;
        }
    }
    Image::from_shape(a.shape(), result)
}

/// Multi-band merge with the coarse base band; mask 1 selects `b`.
pub fn merge_complete(a: &Image, b: &Image, m: &BlendMask, bank: &FilterBank) -> Result<Image> {
    merge_complete_with(a, b, m, bank, MaskRole::Generated)
}

pub fn merge_complete_with(
    a: &Image,
    b: &Image,
    m: &BlendMask,
    bank: &FilterBank,
    role: MaskRole,
) -> Result<Image> {
    let p = pyramids(a, b, m, bank)?;
    let (face, back) = match role {
        MaskRole::Generated => (&p.b, &p.a),
        MaskRole::Input => (&p.a, &p.b),
    };
    let c = a.channels();
    let n = bank.levels();
    let mut result = vec![0.0; a.data().len()];
    for l in 0..n - 1 {
        let (gf, gf_next) = (face[l].data(), face[l + 1].data());
        let (gk, gk_next) = (back[l].data(), back[l + 1].data());
        let gm = &p.m[l];
        for (i, r) in result.iter_mut().enumerate() {
            let w = gm[i / c];
            *r += w * (gf[i] - gf_next[i]) + (1.0 - w) * (gk[i] - gk_next[i]);
        }
    }
    let (gf, gk, gm) = (face[n - 1].data(), back[n - 1].data(), &p.m[n - 1]);
    for (i, r) in result.iter_mut().enumerate() {
        let w = gm[i / c];
        *r += w * gf[i] + (1.0 - w) * gk[i];
    }
    Image::from_shape(a.shape(), result)
}

/// [`merge_complete`] followed by histogram matching to `a`, clamped to
/// `[0, 1]`.
pub fn merge_and_match(a: &Image, b: &Image, m: &BlendMask, bank: &FilterBank) -> Result<Image> {
    merge_and_match_with(a, b, m, bank, MaskRole::Generated, true)
}

pub fn merge_and_match_with(
    a: &Image,
    b: &Image,
    m: &BlendMask,
    bank: &FilterBank,
    role: MaskRole,
    match_histogram: bool,
) -> Result<Image> {
    let merged = merge_complete_with(a, b, m, bank, role)?;
    let out = if match_histogram {
        histogram_match(&merged, a)?
    } else {
        merged
    };
    Ok(out.clamped())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::rms_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> Image {
        Image::new(h, w, c, (0..h * w * c).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn doubling_schedule() {
        let bank = FilterBank::default();
        assert_eq!(bank.levels(), 10);
        assert_eq!(bank.sigmas()[..4], [0.0, 1.0, 2.0, 4.0]);
        assert_eq!(bank.sigmas()[9], 256.0);
        assert!(FilterBank::doubling(1).is_err());
        assert!(FilterBank::from_sigmas(vec![0.0, 2.0, 2.0]).is_err());
        assert!(FilterBank::from_sigmas(vec![0.0, 0.5, 3.0]).is_ok());
    }

    #[test]
    fn sigma_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random(5, 7, 3, &mut rng);
        assert_eq!(gaussian_filter(&img, 0.0).unwrap(), img);
        assert!(gaussian_filter(&img, -1.0).is_err());
    }

    #[test]
    fn constant_is_preserved() {
        let img = Image::filled(6, 10, 1, 0.37);
        for sigma in [0.3, 1.0, 5.0, 300.0] {
            let out = gaussian_filter(&img, sigma).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let a = Image::zeros(4, 4, 1);
        let b = Image::zeros(4, 5, 1);
        let m = BlendMask::filled(4, 4, 1.0);
        let bank = FilterBank::doubling(3).unwrap();
        assert!(merge_literal(&a, &b, &m, &bank).is_err());
        let m5 = BlendMask::filled(4, 5, 1.0);
        assert!(merge_complete(&a, &a, &m5, &bank).is_err());
    }

    #[test]
    fn equal_inputs_telescope() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(8, 8, 3, &mut rng);
        let m = BlendMask::new(8, 8, (0..64).map(|_| rng.random()).collect()).unwrap();
        let bank = FilterBank::doubling(5).unwrap();
        let lit = merge_literal(&a, &a, &m, &bank).unwrap();
        let g_n = gaussian_filter(&a, 8.0).unwrap();
        let expect = g_n.zip_with(&a, |x, y| x - y).unwrap();
        assert!(rms_diff(&lit, &expect).unwrap() < 1e-12);
        let full = merge_complete(&a, &a, &m, &bank).unwrap();
        assert!(rms_diff(&full, &a).unwrap() < 1e-12);
    }

    #[test]
    fn constant_reference_gives_constant_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Image::filled(8, 8, 1, 0.6);
        let b = random(8, 8, 1, &mut rng);
        let m = BlendMask::filled(8, 8, 0.5);
        let out = merge_and_match(&a, &b, &m, &FilterBank::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 153.0 / 255.0));
    }
}
