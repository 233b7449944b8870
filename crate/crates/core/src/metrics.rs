//! SSIM, PSNR and attack success rate.
//!
//! Both image metrics operate on the 8-bit scale: intensities are multiplied
//! by 255 before any statistic is taken.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::Image;

pub const PEAK: f64 = 255.0;

/// Stabilizing constants of the SSIM quotient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConstants {
    fn default() -> Self {
        SsimConstants {
            c1: (0.01 * PEAK) * (0.01 * PEAK),
            c2: (0.03 * PEAK) * (0.03 * PEAK),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimMode {
    /// One set of statistics over the whole image.
    #[default]
    Global,
    /// Mean of local SSIM values under an 11x11 Gaussian window (sigma 1.5).
    Windowed,
}

/// Peak signal-to-noise ratio; identical images have no finite PSNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn value(&self) -> f64 {
        match self {
            Psnr::Finite(v) => *v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Finite(v)),
            Raw::Text(t) if t == "inf" => Ok(Psnr::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid psnr {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ssim: f64,
    pub psnr: Psnr,
    pub mse: f64,
}

fn same_dims(x: &Image, y: &Image) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::shape("metrics", x.shape(), y.shape()));
    }
    Ok(())
}

fn quotient(mx: f64, my: f64, vx: f64, vy: f64, cov: f64, k: &SsimConstants) -> f64 {
    ((2.0 * mx * my + k.c1) * (2.0 * cov + k.c2)) / ((mx * mx + my * my + k.c1) * (vx + vy + k.c2))
}

fn global_ssim(a: &[f64], b: &[f64], k: &SsimConstants) -> f64 {
    let n = a.len() as f64;
    let mx = a.iter().sum::<f64>() / n;
    let my = b.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (&p, &q) in a.iter().zip(b) {
        let (dp, dq) = (p - mx, q - my);
        vx += dp * dp;
        vy += dq * dq;
        cov += dp * dq;
    }
    quotient(mx, my, vx / n, vy / n, cov / n, k)
}

fn windowed_ssim(a: &[f64], b: &[f64], h: usize, w: usize, k: &SsimConstants) -> f64 {
    let size = 11.min(h).min(w);
    let half = (size as f64 - 1.0) / 2.0;
    let mut kernel: Vec<f64> = (0..size * size)
        .map(|i| {
            let (dy, dx) = ((i / size) as f64 - half, (i % size) as f64 - half);
            (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp()
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= total);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - size {
        for x0 in 0..=w - size {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, &kw) in kernel.iter().enumerate() {
                let idx = (y0 + i / size) * w + x0 + i % size;
                let (p, q) = (a[idx], b[idx]);
                mx += kw * p;
                my += kw * q;
                sxx += kw * p * p;
                syy += kw * q * q;
                sxy += kw * p * q;
            }
            sum += quotient(mx, my, sxx - mx * mx, syy - my * my, sxy - mx * my, k);
            count += 1;
        }
    }
    sum / count as f64
}

fn scaled_luminance(img: &Image) -> Vec<f64> {
    img.luminance().into_iter().map(|v| v * PEAK).collect()
}

/// Structural similarity of the 8-bit-scaled luminance of two images.
pub fn ssim(x: &Image, y: &Image, constants: &SsimConstants) -> Result<f64> {
    ssim_with(x, y, constants, SsimMode::Global)
}

pub fn ssim_with(x: &Image, y: &Image, constants: &SsimConstants, mode: SsimMode) -> Result<f64> {
    same_dims(x, y)?;
    if !(constants.c1 > 0.0 && constants.c2 > 0.0) {
        return Err(Error::Metric("SSIM constants must be positive".into()));
    }
    let (a, b) = (scaled_luminance(x), scaled_luminance(y));
    Ok(match mode {
        SsimMode::Global => global_ssim(&a, &b, constants),
        SsimMode::Windowed => windowed_ssim(&a, &b, x.height(), x.width(), constants),
    })
}

/// Mean squared error on the 8-bit scale over all pixels and channels.
pub fn mse(x: &Image, y: &Image) -> Result<f64> {
    same_dims(x, y)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(p, q)| {
            let d = (p - q) * PEAK;
            d * d
        })
        .sum();
    Ok(sum / x.data().len() as f64)
}

pub fn psnr(x: &Image, y: &Image) -> Result<Psnr> {
    let e = mse(x, y)?;
    Ok(psnr_from_mse(e))
}

pub fn psnr_from_mse(mse: f64) -> Psnr {
    if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(10.0 * (PEAK * PEAK / mse).log10())
    }
}

pub fn report(x: &Image, y: &Image, constants: &SsimConstants, mode: SsimMode) -> Result<MetricReport> {
    let e = mse(x, y)?;
    Ok(MetricReport {
        ssim: ssim_with(x, y, constants, mode)?,
        psnr: psnr_from_mse(e),
        mse: e,
    })
}

/// Fraction of test images on which the attack on recognition succeeded.
pub fn attack_success_rate(successes: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::Metric("attack success rate over zero images".into()));
    }
    if successes > total {
        return Err(Error::Metric(format!(
            "{successes} successes exceed {total} images"
        )));
    }
    Ok(successes as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_images() {
        let img = Image::new(2, 2, 3, (0..12).map(|v| v as f64 / 11.0).collect()).unwrap();
        assert_eq!(ssim(&img, &img, &SsimConstants::default()).unwrap(), 1.0);
        assert_eq!(psnr(&img, &img).unwrap(), Psnr::Infinite);
    }

    #[test]
    fn black_versus_white() {
        let k = SsimConstants::default();
        let s = ssim(&Image::zeros(4, 4, 1), &Image::filled(4, 4, 1, 1.0), &k).unwrap();
        let expect = k.c1 / (255.0 * 255.0 + k.c1);
        assert!((s - expect).abs() < 1e-15);
        assert!((s - 9.9990e-5).abs() < 1e-8);
    }

    #[test]
    fn anti_correlated_is_negative() {
        let x = Image::new(1, 4, 1, vec![0.2, 0.8, 0.3, 0.7]).unwrap();
        let y = x.map(|v| 1.0 - v);
        assert!(ssim(&x, &y, &SsimConstants::default()).unwrap() < 0.0);
    }

    #[test]
    fn one_level_error() {
        let x = Image::filled(3, 3, 3, 0.5);
        let y = x.map(|v| v + 1.0 / 255.0);
        let Psnr::Finite(p) = psnr(&x, &y).unwrap() else { panic!() };
        assert!((p - 10.0 * (255.0f64 * 255.0).log10()).abs() < 1e-6);
        assert!((p - 48.1308).abs() < 1e-4);
        let z = x.map(|v| v + 2.0 / 255.0);
        let Psnr::Finite(q) = psnr(&x, &z).unwrap() else { panic!() };
        assert!((p - q - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn windowed_identical_is_one() {
        let img = Image::new(12, 12, 1, (0..144).map(|v| (v % 17) as f64 / 16.0).collect()).unwrap();
        let s = ssim_with(&img, &img, &SsimConstants::default(), SsimMode::Windowed).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asr_values() {
        assert_eq!(attack_success_rate(3, 4).unwrap(), 0.75);
        assert_eq!(attack_success_rate(0, 9).unwrap(), 0.0);
        assert_eq!(attack_success_rate(442, 442).unwrap(), 1.0);
        assert!(attack_success_rate(0, 0).is_err());
        assert!(attack_success_rate(5, 4).is_err());
    }

    #[test]
    fn report_json() {
        let img = Image::zeros(2, 2, 1);
        let r = report(&img, &img, &SsimConstants::default(), SsimMode::Global).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(text, r#"{"ssim":1.0,"psnr":"inf","mse":0.0}"#);
        let back: MetricReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    fn pair() -> impl Strategy<Value = (Image, Image)> {
        (proptest::collection::vec(0.0f64..=1.0, 48), proptest::collection::vec(0.0f64..=1.0, 48))
            .prop_map(|(a, b)| (Image::new(4, 4, 3, a).unwrap(), Image::new(4, 4, 3, b).unwrap()))
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_bounded((x, y) in pair()) {
            let k = SsimConstants::default();
            let s1 = ssim(&x, &y, &k).unwrap();
            let s2 = ssim(&y, &x, &k).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s1));
        }

        #[test]
        fn psnr_decreases_with_noise(base in 0.2f64..0.6, a in 0.001f64..0.1, extra in 0.001f64..0.1) {
            let x = Image::filled(3, 3, 1, base);
            let p1 = psnr(&x, &x.map(|v| v + a)).unwrap().value();
            let p2 = psnr(&x, &x.map(|v| v + a + extra)).unwrap().value();
            prop_assert!(p2 < p1);
        }
    }
}
