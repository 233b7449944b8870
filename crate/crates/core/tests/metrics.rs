use gmfim_core::image::Image;
use gmfim_core::metrics::{ssim_with, SsimConstants, SsimMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean SSIM over every 11x11 window with Gaussian weights (sigma 1.5),
/// evaluated window by window from raw sums.
fn naive_windowed(x: &Image, y: &Image) -> f64 {
    let lum = |img: &Image, r: usize, c: usize| -> f64 {
        let v = if img.channels() == 1 {
            img.get(r, c, 0)
        } else {
            0.299 * img.get(r, c, 0) + 0.587 * img.get(r, c, 1) + 0.114 * img.get(r, c, 2)
        };
        v * 255.0
    };
    let size = 11.min(x.height()).min(x.width());
    let centre = (size as f64 - 1.0) / 2.0;
    let mut weights = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for (dy, row) in weights.iter_mut().enumerate() {
        for (dx, w) in row.iter_mut().enumerate() {
            let (a, b) = (dy as f64 - centre, dx as f64 - centre);
            *w = (-(a * a + b * b) / 4.5).exp();
            total += *w;
        }
    }
    let (c1, c2) = (6.5025, 58.5225);
    let mut sum = 0.0;
    let mut windows = 0.0;
    for top in 0..=x.height() - size {
        for left in 0..=x.width() - size {
            let (mut mx, mut my) = (0.0, 0.0);
            for dy in 0..size {
                for dx in 0..size {
                    let w = weights[dy][dx] / total;
                    mx += w * lum(x, top + dy, left + dx);
                    my += w * lum(y, top + dy, left + dx);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for dy in 0..size {
                for dx in 0..size {
                    let w = weights[dy][dx] / total;
                    let (p, q) = (lum(x, top + dy, left + dx) - mx, lum(y, top + dy, left + dx) - my);
                    vx += w * p * p;
                    vy += w * q * q;
                    cov += w * p * q;
                }
            }
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            windows += 1.0;
        }
    }
    sum / windows
}

#[test]
fn windowed_ssim_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (h, w, c) in [(16, 16, 3), (12, 20, 1), (11, 11, 3), (8, 9, 1)] {
        let x = Image::new(h, w, c, (0..h * w * c).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y = x.map(|v| (v * 0.8 + 0.1).min(1.0));
        let got = ssim_with(&x, &y, &SsimConstants::default(), SsimMode::Windowed).unwrap();
        let want = naive_windowed(&x, &y);
        assert!((got - want).abs() <= 1e-9, "{h}x{w}x{c}: {got} vs {want}");
    }
}
