use gmfim_core::blend::{merge_and_match, FilterBank};
use gmfim_core::facemask::{build_blend_mask, FaceRect};
use gmfim_core::image::{histogram_match, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cumulative fraction of values at or below each 8-bit level, counted
/// directly from the pixel values.
fn counting_cdf(img: &Image, channel: usize) -> Vec<f64> {
    let values: Vec<f64> = img.data().iter().skip(channel).step_by(img.channels()).copied().collect();
    (0..256)
        .map(|level| {
            let below = values
                .iter()
                .filter(|&&v| ((v.clamp(0.0, 1.0) * 255.0) + 0.5).floor() as usize <= level)
                .count();
            below as f64 / values.len() as f64
        })
        .collect()
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, lo: f64, hi: f64) -> Image {
    Image::new(h, w, c, (0..h * w * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

#[test]
fn merge_and_match_follows_the_input_cdf() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..5 {
        let a = random_image(&mut rng, 16, 16, 3, 0.0, 1.0);
        let b = random_image(&mut rng, 16, 16, 3, 0.2, 0.9);
        let m = build_blend_mask(&FaceRect::new(3, 3, 13, 12).unwrap(), (16, 16), trial % 2).unwrap();
        let out = merge_and_match(&a, &b, &m, &FilterBank::default()).unwrap();
        for c in 0..3 {
            let (want, got) = (counting_cdf(&a, c), counting_cdf(&out, c));
            for level in 0..256 {
                assert!(
                    (want[level] - got[level]).abs() <= 2.0 / 256.0 + 1e-12,
                    "trial {trial} channel {c} level {level}: {} vs {}",
                    got[level],
                    want[level]
                );
            }
        }
    }
}

#[test]
fn matching_to_a_coarse_reference_uses_only_its_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let src = random_image(&mut rng, 12, 12, 1, 0.0, 1.0);
    let levels = [0.1, 0.5, 0.9];
    let reference = Image::new(12, 12, 1, (0..144).map(|i| levels[i % 3]).collect()).unwrap();
    let out = histogram_match(&src, &reference).unwrap();
    let allowed: Vec<f64> = levels.iter().map(|v| ((v * 255.0_f64) + 0.5).floor() / 255.0).collect();
    for v in out.data() {
        assert!(allowed.iter().any(|a| (a - v).abs() < 1e-12), "{v}");
    }
    let cdf = counting_cdf(&out, 0);
    let want = counting_cdf(&reference, 0);
    for level in 0..256 {
        assert!((cdf[level] - want[level]).abs() <= 1.0 / 144.0 * 2.0, "level {level}: {} vs {}", cdf[level], want[level]);
    }
}
