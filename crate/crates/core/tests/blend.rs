use gmfim_core::blend::{
    gaussian_filter, merge_and_match, merge_complete, merge_complete_with, merge_literal, FilterBank, MaskRole,
};
use gmfim_core::facemask::{build_blend_mask, face_rect, BlendMask, FaceRect};
use gmfim_core::synth::synth_face;
use gmfim_core::image::{rms_diff, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    Image::new(h, w, c, (0..h * w * c).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BlendMask {
    BlendMask::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Circular convolution with the sampled Gaussian kernel, periodized over
/// the grid and normalized to unit sum.
fn spatial_blur(img: &Image, sigma: f64) -> Image {
    let kernel = |n: usize| -> Vec<f64> {
        let wraps = (12.0 * sigma / n as f64).ceil() as i64 + 1;
        let k: Vec<f64> = (0..n as i64)
            .map(|d| {
                (-wraps..=wraps)
                    .map(|w| {
                        let t = (d + w * n as i64) as f64;
                        (-t * t / (2.0 * sigma * sigma)).exp()
                    })
                    .sum()
            })
            .collect();
        let total: f64 = k.iter().sum();
        k.into_iter().map(|v| v / total).collect()
    };
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let (ky, kx) = (kernel(h), kernel(w));
    let mut out = Image::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for sy in 0..h {
                    for sx in 0..w {
                        acc += ky[(y + h - sy) % h] * kx[(x + w - sx) % w] * img.get(sy, sx, ch);
                    }
                }
                out.set(y, x, ch, acc);
            }
        }
    }
    out
}

#[test]
fn impulse_matches_spatial_convolution() {
    let mut impulse = Image::zeros(8, 8, 1);
    impulse.set(3, 5, 0, 1.0);
    let rms = rms_diff(&gaussian_filter(&impulse, 1.0).unwrap(), &spatial_blur(&impulse, 1.0)).unwrap();
    assert!(rms <= 1e-5, "{rms}");
}

#[test]
fn random_images_match_spatial_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (h, w, sigma) in [(8, 8, 0.5), (6, 10, 2.0), (12, 5, 4.0), (7, 7, 32.0)] {
        let img = random_image(&mut rng, h, w, 3);
        let rms = rms_diff(&gaussian_filter(&img, sigma).unwrap(), &spatial_blur(&img, sigma)).unwrap();
        assert!(rms <= 1e-9, "{h}x{w} sigma {sigma}: {rms}");
    }
}

fn span(img: &Image, bank: &FilterBank) -> Image {
    let top = gaussian_filter(img, *bank.sigmas().last().unwrap()).unwrap();
    top.zip_with(img, |a, b| a - b).unwrap()
}

#[test]
fn literal_merge_telescopes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bank = FilterBank::default();
    let a = random_image(&mut rng, 9, 11, 3);
    let b = random_image(&mut rng, 9, 11, 3);
    let m = random_mask(&mut rng, 9, 11);
    let same = merge_literal(&a, &a, &m, &bank).unwrap();
    assert!(rms_diff(&same, &span(&a, &bank)).unwrap() < 1e-12);
    let ones = merge_literal(&a, &b, &BlendMask::filled(9, 11, 1.0), &bank).unwrap();
    assert!(rms_diff(&ones, &span(&a, &bank)).unwrap() < 1e-12);
}

#[test]
fn complete_merge_of_equal_images_is_the_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bank = FilterBank::default();
    for _ in 0..5 {
        let a = random_image(&mut rng, 10, 12, 3);
        let m = random_mask(&mut rng, 10, 12);
        assert!(rms_diff(&merge_complete(&a, &a, &m, &bank).unwrap(), &a).unwrap() <= 1e-5);
    }
}

#[test]
fn literal_and_complete_differ_by_the_base_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bank = FilterBank::doubling(6).unwrap();
    let (h, w) = (8, 9);
    let a = random_image(&mut rng, h, w, 3);
    let b = random_image(&mut rng, h, w, 3);
    let m = random_mask(&mut rng, h, w);
    let top = *bank.sigmas().last().unwrap();
    let (ga, gb) = (gaussian_filter(&a, top).unwrap(), gaussian_filter(&b, top).unwrap());
    let gm = gaussian_filter(&m.to_image(), top).unwrap();
    let mut base = Image::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let k = gm.get(y, x, 0);
            for c in 0..3 {
                base.set(y, x, c, k * ga.get(y, x, c) + (1.0 - k) * gb.get(y, x, c));
            }
        }
    }
    // the completed merge uses bands of the opposite sign
    let literal = merge_literal(&a, &b, &m, &bank).unwrap();
    let expected = base.zip_with(&literal, |p, q| p - q).unwrap();
    let complete = merge_complete_with(&a, &b, &m, &bank, MaskRole::Input).unwrap();
    assert!(rms_diff(&complete, &expected).unwrap() <= 1e-6);
}

#[test]
fn half_plane_seam_is_monotone() {
    let (h, w) = (8, 128);
    let a = Image::filled(h, w, 1, 0.2);
    let b = Image::filled(h, w, 1, 0.8);
    let weights = (0..h * w).map(|i| if i % w >= w / 2 { 1.0 } else { 0.0 }).collect();
    let m = BlendMask::new(h, w, weights).unwrap();
    let out = merge_complete(&a, &b, &m, &FilterBank::doubling(4).unwrap()).unwrap();
    let row: Vec<f64> = (0..w).map(|x| out.get(h / 2, x, 0)).collect();
    assert!((row[w / 4] - 0.2).abs() < 0.02, "{row:?}");
    assert!((row[3 * w / 4] - 0.8).abs() < 0.02, "{row:?}");
    // circular boundary: rising seam in the middle, falling seam at the edge
    assert!(row[w / 4..=3 * w / 4].windows(2).all(|p| p[1] >= p[0] - 1e-12), "{row:?}");
}

fn worst_excursion(a: &Image, b: &Image, out: &Image) -> f64 {
    (0..out.data().len())
        .map(|k| {
            let (p, q, v) = (a.data()[k], b.data()[k], out.data()[k]);
            (p.min(q) - v).max(v - p.max(q))
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn complete_merge_of_faces_stays_near_input_range() {
    let bank = FilterBank::default();
    let mut worst: f64 = 0.0;
    for i in 0..12u64 {
        let size = 16 + 4 * (i as usize % 3);
        let (a, lm) = synth_face(size, size, i, 0).unwrap();
        let (b, _) = synth_face(size, size, i + 100, 1).unwrap();
        let rect = face_rect(&lm, 0.3, (size, size)).unwrap();
        let m = build_blend_mask(&rect, (size, size), i as usize % 3).unwrap();
        let out = merge_complete(&a, &b, &m, &bank).unwrap();
        worst = worst.max(worst_excursion(&a, &b, &out));
        let matched = merge_and_match(&a, &b, &m, &bank).unwrap();
        assert!(matched.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(worst <= 0.15, "{worst}");
}

#[test]
fn complete_merge_of_smooth_images_stays_near_input_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let bank = FilterBank::default();
    let mut worst: f64 = 0.0;
    for i in 0..12usize {
        let size = 16 + 4 * (i % 3);
        let a = gaussian_filter(&random_image(&mut rng, size, size, 3), 2.0).unwrap();
        let b = gaussian_filter(&random_image(&mut rng, size, size, 3), 2.0).unwrap();
        let rect = FaceRect::new(3, 2 + i % 3, size - 4, size - 3).unwrap();
        let m = build_blend_mask(&rect, (size, size), i % 3).unwrap();
        worst = worst.max(worst_excursion(&a, &b, &merge_complete(&a, &b, &m, &bank).unwrap()));
    }
    assert!(worst <= 0.05, "{worst}");
}

#[test]
fn white_noise_can_leave_the_input_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (a, b) = (random_image(&mut rng, 16, 16, 1), random_image(&mut rng, 16, 16, 1));
    let rect = FaceRect::new(4, 4, 12, 12).unwrap();
    let m = build_blend_mask(&rect, (16, 16), 0).unwrap();
    let out = merge_complete(&a, &b, &m, &FilterBank::default()).unwrap();
    let worst = worst_excursion(&a, &b, &out);
    assert!(worst > 0.0 && worst < 0.5, "{worst}");
}

#[test]
fn constant_mask_reconstructs_either_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let bank = FilterBank::default();
    let a = random_image(&mut rng, 7, 13, 1);
    let b = random_image(&mut rng, 7, 13, 1);
    assert!(rms_diff(&merge_complete(&a, &b, &BlendMask::filled(7, 13, 1.0), &bank).unwrap(), &b).unwrap() <= 1e-5);
    assert!(rms_diff(&merge_complete(&a, &b, &BlendMask::filled(7, 13, 0.0), &bank).unwrap(), &a).unwrap() <= 1e-5);
}
