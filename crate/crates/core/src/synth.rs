//! Procedural face-like images with landmarks, for demos and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::facemask::{Anchors, LandmarkSchema, LandmarkSet};
use crate::image::Image;

/// Number of contour points placed on the face ellipse.
pub const CONTOUR_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Appearance {
    skin: [f64; 3],
    background: [f64; 3],
    eye_spacing: f64,
    mouth_width: f64,
    aspect: f64,
}

fn appearance(subject: u64) -> Appearance {
    let mut rng = ChaCha8Rng::seed_from_u64(subject.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED);
    let tone = rng.random_range(0.35..0.85);
    Appearance {
        skin: [tone, tone * rng.random_range(0.7..0.9), tone * rng.random_range(0.5..0.75)],
        background: [rng.random_range(0.05..0.4), rng.random_range(0.05..0.4), rng.random_range(0.05..0.4)],
        eye_spacing: rng.random_range(0.32..0.48),
        mouth_width: rng.random_range(0.25..0.45),
        aspect: rng.random_range(1.15..1.4),
    }
}

/// A face of `subject` rendered at `height x width`. Different `variant`
/// values of one subject share colours and proportions and differ by a small
/// offset and pixel noise.
pub fn synth_face(height: usize, width: usize, subject: u64, variant: u64) -> Result<(Image, LandmarkSet)> {
    let look = appearance(subject);
    let mut rng = ChaCha8Rng::seed_from_u64(subject.rotate_left(32) ^ variant.wrapping_add(1));
    let (h, w) = (height as f64, width as f64);
    let cx = w / 2.0 + rng.random_range(-0.03..0.03) * w;
    let cy = h / 2.0 + rng.random_range(-0.03..0.03) * h;
    let rx = 0.3 * w.min(h / look.aspect);
    let ry = rx * look.aspect;
    let eye_y = cy - 0.25 * ry;
    let eye_dx = look.eye_spacing * rx;
    let eye_r = 0.12 * rx;
    let mouth_y = cy + 0.45 * ry;
    let mouth_hw = look.mouth_width * rx;
    let mouth_hh = 0.06 * ry;

    let mut img = Image::zeros(height, width, 3);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let shade = 1.0 - 0.3 * (py / h);
            let mut rgb = look.background.map(|c| c * shade);
            let e = ((px - cx) / rx).powi(2) + ((py - cy) / ry).powi(2);
            if e <= 1.0 {
                let light = 1.0 - 0.25 * e;
                rgb = look.skin.map(|c| c * light);
                for ex in [cx - eye_dx, cx + eye_dx] {
                    if (px - ex).powi(2) + (py - eye_y).powi(2) <= eye_r * eye_r {
                        rgb = [0.08, 0.06, 0.05];
                    }
                }
                if ((px - cx) / mouth_hw).powi(2) + ((py - mouth_y) / mouth_hh).powi(2) <= 1.0 {
                    rgb = [0.55, 0.15, 0.18];
                }
            }
            for (c, v) in rgb.iter().enumerate() {
                let noisy = v + rng.random_range(-0.02..0.02);
                img.set(y, x, c, noisy.clamp(0.0, 1.0));
            }
        }
    }

    let mut points: Vec<(f64, f64)> = (0..CONTOUR_POINTS)
        .map(|i| {
            let t = i as f64 / CONTOUR_POINTS as f64 * std::f64::consts::TAU;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect();
    let left = (cx - eye_dx, eye_y);
    let right = (cx + eye_dx, eye_y);
    let mouth = (cx, mouth_y);
    points.extend([left, right, mouth]);
    let lm = LandmarkSet::new(points, LandmarkSchema::Generic)?.with_anchors(Anchors {
        left_eye: [left.0, left.1],
        right_eye: [right.0, right.1],
        mouth: [mouth.0, mouth.1],
    });
    Ok((img, lm))
}
