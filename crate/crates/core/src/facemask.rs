//! Landmark ingestion, face rectangles, background masking, blend masks and
//! optional similarity alignment.
//!
//! Coordinates are in pixels with the origin at the top-left corner, `x`
//! growing rightward and `y` downward.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_MARGIN: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LandmarkSchema {
    #[serde(rename = "generic")]
    Generic,
    #[serde(rename = "68pt")]
    SixtyEight,
}

/// Explicit alignment anchors for landmark sets without a known layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub left_eye: [f64; 2],
    pub right_eye: [f64; 2],
    pub mouth: [f64; 2],
}

impl Anchors {
    fn points(&self) -> [(f64, f64); 3] {
        [
            (self.left_eye[0], self.left_eye[1]),
            (self.right_eye[0], self.right_eye[1]),
            (self.mouth[0], self.mouth[1]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<(f64, f64)>,
    pub schema: LandmarkSchema,
    pub anchors: Option<Anchors>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LandmarkFile {
    Bare(Vec<[f64; 2]>),
    Tagged {
        schema: Option<LandmarkSchema>,
        points: Vec<[f64; 2]>,
        #[serde(default)]
        anchors: Option<Anchors>,
    },
}

impl LandmarkSet {
    pub fn new(points: Vec<(f64, f64)>, schema: LandmarkSchema) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Mask(format!(
                "insufficient landmarks: {} points, at least 3 required",
                points.len()
            )));
        }
        if schema == LandmarkSchema::SixtyEight && points.len() != 68 {
            return Err(Error::Mask(format!(
                "68pt schema requires 68 points, found {}",
                points.len()
            )));
        }
        for (i, &(x, y)) in points.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0 {
                return Err(Error::Mask(format!(
                    "landmark {i} out of bounds: ({x}, {y})"
                )));
            }
        }
        Ok(LandmarkSet {
            points,
            schema,
            anchors: None,
        })
    }

    pub fn with_anchors(mut self, anchors: Anchors) -> Self {
        self.anchors = Some(anchors);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks that every point lies inside a `width x height` image.
    pub fn validate_within(&self, width: usize, height: usize) -> Result<()> {
        for (i, &(x, y)) in self.points.iter().enumerate() {
            if x >= width as f64 || y >= height as f64 {
                return Err(Error::Mask(format!(
                    "landmark {i} out of bounds: ({x}, {y}) outside {width}x{height} image"
                )));
            }
        }
        Ok(())
    }

    /// Left-eye, right-eye and mouth anchors: explicit anchors when present,
    /// otherwise centroids of the standard 68-point eye and mouth groups.
    pub fn alignment_anchors(&self) -> Result<[(f64, f64); 3]> {
        if let Some(a) = self.anchors {
            return Ok(a.points());
        }
        if self.schema != LandmarkSchema::SixtyEight {
            return Err(Error::Mask(
                "alignment needs a 68pt landmark set or explicit anchors".into(),
            ));
        }
        let centroid = |range: std::ops::Range<usize>| {
            let n = range.len() as f64;
            let (sx, sy) = self.points[range]
                .iter()
                .fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x, ay + y));
            (sx / n, sy / n)
        };
        Ok([centroid(36..42), centroid(42..48), centroid(48..68)])
    }
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text)
}

pub fn parse_landmarks(text: &str) -> Result<LandmarkSet> {
    let file: LandmarkFile = serde_json::from_str(text)
        .map_err(|e| Error::Mask(format!("malformed landmark file: {e}")))?;
    let (schema, points, anchors) = match file {
        LandmarkFile::Bare(points) => (None, points, None),
        LandmarkFile::Tagged {
            schema,
            points,
            anchors,
        } => (schema, points, anchors),
    };
    let schema = schema.unwrap_or(if points.len() == 68 {
        LandmarkSchema::SixtyEight
    } else {
        LandmarkSchema::Generic
    });
    let set = LandmarkSet::new(points.into_iter().map(|[x, y]| (x, y)).collect(), schema)?;
    Ok(match anchors {
        Some(a) => set.with_anchors(a),
        None => set,
    })
}

/// Axis-aligned pixel rectangle, inclusive lower bounds and exclusive upper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl FaceRect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::Mask(format!(
                "degenerate face rectangle x:[{x0},{x1}) y:[{y0},{y1})"
            )));
        }
        Ok(FaceRect { x0, y0, x1, y1 })
    }

    pub fn full(height: usize, width: usize) -> Self {
        FaceRect {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    fn check_within(&self, height: usize, width: usize) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::Mask(format!("degenerate face rectangle {self:?}")));
        }
        if self.x1 > width || self.y1 > height {
            return Err(Error::Mask(format!(
                "face rectangle {self:?} exceeds {width}x{height} image"
            )));
        }
        Ok(())
    }
}

/// Unclamped real-valued rectangle around the landmarks, expanded by
/// `margin` times the box size on each side.
fn expanded_bounds(lm: &LandmarkSet, margin: f64) -> (f64, f64, f64, f64) {
    let (mut xmin, mut ymin) = (f64::INFINITY, f64::INFINITY);
    let (mut xmax, mut ymax) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &lm.points {
        xmin = xmin.min(x);
        ymin = ymin.min(y);
        xmax = xmax.max(x);
        ymax = ymax.max(y);
    }
    // a landmark at pixel coordinate 30 covers the pixel column [30, 31)
    let (x0, y0) = (xmin.floor(), ymin.floor());
    let (x1, y1) = (xmax.floor() + 1.0, ymax.floor() + 1.0);
    let mx = margin * (x1 - x0);
    let my = margin * (y1 - y0);
    // fractional expansions round toward the box interior
    ((x0 - mx).ceil(), (y0 - my).ceil(), (x1 + mx).floor(), (y1 + my).floor())
}

/// Bounding box of the landmarks grown by `margin` and clamped to the image.
/// `dims` is `(height, width)`.
pub fn face_rect(lm: &LandmarkSet, margin: f64, dims: (usize, usize)) -> Result<FaceRect> {
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::Mask(format!("invalid margin {margin}")));
    }
    let (height, width) = dims;
    let (x0, y0, x1, y1) = expanded_bounds(lm, margin);
    let clamp = |v: f64, hi: usize| v.clamp(0.0, hi as f64) as usize;
    FaceRect::new(
        clamp(x0, width),
        clamp(y0, height),
        clamp(x1, width),
        clamp(y1, height),
    )
}

/// Keeps pixels inside `rect` and blacks out the background.
pub fn apply_face_mask(img: &Image, rect: &FaceRect) -> Result<Image> {
    rect.check_within(img.height(), img.width())?;
    let mut out = img.clone();
    let c = img.channels();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if !rect.contains(y, x) {
                let i = img.index(y, x, 0);
                out.data_mut()[i..i + c].fill(0.0);
            }
        }
    }
    Ok(out)
}

/// Scalar weight raster selecting the face region during the merge.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendMask {
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl BlendMask {
    pub fn new(height: usize, width: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != height * width {
            return Err(Error::shape("facemask", height * width, weights.len()));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Mask("blend weights must lie in [0, 1]".into()));
        }
        Ok(BlendMask {
            height,
            width,
            weights,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        BlendMask::new(height, width, vec![value; height * width]).expect("valid constant mask")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.weights[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Single-channel image view of the weights.
    pub fn to_image(&self) -> Image {
        Image::new(self.height, self.width, 1, self.weights.clone())
            .expect("mask dimensions are nonzero")
    }
}

/// Weight 1 inside `rect` and 0 outside. A nonzero `feather` ramps the
/// outermost `feather` rings inside the rectangle linearly as
/// `(d + 1) / (feather + 1)` where `d` is the distance to the rectangle edge.
pub fn build_blend_mask(rect: &FaceRect, dims: (usize, usize), feather: usize) -> Result<BlendMask> {
    let (height, width) = dims;
    rect.check_within(height, width)?;
    if feather > 0 && 2 * feather >= rect.width().min(rect.height()) {
        return Err(Error::Mask(format!(
            "feather {feather} must be less than half the rectangle's smaller side {}",
            rect.width().min(rect.height())
        )));
    }
    let mut weights = vec![0.0; height * width];
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            let d = (x - rect.x0)
                .min(rect.x1 - 1 - x)
                .min(y - rect.y0)
                .min(rect.y1 - 1 - y);
            weights[y * width + x] = if d >= feather {
                1.0
            } else {
                (d + 1) as f64 / (feather + 1) as f64
            };
        }
    }
    BlendMask::new(height, width, weights)
}

/// `q = scale * R(angle) * p + (tx, ty)` in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub angle: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            angle: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    fn linear(&self) -> (f64, f64) {
        (self.scale * self.angle.cos(), self.scale * self.angle.sin())
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (a, b) = self.linear();
        (a * x - b * y + self.tx, b * x + a * y + self.ty)
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv = SimilarityTransform {
            scale: 1.0 / self.scale,
            angle: -self.angle,
            tx: 0.0,
            ty: 0.0,
        };
        let (tx, ty) = inv.apply((self.tx, self.ty));
        SimilarityTransform {
            tx: -tx,
            ty: -ty,
            ..inv
        }
    }

    /// Least-squares similarity mapping `src[i]` onto `dst[i]`.
    pub fn fit(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<Self> {
        assert_eq!(src.len(), dst.len());
        let n = src.len() as f64;
        let mean = |pts: &[(f64, f64)]| {
            let (sx, sy) = pts.iter().fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x, ay + y));
            (sx / n, sy / n)
        };
        let (px, py) = mean(src);
        let (qx, qy) = mean(dst);
        // complex least squares: a = sum(q' * conj(p')) / sum(|p'|^2)
        let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
        for (&(x, y), &(u, v)) in src.iter().zip(dst) {
            let (x, y, u, v) = (x - px, y - py, u - qx, v - qy);
            re += u * x + v * y;
            im += v * x - u * y;
            norm += x * x + y * y;
        }
        if norm <= 1e-12 {
            return Err(Error::Mask("degenerate alignment anchors".into()));
        }
        let (a, b) = (re / norm, im / norm);
        let scale = a.hypot(b);
        if scale <= 1e-12 {
            return Err(Error::Mask("degenerate alignment target".into()));
        }
        Ok(SimilarityTransform {
            scale,
            angle: b.atan2(a),
            tx: qx - (a * px - b * py),
            ty: qy - (b * px + a * py),
        })
    }
}

fn triangle_is_degenerate(p: &[(f64, f64); 3]) -> bool {
    let (ax, ay) = (p[1].0 - p[0].0, p[1].1 - p[0].1);
    let (bx, by) = (p[2].0 - p[0].0, p[2].1 - p[0].1);
    let cross = (ax * by - ay * bx).abs();
    let scale = (ax * ax + ay * ay).max(bx * bx + by * by);
    scale <= 1e-12 || cross <= 1e-9 * scale
}

/// Resamples `img` onto an `out_height x out_width` grid through `transform`
/// (source to output). Samples falling outside the source are black.
pub fn warp_similarity(
    img: &Image,
    transform: &SimilarityTransform,
    out_height: usize,
    out_width: usize,
) -> Result<Image> {
    let inv = transform.inverse();
    let c = img.channels();
    let (h, w) = (img.height() as f64, img.width() as f64);
    let mut out = Image::zeros(out_height, out_width, c);
    for v in 0..out_height {
        for u in 0..out_width {
            let (sx, sy) = inv.apply((u as f64, v as f64));
            if sx < -0.5 || sy < -0.5 || sx > w - 0.5 || sy > h - 0.5 {
                continue;
            }
            let sx = sx.clamp(0.0, w - 1.0);
            let sy = sy.clamp(0.0, h - 1.0);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..c {
                let top = img.get(y0, x0, ch) * (1.0 - fx) + img.get(y0, x1, ch) * fx;
                let bot = img.get(y1, x0, ch) * (1.0 - fx) + img.get(y1, x1, ch) * fx;
                out.set(v, u, ch, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(out)
}

/// Canonical anchor positions and output size for [`align_face`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignTemplate {
    pub anchors: [(f64, f64); 3],
    pub height: usize,
    pub width: usize,
}

/// Warps the face so its eye and mouth anchors land on the template.
/// The returned transform maps source pixels to aligned pixels; its inverse
/// maps the aligned result back at merge time.
pub fn align_face(
    img: &Image,
    lm: &LandmarkSet,
    template: &AlignTemplate,
) -> Result<(Image, SimilarityTransform)> {
    let anchors = lm.alignment_anchors()?;
    if triangle_is_degenerate(&anchors) {
        return Err(Error::Mask("degenerate alignment anchors (collinear or coincident)".into()));
    }
    if triangle_is_degenerate(&template.anchors) {
        return Err(Error::Mask("degenerate alignment template".into()));
    }
    let transform = SimilarityTransform::fit(&anchors, &template.anchors)?;
    let aligned = warp_similarity(img, &transform, template.height, template.width)?;
    Ok((aligned, transform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn three() -> LandmarkSet {
        LandmarkSet::new(vec![(10.0, 20.0), (30.0, 40.0), (20.0, 50.0)], LandmarkSchema::Generic)
            .unwrap()
    }

    #[test]
    fn parses_bare_and_tagged_files() {
        let lm = parse_landmarks("[[10,20],[30,40],[20,50]]").unwrap();
        assert_eq!(lm.len(), 3);
        assert_eq!(lm.schema, LandmarkSchema::Generic);

        let pts: Vec<String> = (0..68).map(|i| format!("[{},{}]", i, i % 7)).collect();
        let text = format!(r#"{{"schema":"68pt","points":[{}]}}"#, pts.join(","));
        let lm = parse_landmarks(&text).unwrap();
        assert_eq!(lm.schema, LandmarkSchema::SixtyEight);
        assert_eq!(lm.len(), 68);
    }

    #[test]
    fn landmark_errors() {
        let err = parse_landmarks("[[1,2],[3,4]]").unwrap_err();
        assert!(err.to_string().contains("insufficient landmarks"), "{err}");
        assert!(parse_landmarks("{not json").is_err());
        let err = parse_landmarks("[[1,2],[3,-4],[5,6]]").unwrap_err();
        assert!(err.to_string().contains("landmark 1"), "{err}");
        let lm = parse_landmarks("[[1,2],[3,4],[50,6]]").unwrap();
        let err = lm.validate_within(40, 40).unwrap_err();
        assert!(err.to_string().contains("landmark 2"), "{err}");
    }

    #[test]
    fn rect_without_margin() {
        let r = face_rect(&three(), 0.0, (100, 100)).unwrap();
        assert_eq!((r.x0, r.x1, r.y0, r.y1), (10, 31, 20, 51));
    }

    #[test]
    fn rect_with_half_margin() {
        // box is 21 x 31; expansion 10.5 and 15.5 per side, rounded inward
        let r = face_rect(&three(), 0.5, (100, 100)).unwrap();
        assert_eq!((r.x0, r.x1, r.y0, r.y1), (0, 41, 5, 66));
    }

    #[test]
    fn rect_clamps_at_corner() {
        let lm = LandmarkSet::new(vec![(97.0, 98.0), (99.0, 99.0), (98.0, 97.0)], LandmarkSchema::Generic)
            .unwrap();
        let r = face_rect(&lm, 1.0, (100, 100)).unwrap();
        assert_eq!((r.x1, r.y1), (100, 100));
        assert_eq!((r.x0, r.y0), (94, 94));
    }

    #[test]
    fn mask_counts() {
        let img = Image::filled(4, 4, 1, 0.5);
        let rect = FaceRect::new(1, 1, 3, 3).unwrap();
        let out = apply_face_mask(&img, &rect).unwrap();
        assert_eq!(out.data().iter().filter(|&&v| v != 0.0).count(), 4);
        let full = apply_face_mask(&img, &FaceRect::full(4, 4)).unwrap();
        assert_eq!(full, img);
        assert!(FaceRect::new(2, 1, 2, 3).is_err());
        assert!(apply_face_mask(&img, &FaceRect { x0: 0, y0: 0, x1: 5, y1: 2 }).is_err());
    }

    #[test]
    fn binary_blend_mask() {
        let rect = FaceRect::new(2, 3, 7, 9).unwrap();
        let m = build_blend_mask(&rect, (12, 10), 0).unwrap();
        assert_eq!(m.sum(), rect.area() as f64);
        let full = build_blend_mask(&FaceRect::full(5, 6), (5, 6), 0).unwrap();
        assert!(full.weights().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn feathered_blend_mask() {
        let rect = FaceRect::new(5, 5, 15, 15).unwrap();
        let m = build_blend_mask(&rect, (20, 20), 2).unwrap();
        assert!((m.get(5, 5) - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.get(6, 10) - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.get(14, 10) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.get(7, 7), 1.0);
        assert_eq!(m.get(4, 10), 0.0);
        let mut ring: Vec<f64> = m.weights().iter().copied().filter(|w| *w > 0.0 && *w < 1.0).collect();
        ring.sort_by(f64::total_cmp);
        ring.dedup();
        assert_eq!(ring.len(), 2);
        assert!(build_blend_mask(&rect, (20, 20), 5).is_err());
    }

    fn template() -> AlignTemplate {
        AlignTemplate {
            anchors: [(5.0, 6.0), (11.0, 6.0), (8.0, 12.0)],
            height: 16,
            width: 16,
        }
    }

    fn anchored(points: [(f64, f64); 3]) -> LandmarkSet {
        LandmarkSet::new(points.to_vec(), LandmarkSchema::Generic)
            .unwrap()
            .with_anchors(Anchors {
                left_eye: [points[0].0, points[0].1],
                right_eye: [points[1].0, points[1].1],
                mouth: [points[2].0, points[2].1],
            })
    }

    #[test]
    fn identity_alignment() {
        let t = template();
        let img = Image::new(16, 16, 1, (0..256).map(|v| v as f64 / 255.0).collect()).unwrap();
        let (out, tr) = align_face(&img, &anchored(t.anchors), &t).unwrap();
        assert!((tr.scale - 1.0).abs() < 1e-12 && tr.angle.abs() < 1e-12);
        assert!(tr.tx.abs() < 1e-9 && tr.ty.abs() < 1e-9);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn recovers_quarter_turn() {
        let t = template();
        // rotate the template anchors by +90 degrees about (20, 20)
        let rot = |(x, y): (f64, f64)| (20.0 - (y - 20.0), 20.0 + (x - 20.0));
        let anchors = [rot(t.anchors[0]), rot(t.anchors[1]), rot(t.anchors[2])];
        let img = Image::filled(40, 40, 1, 0.5);
        let (_, tr) = align_face(&img, &anchored(anchors), &t).unwrap();
        assert!((tr.angle + std::f64::consts::FRAC_PI_2).abs() < 1e-6, "{}", tr.angle);
        assert!((tr.scale - 1.0).abs() < 1e-9);
        let inv = tr.inverse();
        for (a, q) in anchors.iter().zip(t.anchors) {
            let back = inv.apply(q);
            assert!((back.0 - a.0).abs() < 0.5 && (back.1 - a.1).abs() < 0.5);
        }
    }

    #[test]
    fn coincident_anchors_rejected() {
        let img = Image::filled(20, 20, 1, 0.5);
        let lm = anchored([(5.0, 5.0), (5.0, 5.0), (9.0, 12.0)]);
        assert!(align_face(&img, &lm, &template()).is_err());
        let lm = anchored([(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
        assert!(align_face(&img, &lm, &template()).is_err());
        let generic = three();
        assert!(align_face(&img, &generic, &template()).is_err());
    }

    proptest! {
        #[test]
        fn mask_is_idempotent(x0 in 0usize..6, y0 in 0usize..6, w in 1usize..4, h in 1usize..4, v in 0.0f64..1.0) {
            let img = Image::filled(10, 10, 3, v);
            let rect = FaceRect::new(x0, y0, x0 + w, y0 + h).unwrap();
            let once = apply_face_mask(&img, &rect).unwrap();
            prop_assert_eq!(apply_face_mask(&once, &rect).unwrap(), once);
        }

        #[test]
        fn rect_is_translation_equivariant(
            pts in proptest::collection::vec((0.0f64..50.0, 0.0f64..50.0), 3..10),
            dx in 0i32..40, dy in 0i32..40, margin in 0.0f64..1.0,
        ) {
            let lm = LandmarkSet::new(pts.clone(), LandmarkSchema::Generic).unwrap();
            let shifted = LandmarkSet::new(
                pts.iter().map(|&(x, y)| (x + dx as f64, y + dy as f64)).collect(),
                LandmarkSchema::Generic,
            ).unwrap();
            let a = expanded_bounds(&lm, margin);
            let b = expanded_bounds(&shifted, margin);
            prop_assert_eq!((a.0 + dx as f64, a.1 + dy as f64, a.2 + dx as f64, a.3 + dy as f64), b);
        }

        #[test]
        fn alignment_round_trips_anchors(angle in -3.0f64..3.0, scale in 0.5f64..2.0, tx in 40.0f64..60.0, ty in 40.0f64..60.0) {
            let t = template();
            let fwd = SimilarityTransform { scale, angle, tx, ty };
            let anchors = [fwd.apply(t.anchors[0]), fwd.apply(t.anchors[1]), fwd.apply(t.anchors[2])];
            let img = Image::filled(8, 8, 1, 0.2);
            let (_, tr) = align_face(&img, &anchored(anchors), &t).unwrap();
            let inv = tr.inverse();
            for (a, q) in anchors.iter().zip(t.anchors) {
                let back = inv.apply(q);
                prop_assert!((back.0 - a.0).abs() < 0.5 && (back.1 - a.1).abs() < 0.5);
            }
        }
    }
}
