//! Dense floating-point rasters shared by every stage of the pipeline.
//!
//! Pixels are stored row-major with interleaved channels and intensities in
//! `[0, 1]`. Only gray (1 channel) and RGB (3 channels) images exist.

mod histogram;
mod io;
mod resize;

pub use histogram::{histogram_match, quantize_level, Histogram, BINS};
pub use io::{load_image, save_image};
pub use resize::{conform, resize_bilinear, resize_bilinear_adjoint};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial and channel dimensions of an [`Image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: Shape,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(height, width, channels);
        if height == 0 || width == 0 {
            return Err(Error::Image(format!("zero-dimension image {shape}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Image(format!(
                "unsupported channel count {channels} (expected 1 or 3)"
            )));
        }
        if data.len() != shape.len() {
            return Err(Error::shape("imagecore", shape.len(), data.len()));
        }
        Ok(Image { shape, data })
    }

    pub fn from_shape(shape: Shape, data: Vec<f64>) -> Result<Self> {
        Image::new(shape.height, shape.width, shape.channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
        .expect("filled image with valid dimensions")
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image::filled(height, width, channels, 0.0)
    }

    /// Builds an image from per-channel planes, each `height * width` long.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        let mut data = vec![0.0; height * width * channels];
        for (c, plane) in planes.iter().enumerate() {
            if plane.len() != height * width {
                return Err(Error::shape("imagecore", height * width, plane.len()));
            }
            for (i, v) in plane.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Image::new(height, width, channels, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// Copies channel `c` out as a contiguous `height * width` plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.shape.channels)
            .copied()
            .collect()
    }

    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.shape.channels).map(|c| self.plane(c)).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Element-wise combination of two images of identical shape.
    pub fn zip_with(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        if self.shape != other.shape {
            return Err(Error::shape("imagecore", self.shape, other.shape));
        }
        Ok(Image {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Replicates a gray image to three channels; RGB images are returned as is.
    pub fn to_rgb(&self) -> Image {
        if self.shape.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            shape: Shape::new(self.shape.height, self.shape.width, 3),
            data,
        }
    }

    /// Luminance `0.299 R + 0.587 G + 0.114 B`; gray images pass through.
    pub fn luminance(&self) -> Vec<f64> {
        if self.shape.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Root-mean-square difference over all samples of two equally shaped images.
pub fn rms_diff(a: &Image, b: &Image) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("imagecore", a.shape(), b.shape()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sum / a.data().len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions() {
        assert!(Image::new(0, 4, 1, vec![]).is_err());
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::new(2, 2, 3, vec![0.0; 11]).is_err());
    }

    #[test]
    fn planes_round_trip() {
        let data: Vec<f64> = (0..12).map(|v| v as f64 / 12.0).collect();
        let img = Image::new(2, 2, 3, data).unwrap();
        let back = Image::from_planes(2, 2, &img.planes()).unwrap();
        assert_eq!(img, back);
        assert_eq!(img.plane(1), vec![1.0 / 12.0, 4.0 / 12.0, 7.0 / 12.0, 10.0 / 12.0]);
    }

    #[test]
    fn luminance_weights() {
        let img = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(img.luminance(), vec![0.299]);
    }
}
