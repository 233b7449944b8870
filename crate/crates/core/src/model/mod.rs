//! Pluggable differentiable models.
//!
//! A model is anything that can evaluate a forward map on a flat tensor and
//! pull a cotangent back through it (a vector-Jacobian product). Generators
//! map latent vectors to images; extractors map images to feature vectors.
//! The engine never looks inside a model, so a seeded toy network and a
//! pretrained network served over a pipe are interchangeable.

mod toy;

pub use toy::{Lcg, ToyModel};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Perceptual,
    Identity,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Generator => "generator",
            Role::Perceptual => "perceptual",
            Role::Identity => "identity",
        })
    }
}

/// Shape contract of a model. Toy models also carry their weight seed and
/// architecture knobs; remote models report theirs during the handshake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub role: Role,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
}

pub const DEFAULT_HIDDEN: usize = 32;

impl ModelSpec {
    pub fn toy_generator(latent_dim: usize, image: Shape, seed: u64) -> Self {
        ModelSpec {
            role: Role::Generator,
            input_shape: vec![latent_dim],
            output_shape: image.dims().to_vec(),
            latent_dim: Some(latent_dim),
            seed: Some(seed),
            hidden: None,
            gain: None,
        }
    }

    pub fn toy_extractor(role: Role, image: Shape, features: usize, seed: u64) -> Self {
        ModelSpec {
            role,
            input_shape: image.dims().to_vec(),
            output_shape: vec![features],
            latent_dim: None,
            seed: Some(seed),
            hidden: None,
            gain: None,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = Some(hidden);
        self
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = Some(gain);
        self
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }

    fn image_shape(dims: &[usize]) -> Option<Shape> {
        match *dims {
            [h, w, c] if h > 0 && w > 0 && (c == 1 || c == 3) => Some(Shape::new(h, w, c)),
            _ => None,
        }
    }

    /// Image shape a generator produces or an extractor consumes.
    pub fn image(&self) -> Result<Shape> {
        let dims = match self.role {
            Role::Generator => &self.output_shape,
            _ => &self.input_shape,
        };
        ModelSpec::image_shape(dims).ok_or_else(|| {
            Error::Model(format!(
                "{} spec has invalid image shape {dims:?} (expected [h, w, 1|3])",
                self.role
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.image()?;
        match self.role {
            Role::Generator => {
                let [d] = self.input_shape[..] else {
                    return Err(Error::Model(format!(
                        "generator input must be a latent vector, got {:?}",
                        self.input_shape
                    )));
                };
                if d == 0 {
                    return Err(Error::Model("latent dimension must be positive".into()));
                }
                if self.latent_dim.is_some_and(|l| l != d) {
                    return Err(Error::Model(format!(
                        "latent_dim {:?} disagrees with input shape {:?}",
                        self.latent_dim, self.input_shape
                    )));
                }
            }
            Role::Perceptual | Role::Identity => {
                if !matches!(self.output_shape[..], [k] if k > 0) {
                    return Err(Error::Model(format!(
                        "{} extractor output must be a nonempty vector, got {:?}",
                        self.role, self.output_shape
                    )));
                }
            }
        }
        if self.hidden == Some(0) {
            return Err(Error::Model("hidden width must be positive".into()));
        }
        if let Some(g) = self.gain {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::Model(format!("gain must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

/// A differentiable map between flat `f64` tensors.
///
/// Implementations must be pure: repeated calls with equal inputs return
/// equal outputs, and calls may run concurrently.
pub trait DiffModel: Send + Sync {
    fn spec(&self) -> &ModelSpec;

    fn forward(&self, input: &[f64]) -> Result<Vec<f64>>;

    /// `J(input)^T * cotangent`.
    fn vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>>;
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::shape(context, expected, found));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn zeros(dim: usize) -> Self {
        LatentVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub role: Role,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Latent-to-image model.
#[derive(Clone)]
pub struct Generator {
    model: Arc<dyn DiffModel>,
    shape: Shape,
}

impl Generator {
    pub fn new(model: Arc<dyn DiffModel>) -> Result<Self> {
        let spec = model.spec();
        if spec.role != Role::Generator {
            return Err(Error::Model(format!("expected a generator, got {}", spec.role)));
        }
        spec.validate()?;
        let shape = spec.image()?;
        Ok(Generator { model, shape })
    }

    pub fn toy(spec: ModelSpec) -> Result<Self> {
        Generator::new(Arc::new(ToyModel::new(spec)?))
    }

    pub fn spec(&self) -> &ModelSpec {
        self.model.spec()
    }

    pub fn latent_dim(&self) -> usize {
        self.model.spec().input_len()
    }

    pub fn output_shape(&self) -> Shape {
        self.shape
    }

    pub fn forward(&self, z: &LatentVector) -> Result<Image> {
        check_len("diffmodel generator latent", self.latent_dim(), z.dim())?;
        Image::from_shape(self.shape, self.model.forward(z.values())?)
    }

    pub fn vjp(&self, z: &LatentVector, cotangent: &Image) -> Result<Vec<f64>> {
        check_len("diffmodel generator latent", self.latent_dim(), z.dim())?;
        if cotangent.shape() != self.shape {
            return Err(Error::shape("diffmodel generator cotangent", self.shape, cotangent.shape()));
        }
        self.model.vjp(z.values(), cotangent.data())
    }
}

/// Image-to-feature model (perceptual or identity).
#[derive(Clone)]
pub struct Extractor {
    model: Arc<dyn DiffModel>,
    shape: Shape,
}

impl Extractor {
    pub fn new(model: Arc<dyn DiffModel>) -> Result<Self> {
        let spec = model.spec();
        if spec.role == Role::Generator {
            return Err(Error::Model("expected an extractor, got a generator".into()));
        }
        spec.validate()?;
        let shape = spec.image()?;
        Ok(Extractor { model, shape })
    }

    pub fn toy(spec: ModelSpec) -> Result<Self> {
        Extractor::new(Arc::new(ToyModel::new(spec)?))
    }

    pub fn spec(&self) -> &ModelSpec {
        self.model.spec()
    }

    pub fn role(&self) -> Role {
        self.model.spec().role
    }

    pub fn input_shape(&self) -> Shape {
        self.shape
    }

    pub fn feature_len(&self) -> usize {
        self.model.spec().output_len()
    }

    pub fn forward(&self, img: &Image) -> Result<FeatureVector> {
        if img.shape() != self.shape {
            return Err(Error::shape("diffmodel extractor input", self.shape, img.shape()));
        }
        Ok(FeatureVector {
            values: self.model.forward(img.data())?,
            role: self.role(),
        })
    }

    pub fn vjp(&self, img: &Image, cotangent: &[f64]) -> Result<Image> {
        if img.shape() != self.shape {
            return Err(Error::shape("diffmodel extractor input", self.shape, img.shape()));
        }
        check_len("diffmodel extractor cotangent", self.feature_len(), cotangent.len())?;
        Image::from_shape(self.shape, self.model.vjp(img.data(), cotangent)?)
    }
}

/// The three models one optimization run needs.
#[derive(Clone)]
pub struct ModelSet {
    pub generator: Generator,
    pub perceptual: Extractor,
    pub identity: Extractor,
}

impl ModelSet {
    pub fn specs(&self) -> [ModelSpec; 3] {
        [
            self.generator.spec().clone(),
            self.perceptual.spec().clone(),
            self.identity.spec().clone(),
        ]
    }

    /// Seeded toy models sharing one image shape.
    pub fn toy(latent_dim: usize, image: Shape, features: usize, seed: u64) -> Result<Self> {
        Ok(ModelSet {
            generator: Generator::toy(ModelSpec::toy_generator(latent_dim, image, seed))?,
            perceptual: Extractor::toy(ModelSpec::toy_extractor(
                Role::Perceptual,
                image,
                features,
                seed.wrapping_add(1),
            ))?,
            identity: Extractor::toy(ModelSpec::toy_extractor(
                Role::Identity,
                image,
                features,
                seed.wrapping_add(2),
            ))?,
        })
    }
}

/// Architecture knobs of one toy extractor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyExtractorConfig {
    /// Feature length; 0 means the flattened input length.
    pub features: usize,
    pub hidden: usize,
    pub gain: f64,
}

impl Default for ToyExtractorConfig {
    fn default() -> Self {
        ToyExtractorConfig {
            features: 16,
            hidden: DEFAULT_HIDDEN,
            gain: 1.0,
        }
    }
}

/// A complete toy model set.
///
/// The default perceptual extractor is as wide as its input and has output
/// gain 1000, so its feature distances track pixel distances and their
/// magnitude is in the range the default perceptual weight of 1/8800 is
/// meant for. The identity extractor has gain 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub latent_dim: usize,
    /// Generated image shape `[h, w, c]`; extractors consume the same shape.
    pub image: [usize; 3],
    pub seed: u64,
    pub generator_hidden: usize,
    pub generator_gain: f64,
    pub perceptual: ToyExtractorConfig,
    pub identity: ToyExtractorConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            latent_dim: 16,
            image: [8, 8, 3],
            seed: 0,
            generator_hidden: DEFAULT_HIDDEN,
            generator_gain: 1.0,
            perceptual: ToyExtractorConfig {
                features: 0,
                hidden: 256,
                gain: 1000.0,
            },
            identity: ToyExtractorConfig {
                features: 16,
                hidden: DEFAULT_HIDDEN,
                gain: 3.0,
            },
        }
    }
}

impl ToyConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn shape(&self) -> Shape {
        let [h, w, c] = self.image;
        Shape::new(h, w, c)
    }

    fn extractor(&self, role: Role, cfg: &ToyExtractorConfig, seed: u64) -> Result<Extractor> {
        let shape = self.shape();
        let features = match cfg.features {
            0 => shape.len(),
            n => n,
        };
        Extractor::toy(
            ModelSpec::toy_extractor(role, shape, features, seed)
                .with_hidden(cfg.hidden)
                .with_gain(cfg.gain),
        )
    }

    /// Generator with `seed`, perceptual extractor with `seed + 1` and
    /// identity extractor with `seed + 2`.
    pub fn build(&self) -> Result<ModelSet> {
        let generator = ModelSpec::toy_generator(self.latent_dim, self.shape(), self.seed)
            .with_hidden(self.generator_hidden)
            .with_gain(self.generator_gain);
        Ok(ModelSet {
            generator: Generator::toy(generator)?,
            perceptual: self.extractor(Role::Perceptual, &self.perceptual, self.seed.wrapping_add(1))?,
            identity: self.extractor(Role::Identity, &self.identity, self.seed.wrapping_add(2))?,
        })
    }
}
