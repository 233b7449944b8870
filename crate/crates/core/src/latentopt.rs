//! Perceptual and de-identification losses and the fixed-step latent descent.
//!
//! The objective for a latent `z` with generated image `x' = G(z)` and target
//! (masked input) image `x` is
//!
//! ```text
//! L_per   =  || F_P(x)  - F_P(x')  ||
//! L_did   = -|| F_id(x) - F_id(x') ||
//! L_final = lambda_per * L_per + lambda_did * L_did
//! ```
//!
//! Each run optimizes a single image, so the expectations over image pairs
//! reduce to the single-pair value.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_bilinear, resize_bilinear_adjoint, Image};
use crate::model::{Extractor, FeatureVector, LatentVector, ModelSet, Role};

/// Smoothing of the feature-distance norm in gradients:
/// `d / sqrt(|d|^2 + eps^2)` stays finite at zero distance.
pub const NORM_EPS: f64 = 1e-8;

pub const DEFAULT_LAMBDA_PER: f64 = 1.0 / 8800.0;
pub const DEFAULT_LAMBDA_DID: f64 = 1.0 / 12.0;
pub const DEFAULT_ITERATIONS: usize = 800;
pub const DEFAULT_LEARNING_RATE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_per: f64,
    pub lambda_did: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_per: DEFAULT_LAMBDA_PER,
            lambda_did: DEFAULT_LAMBDA_DID,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_per: f64, lambda_did: f64) -> Result<Self> {
        let w = LossWeights {
            lambda_per,
            lambda_did,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_per) || !ok(self.lambda_did) {
            return Err(Error::Optimize(format!(
                "loss weights must be finite and non-negative, got ({}, {})",
                self.lambda_per, self.lambda_did
            )));
        }
        if self.lambda_per == 0.0 && self.lambda_did == 0.0 {
            return Err(Error::Optimize("loss weights cannot both be zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum InitStrategy {
    /// Standard normal draw from a seeded ChaCha8 stream.
    Normal { seed: u64 },
    /// Normal draw followed by `iterations` perceptual-only steps.
    WarmStart { seed: u64, iterations: usize },
    Zeros,
    Given { values: Vec<f64> },
}

impl Default for InitStrategy {
    fn default() -> Self {
        InitStrategy::Normal { seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub init: InitStrategy,
    #[serde(default = "default_true")]
    pub record_trace: bool,
}

fn default_true() -> bool {
    true
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
            init: InitStrategy::default(),
            record_trace: true,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Optimize("iterations must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Optimize(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Loss values of one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub l_per: f64,
    pub l_did: f64,
    pub l_final: f64,
}

#[derive(Debug, Clone)]
pub struct OptResult {
    /// Iterate with the lowest final loss.
    pub latent: LatentVector,
    pub image: Image,
    pub best: TraceEntry,
    /// One entry per iterate `z_0 .. z_{T-1}`, empty when recording is off.
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub warm_start_trace: Vec<TraceEntry>,
}

fn check_features(a: &FeatureVector, b: &FeatureVector, role: Role) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape("latentopt feature length", a.len(), b.len()));
    }
    if a.role != role || b.role != role {
        return Err(Error::Optimize(format!(
            "expected {role} features, got {} and {}",
            a.role, b.role
        )));
    }
    Ok(())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn perceptual_loss(f_x: &FeatureVector, f_xp: &FeatureVector) -> Result<f64> {
    check_features(f_x, f_xp, Role::Perceptual)?;
    Ok(distance(&f_x.values, &f_xp.values))
}

pub fn deident_loss(f_x: &FeatureVector, f_xp: &FeatureVector) -> Result<f64> {
    check_features(f_x, f_xp, Role::Identity)?;
    Ok(-distance(&f_x.values, &f_xp.values))
}

pub fn total_loss(l_per: f64, l_did: f64, w: &LossWeights) -> f64 {
    w.lambda_per * l_per + w.lambda_did * l_did
}

/// Target-side state of the objective: the masked input image and its
/// features under both extractors, computed once per run.
pub struct Objective<'a> {
    models: &'a ModelSet,
    weights: LossWeights,
    target_perceptual: Vec<f64>,
    target_identity: Vec<f64>,
}

struct Branch {
    input: Image,
    features: Vec<f64>,
}

fn run_extractor(extractor: &Extractor, img: &Image) -> Result<Branch> {
    let shape = extractor.input_shape();
    let input = resize_bilinear(img, shape.height, shape.width)?;
    let features = extractor.forward(&input)?.values;
    Ok(Branch { input, features })
}

impl<'a> Objective<'a> {
    /// `target` must have the generator's output shape.
    pub fn new(target: &Image, models: &'a ModelSet, weights: LossWeights) -> Result<Self> {
        weights.validate()?;
        let out = models.generator.output_shape();
        if target.shape() != out {
            return Err(Error::shape("latentopt target image", out, target.shape()));
        }
        for e in [&models.perceptual, &models.identity] {
            if e.input_shape().channels != out.channels {
                return Err(Error::shape(
                    "latentopt extractor channels",
                    out.channels,
                    e.input_shape().channels,
                ));
            }
        }
        if models.perceptual.role() != Role::Perceptual || models.identity.role() != Role::Identity {
            return Err(Error::Optimize("extractor roles are swapped or invalid".into()));
        }
        Ok(Objective {
            models,
            weights,
            target_perceptual: run_extractor(&models.perceptual, target)?.features,
            target_identity: run_extractor(&models.identity, target)?.features,
        })
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn with_weights(&self, weights: LossWeights) -> Result<Objective<'a>> {
        weights.validate()?;
        Ok(Objective {
            models: self.models,
            weights,
            target_perceptual: self.target_perceptual.clone(),
            target_identity: self.target_identity.clone(),
        })
    }

    fn entry(&self, iteration: usize, l_per: f64, l_did: f64) -> TraceEntry {
        TraceEntry {
            iteration,
            l_per,
            l_did,
            l_final: total_loss(l_per, l_did, &self.weights),
        }
    }

    /// Loss values at `z` together with the generated image.
    pub fn evaluate(&self, z: &LatentVector) -> Result<(TraceEntry, Image)> {
        let img = self.models.generator.forward(z)?;
        let p = run_extractor(&self.models.perceptual, &img)?;
        let id = run_extractor(&self.models.identity, &img)?;
        let l_per = distance(&self.target_perceptual, &p.features);
        let l_did = -distance(&self.target_identity, &id.features);
        Ok((self.entry(0, l_per, l_did), img))
    }

    /// Image-space gradient of `scale * |F(x') - F(x)|` through one extractor.
    fn branch_gradient(
        &self,
        extractor: &Extractor,
        branch: &Branch,
        target: &[f64],
        scale: f64,
        generated: &Image,
    ) -> Result<(f64, Image)> {
        let diff: Vec<f64> = branch
            .features
            .iter()
            .zip(target)
            .map(|(a, b)| a - b)
            .collect();
        let sq: f64 = diff.iter().map(|d| d * d).sum();
        let norm = sq.sqrt();
        let smooth = (sq + NORM_EPS * NORM_EPS).sqrt();
        let cot: Vec<f64> = diff.iter().map(|d| scale * d / smooth).collect();
        let g_input = extractor.vjp(&branch.input, &cot)?;
        Ok((norm, resize_bilinear_adjoint(&g_input, generated.shape())?))
    }

    /// `dL_final/dz`, the loss values at `z` and the generated image.
    pub fn gradient(&self, z: &LatentVector) -> Result<(Vec<f64>, TraceEntry, Image)> {
        let img = self.models.generator.forward(z)?;
        let w = self.weights;
        let p = run_extractor(&self.models.perceptual, &img)?;
        let id = run_extractor(&self.models.identity, &img)?;
        let mut g_img = Image::zeros(img.height(), img.width(), img.channels());
        let l_per = if w.lambda_per != 0.0 {
            let (d, g) = self.branch_gradient(&self.models.perceptual, &p, &self.target_perceptual, w.lambda_per, &img)?;
            g_img = g_img.zip_with(&g, |a, b| a + b)?;
            d
        } else {
            distance(&self.target_perceptual, &p.features)
        };
        let l_did = if w.lambda_did != 0.0 {
            let (d, g) = self.branch_gradient(&self.models.identity, &id, &self.target_identity, -w.lambda_did, &img)?;
            g_img = g_img.zip_with(&g, |a, b| a + b)?;
            -d
        } else {
            -distance(&self.target_identity, &id.features)
        };
        let grad = self.models.generator.vjp(z, &g_img)?;
        Ok((grad, self.entry(0, l_per, l_did), img))
    }
}

/// `dL_final/dz` at `z` for the given target and weights.
pub fn loss_gradient(
    z: &LatentVector,
    target_masked_image: &Image,
    models: &ModelSet,
    w: &LossWeights,
) -> Result<Vec<f64>> {
    Objective::new(target_masked_image, models, *w)?
        .gradient(z)
        .map(|(g, _, _)| g)
}

fn initial_latent(init: &InitStrategy, dim: usize) -> Result<LatentVector> {
    let normal = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LatentVector((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
    };
    Ok(match init {
        InitStrategy::Normal { seed } | InitStrategy::WarmStart { seed, .. } => normal(*seed),
        InitStrategy::Zeros => LatentVector::zeros(dim),
        InitStrategy::Given { values } => {
            if values.len() != dim {
                return Err(Error::shape("latentopt initial latent", dim, values.len()));
            }
            LatentVector(values.clone())
        }
    })
}

struct Descent {
    best: TraceEntry,
    best_latent: LatentVector,
    best_image: Image,
    trace: Vec<TraceEntry>,
}

fn descend(
    objective: &Objective<'_>,
    start: LatentVector,
    iterations: usize,
    learning_rate: f64,
    record: bool,
) -> Result<Descent> {
    let mut z = start;
    let mut trace = Vec::with_capacity(if record { iterations } else { 0 });
    let mut best: Option<(TraceEntry, LatentVector, Image)> = None;
    for t in 0..iterations {
        let (grad, mut entry, img) = objective.gradient(&z)?;
        entry.iteration = t;
        if !entry.l_final.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            trace.push(entry);
            return Err(Error::Diverged {
                iteration: t,
                trace,
            });
        }
        if record {
            trace.push(entry);
        }
        if best.as_ref().is_none_or(|(b, _, _)| entry.l_final < b.l_final) {
            best = Some((entry, z.clone(), img));
        }
        for (zi, gi) in z.0.iter_mut().zip(&grad) {
            *zi -= learning_rate * gi;
        }
    }
    let (best, best_latent, best_image) = best.expect("at least one iteration");
    Ok(Descent {
        best,
        best_latent,
        best_image,
        trace,
    })
}

/// Plain fixed-step gradient descent `z <- z - lr * grad L_final(z)`.
///
/// Returns the iterate with the lowest final loss among those evaluated.
pub fn optimize(
    target_masked_image: &Image,
    models: &ModelSet,
    w: &LossWeights,
    cfg: &OptConfig,
) -> Result<OptResult> {
    cfg.validate()?;
    let objective = Objective::new(target_masked_image, models, *w)?;
    let mut z = initial_latent(&cfg.init, models.generator.latent_dim())?;
    let mut warm_start_trace = Vec::new();
    if let InitStrategy::WarmStart { iterations, .. } = cfg.init {
        if iterations > 0 {
            let inversion = objective.with_weights(LossWeights {
                lambda_per: if w.lambda_per > 0.0 { w.lambda_per } else { 1.0 },
                lambda_did: 0.0,
            })?;
            let warm = descend(&inversion, z, iterations, cfg.learning_rate, cfg.record_trace)?;
            warm_start_trace = warm.trace;
            z = warm.best_latent;
        }
    }
    let run = descend(&objective, z, cfg.iterations, cfg.learning_rate, cfg.record_trace)?;
    Ok(OptResult {
        latent: run.best_latent,
        image: run.best_image,
        best: run.best,
        trace: run.trace,
        iterations: cfg.iterations,
        warm_start_trace,
    })
}

/// Writes a loss trace as `iteration,l_per,l_did,l_final` CSV.
pub fn write_trace_csv(trace: &[TraceEntry], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "iteration,l_per,l_did,l_final")?;
    for e in trace {
        writeln!(out, "{},{:e},{:e},{:e}", e.iteration, e.l_per, e.l_did, e.l_final)?;
    }
    Ok(())
}
