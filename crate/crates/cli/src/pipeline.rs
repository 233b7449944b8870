//! One image through mask, latent optimization and merge, plus the
//! lambda sweep built on it.

use std::time::Instant;

use anyhow::Context;
use gmfim_core::blend::{merge_and_match_with, FilterBank, MaskRole};
use gmfim_core::facemask::{apply_face_mask, build_blend_mask, face_rect, FaceRect, LandmarkSet};
use gmfim_core::image::{conform, Image};
use gmfim_core::latentopt::{optimize, OptResult};
use gmfim_core::metrics::{report, MetricReport, SsimConstants, SsimMode};
use gmfim_core::model::{Extractor, ModelSet, ToyConfig};
use gmfim_core::synth::synth_face;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub mask_ms: f64,
    pub optimize_ms: f64,
    pub blend_ms: f64,
    pub metrics_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct DeidOutcome {
    pub output: Image,
    /// Generator output brought to the input dimensions, before merging.
    pub generated: Image,
    pub rect: FaceRect,
    pub init_seed: u64,
    pub opt: OptResult,
    pub metrics: MetricReport,
    pub identity_distance: f64,
    pub timings: Timings,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Euclidean distance between identity features of two images.
pub fn identity_distance(extractor: &Extractor, a: &Image, b: &Image) -> anyhow::Result<f64> {
    let shape = extractor.input_shape();
    let fa = extractor.forward(&conform(a, shape)?)?;
    let fb = extractor.forward(&conform(b, shape)?)?;
    Ok(fa
        .values
        .iter()
        .zip(&fb.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Runs the pipeline with the latent seed derived from `image_id`.
pub fn deidentify_image(
    original: &Image,
    landmarks: Option<&LandmarkSet>,
    image_id: &str,
    models: &ModelSet,
    cfg: &Config,
) -> anyhow::Result<DeidOutcome> {
    deidentify_with_seed(original, landmarks, cfg.optimize.seed_for(image_id), models, cfg)
}

/// Runs the pipeline; without landmarks the input is taken as already masked
/// and the whole frame is the face region.
pub fn deidentify_with_seed(
    original: &Image,
    landmarks: Option<&LandmarkSet>,
    init_seed: u64,
    models: &ModelSet,
    cfg: &Config,
) -> anyhow::Result<DeidOutcome> {
    let start = Instant::now();
    let dims = (original.height(), original.width());
    let (rect, masked) = match landmarks {
        Some(lm) => {
            lm.validate_within(original.width(), original.height())?;
            let rect = face_rect(lm, cfg.mask.margin, dims)?;
            (rect, apply_face_mask(original, &rect)?)
        }
        None => (FaceRect::full(dims.0, dims.1), original.clone()),
    };
    let target = conform(&masked, models.generator.output_shape())?;
    let mask_ms = ms(start);

    let t = Instant::now();
    let opt = optimize(
        &target,
        models,
        &cfg.optimize.weights()?,
        &cfg.optimize.opt_config(init_seed),
    )?;
    let optimize_ms = ms(t);

    let t = Instant::now();
    let generated = conform(&opt.image, original.shape())?;
    let blend_mask = build_blend_mask(&rect, dims, cfg.mask.feather)?;
    let bank = FilterBank::doubling(cfg.blend.levels)?;
    let output = merge_and_match_with(
        original,
        &generated,
        &blend_mask,
        &bank,
        MaskRole::Generated,
        cfg.blend.match_histogram,
    )?;
    let blend_ms = ms(t);

    let t = Instant::now();
    let metrics = report(original, &output, &SsimConstants::default(), SsimMode::Global)?;
    let identity_distance = identity_distance(&models.identity, original, &output)?;
    let metrics_ms = ms(t);

    Ok(DeidOutcome {
        output,
        generated,
        rect,
        init_seed,
        opt,
        metrics,
        identity_distance,
        timings: Timings {
            mask_ms,
            optimize_ms,
            blend_ms,
            metrics_ms,
            total_ms: ms(start),
        },
    })
}

/// One image of a sweep together with the models and seed it runs with.
#[derive(Clone)]
pub struct SweepSample {
    pub id: String,
    pub subject_id: String,
    pub image: Image,
    pub landmarks: Option<LandmarkSet>,
    pub models: ModelSet,
    pub seed: u64,
}

/// Independent toy pipelines: pipeline `i` uses models seeded with
/// `base_seed + i`, a synthetic face of subject `i` and latent seed
/// `base_seed + i`.
pub fn synthetic_samples(count: usize, size: usize, base_seed: u64, toy: &ToyConfig) -> anyhow::Result<Vec<SweepSample>> {
    (0..count as u64)
        .map(|i| {
            let seed = base_seed.wrapping_add(i);
            let (image, landmarks) = synth_face(size, size, seed, 0)?;
            Ok(SweepSample {
                id: format!("pipeline{i}"),
                subject_id: format!("s{seed}"),
                image,
                landmarks: Some(landmarks),
                models: toy.clone().with_seed(seed).build()?,
                seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_did: f64,
    pub mean_ssim: f64,
    pub identity_feature_distance: f64,
    pub asr: Option<f64>,
    pub samples: usize,
}

pub struct SweepPoint {
    pub row: SweepRow,
    pub outcomes: Vec<DeidOutcome>,
}

/// Runs every sample at every `lambda_did`, with all other settings from
/// `cfg`. Work items run on the current rayon pool.
pub fn sweep_lambda(samples: &[SweepSample], lambdas: &[f64], cfg: &Config) -> anyhow::Result<Vec<SweepPoint>> {
    anyhow::ensure!(!samples.is_empty(), "sweep needs at least one sample");
    anyhow::ensure!(!lambdas.is_empty(), "sweep needs at least one lambda_did value");
    let configs: Vec<Config> = lambdas
        .iter()
        .map(|&l| {
            let mut c = cfg.clone();
            c.optimize.lambda_did = l;
            c.validate().map(|_| c)
        })
        .collect::<anyhow::Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..lambdas.len())
        .flat_map(|l| (0..samples.len()).map(move |s| (l, s)))
        .collect();
    let results: Vec<DeidOutcome> = jobs
        .par_iter()
        .map(|&(l, s)| {
            let sample = &samples[s];
            deidentify_with_seed(
                &sample.image,
                sample.landmarks.as_ref(),
                sample.seed,
                &sample.models,
                &configs[l],
            )
            .with_context(|| format!("{} at lambda_did {}", sample.id, lambdas[l]))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut results = results.into_iter();
    Ok(lambdas
        .iter()
        .map(|&lambda_did| {
            let outcomes: Vec<DeidOutcome> = results.by_ref().take(samples.len()).collect();
            let n = outcomes.len() as f64;
            SweepPoint {
                row: SweepRow {
                    lambda_did,
                    mean_ssim: outcomes.iter().map(|o| o.metrics.ssim).sum::<f64>() / n,
                    identity_feature_distance: outcomes.iter().map(|o| o.identity_distance).sum::<f64>() / n,
                    asr: None,
                    samples: outcomes.len(),
                },
                outcomes,
            }
        })
        .collect())
}
