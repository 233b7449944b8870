//! Run manifests: everything needed to repeat one de-identification run.

use std::path::{Path, PathBuf};

use anyhow::Context;
use gmfim_core::facemask::FaceRect;
use gmfim_core::latentopt::TraceEntry;
use gmfim_core::metrics::MetricReport;
use gmfim_core::model::ModelSpec;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::pipeline::{DeidOutcome, Timings};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestInputs {
    pub image: PathBuf,
    pub landmarks: Option<PathBuf>,
    pub premasked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestOutputs {
    pub image: PathBuf,
    pub trace: PathBuf,
    pub manifest: PathBuf,
}

/// Fixed conventions of this build that affect results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub blend_mask_selects: String,
    pub filter_sigmas: Vec<f64>,
    pub ssim: String,
    pub tensor_layout: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub initial: Option<TraceEntry>,
    pub best: TraceEntry,
    pub iterations: usize,
    pub warm_start_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub image_id: String,
    pub inputs: ManifestInputs,
    pub outputs: ManifestOutputs,
    pub config: Config,
    pub init_seed: u64,
    pub models: Vec<ModelSpec>,
    pub conventions: Conventions,
    pub rect: FaceRect,
    pub loss: LossSummary,
    pub metrics: MetricReport,
    pub identity_distance: f64,
    pub timings: Timings,
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        image_id: String,
        inputs: ManifestInputs,
        outputs: ManifestOutputs,
        config: &Config,
        models: &[ModelSpec],
        filter_sigmas: Vec<f64>,
        outcome: &DeidOutcome,
    ) -> Self {
        RunManifest {
            tool: "gmfim".into(),
            version: TOOL_VERSION.into(),
            command: "deidentify".into(),
            image_id,
            inputs,
            outputs,
            config: config.clone(),
            init_seed: outcome.init_seed,
            models: models.to_vec(),
            conventions: Conventions {
                blend_mask_selects: "generated".into(),
                filter_sigmas,
                ssim: "global, luminance scaled to 0..255".into(),
                tensor_layout: "HWC, row-major, values in [0, 1]".into(),
            },
            rect: outcome.rect,
            loss: LossSummary {
                initial: outcome.opt.trace.first().copied(),
                best: outcome.opt.best,
                iterations: outcome.opt.iterations,
                warm_start_iterations: outcome.opt.warm_start_trace.len(),
            },
            metrics: outcome.metrics,
            identity_distance: outcome.identity_distance,
            timings: outcome.timings,
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }
}
