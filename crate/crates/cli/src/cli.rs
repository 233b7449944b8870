//! Command-line definitions and subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gmfim_core::blend::{merge_and_match_with, merge_literal, FilterBank, MaskRole};
use gmfim_core::eval::{
    calibrate_threshold, extract_dataset, genuine_pairs, identification_asr, impostor_scores, train_identifier,
    Comparator, ExtractionFailure, FeatureDataset, FeatureEntry, Manifest,
};
use gmfim_core::facemask::{apply_face_mask, build_blend_mask, face_rect, load_landmarks, BlendMask, LandmarkSet};
use gmfim_core::image::{conform, load_image, save_image, Image};
use gmfim_core::latentopt::write_trace_csv;
use gmfim_core::metrics::{report, MetricReport, SsimConstants, SsimMode};
use gmfim_core::model::ModelSpec;
use gmfim_core::synth::synth_face;
use serde::Serialize;

use crate::config::{Config, InitKind};
use crate::manifest::{ManifestInputs, ManifestOutputs, RunManifest};
use crate::models::{build_identity, build_models};
use crate::pipeline::{deidentify_image, sweep_lambda, synthetic_samples, SweepRow, SweepSample};

/// Error caused by how the tool was invoked; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

/// 2 for usage errors, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        2
    } else {
        1
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gmfim",
    version,
    about = "Mask-guided face de-identification by latent optimization",
    after_help = "Exit status: 0 success, 1 runtime failure, 2 usage error.\n\
                  Configuration: defaults < --config file < GMFIM_SECTION__KEY environment variables \
                  < --set section.key=value < dedicated flags."
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set optimize.iterations=200`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mask, optimize and merge one image or a directory of images.
    Deidentify(DeidentifyArgs),
    /// Image quality of one image against another.
    Metrics(MetricsArgs),
    /// Attack success rate of protected images against a recognizer.
    Evaluate(EvaluateArgs),
    /// Quality and identity distance across de-identification weights.
    SweepLambda(SweepArgs),
    /// Black out everything outside the face rectangle.
    Mask(MaskArgs),
    /// Merge a generated face into an original image.
    Merge(MergeArgs),
    /// Write a synthetic face dataset with landmarks and manifests.
    Synth(SynthArgs),
    /// Print the resolved configuration as TOML.
    Config,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SummaryFormat {
    Text,
    Json,
    Csv,
}

/// Optimization flags shared by `deidentify` and `sweep-lambda`.
#[derive(Debug, Clone, Default, Args)]
pub struct OptFlags {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, value_name = "LR")]
    pub learning_rate: Option<f64>,
    #[arg(long, value_parser = parse_number)]
    pub lambda_per: Option<f64>,
    /// Base latent seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Normal,
    WarmStart,
    Zeros,
}

impl OptFlags {
    fn apply(&self, cfg: &mut Config) {
        let o = &mut cfg.optimize;
        if let Some(v) = self.iterations {
            o.iterations = v;
        }
        if let Some(v) = self.learning_rate {
            o.learning_rate = v;
        }
        if let Some(v) = self.lambda_per {
            o.lambda_per = v;
        }
        if let Some(v) = self.seed {
            o.seed = v;
        }
        if let Some(v) = self.init {
            o.init = match v {
                InitArg::Normal => InitKind::Normal,
                InitArg::WarmStart => InitKind::WarmStart,
                InitArg::Zeros => InitKind::Zeros,
            };
        }
        if let Some(v) = self.workers {
            cfg.run.workers = v;
        }
    }
}

/// Accepts decimals and `a/b` fractions such as `1/12`.
pub fn parse_number(text: &str) -> Result<f64, String> {
    let text = text.trim();
    let value = match text.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|e| format!("bad number {text:?}: {e}"))?;
            let b: f64 = b.trim().parse().map_err(|e| format!("bad number {text:?}: {e}"))?;
            a / b
        }
        None => text.parse().map_err(|e| format!("bad number {text:?}: {e}"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("bad number {text:?}: not finite"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct DeidentifyArgs {
    /// Input image, or a directory of images for a batch run.
    #[arg(long, required_unless_present = "replay")]
    pub input: Option<PathBuf>,
    /// Landmark JSON file, or a directory of `<stem>.json` files for a batch.
    /// Defaults to `<stem>.json` next to each image.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// The input is already masked; use the whole frame as the face region.
    #[arg(long)]
    pub premasked: bool,
    /// Output image, or output directory for a batch.
    #[arg(long, required_unless_present = "replay")]
    pub output: Option<PathBuf>,
    /// Loss trace CSV; defaults to `<output stem>.trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Run manifest; defaults to `<output stem>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Repeat the run recorded in a manifest.
    #[arg(long, value_name = "MANIFEST", conflicts_with_all = ["input", "landmarks", "premasked", "lambda_did"])]
    pub replay: Option<PathBuf>,
    #[arg(long, value_parser = parse_number)]
    pub lambda_did: Option<f64>,
    #[command(flatten)]
    pub opt: OptFlags,
    /// Summary printed on standard output.
    #[arg(long, value_enum, default_value = "text")]
    pub format: SummaryFormat,
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    pub reference: PathBuf,
    pub test: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long, value_enum, default_value = "global")]
    pub ssim: SsimArg,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SsimArg {
    Global,
    Windowed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Identification,
    Verification,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ComparatorArg {
    Distance,
    Similarity,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Manifest of original images: identifier training set and
    /// verification gallery.
    #[arg(long)]
    pub train: PathBuf,
    /// Manifest of protected images.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub scenario: Scenario,
    /// Target false acceptance rates, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_number)]
    pub far: Vec<f64>,
    #[arg(long, value_enum)]
    pub comparator: Option<ComparatorArg>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// De-identification weights, comma separated; fractions like `1/12`
    /// are accepted.
    #[arg(long, value_delimiter = ',', value_parser = parse_number, default_value = "0.02,0.04,1/12,0.17")]
    pub lambdas: Vec<f64>,
    /// Sample images as a `subject_id,image_path,landmark_path` manifest.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Use this many independent synthetic toy pipelines instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Face size of synthetic pipelines.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    /// Manifest of original images; adds an identification ASR column.
    #[arg(long, requires = "manifest")]
    pub train: Option<PathBuf>,
    /// Directory for `sweep.csv`, `sweep.dat` and `sweep.json`.
    #[arg(long)]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub opt: OptFlags,
}

#[derive(Debug, Clone, Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub landmarks: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Fractional margin around the landmark box.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Also write the blend mask as a grayscale image.
    #[arg(long)]
    pub blend_mask: Option<PathBuf>,
    #[arg(long)]
    pub feather: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub original: PathBuf,
    /// Generated image; resized to the original when dimensions differ.
    #[arg(long)]
    pub generated: PathBuf,
    /// Landmarks defining the face rectangle.
    #[arg(long, required_unless_present = "mask", conflicts_with = "mask")]
    pub landmarks: Option<PathBuf>,
    /// Grayscale mask image; white selects the generated image.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub feather: Option<usize>,
    /// Skip histogram matching to the original.
    #[arg(long)]
    pub no_match_histogram: bool,
    /// Apply the per-level rule exactly as written, without the
    /// low-frequency residual and with mask 1 selecting the original.
    #[arg(long)]
    pub literal: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub subjects: usize,
    #[arg(long, default_value_t = 4)]
    pub variants: usize,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    /// First subject number.
    #[arg(long, default_value_t = 0)]
    pub first_subject: u64,
}

/// Dispatches one parsed command line.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let global = cli.global;
    match cli.command {
        Command::Deidentify(a) => cmd_deidentify(&global, &a),
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Evaluate(a) => cmd_evaluate(&global, &a),
        Command::SweepLambda(a) => cmd_sweep_lambda(&global, &a),
        Command::Mask(a) => cmd_mask(&global, &a),
        Command::Merge(a) => cmd_merge(&global, &a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Config => {
            print!("{}", resolve_config(&global)?.to_toml());
            Ok(())
        }
    }
}

pub fn resolve_config(global: &GlobalArgs) -> anyhow::Result<Config> {
    if let Some(p) = &global.config {
        if !p.is_file() {
            return Err(usage(format!("config file {} does not exist", p.display())));
        }
    }
    Config::resolve(global.config.as_deref(), std::env::vars(), &global.set).map_err(|e| usage(format!("{e:#}")))
}

fn validated(cfg: Config) -> anyhow::Result<Config> {
    cfg.validate().map_err(|e| usage(format!("{e:#}")))?;
    Ok(cfg)
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    Ok(pool.install(f))
}

fn write_report(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn json_text(v: &impl Serialize) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn with_suffix(output: &Path, suffix: &str) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}{suffix}"))
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm" | "pgm" | "pnm")
    )
}

/// One image of a `deidentify` run with every path resolved.
#[derive(Debug, Clone)]
struct Job {
    image_id: String,
    input: PathBuf,
    landmarks: Option<PathBuf>,
    output: PathBuf,
    trace: PathBuf,
    manifest: PathBuf,
}

fn landmark_for(image: &Path, explicit: Option<&Path>, premasked: bool) -> anyhow::Result<Option<PathBuf>> {
    if premasked {
        return Ok(None);
    }
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let path = match explicit {
        Some(p) if p.is_dir() => p.join(format!("{stem}.json")),
        Some(p) => p.to_path_buf(),
        None => image.with_file_name(format!("{stem}.json")),
    };
    if !path.is_file() {
        return Err(usage(format!(
            "landmark file {} for {} does not exist (pass --landmarks or --premasked)",
            path.display(),
            image.display()
        )));
    }
    Ok(Some(path))
}

fn image_id(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn plan_jobs(a: &DeidentifyArgs) -> anyhow::Result<Vec<Job>> {
    let input = a.input.as_deref().expect("clap requires --input");
    let output = a.output.as_deref().expect("clap requires --output");
    if input.is_dir() {
        if a.trace.is_some() || a.manifest.is_some() {
            return Err(usage("--trace and --manifest apply to single-image runs only"));
        }
        let mut images: Vec<PathBuf> = fs::read_dir(input)
            .with_context(|| format!("listing {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        images.sort();
        if images.is_empty() {
            return Err(usage(format!("no images in {}", input.display())));
        }
        if output.is_file() {
            return Err(usage(format!("batch output {} must be a directory", output.display())));
        }
        fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
        images
            .iter()
            .map(|img| {
                let out = output.join(img.file_name().expect("listed file"));
                Ok(Job {
                    image_id: image_id(img),
                    input: img.clone(),
                    landmarks: landmark_for(img, a.landmarks.as_deref(), a.premasked)?,
                    trace: with_suffix(&out, ".trace.csv"),
                    manifest: with_suffix(&out, ".manifest.json"),
                    output: out,
                })
            })
            .collect()
    } else {
        require_file(input, "input image")?;
        if !is_image(output) {
            return Err(usage(format!(
                "output {} needs a .png, .ppm, .pgm or .pnm extension",
                output.display()
            )));
        }
        if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(vec![Job {
            image_id: image_id(input),
            input: input.to_path_buf(),
            landmarks: landmark_for(input, a.landmarks.as_deref(), a.premasked)?,
            output: output.to_path_buf(),
            trace: a.trace.clone().unwrap_or_else(|| with_suffix(output, ".trace.csv")),
            manifest: a.manifest.clone().unwrap_or_else(|| with_suffix(output, ".manifest.json")),
        }])
    }
}

fn replay_job(a: &DeidentifyArgs, m: &RunManifest) -> Job {
    let output = a.output.clone().unwrap_or_else(|| m.outputs.image.clone());
    let rerouted = a.output.is_some();
    Job {
        image_id: m.image_id.clone(),
        input: m.inputs.image.clone(),
        landmarks: m.inputs.landmarks.clone(),
        trace: a.trace.clone().unwrap_or_else(|| {
            if rerouted {
                with_suffix(&output, ".trace.csv")
            } else {
                m.outputs.trace.clone()
            }
        }),
        manifest: a.manifest.clone().unwrap_or_else(|| {
            if rerouted {
                with_suffix(&output, ".manifest.json")
            } else {
                m.outputs.manifest.clone()
            }
        }),
        output,
    }
}

#[derive(Debug, Clone, Serialize)]
struct ImageSummary {
    image_id: String,
    output: PathBuf,
    ssim: f64,
    psnr: gmfim_core::metrics::Psnr,
    mse: f64,
    identity_distance: f64,
    best_loss: f64,
}

fn run_job(job: &Job, cfg: &Config, models: &gmfim_core::model::ModelSet) -> anyhow::Result<ImageSummary> {
    let original = load_image(&job.input)?;
    let landmarks = job.landmarks.as_deref().map(load_landmarks).transpose()?;
    let outcome = deidentify_image(&original, landmarks.as_ref(), &job.image_id, models, cfg)?;
    save_image(&outcome.output, &job.output)?;
    let mut trace = Vec::new();
    write_trace_csv(&outcome.opt.trace, &mut trace)?;
    fs::write(&job.trace, trace).with_context(|| format!("writing {}", job.trace.display()))?;
    let manifest = RunManifest::new(
        job.image_id.clone(),
        ManifestInputs {
            image: absolute(&job.input),
            landmarks: job.landmarks.as_deref().map(absolute),
            premasked: job.landmarks.is_none(),
        },
        ManifestOutputs {
            image: absolute(&job.output),
            trace: absolute(&job.trace),
            manifest: absolute(&job.manifest),
        },
        cfg,
        &models.specs(),
        FilterBank::doubling(cfg.blend.levels)?.sigmas().to_vec(),
        &outcome,
    );
    manifest.save(&job.manifest)?;
    Ok(ImageSummary {
        image_id: job.image_id.clone(),
        output: job.output.clone(),
        ssim: outcome.metrics.ssim,
        psnr: outcome.metrics.psnr,
        mse: outcome.metrics.mse,
        identity_distance: outcome.identity_distance,
        best_loss: outcome.opt.best.l_final,
    })
}

fn summary_rows(rows: &[ImageSummary]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.image_id.clone(),
                r.output.display().to_string(),
                r.ssim.to_string(),
                r.psnr.to_string(),
                r.mse.to_string(),
                r.identity_distance.to_string(),
                r.best_loss.to_string(),
            ]
        })
        .collect()
}

const SUMMARY_HEADER: [&str; 7] = ["image_id", "output", "ssim", "psnr", "mse", "identity_distance", "best_loss"];

pub fn cmd_deidentify(global: &GlobalArgs, a: &DeidentifyArgs) -> anyhow::Result<()> {
    let (mut cfg, jobs, recorded) = match &a.replay {
        Some(path) => {
            require_file(path, "manifest")?;
            let m = RunManifest::load(path)?;
            (m.config.clone(), vec![replay_job(a, &m)], Some(m))
        }
        None => (resolve_config(global)?, plan_jobs(a)?, None),
    };
    if let Some(l) = a.lambda_did {
        cfg.optimize.lambda_did = l;
    }
    a.opt.apply(&mut cfg);
    let cfg = validated(cfg)?;
    let models = build_models(&cfg.models)?;
    if let Some(m) = &recorded {
        if m.models != models.specs() {
            anyhow::bail!("models differ from those recorded in the manifest");
        }
        let seed = cfg.optimize.seed_for(&m.image_id);
        if seed != m.init_seed {
            anyhow::bail!("manifest seed {} does not match the derived seed {seed}", m.init_seed);
        }
    }
    let results: Vec<anyhow::Result<ImageSummary>> = with_pool(cfg.run.workers, || {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|j| run_job(j, &cfg, &models).with_context(|| format!("{}", j.input.display())))
            .collect()
    })?;
    let mut done = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(s) => done.push(s),
            Err(e) => failed.push(e),
        }
    }
    let batch = a.input.as_deref().is_some_and(Path::is_dir);
    if batch {
        let dir = a.output.as_deref().expect("batch output");
        fs::write(dir.join("summary.csv"), csv_text(&SUMMARY_HEADER, &summary_rows(&done))?)?;
        fs::write(dir.join("summary.json"), json_text(&done)?)?;
    }
    match a.format {
        SummaryFormat::Text => {
            for s in &done {
                println!("{}: ssim {:.6} psnr {} dB", s.image_id, s.ssim, s.psnr);
            }
        }
        SummaryFormat::Json => print!("{}", json_text(&done)?),
        SummaryFormat::Csv => print!("{}", csv_text(&SUMMARY_HEADER, &summary_rows(&done))?),
    }
    match failed.len() {
        0 => Ok(()),
        1 if jobs.len() == 1 => Err(failed.pop().expect("one failure")),
        n => {
            for e in &failed {
                eprintln!("gmfim: {e:#}");
            }
            Err(anyhow!("{n} of {} images failed", jobs.len()))
        }
    }
}

fn metric_csv(r: &MetricReport) -> anyhow::Result<String> {
    csv_text(
        &["ssim", "psnr", "mse"],
        &[vec![r.ssim.to_string(), r.psnr.to_string(), r.mse.to_string()]],
    )
}

pub fn cmd_metrics(a: &MetricsArgs) -> anyhow::Result<()> {
    require_file(&a.reference, "image")?;
    require_file(&a.test, "image")?;
    let x = load_image(&a.reference)?;
    let y = load_image(&a.test)?;
    let mode = match a.ssim {
        SsimArg::Global => SsimMode::Global,
        SsimArg::Windowed => SsimMode::Windowed,
    };
    let r = report(&x, &y, &SsimConstants::default(), mode)?;
    let text = match a.format {
        Format::Json => json_text(&r)?,
        Format::Csv => metric_csv(&r)?,
    };
    write_report(a.output.as_deref(), &text)
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentificationReport {
    pub asr: f64,
    pub train_accuracy: f64,
    pub classes: usize,
    pub test_images: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub far: f64,
    pub tau: f64,
    pub asr: f64,
    pub impostor_count: usize,
    pub allowed_accepts: usize,
    pub genuine_pairs: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub extractor: ModelSpec,
    pub comparator: Comparator,
    pub identification: Option<IdentificationReport>,
    pub verification: Vec<VerificationReport>,
    pub unpaired: Vec<String>,
    pub failures: Vec<ExtractionFailure>,
}

fn far_label(far: f64) -> String {
    format!("{far}")
}

impl EvaluationReport {
    /// One row; identification first, then ASR and threshold per FAR.
    pub fn to_csv(&self) -> anyhow::Result<String> {
        let mut header = vec!["identification_asr".to_string()];
        let mut row = vec![self.identification.as_ref().map(|i| i.asr.to_string()).unwrap_or_default()];
        for v in &self.verification {
            header.push(format!("verification_asr_far_{}", far_label(v.far)));
            row.push(v.asr.to_string());
        }
        for v in &self.verification {
            header.push(format!("tau_far_{}", far_label(v.far)));
            row.push(v.tau.to_string());
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        csv_text(&header, &[row])
    }
}

fn load_dataset(path: &Path, extractor: &gmfim_core::model::Extractor, failures: &mut Vec<ExtractionFailure>) -> anyhow::Result<FeatureDataset> {
    require_file(path, "manifest")?;
    let manifest = Manifest::load(path)?;
    let (data, mut failed) = extract_dataset(&manifest, extractor)?;
    for f in &failed {
        eprintln!("gmfim: warning: skipping {}: {}", f.image_id, f.reason);
    }
    failures.append(&mut failed);
    if data.is_empty() {
        anyhow::bail!("no usable images in {}", path.display());
    }
    Ok(data)
}

pub fn evaluate(
    cfg: &Config,
    extractor: &gmfim_core::model::Extractor,
    originals: &FeatureDataset,
    protected: &FeatureDataset,
    scenario: Scenario,
) -> anyhow::Result<EvaluationReport> {
    let comparator = cfg.eval.comparator;
    let identification = if matches!(scenario, Scenario::Identification | Scenario::Both) {
        let model = train_identifier(originals, &cfg.eval.identifier)?;
        let result = identification_asr(&model, protected)?;
        Some(IdentificationReport {
            asr: result.asr,
            train_accuracy: model.accuracy(originals),
            classes: model.classes.len(),
            test_images: protected.len(),
        })
    } else {
        None
    };
    let mut verification = Vec::new();
    let mut unpaired = Vec::new();
    if matches!(scenario, Scenario::Verification | Scenario::Both) {
        let scores = impostor_scores(originals, comparator, cfg.eval.impostor_cap, cfg.eval.seed);
        let (pairs, missing) = genuine_pairs(originals, protected);
        unpaired = missing;
        for &far in &cfg.eval.far {
            let cal = calibrate_threshold(&scores, far, comparator)?;
            if let Some(w) = &cal.warning {
                eprintln!("gmfim: warning: {w}");
            }
            let result = gmfim_core::eval::verification_asr(&pairs, cal.tau, comparator)?;
            verification.push(VerificationReport {
                far,
                tau: cal.tau,
                asr: result.asr,
                impostor_count: cal.impostor_count,
                allowed_accepts: cal.allowed_accepts,
                genuine_pairs: pairs.len(),
                warning: cal.warning,
            });
        }
    }
    Ok(EvaluationReport {
        extractor: extractor.spec().clone(),
        comparator,
        identification,
        verification,
        unpaired,
        failures: Vec::new(),
    })
}

pub fn cmd_evaluate(global: &GlobalArgs, a: &EvaluateArgs) -> anyhow::Result<()> {
    let mut cfg = resolve_config(global)?;
    if !a.far.is_empty() {
        cfg.eval.far = a.far.clone();
    }
    if let Some(c) = a.comparator {
        cfg.eval.comparator = match c {
            ComparatorArg::Distance => Comparator::Distance,
            ComparatorArg::Similarity => Comparator::Similarity,
        };
    }
    let cfg = validated(cfg)?;
    let extractor = build_identity(&cfg.models)?;
    let mut failures = Vec::new();
    let originals = load_dataset(&a.train, &extractor, &mut failures)?;
    let protected = load_dataset(&a.test, &extractor, &mut failures)?;
    let mut report = evaluate(&cfg, &extractor, &originals, &protected, a.scenario)?;
    report.failures = failures;
    let text = match a.format {
        Format::Json => json_text(&report)?,
        Format::Csv => report.to_csv()?,
    };
    write_report(a.output.as_deref(), &text)
}

fn manifest_samples(path: &Path, cfg: &Config) -> anyhow::Result<Vec<SweepSample>> {
    require_file(path, "manifest")?;
    let manifest = Manifest::load(path)?;
    if manifest.entries.is_empty() {
        return Err(usage(format!("manifest {} has no entries", path.display())));
    }
    let models = build_models(&cfg.models)?;
    manifest
        .entries
        .iter()
        .map(|e| {
            let image = load_image(manifest.resolve(&e.image_path))?;
            let landmarks: Option<LandmarkSet> = e
                .landmark_path
                .as_ref()
                .map(|p| load_landmarks(manifest.resolve(p)))
                .transpose()?;
            let id = e.image_id();
            Ok(SweepSample {
                seed: cfg.optimize.seed_for(&id),
                id,
                subject_id: e.subject_id.clone(),
                image,
                landmarks,
                models: models.clone(),
            })
        })
        .collect()
}

pub fn cmd_sweep_lambda(global: &GlobalArgs, a: &SweepArgs) -> anyhow::Result<()> {
    let mut cfg = resolve_config(global)?;
    a.opt.apply(&mut cfg);
    let cfg = validated(cfg)?;
    if a.lambdas.iter().any(|l| *l < 0.0) {
        return Err(usage("lambda_did values must be non-negative"));
    }
    let samples = match (&a.manifest, a.synthetic) {
        (Some(m), _) => manifest_samples(m, &cfg)?,
        (None, Some(0)) => return Err(usage("--synthetic needs at least one pipeline")),
        (None, Some(n)) => synthetic_samples(n, a.size, cfg.optimize.seed, &cfg.models.toy)?,
        (None, None) => unreachable!("clap requires a sample source"),
    };
    let points = with_pool(cfg.run.workers, || sweep_lambda(&samples, &a.lambdas, &cfg))??;
    let mut rows: Vec<SweepRow> = points.iter().map(|p| p.row.clone()).collect();
    if let Some(train) = &a.train {
        let extractor = build_identity(&cfg.models)?;
        let originals = load_dataset(train, &extractor, &mut Vec::new())?;
        let model = train_identifier(&originals, &cfg.eval.identifier)?;
        for (row, point) in rows.iter_mut().zip(&points) {
            let entries = samples
                .iter()
                .zip(&point.outcomes)
                .map(|(s, o)| {
                    let img = gmfim_core::eval::prepare_for_extractor(&o.output, &extractor)?;
                    Ok(FeatureEntry {
                        subject_id: s.subject_id.clone(),
                        image_id: s.id.clone(),
                        features: extractor.forward(&img)?.values,
                    })
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let protected = FeatureDataset::new(entries, Some(extractor.spec().clone()))?;
            row.asr = Some(identification_asr(&model, &protected)?.asr);
        }
    }
    fs::create_dir_all(&a.output_dir).with_context(|| format!("creating {}", a.output_dir.display()))?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.lambda_did.to_string(),
                r.mean_ssim.to_string(),
                r.identity_feature_distance.to_string(),
                r.asr.map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    let csv = csv_text(&["lambda_did", "mean_ssim", "identity_feature_distance", "asr"], &csv_rows)?;
    fs::write(a.output_dir.join("sweep.csv"), &csv)?;
    let mut dat = String::from("# lambda_did mean_ssim identity_feature_distance asr\n");
    for r in &rows {
        dat.push_str(&format!(
            "{} {} {} {}\n",
            r.lambda_did,
            r.mean_ssim,
            r.identity_feature_distance,
            r.asr.map(|v| v.to_string()).unwrap_or_else(|| "nan".into())
        ));
    }
    fs::write(a.output_dir.join("sweep.dat"), dat)?;
    fs::write(a.output_dir.join("sweep.json"), json_text(&rows)?)?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_mask(global: &GlobalArgs, a: &MaskArgs) -> anyhow::Result<()> {
    let mut cfg = resolve_config(global)?;
    if let Some(m) = a.margin {
        cfg.mask.margin = m;
    }
    if let Some(f) = a.feather {
        cfg.mask.feather = f;
    }
    let cfg = validated(cfg)?;
    require_file(&a.input, "input image")?;
    require_file(&a.landmarks, "landmark file")?;
    let img = load_image(&a.input)?;
    let lm = load_landmarks(&a.landmarks)?;
    lm.validate_within(img.width(), img.height())?;
    let rect = face_rect(&lm, cfg.mask.margin, (img.height(), img.width()))?;
    save_image(&apply_face_mask(&img, &rect)?, &a.output)?;
    if let Some(p) = &a.blend_mask {
        let m = build_blend_mask(&rect, (img.height(), img.width()), cfg.mask.feather)?;
        save_image(&m.to_image(), p)?;
    }
    print!("{}", json_text(&rect)?);
    Ok(())
}

fn mask_from_image(path: &Path, height: usize, width: usize) -> anyhow::Result<BlendMask> {
    require_file(path, "mask image")?;
    let img = load_image(path)?;
    if (img.height(), img.width()) != (height, width) {
        anyhow::bail!(
            "mask is {}x{} but the original is {height}x{width}",
            img.height(),
            img.width()
        );
    }
    Ok(BlendMask::new(height, width, img.luminance())?)
}

pub fn cmd_merge(global: &GlobalArgs, a: &MergeArgs) -> anyhow::Result<()> {
    let mut cfg = resolve_config(global)?;
    if let Some(l) = a.levels {
        cfg.blend.levels = l;
    }
    if let Some(f) = a.feather {
        cfg.mask.feather = f;
    }
    if a.no_match_histogram {
        cfg.blend.match_histogram = false;
    }
    let cfg = validated(cfg)?;
    require_file(&a.original, "original image")?;
    require_file(&a.generated, "generated image")?;
    let original = load_image(&a.original)?;
    let generated: Image = conform(&load_image(&a.generated)?, original.shape())?;
    let dims = (original.height(), original.width());
    let mask = match (&a.landmarks, &a.mask) {
        (Some(lm), _) => {
            require_file(lm, "landmark file")?;
            let lm = load_landmarks(lm)?;
            lm.validate_within(dims.1, dims.0)?;
            build_blend_mask(&face_rect(&lm, cfg.mask.margin, dims)?, dims, cfg.mask.feather)?
        }
        (None, Some(m)) => mask_from_image(m, dims.0, dims.1)?,
        (None, None) => unreachable!("clap requires a mask source"),
    };
    let bank = FilterBank::doubling(cfg.blend.levels)?;
    let out = if a.literal {
        merge_literal(&original, &generated, &mask, &bank)?.clamped()
    } else {
        merge_and_match_with(&original, &generated, &mask, &bank, MaskRole::Generated, cfg.blend.match_histogram)?
    };
    save_image(&out, &a.output)?;
    Ok(())
}

fn landmark_json(lm: &LandmarkSet) -> serde_json::Value {
    serde_json::json!({
        "schema": lm.schema,
        "points": lm.points.iter().map(|(x, y)| [x, y]).collect::<Vec<_>>(),
        "anchors": lm.anchors,
    })
}

pub fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    if a.subjects == 0 || a.variants == 0 {
        return Err(usage("--subjects and --variants must be positive"));
    }
    fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    let mut all = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in 0..a.subjects as u64 {
        let subject = a.first_subject + s;
        for v in 0..a.variants as u64 {
            let (img, lm) = synth_face(a.size, a.size, subject, v)?;
            let name = format!("s{subject}_v{v}");
            save_image(&img, a.output.join(format!("{name}.png")))?;
            fs::write(
                a.output.join(format!("{name}.json")),
                serde_json::to_string_pretty(&landmark_json(&lm))?,
            )?;
            let row = vec![format!("s{subject}"), format!("{name}.png"), format!("{name}.json")];
            if v == 0 {
                test.push(row.clone());
            } else {
                train.push(row.clone());
            }
            all.push(row);
        }
    }
    let header = ["subject_id", "image_path", "landmark_path"];
    fs::write(a.output.join("manifest.csv"), csv_text(&header, &all)?)?;
    fs::write(a.output.join("train.csv"), csv_text(&header, &train)?)?;
    fs::write(a.output.join("test.csv"), csv_text(&header, &test)?)?;
    println!("{} images in {}", all.len(), a.output.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_and_fractions() {
        assert_eq!(parse_number("0.5").unwrap(), 0.5);
        assert_eq!(parse_number("1/12").unwrap(), 1.0 / 12.0);
        assert!(parse_number("1/0").is_err());
        assert!(parse_number("x").is_err());
    }

    #[test]
    fn usage_errors_map_to_two() {
        assert_eq!(exit_code(&usage("bad")), 2);
        assert_eq!(exit_code(&usage("bad").context("outer")), 2);
        assert_eq!(exit_code(&anyhow!("runtime")), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn suffix_paths() {
        assert_eq!(with_suffix(Path::new("/a/out.png"), ".trace.csv"), PathBuf::from("/a/out.trace.csv"));
    }
}
