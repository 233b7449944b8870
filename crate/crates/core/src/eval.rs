//! Identification and verification attacks against protected images.
//!
//! Identification trains a linear one-vs-rest classifier on features of the
//! original training images and counts protected images it misclassifies.
//! Verification calibrates a match threshold on impostor pairs at a fixed
//! false acceptance rate and counts genuine pairs that fail to match.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facemask::{apply_face_mask, face_rect, load_landmarks, DEFAULT_MARGIN};
use crate::image::{conform, load_image, Image};
use crate::metrics::attack_success_rate;
use crate::model::{Extractor, ModelSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub image_path: PathBuf,
    pub landmark_path: Option<PathBuf>,
}

impl ManifestEntry {
    /// Identifier used for ordering and reporting: the path as written.
    pub fn image_id(&self) -> String {
        self.image_path.to_string_lossy().into_owned()
    }
}

/// Rows of a `subject_id,image_path,landmark_path` CSV file. Relative paths
/// resolve against the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for (n, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::Eval(format!("manifest: {e}")))?;
            let fields: Vec<&str> = row.iter().collect();
            if n == 0 && fields.first() == Some(&"subject_id") {
                continue;
            }
            if fields.iter().all(|f| f.is_empty()) {
                continue;
            }
            let line = row.position().map_or(n + 1, |p| p.line() as usize);
            if fields.len() < 2 || fields.len() > 3 || fields[0].is_empty() || fields[1].is_empty() {
                return Err(Error::Eval(format!("manifest line {line}: malformed row {fields:?}")));
            }
            entries.push(ManifestEntry {
                subject_id: fields[0].to_string(),
                image_path: PathBuf::from(fields[1]),
                landmark_path: fields.get(2).filter(|s| !s.is_empty()).map(PathBuf::from),
            });
        }
        Ok(Manifest { entries, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject_id,image_path,landmark_path\n");
        for e in &self.entries {
            let lm = e
                .landmark_path
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", e.subject_id, e.image_path.display(), lm));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub subject_id: String,
    pub image_id: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDataset {
    pub entries: Vec<FeatureEntry>,
    pub extractor: Option<ModelSpec>,
}

impl FeatureDataset {
    pub fn new(entries: Vec<FeatureEntry>, extractor: Option<ModelSpec>) -> Result<Self> {
        if let Some(first) = entries.first() {
            let len = first.features.len();
            if let Some(bad) = entries.iter().find(|e| e.features.len() != len) {
                return Err(Error::Eval(format!(
                    "feature length {} of {} differs from {len}",
                    bad.features.len(),
                    bad.image_id
                )));
            }
        }
        if let Some(bad) = entries.iter().find(|e| e.subject_id.is_empty()) {
            return Err(Error::Eval(format!("empty subject id for {}", bad.image_id)));
        }
        Ok(FeatureDataset { entries, extractor })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.features.len())
    }

    /// Distinct subject ids in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.entries.iter().map(|e| e.subject_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionFailure {
    pub image_id: String,
    pub reason: String,
}

/// Brings an image to the extractor's input shape: optional background
/// masking from landmarks, channel conversion and bilinear resize.
pub fn prepare_for_extractor(img: &Image, extractor: &Extractor) -> Result<Image> {
    conform(img, extractor.input_shape())
}

fn extract_one(manifest: &Manifest, entry: &ManifestEntry, extractor: &Extractor) -> Result<Vec<f64>> {
    let mut img = load_image(manifest.resolve(&entry.image_path))?;
    if let Some(lm_path) = &entry.landmark_path {
        let lm = load_landmarks(manifest.resolve(lm_path))?;
        lm.validate_within(img.width(), img.height())?;
        let rect = face_rect(&lm, DEFAULT_MARGIN, (img.height(), img.width()))?;
        img = apply_face_mask(&img, &rect)?;
    }
    Ok(extractor.forward(&prepare_for_extractor(&img, extractor)?)?.values)
}

/// One feature row per readable manifest image, in manifest order. Images
/// that fail to load or extract are skipped and listed.
pub fn extract_dataset(
    manifest: &Manifest,
    extractor: &Extractor,
) -> Result<(FeatureDataset, Vec<ExtractionFailure>)> {
    if manifest.entries.is_empty() {
        return Err(Error::Eval("empty manifest".into()));
    }
    let results: Vec<Result<Vec<f64>>> = manifest
        .entries
        .par_iter()
        .map(|e| extract_one(manifest, e, extractor))
        .collect();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (e, r) in manifest.entries.iter().zip(results) {
        match r {
            Ok(features) => entries.push(FeatureEntry {
                subject_id: e.subject_id.clone(),
                image_id: e.image_id(),
                features,
            }),
            Err(err) => failures.push(ExtractionFailure {
                image_id: e.image_id(),
                reason: err.to_string(),
            }),
        }
    }
    Ok((FeatureDataset::new(entries, Some(extractor.spec().clone()))?, failures))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub seed: u64,
}

impl Default for IdentifierConfig {
    fn default() -> Self {
        IdentifierConfig {
            epochs: 200,
            learning_rate: 0.1,
            regularization: 1e-4,
            seed: 0,
        }
    }
}

/// One-vs-rest linear classifier with one weight vector per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearIdentifier {
    pub classes: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub config: IdentifierConfig,
}

impl LinearIdentifier {
    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }

    /// Index of the highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    pub fn accuracy(&self, data: &FeatureDataset) -> f64 {
        let correct = data
            .entries
            .iter()
            .filter(|e| self.classes[self.predict(&e.features)] == e.subject_id)
            .count();
        correct as f64 / data.len().max(1) as f64
    }
}

pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Trains one hinge-loss classifier per class by stochastic subgradient
/// descent with L2 regularization on the weights. Visit order is reshuffled
/// every epoch from a seeded stream, so equal inputs give equal weights.
pub fn train_identifier(train: &FeatureDataset, cfg: &IdentifierConfig) -> Result<LinearIdentifier> {
    let classes = train.subjects();
    if classes.len() < 2 {
        return Err(Error::Eval(format!(
            "identifier needs at least 2 classes, got {}",
            classes.len()
        )));
    }
    if !(cfg.learning_rate > 0.0 && cfg.regularization >= 0.0) {
        return Err(Error::Eval("invalid identifier training configuration".into()));
    }
    let dim = train.dim().unwrap_or(0);
    let labels: Vec<usize> = train
        .entries
        .iter()
        .map(|e| classes.binary_search(&e.subject_id).expect("class list built from data"))
        .collect();
    let mut weights = vec![vec![0.0; dim]; classes.len()];
    let mut biases = vec![0.0; classes.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            step += 1;
            let eta = cfg.learning_rate / (1.0 + cfg.learning_rate * cfg.regularization * step as f64);
            let x = &train.entries[i].features;
            for (k, (w, b)) in weights.iter_mut().zip(biases.iter_mut()).enumerate() {
                let y = if labels[i] == k { 1.0 } else { -1.0 };
                let margin = y * (w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + *b);
                let shrink = 1.0 - eta * cfg.regularization;
                if margin < 1.0 {
                    for (wj, xj) in w.iter_mut().zip(x) {
                        *wj = shrink * *wj + eta * y * xj;
                    }
                    *b += eta * y;
                } else {
                    w.iter_mut().for_each(|wj| *wj *= shrink);
                }
            }
        }
    }
    Ok(LinearIdentifier {
        classes,
        weights,
        biases,
        config: *cfg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationOutcome {
    pub image_id: String,
    pub subject_id: String,
    pub predicted: String,
    /// The attack succeeded: the image was not recognized as its subject.
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub asr: f64,
    pub outcomes: Vec<IdentificationOutcome>,
}

pub fn identification_asr(model: &LinearIdentifier, protected: &FeatureDataset) -> Result<IdentificationResult> {
    if protected.is_empty() {
        return Err(Error::Eval("empty protected set".into()));
    }
    if protected.dim() != Some(model.dim()) {
        return Err(Error::shape("evalharness identification", model.dim(), protected.dim()));
    }
    let outcomes: Vec<IdentificationOutcome> = protected
        .entries
        .iter()
        .map(|e| {
            let predicted = model.classes[model.predict(&e.features)].clone();
            IdentificationOutcome {
                image_id: e.image_id.clone(),
                subject_id: e.subject_id.clone(),
                success: predicted != e.subject_id,
                predicted,
            }
        })
        .collect();
    let successes = outcomes.iter().filter(|o| o.success).count();
    Ok(IdentificationResult {
        asr: attack_success_rate(successes, outcomes.len())?,
        outcomes,
    })
}

/// How two feature vectors are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    /// Euclidean distance; a pair matches when its distance is below the threshold.
    #[default]
    Distance,
    /// Cosine similarity; a pair matches when its similarity is above the threshold.
    Similarity,
}

impl Comparator {
    pub fn score(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Comparator::Distance => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Comparator::Similarity => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    dot / (na * nb)
                }
            }
        }
    }

    pub fn matches(&self, score: f64, tau: f64) -> bool {
        match self {
            Comparator::Distance => score < tau,
            Comparator::Similarity => score > tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    pub far_target: f64,
    pub impostor_count: usize,
    /// `floor(far_target * impostor_count)`.
    pub allowed_accepts: usize,
    pub warning: Option<String>,
}

fn step_down(v: f64) -> f64 {
    if v.is_nan() || v == f64::NEG_INFINITY {
        v
    } else if v == 0.0 {
        -f64::from_bits(1)
    } else if v > 0.0 {
        f64::from_bits(v.to_bits() - 1)
    } else {
        f64::from_bits(v.to_bits() + 1)
    }
}

fn step_up(v: f64) -> f64 {
    -step_down(-v)
}

/// Match threshold at a target false acceptance rate.
///
/// With `k = floor(far * N)` over `N` impostor distances, the threshold is
/// the `k`-th smallest distance and a pair matches when its distance is
/// strictly below it, so at most `k - 1` impostors are accepted (fewer with
/// ties). `k = 0` puts the threshold just below the smallest distance and
/// `far >= 1` accepts everything. Similarity scores mirror the rule from the
/// largest score down.
pub fn calibrate_threshold(impostor_scores: &[f64], far_target: f64, comparator: Comparator) -> Result<Calibration> {
    if impostor_scores.is_empty() {
        return Err(Error::Eval("no impostor scores to calibrate on".into()));
    }
    if !(far_target > 0.0 && far_target <= 1.0) {
        return Err(Error::Eval(format!("far target must lie in (0, 1], got {far_target}")));
    }
    if impostor_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Eval("NaN impostor score".into()));
    }
    let n = impostor_scores.len();
    let mut sorted = impostor_scores.to_vec();
    match comparator {
        Comparator::Distance => sorted.sort_by(f64::total_cmp),
        Comparator::Similarity => sorted.sort_by(|a, b| b.total_cmp(a)),
    }
    let k = (far_target * n as f64).floor() as usize;
    let warning = ((n as f64) < 1.0 / far_target).then(|| {
        format!(
            "only {n} impostor scores for far target {far_target}; at least {} recommended",
            (1.0 / far_target).ceil()
        )
    });
    let tau = match (comparator, k) {
        (Comparator::Distance, _) if far_target >= 1.0 => f64::INFINITY,
        (Comparator::Similarity, _) if far_target >= 1.0 => f64::NEG_INFINITY,
        (Comparator::Distance, 0) => step_down(sorted[0]),
        (Comparator::Similarity, 0) => step_up(sorted[0]),
        (_, k) => sorted[k - 1],
    };
    Ok(Calibration {
        tau,
        far_target,
        impostor_count: n,
        allowed_accepts: k,
        warning,
    })
}

/// Scores of cross-subject pairs `(i, j)`, `i < j`, in dataset order. When
/// more than `cap` pairs exist, `cap` of them are drawn without replacement
/// from a stream seeded with `seed` and kept in pair order.
pub fn impostor_scores(originals: &FeatureDataset, comparator: Comparator, cap: usize, seed: u64) -> Vec<f64> {
    let e = &originals.entries;
    let mut pairs = Vec::new();
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            if e[i].subject_id != e[j].subject_id {
                pairs.push((i, j));
            }
        }
    }
    if pairs.len() > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, pairs.len(), cap).into_vec();
        picked.sort_unstable();
        pairs = picked.into_iter().map(|k| pairs[k]).collect();
    }
    pairs
        .into_iter()
        .map(|(i, j)| comparator.score(&e[i].features, &e[j].features))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenuinePair {
    pub subject_id: String,
    pub original_id: String,
    pub protected_id: String,
    pub original: Vec<f64>,
    pub protected: Vec<f64>,
}

/// Pairs every protected image with the lexicographically first original
/// image of the same subject. Protected images whose subject has no original
/// are returned separately.
pub fn genuine_pairs(originals: &FeatureDataset, protected: &FeatureDataset) -> (Vec<GenuinePair>, Vec<String>) {
    let mut first: BTreeMap<&str, &FeatureEntry> = BTreeMap::new();
    for e in &originals.entries {
        first
            .entry(e.subject_id.as_str())
            .and_modify(|cur| {
                if e.image_id < cur.image_id {
                    *cur = e;
                }
            })
            .or_insert(e);
    }
    let mut pairs = Vec::new();
    let mut unpaired = Vec::new();
    for p in &protected.entries {
        match first.get(p.subject_id.as_str()) {
            Some(o) => pairs.push(GenuinePair {
                subject_id: p.subject_id.clone(),
                original_id: o.image_id.clone(),
                protected_id: p.image_id.clone(),
                original: o.features.clone(),
                protected: p.features.clone(),
            }),
            None => unpaired.push(p.image_id.clone()),
        }
    }
    (pairs, unpaired)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub protected_id: String,
    pub score: f64,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub asr: f64,
    pub outcomes: Vec<VerificationOutcome>,
}

/// Fraction of genuine pairs that fail the match rule at `tau`.
pub fn verification_asr(pairs: &[GenuinePair], tau: f64, comparator: Comparator) -> Result<VerificationResult> {
    if pairs.is_empty() {
        return Err(Error::Eval("no genuine pairs to verify".into()));
    }
    let outcomes: Vec<VerificationOutcome> = pairs
        .iter()
        .map(|p| {
            let score = comparator.score(&p.original, &p.protected);
            VerificationOutcome {
                protected_id: p.protected_id.clone(),
                score,
                matched: comparator.matches(score, tau),
            }
        })
        .collect();
    let failures = outcomes.iter().filter(|o| !o.matched).count();
    Ok(VerificationResult {
        asr: attack_success_rate(failures, outcomes.len())?,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(subject: &str, id: &str, f: &[f64]) -> FeatureEntry {
        FeatureEntry {
            subject_id: subject.into(),
            image_id: id.into(),
            features: f.to_vec(),
        }
    }

    fn clusters() -> FeatureDataset {
        let mut entries = Vec::new();
        for i in 0..6 {
            let t = i as f64 * 0.1;
            entries.push(entry("a", &format!("a{i}"), &[1.0 + t, 2.0 - t]));
            entries.push(entry("b", &format!("b{i}"), &[-1.0 - t, -2.0 + t]));
        }
        FeatureDataset::new(entries, None).unwrap()
    }

    #[test]
    fn manifest_parsing() {
        let m = Manifest::parse(
            "subject_id,image_path,landmark_path\ns1,a.png,a.json\ns1,b.png,\ns2,c.png\n",
            PathBuf::from("/data"),
        )
        .unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.entries[0].landmark_path.as_deref(), Some(Path::new("a.json")));
        assert_eq!(m.entries[1].landmark_path, None);
        assert_eq!(m.resolve(&m.entries[2].image_path), PathBuf::from("/data/c.png"));
        assert!(Manifest::parse("s1\n", PathBuf::new()).is_err());
    }

    #[test]
    fn separable_clusters_train_perfectly() {
        let data = clusters();
        let model = train_identifier(&data, &IdentifierConfig::default()).unwrap();
        // independent check with explicit dot products
        for e in &data.entries {
            let s: Vec<f64> = model
                .weights
                .iter()
                .zip(&model.biases)
                .map(|(w, b)| w[0] * e.features[0] + w[1] * e.features[1] + b)
                .collect();
            let want = if e.subject_id == "a" { 0 } else { 1 };
            assert!(s[want] > s[1 - want]);
        }
        assert_eq!(model.accuracy(&data), 1.0);
        let again = train_identifier(&data, &IdentifierConfig::default()).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn single_class_rejected() {
        let data = FeatureDataset::new(vec![entry("a", "1", &[1.0]), entry("a", "2", &[2.0])], None).unwrap();
        assert!(train_identifier(&data, &IdentifierConfig::default()).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn identification_errors() {
        let data = clusters();
        let model = train_identifier(&data, &IdentifierConfig::default()).unwrap();
        let empty = FeatureDataset::new(vec![], None).unwrap();
        assert!(identification_asr(&model, &empty).is_err());
        let wrong = FeatureDataset::new(vec![entry("a", "x", &[1.0, 2.0, 3.0])], None).unwrap();
        assert!(identification_asr(&model, &wrong).is_err());
        let same = identification_asr(&model, &data).unwrap();
        assert_eq!(same.asr, 1.0 - model.accuracy(&data));
    }

    #[test]
    fn calibration_boundaries() {
        let scores = [0.5, 0.1, 0.9, 0.3, 0.7];
        let c = calibrate_threshold(&scores, 1.0, Comparator::Distance).unwrap();
        assert_eq!(c.tau, f64::INFINITY);
        let c = calibrate_threshold(&scores, 0.001, Comparator::Distance).unwrap();
        assert!(c.tau < 0.1);
        assert!(c.warning.is_some());
        assert_eq!(scores.iter().filter(|&&s| s < c.tau).count(), 0);
        let c = calibrate_threshold(&scores, 0.4, Comparator::Distance).unwrap();
        assert_eq!(c.tau, 0.3);
        let c = calibrate_threshold(&scores, 0.4, Comparator::Similarity).unwrap();
        assert_eq!(c.tau, 0.7);
        let c = calibrate_threshold(&scores, 0.1, Comparator::Similarity).unwrap();
        assert!(c.tau > 0.9);
        assert!(calibrate_threshold(&[], 0.1, Comparator::Distance).is_err());
        assert!(calibrate_threshold(&scores, 0.0, Comparator::Distance).is_err());
    }

    #[test]
    fn step_helpers() {
        assert!(step_down(0.0) < 0.0);
        assert!(step_down(1.0) < 1.0 && step_down(-1.0) < -1.0);
        assert!(step_up(1.0) > 1.0 && step_up(0.0) > 0.0);
    }

    #[test]
    fn verification_counts() {
        let mk = |d: f64, id: usize| GenuinePair {
            subject_id: "s".into(),
            original_id: "o".into(),
            protected_id: id.to_string(),
            original: vec![0.0, 0.0],
            protected: vec![d, 0.0],
        };
        // distances 0.1 .. 1.0; threshold 0.35 matches 0.1, 0.2, 0.3
        let pairs: Vec<GenuinePair> = (1..=10).map(|i| mk(i as f64 / 10.0, i)).collect();
        let r = verification_asr(&pairs, 0.35, Comparator::Distance).unwrap();
        assert!((r.asr - 0.7).abs() < 1e-12);
        let same: Vec<GenuinePair> = (0..4).map(|i| mk(0.0, i)).collect();
        assert_eq!(verification_asr(&same, 0.1, Comparator::Distance).unwrap().asr, 0.0);
        let far: Vec<GenuinePair> = (0..4).map(|i| mk(1e12, i)).collect();
        assert_eq!(verification_asr(&far, 5.0, Comparator::Distance).unwrap().asr, 1.0);
        assert!(verification_asr(&[], 1.0, Comparator::Distance).is_err());
    }

    #[test]
    fn pairing_uses_first_original() {
        let originals = FeatureDataset::new(
            vec![entry("s", "img_b", &[1.0]), entry("s", "img_a", &[2.0]), entry("t", "t0", &[3.0])],
            None,
        )
        .unwrap();
        let protected = FeatureDataset::new(
            vec![entry("s", "p1", &[0.0]), entry("u", "p2", &[0.0]), entry("t", "p3", &[0.0])],
            None,
        )
        .unwrap();
        let (pairs, unpaired) = genuine_pairs(&originals, &protected);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].original_id, "img_a");
        assert_eq!(pairs[0].original, vec![2.0]);
        assert_eq!(unpaired, vec!["p2".to_string()]);
    }

    #[test]
    fn impostor_sampling() {
        let data = clusters();
        let all = impostor_scores(&data, Comparator::Distance, usize::MAX, 0);
        assert_eq!(all.len(), 36);
        let some = impostor_scores(&data, Comparator::Distance, 10, 7);
        assert_eq!(some.len(), 10);
        assert_eq!(some, impostor_scores(&data, Comparator::Distance, 10, 7));
        assert!(some.iter().all(|s| all.contains(s)));
    }

    proptest! {
        #[test]
        fn tau_monotone_and_permutation_invariant(
            scores in proptest::collection::vec(0.0f64..10.0, 1..200),
            f1 in 0.001f64..1.0, f2 in 0.001f64..1.0, seed in any::<u64>(),
        ) {
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let t_lo = calibrate_threshold(&scores, lo, Comparator::Distance).unwrap().tau;
            let t_hi = calibrate_threshold(&scores, hi, Comparator::Distance).unwrap().tau;
            prop_assert!(t_lo <= t_hi);
            let mut shuffled = scores.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let t = calibrate_threshold(&shuffled, lo, Comparator::Distance).unwrap().tau;
            prop_assert_eq!(t.to_bits(), t_lo.to_bits());
        }

        #[test]
        fn identification_invariant_under_positive_rescaling(scale in 0.01f64..100.0, x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let model = train_identifier(&clusters(), &IdentifierConfig::default()).unwrap();
            let scaled = LinearIdentifier {
                weights: model.weights.iter().map(|w| w.iter().map(|v| v * scale).collect()).collect(),
                biases: model.biases.iter().map(|b| b * scale).collect(),
                ..model.clone()
            };
            prop_assert_eq!(model.predict(&[x, y]), scaled.predict(&[x, y]));
        }
    }
}
