//! Run configuration.
//!
//! Values are layered: built-in defaults, then a TOML file, then environment
//! variables, then `--set section.key=value` flags, then dedicated flags.
//! An environment variable `GMFIM_SECTION__KEY` (double underscore between
//! path segments, any case) sets `section.key`; its value is read as a TOML
//! literal and falls back to a plain string.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use gmfim_core::blend::DEFAULT_LEVELS;
use gmfim_core::eval::{Comparator, IdentifierConfig};
use gmfim_core::facemask::DEFAULT_MARGIN;
use gmfim_core::latentopt::{
    InitStrategy, LossWeights, OptConfig, DEFAULT_ITERATIONS, DEFAULT_LAMBDA_DID, DEFAULT_LAMBDA_PER,
    DEFAULT_LEARNING_RATE,
};
use gmfim_core::model::ToyConfig;
use gmfim_wire::Endpoint;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const ENV_PREFIX: &str = "GMFIM_";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Normal,
    WarmStart,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub lambda_per: f64,
    pub lambda_did: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub init: InitKind,
    pub warm_start_iterations: usize,
    pub seed: u64,
    /// Mix a hash of the image id into the latent seed, so batch runs give
    /// every image its own start independent of scheduling.
    pub seed_per_image: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            lambda_per: DEFAULT_LAMBDA_PER,
            lambda_did: DEFAULT_LAMBDA_DID,
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
            init: InitKind::Normal,
            warm_start_iterations: 100,
            seed: 0,
            seed_per_image: true,
        }
    }
}

impl OptimizeConfig {
    pub fn weights(&self) -> gmfim_core::Result<LossWeights> {
        LossWeights::new(self.lambda_per, self.lambda_did)
    }

    pub fn opt_config(&self, seed: u64) -> OptConfig {
        let init = match self.init {
            InitKind::Normal => InitStrategy::Normal { seed },
            InitKind::WarmStart => InitStrategy::WarmStart {
                seed,
                iterations: self.warm_start_iterations,
            },
            InitKind::Zeros => InitStrategy::Zeros,
        };
        OptConfig {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            init,
            record_trace: true,
        }
    }

    /// Latent seed for the image identified by `image_id`.
    pub fn seed_for(&self, image_id: &str) -> u64 {
        if self.seed_per_image {
            self.seed ^ fnv1a(image_id.as_bytes())
        } else {
            self.seed
        }
    }
}

/// 64-bit FNV-1a, stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub margin: f64,
    pub feather: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            margin: DEFAULT_MARGIN,
            feather: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlendConfig {
    pub levels: usize,
    pub match_histogram: bool,
}

impl Default for BlendConfig {
    fn default() -> Self {
        BlendConfig {
            levels: DEFAULT_LEVELS,
            match_histogram: true,
        }
    }
}

/// Toy models unless a role has a remote endpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub toy: ToyConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<Endpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perceptual: Option<Endpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity: Option<Endpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub far: Vec<f64>,
    pub comparator: Comparator,
    pub impostor_cap: usize,
    pub seed: u64,
    pub identifier: IdentifierConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            far: vec![0.001, 0.01],
            comparator: Comparator::Distance,
            impostor_cap: 100_000,
            seed: 0,
            identifier: IdentifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads for batch and sweep runs; 0 uses all cores.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { workers: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub optimize: OptimizeConfig,
    pub mask: MaskConfig,
    pub blend: BlendConfig,
    pub models: ModelsConfig,
    pub eval: EvalConfig,
    pub run: RunConfig,
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn literal(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, path: &[&str], value: Value) -> anyhow::Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| anyhow!("empty config key"))?;
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("config key {} is not a section", path.join(".")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl Config {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Layers a config file, environment variables and `key=value`
    /// assignments over the defaults.
    pub fn resolve(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        sets: &[String],
    ) -> anyhow::Result<Config> {
        let mut table = Table::try_from(Config::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let over: Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut table, over);
        }
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.contains("__"))
            .collect();
        env.sort();
        for (k, v) in env {
            let key = k[ENV_PREFIX.len()..].to_ascii_lowercase();
            let path: Vec<&str> = key.split("__").collect();
            set_path(&mut table, &path, literal(&v)).with_context(|| format!("environment variable {k}"))?;
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got {s:?}"))?;
            let path: Vec<&str> = k.trim().split('.').collect();
            set_path(&mut table, &path, literal(v.trim()))?;
        }
        let cfg: Config = Value::Table(table).try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.optimize.weights()?;
        self.optimize.opt_config(0).validate()?;
        if !(0.0..1.0).contains(&self.mask.margin) && self.mask.margin != 1.0 {
            bail!("mask.margin must lie in [0, 1], got {}", self.mask.margin);
        }
        if self.blend.levels < 2 {
            bail!("blend.levels must be at least 2, got {}", self.blend.levels);
        }
        if self.eval.far.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            bail!("eval.far values must lie in (0, 1], got {:?}", self.eval.far);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let c = Config::default();
        assert_eq!(c.optimize.lambda_per, 1.0 / 8800.0);
        assert_eq!(c.optimize.lambda_did, 1.0 / 12.0);
        assert_eq!(c.optimize.learning_rate, 1.0);
        assert_eq!(c.optimize.iterations, 800);
        assert_eq!(c.blend.levels, 10);
    }

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[optimize]\niterations = 50\nlambda_did = 0.5\n[mask]\nfeather = 2\n").unwrap();
        let env = vec![
            ("GMFIM_OPTIMIZE__LAMBDA_DID".to_string(), "0.25".to_string()),
            ("GMFIM_MODELS__TOY__LATENT_DIM".to_string(), "8".to_string()),
            ("GMFIM_UNRELATED".to_string(), "x".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let c = Config::resolve(Some(&path), env, &["optimize.iterations=7".to_string()]).unwrap();
        assert_eq!(c.optimize.iterations, 7);
        assert_eq!(c.optimize.lambda_did, 0.25);
        assert_eq!(c.mask.feather, 2);
        assert_eq!(c.models.toy.latent_dim, 8);
        assert_eq!(c.optimize.lambda_per, 1.0 / 8800.0);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::resolve(None, vec![], &["optimize.learning_rate=-1".to_string()]).is_err());
        assert!(Config::resolve(None, vec![], &["optimize.bogus=1".to_string()]).is_err());
        assert!(Config::resolve(None, vec![], &["nonsense".to_string()]).is_err());
        assert!(Config::resolve(None, vec![], &["blend.levels=1".to_string()]).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = Config::default();
        c.models.identity = Some(Endpoint::Stdio {
            command: vec!["server".into(), "--seed".into(), "3".into()],
            timeout_secs: Some(5.0),
        });
        let text = c.to_toml();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn per_image_seeds() {
        let c = OptimizeConfig::default();
        assert_ne!(c.seed_for("a.png"), c.seed_for("b.png"));
        assert_eq!(c.seed_for("a.png"), c.seed_for("a.png"));
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
