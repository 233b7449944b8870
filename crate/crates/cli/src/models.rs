//! Model construction from configuration.

use std::sync::Arc;

use anyhow::Context;
use gmfim_core::model::{DiffModel, Extractor, Generator, ModelSet, Role};
use gmfim_wire::Endpoint;

use crate::config::ModelsConfig;

fn remote(endpoint: &Endpoint, role: Role) -> anyhow::Result<Arc<dyn DiffModel>> {
    let model = endpoint
        .connect()
        .with_context(|| format!("connecting to the {role} model"))?;
    Ok(Arc::new(model))
}

/// Toy models, with every role that has an endpoint replaced by its server.
pub fn build_models(cfg: &ModelsConfig) -> anyhow::Result<ModelSet> {
    let mut set = cfg.toy.build()?;
    if let Some(e) = &cfg.generator {
        set.generator = Generator::new(remote(e, Role::Generator)?)?;
    }
    if let Some(e) = &cfg.perceptual {
        set.perceptual = Extractor::new(remote(e, Role::Perceptual)?)?;
    }
    if let Some(e) = &cfg.identity {
        set.identity = Extractor::new(remote(e, Role::Identity)?)?;
    }
    Ok(set)
}

/// The identity extractor alone, for evaluation commands.
pub fn build_identity(cfg: &ModelsConfig) -> anyhow::Result<Extractor> {
    match &cfg.identity {
        Some(e) => Ok(Extractor::new(remote(e, Role::Identity)?)?),
        None => Ok(cfg.toy.build()?.identity),
    }
}
