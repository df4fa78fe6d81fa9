//! Model checkpoints: a container whose header records the model kind, its
//! configuration and the number of completed training steps.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use super::container::Container;
use crate::nn::optim::AdamW;
use crate::nn::ParamStore;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub step: usize,
    pub container: Container,
}

impl Checkpoint {
    pub fn new(kind: &str, config: &impl Serialize, step: usize, params: &ParamStore, opt: Option<&AdamW>) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let mut container = Container::new(json!({ "kind": kind, "config": config, "step": step }));
        container.tensors = params.to_tensors("param.");
        if let Some(o) = opt {
            container.tensors.extend(o.to_tensors("adam."));
        }
        Ok(Self {
            kind: kind.to_string(),
            config,
            step,
            container,
        })
    }

    pub fn from_container(container: Container) -> Result<Self> {
        let h = &container.header;
        let kind = h["kind"]
            .as_str()
            .ok_or_else(|| Error::Format("checkpoint header lacks a kind".into()))?
            .to_string();
        let step = h["step"]
            .as_u64()
            .ok_or_else(|| Error::Format("checkpoint header lacks a step".into()))? as usize;
        Ok(Self {
            kind,
            config: h["config"].clone(),
            step,
            container,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.container.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }

    /// Fails unless the checkpoint holds the expected model kind.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Precondition(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn config<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    pub fn load_params(&self, store: &mut ParamStore) -> Result<()> {
        store.load_tensors("param.", &self.container.tensors)
    }

    pub fn load_optimizer(&self, opt: &mut AdamW) -> Result<()> {
        opt.load_tensors("adam.", &self.container.tensors)
    }
}
