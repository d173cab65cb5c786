//! Run configuration: one TOML file, every key optional, flags applied on top.

use std::path::Path;

use anyhow::Context;
use landscaper::codegraph::Diff2VecConfig;
use landscaper::corpus::{IngestPolicy, SamplingConfig};
use landscaper::nn::ModelConfig;
use landscaper::pipeline::TrainConfig;
use landscaper::searchdsl::TargetField;
use landscaper::textenc::TextPretrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Single-threaded skip-gram and training so reruns are bit-identical.
    pub deterministic: bool,
    /// Parent directory for run directories.
    pub output_dir: String,
    pub ingest: IngestPolicy,
    pub query: QueryConfig,
    pub sampling: SamplingConfig,
    pub codes: Diff2VecConfig,
    pub text: TextPretrainConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            workers: 0,
            deterministic: false,
            output_dir: "runs".into(),
            ingest: IngestPolicy::default(),
            query: QueryConfig::default(),
            sampling: SamplingConfig::default(),
            codes: Diff2VecConfig::default(),
            text: TextPretrainConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    pub field: TargetField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub threshold: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig { threshold: 0.5 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(UsageError(format!(
                "config {} has schema_version {}, this build reads {SCHEMA_VERSION}",
                path.display(),
                cfg.schema_version
            ))
            .into());
        }
        Ok(cfg)
    }

    /// Pushes the global seed, worker count and determinism switch down into
    /// the stage configurations.
    pub fn propagate_globals(&mut self) {
        let workers = if self.deterministic {
            1
        } else if self.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.workers
        };
        self.sampling.seed = self.seed;
        self.codes.diffusion.seed = self.seed;
        self.codes.skipgram.seed = self.seed;
        self.codes.skipgram.workers = workers;
        self.text.skipgram.seed = self.seed;
        self.text.skipgram.workers = workers;
        self.train.seed = self.seed;
        self.train.workers = if self.deterministic { 1 } else { self.workers };
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let check = |r: landscaper::Result<()>| r.map_err(|e| UsageError(e.to_string()));
        check(self.sampling.validate())?;
        check(self.codes.skipgram.validate())?;
        check(self.text.skipgram.validate())?;
        check(self.model.validate())?;
        check(self.train.validate())?;
        if self.model.code_dim != self.codes.skipgram.dimension {
            return Err(UsageError(format!(
                "model.code_dim {} differs from codes.skipgram.dimension {}",
                self.model.code_dim, self.codes.skipgram.dimension
            ))
            .into());
        }
        if self.model.encoder.hidden != self.text.skipgram.dimension {
            return Err(UsageError(format!(
                "model.encoder.hidden {} differs from text.skipgram.dimension {}",
                self.model.encoder.hidden, self.text.skipgram.dimension
            ))
            .into());
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
