//! Run configuration: one TOML file drives every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::switchboard::PromptStyle;
use crate::trainer::TrainConfig;

use super::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub k: usize,
    pub high_resource: usize,
    pub train_problems: usize,
    pub test_problems: usize,
    pub b_demos: usize,
    pub max_value: i64,
    pub contexts_per_sample: usize,
    pub seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            k: 6,
            high_resource: 1,
            train_problems: 2000,
            test_problems: 250,
            b_demos: 1,
            max_value: 10_000,
            contexts_per_sample: 1,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub context_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            layers: 4,
            model_dim: 128,
            heads: 4,
            ffn_dim: 512,
            context_len: 512,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(self, vocab_size: usize) -> crate::model::ModelConfig {
        crate::model::ModelConfig {
            layers: self.layers,
            model_dim: self.model_dim,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            context_len: self.context_len,
            vocab_size,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// One of en-context, native-context, codeswitch-context.
    pub style: String,
    pub probe_size: usize,
    pub max_new: usize,
    /// 0 evaluates every test query.
    pub limit: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            style: "en-context".into(),
            probe_size: 250,
            max_new: 64,
            limit: 0,
        }
    }
}

pub fn parse_style(name: &str) -> Result<PromptStyle, CliError> {
    match name {
        "en-context" => Ok(PromptStyle::EnContext),
        "native-context" => Ok(PromptStyle::NativeContext),
        "codeswitch-context" => Ok(PromptStyle::CodeSwitchContext),
        other => Err(CliError::usage(format!("unknown prompt style {other:?}"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub workdir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            workdir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.corpus.k < 2 || self.corpus.high_resource == 0 {
            return Err(CliError::config(
                "corpus needs k >= 2 and at least one high-resource language",
            ));
        }
        parse_style(&self.eval.style)?;
        self.train
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok(())
    }

    /// Stable digest of the canonical serialized config; pinned into the
    /// workdir manifest so later commands detect drift.
    pub fn digest(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hex(&hash)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
