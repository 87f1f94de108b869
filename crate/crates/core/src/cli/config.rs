use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::classify::MlpConfig;
use crate::corpus::{GenerateConfig, RealignMode};
use crate::decode::AttnAggregation;
use crate::error::{Error, Result};
use crate::eval::TimingSource;
use crate::model::{ModelConfig, TrainConfig};
use crate::spot::MiningStrategy;
use crate::text::PreprocessConfig;

/// Every tunable of the pipeline, one section per stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds model and classifier initialisation, shuffling and dropout.
    pub seed: u64,
    pub corpus: CorpusSection,
    pub text: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeSection,
    pub mining: MiningSection,
    pub eval: EvalSection,
    pub classify: ClassifySection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub generate: GenerateConfig,
    /// Trailing programmes written to a separate held-out corpus.
    pub test_programmes: usize,
    /// Train only on clips with an annotation above this confidence.
    pub train_min_conf: Option<f64>,
    pub realign: RealignMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMethod {
    #[default]
    Greedy,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSection {
    pub method: DecodeMethod,
    pub beam_width: usize,
    pub aggregation: AttnAggregation,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self {
            method: DecodeMethod::Greedy,
            beam_width: 4,
            aggregation: AttnAggregation::MeanAll,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningSection {
    pub strategy: MiningStrategy,
    /// Defaults to layer 0 for teacher forcing and the layer mean otherwise.
    pub aggregation: Option<AttnAggregation>,
    /// Words counted separately in the yield statistics.
    pub eval_vocab: Option<Vec<String>>,
}

impl Default for MiningSection {
    fn default() -> Self {
        Self {
            strategy: MiningStrategy::GdFiltered,
            aggregation: None,
            eval_vocab: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Localisation tolerance in feature frames.
    pub tolerance: i64,
    pub timing: TimingSource,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            tolerance: 2,
            timing: TimingSource::Truth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifySection {
    /// Pooling window in video frames.
    pub window_frames: u32,
    pub mlp: MlpConfig,
    /// Class words; every vocabulary token when absent.
    pub classes: Option<Vec<String>>,
}

impl Default for ClassifySection {
    fn default() -> Self {
        Self {
            window_frames: 16,
            mlp: MlpConfig::default(),
            classes: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("invalid run config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies `key.path=value` overrides. Values are parsed as JSON when
    /// possible and taken as strings otherwise. Unknown keys are rejected.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override {o:?} is not KEY=VALUE")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut doc;
            let parts: Vec<&str> = key.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let obj = node
                    .as_object_mut()
                    .ok_or_else(|| Error::config(format!("override {key}: {} is not a section", parts[..i].join("."))))?;
                if !obj.contains_key(*part) {
                    return Err(Error::config(format!("override {key}: unknown key {part:?}")));
                }
                node = obj.get_mut(*part).expect("checked above");
            }
            *node = value;
        }
        serde_json::from_value(doc).map_err(|e| Error::config(format!("invalid override: {e}")))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let body = serde_json::to_vec(self).expect("config serialises");
        hex(&Sha256::digest(&body))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
