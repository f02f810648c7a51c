//! The trainable lead-time predictor.
//!
//! Audio feature streams are concatenated per frame and run through a stacked
//! LSTM. When word embeddings are enabled their per-frame vector is appended to
//! the top LSTM output before a linear head that emits either mixture
//! parameters or heatmap logits.

mod adam;
mod checkpoint;
mod lstm;
mod mixture;
mod model;
mod params;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use mixture::{
    decode_gmm, decode_heatmap, gmm_cdf, gmm_loglik, gmm_point_estimate, heatmap_loss, heatmap_point_estimate,
    heatmap_target, n_heatmap_buckets, GmmParams, HeatmapParams, PointEstimate, SIGMA_FLOOR,
};
pub use model::{FeatureStreams, HeadOutputs, InputNorm, Model, ModelInput, StreamingState, TrainSample};
pub use params::{ParamSet, Tensor};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome, TrainingSource, Validation};

/// Which input streams a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FeatureSet {
    /// `W`: frame-level acoustic embeddings.
    pub acoustic: bool,
    /// `G`: last-salient-word embeddings.
    pub word: bool,
    /// `R`: RMS energy.
    pub rmse: bool,
    /// `A`: pitch and YIN f0.
    pub prosody: bool,
}

impl FeatureSet {
    pub fn is_empty(&self) -> bool {
        !(self.acoustic || self.word || self.rmse || self.prosody)
    }

    pub fn has_audio(&self) -> bool {
        self.acoustic || self.rmse || self.prosody
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = FeatureSet::default();
        for c in s.chars() {
            let slot = match c.to_ascii_uppercase() {
                'W' => &mut set.acoustic,
                'G' => &mut set.word,
                'R' => &mut set.rmse,
                'A' => &mut set.prosody,
                other => {
                    return Err(Error::Config(format!(
                        "unknown feature letter '{other}' in \"{s}\" (expected W, G, R or A)"
                    )))
                }
            };
            *slot = true;
        }
        if set.is_empty() {
            return Err(Error::Config("feature set must not be empty".into()));
        }
        Ok(set)
    }
}

impl TryFrom<String> for FeatureSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureSet> for String {
    fn from(f: FeatureSet) -> String {
        f.to_string()
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (on, c) in [(self.prosody, 'A'), (self.acoustic, 'W'), (self.word, 'G'), (self.rmse, 'R')] {
            if on {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    #[default]
    Gmm,
    Heatmap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub features: FeatureSet,
    /// Width of the `W` stream; ignored unless `W` is enabled.
    #[serde(default)]
    pub acoustic_dim: usize,
    /// Width of the `G` stream; ignored unless `G` is enabled.
    #[serde(default)]
    pub word_dim: usize,
    #[serde(default = "default_layers")]
    pub lstm_layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Number of mixture components.
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default)]
    pub head: HeadKind,
    /// Dropout on every LSTM layer's output during training.
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    #[serde(default = "default_buckets")]
    pub buckets_per_second: usize,
    #[serde(default)]
    pub point_estimate: PointEstimate,
}

fn default_layers() -> usize {
    2
}
fn default_hidden() -> usize {
    128
}
fn default_components() -> usize {
    15
}
fn default_dropout() -> f64 {
    0.1
}
fn default_delta_max() -> f64 {
    crate::labels::DEFAULT_DELTA_MAX
}
fn default_buckets() -> usize {
    16
}

impl ModelConfig {
    pub fn new(features: FeatureSet) -> Self {
        ModelConfig {
            features,
            acoustic_dim: 0,
            word_dim: 0,
            lstm_layers: default_layers(),
            hidden: default_hidden(),
            components: default_components(),
            head: HeadKind::Gmm,
            dropout: default_dropout(),
            delta_max: default_delta_max(),
            buckets_per_second: default_buckets(),
            point_estimate: PointEstimate::Expectation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model config: {m}")));
        if self.features.is_empty() {
            return bad("feature set must not be empty".into());
        }
        if self.features.acoustic && self.acoustic_dim == 0 {
            return bad("W enabled but acoustic_dim is 0".into());
        }
        if self.features.word && self.word_dim == 0 {
            return bad("G enabled but word_dim is 0".into());
        }
        if self.lstm_layers == 0 || self.hidden == 0 || self.components == 0 {
            return bad("lstm_layers, hidden and components must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.delta_max > 0.0) || self.buckets_per_second == 0 {
            return bad("delta_max and buckets_per_second must be positive".into());
        }
        Ok(())
    }

    /// Width of the concatenated per-frame LSTM input.
    pub fn audio_input_dim(&self) -> usize {
        let f = &self.features;
        (if f.acoustic { self.acoustic_dim } else { 0 })
            + usize::from(f.rmse)
            + if f.prosody { 2 } else { 0 }
    }

    pub fn word_input_dim(&self) -> usize {
        if self.features.word {
            self.word_dim
        } else {
            0
        }
    }

    pub fn head_input_dim(&self) -> usize {
        self.hidden + self.word_input_dim()
    }

    pub fn head_output_dim(&self) -> usize {
        match self.head {
            HeadKind::Gmm => 3 * self.components,
            HeadKind::Heatmap => n_heatmap_buckets(self.delta_max, self.buckets_per_second),
        }
    }
}
