use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Architecture sizes. Defaults give a model of roughly 0.5M parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feat_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub fsmn_kernel: usize,
    pub vocab_size: usize,
    pub grid: usize,
    pub patch_len: usize,
    pub vision_layers: usize,
    /// Train the vision encoder jointly instead of keeping its random init.
    pub train_vision: bool,
    /// Apply one VH decoder block to both `E^a` and `H^D`.
    pub share_vh_decoder: bool,
    /// Clamp negative hotword similarities to zero before reweighting.
    pub clamp_similarity: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feat_dim: 40,
            d_model: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            fsmn_kernel: 11,
            vocab_size: crate::vocab::Vocabulary::characters().len(),
            grid: 4,
            patch_len: 16,
            vision_layers: 2,
            train_vision: true,
            share_vh_decoder: true,
            clamp_similarity: false,
        }
    }
}

impl ModelConfig {
    pub fn hotwords(&self) -> usize {
        self.grid * self.grid
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feat_dim", self.feat_dim),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("vocab_size", self.vocab_size),
            ("grid", self.grid),
            ("patch_len", self.patch_len),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(contract(format!("{key} must be positive")));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(contract(format!("d_model {} is not divisible by heads {}", self.d_model, self.heads)));
        }
        if self.fsmn_kernel % 2 == 0 {
            return Err(contract(format!("fsmn_kernel must be odd, got {}", self.fsmn_kernel)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub lambda: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { lambda: 0.75 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(contract(format!("lambda must lie in (0, 1), got {}", self.lambda)));
        }
        Ok(())
    }
}

/// How M3 decides that an utterance matches its own image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Row `i` of the audio-by-image cosine matrix peaks at column `i`.
    #[default]
    RowArgmax,
    /// Row `i` peaks at column `i` and column `i` peaks at row `i`.
    Mutual,
    /// Gate always open; M3 reduces to M2.
    Open,
}

impl std::str::FromStr for GateMode {
    type Err = crate::CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row_argmax" => Ok(Self::RowArgmax),
            "mutual" => Ok(Self::Mutual),
            "open" => Ok(Self::Open),
            other => Err(contract(format!("unknown gate mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for GateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::RowArgmax => "row_argmax",
            Self::Mutual => "mutual",
            Self::Open => "open",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    pub alpha: f64,
    pub gate_mode: GateMode,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gate_mode: GateMode::RowArgmax,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(contract(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub asr: f64,
    pub vh: f64,
    pub quantity: f64,
    pub contrastive: f64,
    /// Auxiliary token-to-image alignment that trains the M2 text encoder.
    pub text_image: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            asr: 1.0,
            vh: 1.0,
            quantity: 1.0,
            contrastive: 0.5,
            text_image: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("asr", self.asr),
            ("vh", self.vh),
            ("quantity", self.quantity),
            ("contrastive", self.contrastive),
            ("text_image", self.text_image),
        ];
        for (key, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(contract(format!("loss weight {key} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Optimisation settings for [`crate::train::Trainer`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub temperature: f64,
    pub sampler: SamplerConfig,
    pub weights: LossWeights,
    /// Train the ASR stream alone; VH, adapter and text parameters stay fixed.
    pub freeze_vh: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            clip_norm: 5.0,
            temperature: 0.07,
            sampler: SamplerConfig::default(),
            weights: LossWeights::default(),
            freeze_vh: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(contract(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(contract("batch size must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(contract(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.temperature > 0.0) {
            return Err(contract(format!("temperature must be positive, got {}", self.temperature)));
        }
        self.sampler.validate()?;
        self.weights.validate()
    }
}
