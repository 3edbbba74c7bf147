//! Plain-text `key = value` run configuration. `#` starts a comment;
//! unknown keys and malformed values are rejected with their line number.

use std::path::Path;
use std::str::FromStr;

use vhot_core::{GateMode, MergeConfig, ModelConfig, TrainConfig};

use crate::corpus::GenConfig;
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub merge: MergeConfig,
    pub epochs: usize,
    /// Stop after this many optimiser steps even if epochs remain.
    pub max_steps: Option<usize>,
    /// Utterances per M3 gating batch at evaluation.
    pub eval_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: GenConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            merge: MergeConfig::default(),
            epochs: 20,
            max_steps: None,
            eval_batch: 8,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "lexicon_size",
    "homophone_pairs",
    "train_utterances",
    "valid_utterances",
    "homophone_fraction",
    "min_words",
    "max_words",
    "feat_dim",
    "grid",
    "patch_len",
    "background_sigma",
    "show_probability",
    "d_model",
    "heads",
    "encoder_layers",
    "decoder_layers",
    "fsmn_kernel",
    "vision_layers",
    "train_vision",
    "share_vh_decoder",
    "clamp_similarity",
    "lambda",
    "alpha",
    "gate_mode",
    "weight_asr",
    "weight_vh",
    "weight_quantity",
    "weight_contrastive",
    "weight_text_image",
    "learning_rate",
    "batch_size",
    "clip_norm",
    "temperature",
    "freeze_vh",
    "epochs",
    "max_steps",
    "eval_batch",
];

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| HarnessError::Usage(format!("config line {line}: cannot parse {key} = {raw:?}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Usage(format!("config line {n}: expected key = value")))?;
            let (key, val) = (key.trim(), val.trim());
            c.set(n, key, val)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Usage(format!("config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, n: usize, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = value(n, key, v)?,
            "lexicon_size" => self.corpus.lexicon_size = value(n, key, v)?,
            "homophone_pairs" => self.corpus.homophone_pairs = value(n, key, v)?,
            "train_utterances" => self.corpus.train_utterances = value(n, key, v)?,
            "valid_utterances" => self.corpus.valid_utterances = value(n, key, v)?,
            "homophone_fraction" => self.corpus.homophone_fraction = value(n, key, v)?,
            "min_words" => self.corpus.min_words = value(n, key, v)?,
            "background_sigma" => self.corpus.background_sigma = value(n, key, v)?,
            "show_probability" => self.corpus.show_probability = value(n, key, v)?,
            "max_words" => self.corpus.max_words = value(n, key, v)?,
            "feat_dim" => {
                self.corpus.feat_dim = value(n, key, v)?;
                self.model.feat_dim = self.corpus.feat_dim;
            }
            "grid" => {
                self.corpus.grid = value(n, key, v)?;
                self.model.grid = self.corpus.grid;
            }
            "patch_len" => {
                self.corpus.patch_len = value(n, key, v)?;
                self.model.patch_len = self.corpus.patch_len;
            }
            "d_model" => self.model.d_model = value(n, key, v)?,
            "heads" => self.model.heads = value(n, key, v)?,
            "encoder_layers" => self.model.encoder_layers = value(n, key, v)?,
            "decoder_layers" => self.model.decoder_layers = value(n, key, v)?,
            "fsmn_kernel" => self.model.fsmn_kernel = value(n, key, v)?,
            "vision_layers" => self.model.vision_layers = value(n, key, v)?,
            "train_vision" => self.model.train_vision = value(n, key, v)?,
            "share_vh_decoder" => self.model.share_vh_decoder = value(n, key, v)?,
            "clamp_similarity" => self.model.clamp_similarity = value(n, key, v)?,
            "lambda" => self.train.sampler.lambda = value(n, key, v)?,
            "alpha" => self.merge.alpha = value(n, key, v)?,
            "gate_mode" => {
                self.merge.gate_mode =
                    GateMode::from_str(v).map_err(|e| HarnessError::Usage(format!("config line {n}: {e}")))?
            }
            "weight_asr" => self.train.weights.asr = value(n, key, v)?,
            "weight_vh" => self.train.weights.vh = value(n, key, v)?,
            "weight_quantity" => self.train.weights.quantity = value(n, key, v)?,
            "weight_contrastive" => self.train.weights.contrastive = value(n, key, v)?,
            "weight_text_image" => self.train.weights.text_image = value(n, key, v)?,
            "learning_rate" => self.train.learning_rate = value(n, key, v)?,
            "batch_size" => self.train.batch_size = value(n, key, v)?,
            "clip_norm" => self.train.clip_norm = value(n, key, v)?,
            "temperature" => self.train.temperature = value(n, key, v)?,
            "freeze_vh" => self.train.freeze_vh = value(n, key, v)?,
            "epochs" => self.epochs = value(n, key, v)?,
            "max_steps" => self.max_steps = Some(value(n, key, v)?),
            "eval_batch" => self.eval_batch = value(n, key, v)?,
            _ => return Err(HarnessError::Usage(format!("config line {n}: unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |e: vhot_core::CoreError| HarnessError::Usage(format!("config: {e}"));
        self.corpus.validate().map_err(|e| HarnessError::Usage(format!("config: {e}")))?;
        self.model.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        self.merge.validate().map_err(usage)?;
        if self.eval_batch == 0 {
            return Err(HarnessError::Usage("config: eval_batch must be positive".into()));
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields this configuration again.
    pub fn to_text(&self) -> String {
        let c = self;
        let mut lines = vec![
            format!("seed = {}", c.seed),
            format!("lexicon_size = {}", c.corpus.lexicon_size),
            format!("homophone_pairs = {}", c.corpus.homophone_pairs),
            format!("train_utterances = {}", c.corpus.train_utterances),
            format!("valid_utterances = {}", c.corpus.valid_utterances),
            format!("homophone_fraction = {}", c.corpus.homophone_fraction),
            format!("min_words = {}", c.corpus.min_words),
            format!("max_words = {}", c.corpus.max_words),
            format!("feat_dim = {}", c.corpus.feat_dim),
            format!("grid = {}", c.corpus.grid),
            format!("patch_len = {}", c.corpus.patch_len),
            format!("background_sigma = {}", c.corpus.background_sigma),
            format!("show_probability = {}", c.corpus.show_probability),
            format!("d_model = {}", c.model.d_model),
            format!("heads = {}", c.model.heads),
            format!("encoder_layers = {}", c.model.encoder_layers),
            format!("decoder_layers = {}", c.model.decoder_layers),
            format!("fsmn_kernel = {}", c.model.fsmn_kernel),
            format!("vision_layers = {}", c.model.vision_layers),
            format!("train_vision = {}", c.model.train_vision),
            format!("share_vh_decoder = {}", c.model.share_vh_decoder),
            format!("clamp_similarity = {}", c.model.clamp_similarity),
            format!("lambda = {}", c.train.sampler.lambda),
            format!("alpha = {}", c.merge.alpha),
            format!("gate_mode = {}", c.merge.gate_mode),
            format!("weight_asr = {}", c.train.weights.asr),
            format!("weight_vh = {}", c.train.weights.vh),
            format!("weight_quantity = {}", c.train.weights.quantity),
            format!("weight_contrastive = {}", c.train.weights.contrastive),
            format!("weight_text_image = {}", c.train.weights.text_image),
            format!("learning_rate = {}", c.train.learning_rate),
            format!("batch_size = {}", c.train.batch_size),
            format!("clip_norm = {}", c.train.clip_norm),
            format!("temperature = {}", c.train.temperature),
            format!("freeze_vh = {}", c.train.freeze_vh),
            format!("epochs = {}", c.epochs),
        ];
        if let Some(m) = c.max_steps {
            lines.push(format!("max_steps = {m}"));
        }
        lines.push(format!("eval_batch = {}", c.eval_batch));
        lines.join("\n") + "\n"
    }
}
