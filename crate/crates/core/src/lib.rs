//! Dual-stream speech recogniser: an ASR stream (SAN-M encoder, CIF
//! predictor, sampler, SAN-M decoder), a vision-hotword stream that reads
//! image patches reweighted by their similarity to the audio, and three
//! ways of merging the two, plus scoring and audio-corruption evaluation.

pub mod asr;
pub mod bundle;
pub mod config;
pub mod corruption;
mod error;
pub mod export;
pub mod merge;
pub mod model;
pub mod score;
pub mod train;
pub mod types;
pub mod vh;
pub mod vocab;

pub use bundle::{transcribe, HypothesisBundle, HypothesisRecord};
pub use config::{GateMode, LossWeights, MergeConfig, ModelConfig, SamplerConfig, TrainConfig};
pub use error::{CoreError, Result};
pub use model::Model;
pub use train::{StepLosses, Trainer};
pub use types::{AlignmentSpan, Example, ImagePatchGrid, SpeechSequence, TokenSequence};
pub use vocab::Vocabulary;
