//! Small models and random inputs shared by the integration tests.
#![allow(dead_code)]

use rand::Rng as _;
use vhot_core::{AlignmentSpan, Example, ImagePatchGrid, Model, ModelConfig, SpeechSequence, TokenSequence, Vocabulary};
use vhot_numerics::{seeded_rng, Rng, Tensor};

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        feat_dim: 6,
        d_model: 16,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        fsmn_kernel: 3,
        grid: 2,
        patch_len: 4,
        vision_layers: 1,
        ..ModelConfig::default()
    }
}

pub fn tiny_model(seed: u64) -> Model {
    Model::new(tiny_config(), seed).unwrap()
}

pub fn gaussian(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Speech with one span per word, `frames_per_word` frames each.
pub fn speech(rng: &mut Rng, id: &str, words: usize, frames_per_word: usize, feat_dim: usize) -> SpeechSequence {
    let frames = gaussian(rng, words * frames_per_word, feat_dim, 1.0);
    let alignment = (0..words)
        .map(|w| AlignmentSpan {
            word: w,
            start: w * frames_per_word,
            end: (w + 1) * frames_per_word,
        })
        .collect();
    SpeechSequence::new(id, frames, alignment).unwrap()
}

pub fn image(rng: &mut Rng, id: &str, cfg: &ModelConfig) -> ImagePatchGrid {
    ImagePatchGrid::new(id, cfg.grid, gaussian(rng, cfg.hotwords(), cfg.patch_len, 1.0)).unwrap()
}

/// A random training example whose transcript is `text`.
pub fn example(seed: u64, id: &str, text: &str, cfg: &ModelConfig) -> Example {
    let mut rng = seeded_rng(seed);
    let words = vhot_core::vocab::words_of(text).len();
    Example {
        speech: speech(&mut rng, id, words, 4, cfg.feat_dim),
        tokens: TokenSequence::new(Vocabulary::characters().encode(text).unwrap()),
        image: image(&mut rng, id, cfg),
    }
}
