//! Masking word-aligned audio with white Gaussian noise and scoring how
//! many masked words each stream still transcribes.

use rand::seq::index;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use vhot_numerics::{seeded_rng, Tensor};

use crate::bundle::transcribe;
use crate::error::{contract, Result};
use crate::merge::merge_m2;
use crate::model::Model;
use crate::score::{score_utterance, ScoreReport};
use crate::types::{Example, SpeechSequence};
use crate::vocab::{words_of, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorruptionSpec {
    pub mask_ratio: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(contract(format!("mask ratio must lie in [0, 1], got {}", self.mask_ratio)));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(contract(format!("noise sigma must be positive, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// FNV-1a, used to key per-utterance noise on the utterance id.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Replaces the frames of `floor(ratio * W)` randomly chosen words with
/// i.i.d. `N(0, sigma^2)` features. Returns the corrupted sequence and the
/// sorted masked word indices; all other frames are untouched.
pub fn corrupt_audio(x: &SpeechSequence, spec: &CorruptionSpec) -> Result<(SpeechSequence, Vec<usize>)> {
    spec.validate()?;
    if x.alignment.is_empty() {
        return Err(contract(format!("{}: no word alignment to mask", x.id)));
    }
    let words = x.alignment.len();
    let count = ((spec.mask_ratio * words as f64) + 1e-9).floor() as usize;
    let mut rng = seeded_rng(spec.seed ^ fnv1a(x.id.as_bytes()));
    let mut masked = index::sample(&mut rng, words, count.min(words)).into_vec();
    masked.sort_unstable();
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| contract(e.to_string()))?;
    let d = x.feature_dim();
    let mut data = x.frames.data().to_vec();
    for &w in &masked {
        let span = x.alignment[w];
        for v in &mut data[span.start * d..span.end * d] {
            *v = noise.sample(&mut rng);
        }
    }
    let frames = Tensor::new(x.frames.shape().to_vec(), data)?;
    Ok((
        SpeechSequence {
            id: x.id.clone(),
            frames,
            alignment: x.alignment.clone(),
        },
        masked,
    ))
}

/// One row of the corruption table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorruptionRow {
    pub ratio: f64,
    pub asr: ScoreReport,
    pub m2: ScoreReport,
}

/// Corrupts every test utterance at each ratio, transcribes it with the ASR
/// stream and with M2, and scores both against the references.
pub fn run_corruption_suite(
    m: &Model,
    vocab: &Vocabulary,
    test: &[Example],
    ratios: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<CorruptionRow>> {
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let spec = CorruptionSpec {
            mask_ratio: ratio,
            noise_sigma,
            seed,
        };
        let mut row = CorruptionRow {
            ratio,
            asr: ScoreReport::default(),
            m2: ScoreReport::default(),
        };
        for ex in test {
            let (speech, masked) = corrupt_audio(&ex.speech, &spec)?;
            let bundle = transcribe(m, &speech, &ex.image, false)?;
            let merged = merge_m2(&bundle, m)?;
            let reference = vocab.decode(&ex.tokens.ids);
            let reference = words_of(&reference);
            let asr_text = vocab.decode(&bundle.tokens_asr);
            let m2_text = vocab.decode(&merged);
            row.asr.absorb(&score_utterance(&reference, &words_of(&asr_text), &masked)?.0);
            row.m2.absorb(&score_utterance(&reference, &words_of(&m2_text), &masked)?.0);
        }
        rows.push(row);
    }
    Ok(rows)
}

pub const CORRUPTION_HEADER: &str = "ratio,wer_asr,rr_asr,wer_m2,rr_m2";

pub fn corruption_csv(rows: &[CorruptionRow]) -> String {
    let mut out = String::from(CORRUPTION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            r.ratio,
            r.asr.wer(),
            r.asr.rr(),
            r.m2.wer(),
            r.m2.rr()
        ));
    }
    out
}

/// Column-aligned rendering of the same table for terminals.
pub fn corruption_table(rows: &[CorruptionRow]) -> String {
    let mut out = format!("{:>6} {:>8} {:>8} {:>8} {:>8}\n", "ratio", "WER_ASR", "RR_ASR", "WER_M2", "RR_M2");
    for r in rows {
        out.push_str(&format!(
            "{:>6.2} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            r.ratio,
            r.asr.wer(),
            r.asr.rr(),
            r.m2.wer(),
            r.m2.rr()
        ));
    }
    out
}
