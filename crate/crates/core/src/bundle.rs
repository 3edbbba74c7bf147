use serde::Serialize;
use vhot_numerics::{Graph, Tensor};

use crate::asr::{cif_predict, speech_decode, speech_encode};
use crate::error::{contract, Result};
use crate::model::Model;
use crate::types::{ImagePatchGrid, SpeechSequence};
use crate::vh::{adapt_and_weight, vh_decode, vh_encode, vision_encode, AttentionCapture};

/// Both streams' outputs for one utterance, everything merging needs.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisBundle {
    pub id: String,
    /// `p_A: [N', |V|]`.
    pub probs_asr: Tensor,
    /// `p_V: [N', |V|]`.
    pub probs_vh: Tensor,
    pub tokens_asr: Vec<usize>,
    pub tokens_vh: Vec<usize>,
    /// `H^{V'}_CLS`.
    pub adapted_cls: Vec<f64>,
    /// `H^{E'}`.
    pub pooled_audio: Vec<f64>,
    /// Hotword similarities `S_{V'A}`.
    pub similarity: Vec<f64>,
    /// Set when the predictor fired nothing; grids and token lists are empty.
    pub empty: bool,
    pub attention: Option<AttentionCapture>,
}

impl HypothesisBundle {
    pub fn len(&self) -> usize {
        self.tokens_asr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens_asr.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        if self.probs_asr.shape() != self.probs_vh.shape() {
            return Err(contract(format!(
                "{}: stream grids differ in shape, {:?} vs {:?}",
                self.id,
                self.probs_asr.shape(),
                self.probs_vh.shape()
            )));
        }
        if self.tokens_asr.len() != self.probs_asr.rows() || self.tokens_vh.len() != self.probs_vh.rows() {
            return Err(contract(format!("{}: token lists do not match grid rows", self.id)));
        }
        Ok(())
    }
}

/// Dual-stream inference on one (speech, image) pair: raw CIF firing, one
/// ASR decoding pass, then the VH stream on the same `E^a` and `H^D`.
pub fn transcribe(m: &Model, speech: &SpeechSequence, image: &ImagePatchGrid, capture: bool) -> Result<HypothesisBundle> {
    let mut g = Graph::new();
    g.set_grad_enabled(false);
    let frames = g.constant(speech.frames.clone());
    let h = speech_encode(&mut g, m, frames)?;
    let cif = cif_predict(&mut g, m, h, None)?;
    let patches = g.constant(image.patches.clone());
    let vision = vision_encode(&mut g, m, patches)?;
    let adapt = adapt_and_weight(&mut g, m, &vision, h)?;
    let adapted_cls = g.value(adapt.adapted_cls).data().to_vec();
    let pooled_audio = g.value(adapt.pooled_audio).data().to_vec();
    let similarity = g.value(adapt.similarity).data().to_vec();
    let Some(acoustic) = cif.acoustic else {
        let v = m.cfg.vocab_size;
        return Ok(HypothesisBundle {
            id: speech.id.clone(),
            probs_asr: Tensor::zeros(&[0, v]),
            probs_vh: Tensor::zeros(&[0, v]),
            tokens_asr: Vec::new(),
            tokens_vh: Vec::new(),
            adapted_cls,
            pooled_audio,
            similarity,
            empty: true,
            attention: None,
        });
    };
    let dec = speech_decode(&mut g, m, h, acoustic)?;
    let hot = vh_encode(&mut g, m, adapt.weighted)?;
    let vh = vh_decode(&mut g, m, acoustic, dec.hidden, hot, capture)?;
    let attention = if capture {
        Some(AttentionCapture::from_graph(&g, &vh)?)
    } else {
        None
    };
    let probs_asr = g.value(dec.probs).clone();
    let probs_vh = g.value(vh.probs).clone();
    Ok(HypothesisBundle {
        id: speech.id.clone(),
        tokens_asr: probs_asr.argmax_rows(),
        tokens_vh: probs_vh.argmax_rows(),
        probs_asr,
        probs_vh,
        adapted_cls,
        pooled_audio,
        similarity,
        empty: false,
        attention,
    })
}

/// One JSON Lines hypothesis record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisRecord {
    pub id: String,
    pub method: String,
    pub text: String,
    pub tokens: Vec<usize>,
    /// Log-probability of each emitted token under the method's grid.
    pub log_probs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gate_open: Option<bool>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub empty: bool,
}

/// Log-probabilities of `tokens` read off `probs` row by row.
pub fn token_log_probs(probs: &Tensor, tokens: &[usize]) -> Vec<f64> {
    tokens.iter().enumerate().map(|(i, &t)| probs.row(i)[t].ln()).collect()
}
