//! ASR stream: SAN-M speech encoder, CIF predictor, parameter-free sampler
//! and bidirectional SAN-M decoder.

use rand::seq::index;
use vhot_numerics::{Graph, NodeId, Rng, Tensor};

use crate::config::SamplerConfig;
use crate::error::{contract, Result};
use crate::model::Model;
use crate::types::SpeechSequence;

/// Firing threshold of the integrate-and-fire accumulator.
pub const CIF_THRESHOLD: f64 = 1.0;

/// Trailing accumulation at inference that still emits a final token.
pub const CIF_TAIL: f64 = 0.5;

/// Predicted length, per-token acoustic vectors `E^a` and firing weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedAcoustics {
    pub predicted_length: usize,
    pub acoustic: Tensor,
    pub fire_weights: Vec<f64>,
}

/// Graph handles produced by [`cif_predict`].
#[derive(Clone, Copy, Debug)]
pub struct CifNodes {
    /// Raw per-frame weights `[T]`.
    pub alpha: NodeId,
    /// Weights actually integrated: length-scaled in training, raw otherwise.
    pub fire_weights: NodeId,
    /// `[N', d_model]`, absent when nothing fired.
    pub acoustic: Option<NodeId>,
    pub length: usize,
}

/// Graph handles produced by [`speech_decode`].
#[derive(Clone, Copy, Debug)]
pub struct DecodeNodes {
    pub logits: NodeId,
    pub probs: NodeId,
    /// Pre-output decoder states `H^D`.
    pub hidden: NodeId,
}

/// SAN-M encoder over `frames: [T, feat_dim]`; returns `H^E: [T, d_model]`.
pub fn speech_encode(g: &mut Graph, m: &Model, frames: NodeId) -> Result<NodeId> {
    if g.value(frames).rows() == 0 || g.value(frames).rank() != 2 {
        return Err(contract("speech sequence has no frames"));
    }
    let ps = &m.store;
    let mut x = m.encoder.input.forward(g, ps, frames)?;
    for block in &m.encoder.blocks {
        x = block.forward(g, ps, x)?;
    }
    Ok(m.encoder.ln_out.forward(g, ps, x)?)
}

/// Number of tokens fired by raw weights: one per whole unit of
/// accumulated weight, plus one for a trailing residue of at least
/// [`CIF_TAIL`].
pub fn inference_fires(alpha: &[f64]) -> usize {
    let total: f64 = alpha.iter().sum();
    let whole = (total / CIF_THRESHOLD).floor();
    let residue = total - whole * CIF_THRESHOLD;
    whole as usize + usize::from(residue >= CIF_TAIL)
}

/// Per-frame weights `alpha_t = sigmoid(MLP(h_t))` and integrate-and-fire.
///
/// With `target_length = Some(N)` the weights are rescaled to sum to `N`
/// and exactly `N` vectors are fired; otherwise raw weights decide `N'`.
pub fn cif_predict(g: &mut Graph, m: &Model, h: NodeId, target_length: Option<usize>) -> Result<CifNodes> {
    let ps = &m.store;
    let t_len = g.value(h).rows();
    if t_len == 0 {
        return Err(contract("encoder states are empty"));
    }
    let z = m.predictor.hidden.forward(g, ps, h)?;
    let z = g.relu(z);
    let z = m.predictor.out.forward(g, ps, z)?;
    let z = g.reshape(z, &[t_len]);
    let alpha = g.sigmoid(z);
    let (fire_weights, length) = match target_length {
        Some(n) => {
            if n == 0 {
                return Err(contract("target length must be at least 1"));
            }
            let total = g.sum(alpha);
            let inv = g.recip(total);
            let factor = g.scale(inv, n as f64);
            (g.scale_by(alpha, factor), n)
        }
        None => (alpha, inference_fires(g.value(alpha).data())),
    };
    let acoustic = (length > 0).then(|| g.cif(h, fire_weights, length));
    Ok(CifNodes {
        alpha,
        fire_weights,
        acoustic,
        length,
    })
}

/// `|sum(alpha) - N|`.
pub fn quantity_loss(g: &mut Graph, alpha: NodeId, target_length: usize) -> NodeId {
    let total = g.sum(alpha);
    let diff = g.add_scalar(total, -(target_length as f64));
    g.abs(diff)
}

/// Positions where the first pass disagrees with the target.
pub fn error_positions(target: &[usize], first_pass: &[usize]) -> Vec<usize> {
    target
        .iter()
        .zip(first_pass)
        .enumerate()
        .filter_map(|(i, (a, b))| (a != b).then_some(i))
        .collect()
}

/// `ceil(lambda * e)`, robust to the rounding of `lambda * e`.
pub fn replacement_count(lambda: f64, errors: usize) -> usize {
    let k = (lambda * errors as f64 - 1e-9).ceil().max(0.0) as usize;
    k.min(errors)
}

/// Sorted rows the sampler replaces: `ceil(lambda * e)` of the `e` error
/// positions, drawn uniformly without replacement.
pub fn choose_replacements(target: &[usize], first_pass: &[usize], cfg: &SamplerConfig, rng: &mut Rng) -> Result<Vec<usize>> {
    cfg.validate()?;
    if target.len() != first_pass.len() {
        return Err(contract(format!(
            "sampler needs equal lengths, got target {} and first pass {}",
            target.len(),
            first_pass.len()
        )));
    }
    let errors = error_positions(target, first_pass);
    let k = replacement_count(cfg.lambda, errors.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut rows: Vec<usize> = index::sample(rng, errors.len(), k).into_iter().map(|i| errors[i]).collect();
    rows.sort_unstable();
    Ok(rows)
}

/// Sampler: copy of `acoustic` with the chosen error rows replaced by the
/// target token embeddings `E^c`. Returns the new rows and the replaced
/// positions; with no errors the input node itself is returned.
pub fn sample_semantic(
    g: &mut Graph,
    m: &Model,
    acoustic: NodeId,
    target: &[usize],
    first_pass: &[usize],
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<(NodeId, Vec<usize>)> {
    if g.value(acoustic).rows() != target.len() {
        return Err(contract(format!(
            "sampler has {} acoustic rows for {} target tokens",
            g.value(acoustic).rows(),
            target.len()
        )));
    }
    let rows = choose_replacements(target, first_pass, cfg, rng)?;
    if rows.is_empty() {
        return Ok((acoustic, rows));
    }
    let embed = m.token_embed.forward(g, &m.store, target)?;
    Ok((g.replace_rows(acoustic, embed, &rows), rows))
}

/// Bidirectional SAN-M decoder of `rep: [N', d]` attending to `h: [T, d]`.
pub fn speech_decode(g: &mut Graph, m: &Model, h: NodeId, rep: NodeId) -> Result<DecodeNodes> {
    if g.value(rep).rows() == 0 {
        return Err(contract("decoder input is empty"));
    }
    let ps = &m.store;
    let mut x = rep;
    for block in &m.decoder.blocks {
        x = block.forward(g, ps, x, h, false)?.0;
    }
    let hidden = m.decoder.ln_out.forward(g, ps, x)?;
    let logits = m.decoder.out.forward(g, ps, hidden)?;
    let probs = g.softmax(logits);
    Ok(DecodeNodes { logits, probs, hidden })
}

/// One-pass ASR output for an utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct AsrHypothesis {
    pub tokens: Vec<usize>,
    /// `p_A: [N', |V|]`.
    pub probs: Tensor,
    /// `H^D: [N', d_model]`.
    pub hidden: Tensor,
    pub acoustics: AlignedAcoustics,
    /// Set when the predictor fired nothing; all grids are then empty.
    pub empty: bool,
}

/// Inference: raw CIF firing and a single decoding pass on `E^a`.
pub fn transcribe_asr(m: &Model, x: &SpeechSequence) -> Result<AsrHypothesis> {
    let mut g = Graph::new();
    g.set_grad_enabled(false);
    let frames = g.constant(x.frames.clone());
    let h = speech_encode(&mut g, m, frames)?;
    let cif = cif_predict(&mut g, m, h, None)?;
    let fire_weights = g.value(cif.alpha).data().to_vec();
    let d = m.cfg.d_model;
    let Some(acoustic) = cif.acoustic else {
        return Ok(AsrHypothesis {
            tokens: Vec::new(),
            probs: Tensor::zeros(&[0, m.cfg.vocab_size]),
            hidden: Tensor::zeros(&[0, d]),
            acoustics: AlignedAcoustics {
                predicted_length: 0,
                acoustic: Tensor::zeros(&[0, d]),
                fire_weights,
            },
            empty: true,
        });
    };
    let dec = speech_decode(&mut g, m, h, acoustic)?;
    let probs = g.value(dec.probs).clone();
    Ok(AsrHypothesis {
        tokens: probs.argmax_rows(),
        hidden: g.value(dec.hidden).clone(),
        acoustics: AlignedAcoustics {
            predicted_length: cif.length,
            acoustic: g.value(acoustic).clone(),
            fire_weights,
        },
        probs,
        empty: false,
    })
}
