//! Merging the two streams: M1 probability mixing, M2 image-text token
//! selection and M3 audio-image gating.

use vhot_numerics::loss::cosine_similarity;
use vhot_numerics::{argmax, Graph, NodeId, Tensor};

use crate::bundle::HypothesisBundle;
use crate::config::{GateMode, MergeConfig};
use crate::error::{contract, Result};
use crate::model::Model;

/// M1: row-wise argmax of `alpha * p_A + (1 - alpha) * p_V`, each grid
/// renormalised per row first.
pub fn merge_m1(b: &HypothesisBundle, cfg: &MergeConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    b.check()?;
    let (pa, pv) = (&b.probs_asr, &b.probs_vh);
    Ok((0..pa.rows())
        .map(|i| {
            let (ra, rv) = (pa.row(i), pv.row(i));
            let (sa, sv): (f64, f64) = (ra.iter().sum(), rv.iter().sum());
            let mixed: Vec<f64> = ra
                .iter()
                .zip(rv)
                .map(|(a, v)| cfg.alpha * a / sa + (1.0 - cfg.alpha) * v / sv)
                .collect();
            argmax(&mixed)
        })
        .collect())
}

/// Text encoder and adapter: `[N, d]` contextual token vectors `H^{T'}`.
pub fn text_embed_nodes(g: &mut Graph, m: &Model, tokens: &[usize]) -> Result<NodeId> {
    if tokens.is_empty() {
        return Err(contract("cannot embed an empty token sequence"));
    }
    let ps = &m.store;
    let x = m.text.embed.forward(g, ps, tokens)?;
    let x = m.text.block.forward(g, ps, x)?;
    Ok(m.text.adapter.forward(g, ps, x)?)
}

pub fn text_token_embed(m: &Model, tokens: &[usize]) -> Result<Tensor> {
    let mut g = Graph::new();
    g.set_grad_enabled(false);
    let out = text_embed_nodes(&mut g, m, tokens)?;
    Ok(g.value(out).clone())
}

/// M2 with an arbitrary text embedder: position `i` keeps `tokens_A[i]`
/// unless the image CLS is strictly closer to the embedding of
/// `tokens_V[i]` (in the context of its own hypothesis).
pub fn merge_m2_with<F>(b: &HypothesisBundle, mut embed: F) -> Result<Vec<usize>>
where
    F: FnMut(&[usize]) -> Result<Tensor>,
{
    b.check()?;
    let (ta, tv) = (&b.tokens_asr, &b.tokens_vh);
    if ta.len() != tv.len() {
        return Err(contract(format!("{}: stream lengths differ, {} vs {}", b.id, ta.len(), tv.len())));
    }
    if ta.is_empty() || ta == tv {
        return Ok(ta.clone());
    }
    let sa = cosine_similarity(&embed(ta)?, &b.adapted_cls)?.values;
    let sv = cosine_similarity(&embed(tv)?, &b.adapted_cls)?.values;
    Ok((0..ta.len()).map(|i| if sv[i] > sa[i] { tv[i] } else { ta[i] }).collect())
}

pub fn merge_m2(b: &HypothesisBundle, m: &Model) -> Result<Vec<usize>> {
    merge_m2_with(b, |t| text_token_embed(m, t))
}

/// `[B, B]` cosine matrix: entry `(i, j)` compares utterance `i`'s pooled
/// audio with image `j`'s adapted CLS.
pub fn audio_image_matrix(bundles: &[HypothesisBundle]) -> Result<Tensor> {
    let n = bundles.len();
    let mut data = Vec::with_capacity(n * n);
    let d = bundles.first().map_or(0, |b| b.adapted_cls.len());
    let images = Tensor::new(vec![n, d], bundles.iter().flat_map(|b| b.adapted_cls.iter().copied()).collect())
        .map_err(|_| contract("image embeddings differ in width"))?;
    for b in bundles {
        data.extend(cosine_similarity(&images, &b.pooled_audio)?.values);
    }
    Ok(Tensor::new(vec![n, n], data)?)
}

/// Gate decisions over a square audio-by-image similarity matrix.
pub fn gate_decisions(sim: &Tensor, mode: GateMode) -> Vec<bool> {
    let n = sim.rows();
    let column = |j: usize| -> Vec<f64> { (0..n).map(|i| sim.row(i)[j]).collect() };
    (0..n)
        .map(|i| match mode {
            GateMode::Open => true,
            GateMode::RowArgmax => argmax(sim.row(i)) == i,
            GateMode::Mutual => argmax(sim.row(i)) == i && argmax(&column(i)) == i,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct M3Output {
    pub tokens: Vec<Vec<usize>>,
    pub gate_open: Vec<bool>,
    pub warnings: Vec<String>,
}

/// M3: utterances matched to their own image within the batch take the M2
/// output, the rest keep `tokens_A`. A batch of one falls back to M2.
pub fn merge_m3_with<F>(bundles: &[HypothesisBundle], cfg: &MergeConfig, mut m2: F) -> Result<M3Output>
where
    F: FnMut(&HypothesisBundle) -> Result<Vec<usize>>,
{
    let mut warnings = Vec::new();
    let gate_open = if bundles.len() < 2 {
        if !bundles.is_empty() {
            warnings.push("M3 batch of one cannot be gated; using M2".to_string());
        }
        vec![true; bundles.len()]
    } else {
        gate_decisions(&audio_image_matrix(bundles)?, cfg.gate_mode)
    };
    let tokens = bundles
        .iter()
        .zip(&gate_open)
        .map(|(b, &open)| if open { m2(b) } else { Ok(b.tokens_asr.clone()) })
        .collect::<Result<_>>()?;
    Ok(M3Output {
        tokens,
        gate_open,
        warnings,
    })
}

pub fn merge_m3(bundles: &[HypothesisBundle], m: &Model, cfg: &MergeConfig) -> Result<M3Output> {
    merge_m3_with(bundles, cfg, |b| merge_m2(b, m))
}
