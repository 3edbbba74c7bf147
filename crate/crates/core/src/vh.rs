//! Vision-hotword stream: patch vision encoder, adapters and similarity
//! reweighting, LSTM hotword encoder and the VH decoder.

use vhot_numerics::loss::{cosine_rows, info_nce_loss};
use vhot_numerics::{argmax, Graph, NodeId, Tensor};

use crate::error::{contract, CoreError, Result};
use crate::model::Model;

/// Number of hotwords reported per token by [`AttentionCapture::top_hotwords`].
pub const TOP_HOTWORDS: usize = 5;

/// Graph handles of the encoded image: row 0 of `all` is `H^V_CLS`.
#[derive(Clone, Copy, Debug)]
pub struct VisionNodes {
    pub all: NodeId,
    pub cls: NodeId,
    pub hotwords: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct AdaptNodes {
    /// `H^V_i * S_i`: original hotwords scaled by their similarity.
    pub weighted: NodeId,
    pub adapted_hotwords: NodeId,
    pub adapted_cls: NodeId,
    pub pooled_audio: NodeId,
    pub similarity: NodeId,
}

#[derive(Clone, Debug)]
pub struct VhDecodeNodes {
    pub logits: NodeId,
    pub probs: NodeId,
    /// Per-head `[N', K]` cross-attention of the two decoder applications.
    pub attention: Vec<(NodeId, NodeId)>,
}

/// ViT-style encoder over `patches: [K, patch_len]`.
pub fn vision_encode(g: &mut Graph, m: &Model, patches: NodeId) -> Result<VisionNodes> {
    let k = m.cfg.hotwords();
    if g.value(patches).rows() != k {
        return Err(contract(format!("image has {} patches, model expects {k}", g.value(patches).rows())));
    }
    let ps = &m.store;
    let v = &m.vision;
    let x = v.patch.forward(g, ps, patches)?;
    let pos = g.param(ps, v.position);
    let x = g.add(x, pos);
    let cls = g.param(ps, v.cls);
    let mut x = g.concat_rows(&[cls, x]);
    for block in &v.blocks {
        x = block.forward(g, ps, x)?;
    }
    let all = v.ln_out.forward(g, ps, x)?;
    Ok(VisionNodes {
        all,
        cls: g.slice_rows(all, 0, 1),
        hotwords: g.slice_rows(all, 1, k),
    })
}

/// Adapted image CLS `H^{V'}_CLS: [1, d]`.
pub fn adapt_cls(g: &mut Graph, m: &Model, vision: &VisionNodes) -> Result<NodeId> {
    Ok(m.vh.vision_adapter.forward(g, &m.store, vision.cls)?)
}

/// Pooled audio `H^{E'}: [1, d]`: row 0 of the speech adapter run over
/// the encoder states with a learned CLS row in front.
pub fn pool_audio(g: &mut Graph, m: &Model, encoder_states: NodeId) -> Result<NodeId> {
    let cls = g.param(&m.store, m.vh.speech_cls);
    let x = g.concat_rows(&[cls, encoder_states]);
    let y = m.vh.speech_adapter.forward(g, &m.store, x)?;
    Ok(g.slice_rows(y, 0, 1))
}

/// Similarity reweighting: `S = cos(adapter(H^V_i), H^{E'})` and
/// `weighted_i = H^V_i * S_i`.
pub fn adapt_and_weight(g: &mut Graph, m: &Model, vision: &VisionNodes, encoder_states: NodeId) -> Result<AdaptNodes> {
    let adapted_all = m.vh.vision_adapter.forward(g, &m.store, vision.all)?;
    let k = m.cfg.hotwords();
    let adapted_cls = g.slice_rows(adapted_all, 0, 1);
    let adapted_hotwords = g.slice_rows(adapted_all, 1, k);
    let pooled_audio = pool_audio(g, m, encoder_states)?;
    let mut similarity = cosine_rows(g, adapted_hotwords, pooled_audio);
    if m.cfg.clamp_similarity {
        similarity = g.relu(similarity);
    }
    let weighted = g.scale_rows(vision.hotwords, similarity);
    Ok(AdaptNodes {
        weighted,
        adapted_hotwords,
        adapted_cls,
        pooled_audio,
        similarity,
    })
}

/// Image-audio InfoNCE over paired rows `adapted_cls: [B, d]`, `pooled_audio: [B, d]`.
pub fn contrastive_loss(g: &mut Graph, adapted_cls: NodeId, pooled_audio: NodeId, temperature: f64) -> Result<NodeId> {
    Ok(info_nce_loss(g, adapted_cls, pooled_audio, temperature)?)
}

/// LSTM hotword encoder: `[K, d] -> [K, d]`.
pub fn vh_encode(g: &mut Graph, m: &Model, weighted: NodeId) -> Result<NodeId> {
    if g.value(weighted).rows() == 0 {
        return Err(contract("no hotwords to encode"));
    }
    Ok(m.vh.encoder.forward(g, &m.store, weighted)?)
}

/// VH decoder: the decoder block attends from `e_a` and from `h_d` onto
/// the encoded hotwords; logits are `W^V (E^{a'} + H^{D'}) / 2 + b^V`.
pub fn vh_decode(g: &mut Graph, m: &Model, e_a: NodeId, h_d: NodeId, hot: NodeId, capture: bool) -> Result<VhDecodeNodes> {
    let (na, nd) = (g.value(e_a).rows(), g.value(h_d).rows());
    if na != nd {
        return Err(contract(format!("VH decoder inputs differ in length: {na} acoustic rows, {nd} decoder rows")));
    }
    let ps = &m.store;
    let (a, probs_a) = m.vh.decoder_acoustic.forward(g, ps, e_a, hot, capture)?;
    let (d, probs_d) = m.vh.decoder_for_hidden().forward(g, ps, h_d, hot, capture)?;
    let sum = g.add(a, d);
    let avg = g.scale(sum, 0.5);
    let logits = m.vh.out.forward(g, ps, avg)?;
    let probs = g.softmax(logits);
    Ok(VhDecodeNodes {
        logits,
        probs,
        attention: probs_a.into_iter().zip(probs_d).collect(),
    })
}

/// VH-decoder cross-attention of one utterance, `[heads, N', K]`.
///
/// Each head's matrix is the mean of the attention from the `E^a` and the
/// `H^D` applications, so every token row still sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCapture {
    pub scores: Tensor,
}

impl AttentionCapture {
    pub fn from_graph(g: &Graph, nodes: &VhDecodeNodes) -> Result<Self> {
        if nodes.attention.is_empty() {
            return Err(CoreError::Capture("attention capture was not enabled for this decode".into()));
        }
        let heads = nodes.attention.len();
        let (n, k) = {
            let s = g.value(nodes.attention[0].0).shape();
            (s[0], s[1])
        };
        let mut data = Vec::with_capacity(heads * n * k);
        for &(a, d) in &nodes.attention {
            data.extend(g.value(a).data().iter().zip(g.value(d).data()).map(|(x, y)| 0.5 * (x + y)));
        }
        Ok(Self {
            scores: Tensor::new(vec![heads, n, k], data)?,
        })
    }

    pub fn heads(&self) -> usize {
        self.scores.shape()[0]
    }

    pub fn tokens(&self) -> usize {
        self.scores.shape()[1]
    }

    pub fn hotwords(&self) -> usize {
        self.scores.shape()[2]
    }

    /// Head-averaged scores laid out `[K, N']`: row = hotword, column = token.
    pub fn mean_over_heads(&self) -> Tensor {
        let (h, n, k) = (self.heads(), self.tokens(), self.hotwords());
        let s = self.scores.data();
        let mut out = vec![0.0; k * n];
        for head in 0..h {
            for j in 0..n {
                for i in 0..k {
                    out[i * n + j] += s[(head * n + j) * k + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= h as f64);
        Tensor::new(vec![k, n], out).expect("shape matches data")
    }

    /// The `TOP_HOTWORDS` highest-scoring hotwords of each token, best
    /// first, equal scores ordered by lower index.
    pub fn top_hotwords(&self) -> Vec<Vec<usize>> {
        top_per_column(&self.mean_over_heads(), TOP_HOTWORDS)
    }
}

/// For each column of `m: [K, N]`, the indices of the `top` largest
/// entries, ties broken toward the lower row index.
pub fn top_per_column(m: &Tensor, top: usize) -> Vec<Vec<usize>> {
    let (k, n) = (m.rows(), m.cols());
    (0..n)
        .map(|j| {
            let mut idx: Vec<usize> = (0..k).collect();
            idx.sort_by(|&a, &b| m.data()[b * n + j].total_cmp(&m.data()[a * n + j]).then(a.cmp(&b)));
            idx.truncate(top);
            idx
        })
        .collect()
}

/// Row-wise argmax of a probability grid.
pub fn grid_tokens(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows()).map(|i| argmax(probs.row(i))).collect()
}
