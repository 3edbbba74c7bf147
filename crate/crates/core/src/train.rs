//! Two-pass joint training of both streams.

use serde::Serialize;
use vhot_numerics::loss::cosine_matrix;
use vhot_numerics::{Adam, Graph, NodeId, Rng, Tensor};

use crate::asr::{cif_predict, quantity_loss, sample_semantic, speech_decode, speech_encode};
use crate::config::TrainConfig;
use crate::error::{contract, CoreError, Result};
use crate::merge::text_embed_nodes;
use crate::model::{step_rng, Model};
use crate::types::Example;
use crate::vh::{adapt_and_weight, contrastive_loss, vh_decode, vh_encode, vision_encode};

/// First-pass decode of one training item: its tokens `Y'_A` and states `H^D`.
#[derive(Clone, Debug, PartialEq)]
pub struct FirstPass {
    pub tokens: Vec<usize>,
    pub hidden: Tensor,
}

/// Unweighted loss components of one step, each averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepLosses {
    pub total: f64,
    pub asr: f64,
    pub vh: f64,
    pub quantity: f64,
    pub contrastive: f64,
    pub text_image: f64,
    /// Rows the sampler replaced across the batch.
    pub sampled: usize,
    pub grad_norm: f64,
}

impl StepLosses {
    pub fn is_finite(&self) -> bool {
        [self.total, self.asr, self.vh, self.quantity, self.contrastive, self.text_image]
            .iter()
            .all(|v| v.is_finite())
    }
}

struct VhTerms {
    ce: NodeId,
    adapted_cls: NodeId,
    pooled_audio: NodeId,
    text: NodeId,
}

/// Builds the joint loss for `batch`, back-propagates it into the model's
/// gradient buffers and returns the components with the first-pass results.
///
/// Pass 1 decodes `E^a` with gradients disabled to find the errors the
/// sampler corrects; pass 2 decodes the sampled features and carries the
/// ASR loss. The VH stream reads `E^a` and the pass-1 `H^D`, matching what
/// it sees at inference. `cached` substitutes precomputed first passes.
pub fn accumulate_gradients(
    m: &mut Model,
    batch: &[Example],
    cfg: &TrainConfig,
    rng: &mut Rng,
    cached: Option<&[FirstPass]>,
) -> Result<(StepLosses, Vec<FirstPass>)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(contract("empty training batch"));
    }
    if cached.is_some_and(|c| c.len() != batch.len()) {
        return Err(contract("cached first passes do not match the batch"));
    }
    let with_vh = !cfg.freeze_vh;
    let w = cfg.weights;
    let mut g = Graph::new();
    let mut losses = StepLosses::default();
    let mut firsts = Vec::with_capacity(batch.len());
    let mut item_losses = Vec::with_capacity(batch.len());
    let mut asr_terms = Vec::new();
    let mut quantity_terms = Vec::new();
    let mut vh_terms: Vec<VhTerms> = Vec::new();
    let mut total_tokens = 0usize;

    for (i, ex) in batch.iter().enumerate() {
        let target = &ex.tokens.ids;
        let n = target.len();
        if n == 0 {
            return Err(contract(format!("{}: empty target", ex.speech.id)));
        }
        ex.tokens.check(m.cfg.vocab_size)?;
        total_tokens += n;
        let frames = g.constant(ex.speech.frames.clone());
        let h = speech_encode(&mut g, m, frames)?;
        let cif = cif_predict(&mut g, m, h, Some(n))?;
        let acoustic = cif.acoustic.expect("training fires the target length");
        let q = quantity_loss(&mut g, cif.alpha, n);

        let first = match cached {
            Some(c) => c[i].clone(),
            None => {
                g.set_grad_enabled(false);
                let dec = speech_decode(&mut g, m, h, acoustic)?;
                g.set_grad_enabled(true);
                FirstPass {
                    tokens: g.value(dec.probs).argmax_rows(),
                    hidden: g.value(dec.hidden).clone(),
                }
            }
        };
        let (rep, rows) = sample_semantic(&mut g, m, acoustic, target, &first.tokens, &cfg.sampler, rng)?;
        losses.sampled += rows.len();
        let dec = speech_decode(&mut g, m, h, rep)?;
        let ce = g.cross_entropy(dec.logits, target);
        let ce = g.scale(ce, 1.0 / n as f64);

        let a = g.scale(ce, w.asr);
        let b = g.scale(q, w.quantity);
        let mut item = g.add(a, b);
        if with_vh {
            let hidden = g.constant(first.hidden.clone());
            let patches = g.constant(ex.image.patches.clone());
            let vision = vision_encode(&mut g, m, patches)?;
            let adapt = adapt_and_weight(&mut g, m, &vision, h)?;
            let hot = vh_encode(&mut g, m, adapt.weighted)?;
            let vh = vh_decode(&mut g, m, acoustic, hidden, hot, false)?;
            let ce_vh = g.cross_entropy(vh.logits, target);
            let ce_vh = g.scale(ce_vh, 1.0 / n as f64);
            let c = g.scale(ce_vh, w.vh);
            item = g.add(item, c);
            let text = text_embed_nodes(&mut g, m, target)?;
            vh_terms.push(VhTerms {
                ce: ce_vh,
                adapted_cls: adapt.adapted_cls,
                pooled_audio: adapt.pooled_audio,
                text,
            });
        }
        asr_terms.push(ce);
        quantity_terms.push(q);
        item_losses.push(item);
        firsts.push(first);
    }

    let bsz = batch.len() as f64;
    let summed = sum_nodes(&mut g, &item_losses);
    let mut total = g.scale(summed, 1.0 / bsz);
    losses.asr = mean_value(&g, &asr_terms);
    losses.quantity = mean_value(&g, &quantity_terms);
    if with_vh {
        let ces: Vec<NodeId> = vh_terms.iter().map(|t| t.ce).collect();
        losses.vh = mean_value(&g, &ces);
        if batch.len() >= 2 {
            let cls: Vec<NodeId> = vh_terms.iter().map(|t| t.adapted_cls).collect();
            let audio: Vec<NodeId> = vh_terms.iter().map(|t| t.pooled_audio).collect();
            let cls = g.concat_rows(&cls);
            let audio = g.concat_rows(&audio);
            let con = contrastive_loss(&mut g, cls, audio, cfg.temperature)?;
            losses.contrastive = g.value(con).item();
            let c = g.scale(con, w.contrastive);
            total = g.add(total, c);

            let mut parts = Vec::with_capacity(vh_terms.len());
            for (i, t) in vh_terms.iter().enumerate() {
                let sims = cosine_matrix(&mut g, t.text, cls);
                let logits = g.scale(sims, 1.0 / cfg.temperature);
                let targets = vec![i; g.value(logits).rows()];
                parts.push(g.cross_entropy(logits, &targets));
            }
            let ti = sum_nodes(&mut g, &parts);
            let ti = g.scale(ti, 1.0 / total_tokens as f64);
            losses.text_image = g.value(ti).item();
            let c = g.scale(ti, w.text_image);
            total = g.add(total, c);
        }
    }
    losses.total = g.value(total).item();
    if !losses.is_finite() {
        return Err(CoreError::NonFinite(format!("{losses:?}")));
    }
    g.backward(total, &mut m.store)?;
    Ok((losses, firsts))
}

fn sum_nodes(g: &mut Graph, nodes: &[NodeId]) -> NodeId {
    let mut acc = nodes[0];
    for &n in &nodes[1..] {
        acc = g.add(acc, n);
    }
    acc
}

fn mean_value(g: &Graph, nodes: &[NodeId]) -> f64 {
    nodes.iter().map(|&n| g.value(n).item()).sum::<f64>() / nodes.len() as f64
}

/// Model plus optimiser state; one [`Trainer::step`] per batch.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub cfg: TrainConfig,
    seed: u64,
}

impl Trainer {
    pub fn new(mut model: Model, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if cfg.freeze_vh {
            model.freeze_vh();
        }
        let adam = Adam::new(&model.store, cfg.learning_rate);
        Ok(Self { model, adam, cfg, seed })
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    /// One optimisation step: gradients, global-norm clipping, Adam.
    /// Non-finite losses or gradients abort before any weight changes.
    pub fn step(&mut self, batch: &[Example]) -> Result<StepLosses> {
        let mut rng = step_rng(self.seed, self.adam.steps());
        self.model.store.zero_grads();
        let (mut losses, _) = accumulate_gradients(&mut self.model, batch, &self.cfg, &mut rng, None)?;
        let norm = self.model.store.grad_norm();
        if !norm.is_finite() {
            self.model.store.zero_grads();
            return Err(CoreError::NonFinite(format!("gradient norm {norm}")));
        }
        if norm > self.cfg.clip_norm {
            self.model.store.scale_grads(self.cfg.clip_norm / norm);
        }
        losses.grad_norm = norm;
        self.adam.step(&mut self.model.store)?;
        Ok(losses)
    }
}
