//! Training and evaluation runs over a loaded corpus.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use vhot_core::bundle::{token_log_probs, HypothesisRecord};
use vhot_core::merge::{audio_image_matrix, merge_m1, merge_m2, merge_m3};
use vhot_core::score::{score_utterance, ScoreReport};
use vhot_core::{transcribe, CoreError, Example, HypothesisBundle, Model, StepLosses, Trainer, Vocabulary};
use vhot_numerics::{argmax, seeded_rng, Tensor};

use crate::corpus::mix_seed;
use crate::error::{HarnessError, Result};
use crate::runconfig::RunConfig;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_LOG_FILE: &str = "train_log.csv";
pub const LOSS_LOG_HEADER: &str = "step,epoch,total,asr,vh,quantity,contrastive,text_image,sampled,grad_norm";

/// Builds the model for a corpus: input sizes come from the data.
pub fn build_model(cfg: &RunConfig, feat_dim: usize, grid: usize, patch_len: usize) -> Result<Model> {
    let mut mc = cfg.model.clone();
    mc.feat_dim = feat_dim;
    mc.grid = grid;
    mc.patch_len = patch_len;
    mc.vocab_size = Vocabulary::characters().len();
    Ok(Model::new(mc, cfg.seed)?)
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub log: Vec<StepLosses>,
}

fn log_line(step: usize, epoch: usize, l: &StepLosses) -> String {
    format!(
        "{step},{epoch},{},{},{},{},{},{},{},{}\n",
        l.total, l.asr, l.vh, l.quantity, l.contrastive, l.text_image, l.sampled, l.grad_norm
    )
}

/// Runs `cfg.epochs` shuffled epochs (or `cfg.max_steps` steps) of
/// two-pass training. With `out` set, the loss log and a checkpoint after
/// every epoch are written there; a non-finite step aborts the run and
/// leaves the checkpoint of the last good weights.
pub fn train_model(cfg: &RunConfig, model: Model, train: &[Example], out: Option<&Path>) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(HarnessError::Data("no training utterances".into()));
    }
    let mut trainer = Trainer::new(model, cfg.train, mix_seed(cfg.seed, 2))?;
    let mut order_rng = seeded_rng(mix_seed(cfg.seed, 3));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut csv = format!("{LOSS_LOG_HEADER}\n");
    let save = |trainer: &Trainer, csv: &str| -> Result<()> {
        if let Some(dir) = out {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(CHECKPOINT_FILE), trainer.model.checkpoint_bytes())?;
            fs::write(dir.join(LOSS_LOG_FILE), csv)?;
        }
        Ok(())
    };
    let limit = cfg.max_steps.unwrap_or(usize::MAX);
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.train.batch_size) {
            if log.len() >= limit {
                break 'epochs;
            }
            let batch: Vec<Example> = chunk.iter().map(|&i| train[i].clone()).collect();
            match trainer.step(&batch) {
                Ok(l) => {
                    csv.push_str(&log_line(log.len(), epoch, &l));
                    log.push(l);
                }
                Err(CoreError::NonFinite(msg)) => {
                    save(&trainer, &csv)?;
                    return Err(HarnessError::Numeric(format!("step {}: {msg}", log.len())));
                }
                Err(e) => return Err(e.into()),
            }
        }
        save(&trainer, &csv)?;
    }
    save(&trainer, &csv)?;
    Ok(TrainOutcome { trainer, log })
}

pub const METHODS: [&str; 5] = ["asr", "vh", "m1", "m2", "m3"];

/// Checks a comma-separated method list against [`METHODS`].
pub fn parse_methods(list: &str) -> Result<Vec<String>> {
    let methods: Vec<String> = list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if methods.is_empty() {
        return Err(HarnessError::Usage("no evaluation methods given".into()));
    }
    for m in &methods {
        if !METHODS.contains(&m.as_str()) {
            return Err(HarnessError::Usage(format!("unknown method {m:?}; expected one of {}", METHODS.join(", "))));
        }
    }
    Ok(methods)
}

/// Corpus-level scores per method plus the utterance-level records.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub methods: Vec<String>,
    pub scores: Vec<ScoreReport>,
    pub records: Vec<HypothesisRecord>,
    /// Homophone-word errors per method: (wrong, total).
    pub homophone_errors: Vec<(usize, usize)>,
    /// Merge warnings, such as M3 batches of one.
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn wer(&self, method: &str) -> Option<f64> {
        self.methods.iter().position(|m| m == method).map(|i| self.scores[i].wer())
    }

    /// One header line `wer_<method>,...` and one row at 4 decimals.
    pub fn csv(&self) -> String {
        let header: Vec<String> = self.methods.iter().map(|m| format!("wer_{m}")).collect();
        let row: Vec<String> = self.scores.iter().map(|s| format!("{:.4}", s.wer())).collect();
        format!("{}\n{}\n", header.join(","), row.join(","))
    }

    pub fn jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serialises") + "\n")
            .collect()
    }
}

fn picked_log_probs(b: &HypothesisBundle, tokens: &[usize]) -> Vec<f64> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let grid = if b.tokens_asr[i] == t { &b.probs_asr } else { &b.probs_vh };
            grid.row(i)[t].ln()
        })
        .collect()
}

fn mixed_log_probs(b: &HypothesisBundle, alpha: f64, tokens: &[usize]) -> Vec<f64> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let (ra, rv) = (b.probs_asr.row(i), b.probs_vh.row(i));
            let (sa, sv): (f64, f64) = (ra.iter().sum(), rv.iter().sum());
            (alpha * ra[t] / sa + (1.0 - alpha) * rv[t] / sv).ln()
        })
        .collect()
}

/// Transcribes `examples` in gating batches of `cfg.eval_batch` and scores
/// every requested method against the references.
pub fn evaluate(
    model: &Model,
    cfg: &RunConfig,
    examples: &[Example],
    methods: &[String],
    homophone_flags: &dyn Fn(&str) -> Option<Vec<bool>>,
) -> Result<EvalReport> {
    let vocab = Vocabulary::characters();
    let mut scores = vec![ScoreReport::default(); methods.len()];
    let mut homophone_errors = vec![(0usize, 0usize); methods.len()];
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for chunk in examples.chunks(cfg.eval_batch) {
        let bundles = chunk
            .iter()
            .map(|ex| transcribe(model, &ex.speech, &ex.image, false))
            .collect::<vhot_core::Result<Vec<_>>>()?;
        let m3 = if methods.iter().any(|m| m == "m3") {
            let out = merge_m3(&bundles, model, &cfg.merge)?;
            warnings.extend(out.warnings.iter().map(|w| format!("{}: {w}", chunk[0].speech.id)));
            Some(out)
        } else {
            None
        };
        for (i, (ex, b)) in chunk.iter().zip(&bundles).enumerate() {
            let reference = vocab.words(&ex.tokens.ids);
            for (k, method) in methods.iter().enumerate() {
                let mut gate_open = None;
                let (tokens, log_probs) = match method.as_str() {
                    "asr" => (b.tokens_asr.clone(), token_log_probs(&b.probs_asr, &b.tokens_asr)),
                    "vh" => (b.tokens_vh.clone(), token_log_probs(&b.probs_vh, &b.tokens_vh)),
                    "m1" => {
                        let t = merge_m1(b, &cfg.merge)?;
                        let lp = mixed_log_probs(b, cfg.merge.alpha, &t);
                        (t, lp)
                    }
                    "m2" => {
                        let t = merge_m2(b, model)?;
                        let lp = picked_log_probs(b, &t);
                        (t, lp)
                    }
                    "m3" => {
                        let out = m3.as_ref().expect("m3 computed when requested");
                        gate_open = Some(out.gate_open[i]);
                        let t = out.tokens[i].clone();
                        let lp = picked_log_probs(b, &t);
                        (t, lp)
                    }
                    other => return Err(HarnessError::Usage(format!("unknown method {other:?}"))),
                };
                let hyp = vocab.words(&tokens);
                let (report, _) = score_utterance(&reference, &hyp, &[])?;
                scores[k].absorb(&report);
                if let Some(flags) = homophone_flags(&ex.speech.id) {
                    let aligned = vhot_core::score::word_error_rate(&reference, &hyp)?;
                    for step in &aligned.steps {
                        if let Some(r) = step.reference {
                            if flags.get(r).copied().unwrap_or(false) {
                                homophone_errors[k].1 += 1;
                                if step.kind != vhot_core::score::EditKind::Match {
                                    homophone_errors[k].0 += 1;
                                }
                            }
                        }
                    }
                }
                records.push(HypothesisRecord {
                    id: ex.speech.id.clone(),
                    method: method.clone(),
                    text: vocab.decode(&tokens),
                    tokens,
                    log_probs,
                    gate_open,
                    empty: b.empty,
                });
            }
        }
    }
    Ok(EvalReport {
        methods: methods.to_vec(),
        scores,
        records,
        homophone_errors,
        warnings,
    })
}

/// Diagonal-argmax retrieval over consecutive batches of `batch` pairs.
/// Returns (audio-to-image, image-to-audio) accuracy.
pub fn retrieval_accuracy(model: &Model, examples: &[Example], batch: usize) -> Result<(f64, f64)> {
    let (mut rows_ok, mut cols_ok, mut total) = (0usize, 0usize, 0usize);
    for chunk in examples.chunks(batch) {
        if chunk.len() < 2 {
            continue;
        }
        let bundles = chunk
            .iter()
            .map(|ex| transcribe(model, &ex.speech, &ex.image, false))
            .collect::<vhot_core::Result<Vec<_>>>()?;
        let sim: Tensor = audio_image_matrix(&bundles)?;
        let n = chunk.len();
        for i in 0..n {
            rows_ok += usize::from(argmax(sim.row(i)) == i);
            let col: Vec<f64> = (0..n).map(|r| sim.row(r)[i]).collect();
            cols_ok += usize::from(argmax(&col) == i);
        }
        total += n;
    }
    if total == 0 {
        return Err(HarnessError::Data("retrieval needs batches of at least two pairs".into()));
    }
    Ok((rows_ok as f64 / total as f64, cols_ok as f64 / total as f64))
}
