//! Acceptance suite: runs every acceptance criterion at its stated
//! tolerance and prints one PASS/FAIL line per criterion. Exits non-zero
//! if any criterion fails.
//!
//! Criteria 5, 6 and 7 share the three full-size training runs.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;
use vhot_core::asr::{choose_replacements, cif_predict, inference_fires, quantity_loss, replacement_count, speech_decode};
use vhot_core::corruption::{corrupt_audio, run_corruption_suite, CorruptionSpec};
use vhot_core::merge::{merge_m1, merge_m2, merge_m3, text_embed_nodes, text_token_embed};
use vhot_core::score::word_error_rate;
use vhot_core::vh::{adapt_and_weight, vh_decode, vh_encode, vision_encode};
use vhot_core::{transcribe, HypothesisBundle, MergeConfig, Model, ModelConfig, SamplerConfig, Vocabulary};
use vhot_harness::corpus::{generate_corpus, Split};
use vhot_harness::manifest::directory_hash;
use vhot_harness::pipeline::{build_model, evaluate, retrieval_accuracy, train_model, METHODS};
use vhot_harness::runconfig::RunConfig;
use vhot_numerics::gradcheck::{self, project};
use vhot_numerics::layers::{Fsmn, LayerNorm, Linear, Lstm, MultiHeadAttention};
use vhot_numerics::{seeded_rng, Graph, NodeId, ParamStore, Rng, Tensor};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const RUN_SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, title: &str, started: Instant, o: &Outcome) {
    let status = if o.pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "criterion {n} [{status}] {title}: {} ({:.1} s)",
        o.detail,
        started.elapsed().as_secs_f64()
    );
}

fn random(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn tiny_model_config() -> ModelConfig {
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

// ---------------------------------------------------------------- 1

/// Worst relative error of `build` on a layer made by `make`, over [`SEEDS`].
fn layer_check<L, M, F>(make: M, shapes: &[(usize, usize)], build: F) -> f64
where
    M: Fn(&mut ParamStore, &mut Rng) -> L,
    F: Fn(&L, &mut Graph, &ParamStore, &[NodeId]) -> NodeId,
{
    let mut worst: f64 = 0.0;
    for seed in SEEDS {
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let layer = make(&mut store, &mut rng);
        let inputs: Vec<Tensor> = shapes.iter().map(|&(r, c)| random(&mut rng, r, c)).collect();
        let rep = gradcheck::check(&mut store, &inputs, 12, &mut rng, |g, ps, x| {
            let out = build(&layer, g, ps, x);
            Ok(project(g, out))
        })
        .unwrap();
        assert!(rep.checked > 0);
        worst = worst.max(rep.max_rel_err);
    }
    worst
}

/// Worst relative error of a model component with only `prefixes` trainable.
fn component_check<F>(prefixes: &[&str], shapes: &[(usize, usize)], build: F) -> f64
where
    F: Fn(&mut Graph, &Model, &[NodeId]) -> NodeId,
{
    let mut worst: f64 = 0.0;
    for seed in SEEDS {
        let mut model = Model::new(tiny_model_config(), seed).unwrap();
        model.store.set_trainable_prefix("", false);
        for p in prefixes {
            model.store.set_trainable_prefix(p, true);
        }
        let mut rng = seeded_rng(100 + seed);
        let inputs: Vec<Tensor> = shapes.iter().map(|&(r, c)| random(&mut rng, r, c)).collect();
        let mut store = model.store.clone();
        let rep = gradcheck::check(&mut store, &inputs, 8, &mut rng, |g, ps, x| {
            let mut m = model.clone();
            m.store = ps.clone();
            let out = build(g, &m, x);
            Ok(project(g, out))
        })
        .unwrap();
        assert!(rep.checked > 0);
        worst = worst.max(rep.max_rel_err);
    }
    worst
}

fn criterion_gradients() -> Outcome {
    let started = Instant::now();
    let results: Vec<(&str, f64)> = vec![
        (
            "linear",
            layer_check(|s, r| Linear::new(s, "l", 8, 4, r), &[(5, 8)], |l, g, ps, x| l.forward(g, ps, x[0]).unwrap()),
        ),
        (
            "layer-norm",
            layer_check(
                |s, r| {
                    let ln = LayerNorm::new(s, "n", 6, r);
                    for p in s.iter_mut() {
                        p.tensor.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v += 0.1 * i as f64);
                    }
                    ln
                },
                &[(4, 6)],
                |l, g, ps, x| l.forward(g, ps, x[0]).unwrap(),
            ),
        ),
        (
            "self-attention",
            layer_check(|s, r| MultiHeadAttention::new(s, "a", 8, 2, r), &[(5, 8)], |a, g, ps, x| {
                a.forward(g, ps, x[0], x[0], false).unwrap().out
            }),
        ),
        (
            "cross-attention",
            layer_check(|s, r| MultiHeadAttention::new(s, "a", 8, 4, r), &[(3, 8), (6, 8)], |a, g, ps, x| {
                a.forward(g, ps, x[0], x[1], false).unwrap().out
            }),
        ),
        (
            "dfsmn",
            layer_check(|s, r| Fsmn::new(s, "f", 4, 5, r), &[(9, 4)], |f, g, ps, x| f.forward(g, ps, x[0]).unwrap()),
        ),
        (
            "lstm",
            layer_check(|s, r| Lstm::new(s, "m", 5, 4, r), &[(6, 5)], |m, g, ps, x| m.forward(g, ps, x[0]).unwrap()),
        ),
        (
            "cif weight net",
            component_check(&["asr.predictor"], &[(8, 16)], |g, m, x| {
                let cif = cif_predict(g, m, x[0], Some(3)).unwrap();
                let q = quantity_loss(g, cif.alpha, 1);
                let a = project(g, cif.acoustic.unwrap());
                g.add(a, q)
            }),
        ),
        (
            "adapters",
            component_check(
                &["vh.vision_adapter", "vh.speech_adapter", "vh.speech_cls", "text.adapter"],
                &[(4, 4), (6, 16)],
                |g, m, x| {
                    let v = vision_encode(g, m, x[0]).unwrap();
                    let a = adapt_and_weight(g, m, &v, x[1]).unwrap();
                    let t = text_embed_nodes(g, m, &[3, 1, 4]).unwrap();
                    let mut acc = project(g, a.weighted);
                    for p in [a.adapted_cls, a.pooled_audio, t] {
                        let s = project(g, p);
                        acc = g.add(acc, s);
                    }
                    acc
                },
            ),
        ),
        (
            "output heads",
            component_check(
                &["asr.decoder", "vh.encoder", "vh.decoder", "vh.out"],
                &[(7, 16), (3, 16), (4, 16)],
                |g, m, x| {
                    let dec = speech_decode(g, m, x[0], x[1]).unwrap();
                    let ce_a = g.cross_entropy(dec.logits, &[4, 0, 19]);
                    let hot = vh_encode(g, m, x[2]).unwrap();
                    let vh = vh_decode(g, m, x[1], dec.hidden, hot, false).unwrap();
                    let ce_v = g.cross_entropy(vh.logits, &[2, 0, 26]);
                    g.add(ce_a, ce_v)
                },
            ),
        ),
    ];
    let elapsed = started.elapsed();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let failing: Vec<&str> = results.iter().filter(|r| r.1 >= 1e-4).map(|r| r.0).collect();
    Outcome {
        pass: failing.is_empty() && elapsed < Duration::from_secs(60),
        detail: format!(
            "{} layer types x {} seeds, worst relative error {worst:.2e} (limit 1e-4){}",
            results.len(),
            SEEDS.len(),
            if failing.is_empty() { String::new() } else { format!(", failing: {}", failing.join(", ")) }
        ),
    }
}

// ---------------------------------------------------------------- 2

/// Sequential integrate-and-fire with a trailing residue of at least 0.5.
fn hand_fires(alpha: &[f64]) -> usize {
    let (mut acc, mut fired) = (0.0, 0);
    for &a in alpha {
        let mut rest = a;
        while acc + rest >= 1.0 {
            rest -= 1.0 - acc;
            acc = 0.0;
            fired += 1;
        }
        acc += rest;
    }
    fired + usize::from(acc >= 0.5)
}

fn dp_distance(r: &[String], h: &[String]) -> usize {
    let mut d = vec![vec![0usize; h.len() + 1]; r.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=h.len() {
        d[0][j] = j;
    }
    for i in 1..=r.len() {
        for j in 1..=h.len() {
            let sub = d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[r.len()][h.len()]
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn distribution_grid(rng: &mut Rng, n: usize, v: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * v);
    for _ in 0..n {
        let row: Vec<f64> = (0..v).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.into_iter().map(|x| x / s));
    }
    Tensor::new(vec![n, v], data).unwrap()
}

fn random_bundle(rng: &mut Rng, d: usize) -> HypothesisBundle {
    let n = rng.random_range(1..10);
    let probs_asr = distribution_grid(rng, n, 27);
    let mut probs_vh = distribution_grid(rng, n, 27);
    // Let about half of the rows agree with the ASR grid.
    for i in 0..n {
        if rng.random::<f64>() < 0.5 {
            let row = probs_asr.row(i).to_vec();
            probs_vh.data_mut()[i * 27..(i + 1) * 27].copy_from_slice(&row);
        }
    }
    HypothesisBundle {
        id: "b".into(),
        tokens_asr: probs_asr.argmax_rows(),
        tokens_vh: probs_vh.argmax_rows(),
        probs_asr,
        probs_vh,
        adapted_cls: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        pooled_audio: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        similarity: Vec::new(),
        empty: false,
        attention: None,
    }
}

fn criterion_oracles() -> Outcome {
    let started = Instant::now();
    let mut rng = seeded_rng(2);

    let mut wer_bad = 0;
    let pool = ["ba", "ko", "mi", "ta", "zu"];
    for _ in 0..1000 {
        let (nr, nh) = (rng.random_range(1..=30), rng.random_range(0..=30));
        let r: Vec<String> = (0..nr).map(|_| pool[rng.random_range(0..5)].to_string()).collect();
        let h: Vec<String> = (0..nh).map(|_| pool[rng.random_range(0..5)].to_string()).collect();
        let a = word_error_rate(&r, &h).unwrap();
        let dist = dp_distance(&r, &h);
        wer_bad += usize::from(a.report.errors() != dist || a.report.wer() != dist as f64 / nr as f64);
    }

    let model = Model::new(tiny_model_config(), 2).unwrap();
    let mut m2_bad = 0;
    for _ in 0..500 {
        let b = random_bundle(&mut rng, 16);
        let got = merge_m2(&b, &model).unwrap();
        let ea = text_token_embed(&model, &b.tokens_asr).unwrap();
        let ev = text_token_embed(&model, &b.tokens_vh).unwrap();
        let expected: Vec<usize> = (0..b.len())
            .map(|i| {
                if cosine(ev.row(i), &b.adapted_cls) > cosine(ea.row(i), &b.adapted_cls) {
                    b.tokens_vh[i]
                } else {
                    b.tokens_asr[i]
                }
            })
            .collect();
        m2_bad += usize::from(got != expected);
    }

    let mut cif_bad = 0;
    for _ in 0..200 {
        let t = rng.random_range(1..60);
        let alpha: Vec<f64> = (0..t).map(|_| rng.random::<f64>()).collect();
        cif_bad += usize::from(inference_fires(&alpha) != hand_fires(&alpha));
    }

    let elapsed = started.elapsed();
    Outcome {
        pass: wer_bad + m2_bad + cif_bad == 0 && elapsed < Duration::from_secs(60),
        detail: format!("mismatches: WER {wer_bad}/1000, M2 {m2_bad}/500, CIF firing {cif_bad}/200"),
    }
}

// ---------------------------------------------------------------- 3

fn criterion_invariants() -> Outcome {
    let mut rng = seeded_rng(3);
    let mut failures = Vec::new();

    let sampler = SamplerConfig::default();
    let mut sampler_ok = sampler.lambda == 0.75;
    for _ in 0..1000 {
        let n = rng.random_range(1..30);
        let target: Vec<usize> = (0..n).map(|_| rng.random_range(0..27)).collect();
        let first: Vec<usize> =
            target.iter().map(|&t| if rng.random::<f64>() < 0.4 { (t + 1) % 27 } else { t }).collect();
        let errors: Vec<usize> = (0..n).filter(|&i| target[i] != first[i]).collect();
        let rows = choose_replacements(&target, &first, &sampler, &mut rng).unwrap();
        sampler_ok &= rows.len() == (3 * errors.len()).div_ceil(4)
            && rows.len() == replacement_count(0.75, errors.len())
            && rows.iter().all(|r| errors.contains(r));
    }
    if !sampler_ok {
        failures.push("sampler count");
    }

    let near_one = MergeConfig {
        alpha: 1.0 - 1e-9,
        ..MergeConfig::default()
    };
    let model = Model::new(tiny_model_config(), 3).unwrap();
    let (mut m1_ok, mut m2_ok) = (true, true);
    for _ in 0..300 {
        let b = random_bundle(&mut rng, 16);
        m1_ok &= merge_m1(&b, &near_one).unwrap() == b.probs_asr.argmax_rows();
        let out = merge_m2(&b, &model).unwrap();
        m2_ok &= out.len() == b.len() && out.iter().enumerate().all(|(i, t)| *t == b.tokens_asr[i] || *t == b.tokens_vh[i]);
    }
    if !m1_ok {
        failures.push("M1 alpha limit");
    }
    if !m2_ok {
        failures.push("M2 candidates");
    }

    // M3 and probability rows on real transcriptions of a generated corpus.
    let cfg = RunConfig::default();
    let corpus = generate_corpus(
        &vhot_harness::corpus::GenConfig {
            train_utterances: 8,
            valid_utterances: 64,
            ..cfg.corpus.clone()
        },
        3,
    )
    .unwrap();
    let full = build_model(&cfg, cfg.corpus.feat_dim, cfg.corpus.grid, cfg.corpus.patch_len).unwrap();
    let valid = corpus.split(Split::Valid);
    let (mut m3_ok, mut rows_ok, mut closed) = (true, true, 0);
    for chunk in valid.chunks(8) {
        let bundles: Vec<HypothesisBundle> =
            chunk.iter().map(|ex| transcribe(&full, &ex.speech, &ex.image, false).unwrap()).collect();
        for b in &bundles {
            for grid in [&b.probs_asr, &b.probs_vh] {
                rows_ok &= (0..grid.rows()).all(|i| (grid.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
        let out = merge_m3(&bundles, &full, &MergeConfig::default()).unwrap();
        for ((b, open), t) in bundles.iter().zip(&out.gate_open).zip(&out.tokens) {
            if !open {
                closed += 1;
                m3_ok &= *t == b.tokens_asr;
            }
        }
    }
    if !m3_ok || closed == 0 {
        failures.push("M3 gate-closed passthrough");
    }
    if !rows_ok {
        failures.push("probability rows");
    }

    let mut corruption_ok = true;
    for ex in &valid {
        let x = &ex.speech;
        let d = x.feature_dim();
        for ratio in [0.3, 0.5, 0.7, 1.0] {
            let spec = CorruptionSpec {
                mask_ratio: ratio,
                noise_sigma: corpus.feature_sigma,
                seed: 3,
            };
            let (y, masked) = corrupt_audio(x, &spec).unwrap();
            let mut touched = vec![false; x.num_frames()];
            for &w in &masked {
                let s = x.alignment[w];
                touched[s.start..s.end].iter_mut().for_each(|t| *t = true);
            }
            for (t, hit) in touched.iter().enumerate() {
                let same = y.frames.data()[t * d..(t + 1) * d]
                    .iter()
                    .zip(&x.frames.data()[t * d..(t + 1) * d])
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                corruption_ok &= *hit || same;
            }
        }
    }
    if !corruption_ok {
        failures.push("corruption bit-identity");
    }

    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("sampler, M1, M2, M3 ({closed} closed gates checked), probability rows, corruption all hold")
        } else {
            format!("violated: {}", failures.join(", "))
        },
    }
}

// ---------------------------------------------------------------- 4

fn criterion_overfit() -> Outcome {
    let started = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.seed = 4;
    cfg.corpus.train_utterances = 64;
    cfg.corpus.valid_utterances = 8;
    cfg.corpus.homophone_fraction = 0.0;
    cfg.epochs = usize::MAX;
    cfg.max_steps = Some(500);
    let corpus = generate_corpus(&cfg.corpus, cfg.seed).unwrap();
    let train = corpus.split(Split::Train);
    let model = build_model(&cfg, cfg.corpus.feat_dim, cfg.corpus.grid, cfg.corpus.patch_len).unwrap();
    let out = train_model(&cfg, model, &train, None).unwrap();
    let rep = evaluate(&out.trainer.model, &cfg, &train, &["asr".to_string()], &|_| None).unwrap();
    let wer = rep.wer("asr").unwrap();
    let elapsed = started.elapsed();
    Outcome {
        pass: wer < 0.05 && out.log.len() <= 500 && elapsed < Duration::from_secs(300),
        detail: format!("WER_ASR {wer:.4} on 64 training utterances after {} steps (limit 0.05, 500 steps, 300 s)", out.log.len()),
    }
}

// ---------------------------------------------------------------- 5, 6, 7

struct SeedRun {
    seed: u64,
    wers: Vec<(String, f64)>,
    corruption: Vec<vhot_core::corruption::CorruptionRow>,
    retrieval_train: f64,
    train_time: Duration,
    corruption_time: Duration,
}

impl SeedRun {
    fn wer(&self, m: &str) -> f64 {
        self.wers.iter().find(|w| w.0 == m).unwrap().1
    }
}

fn full_run(seed: u64) -> SeedRun {
    let started = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    let corpus = generate_corpus(&cfg.corpus, seed).unwrap();
    let train = corpus.split(Split::Train);
    let valid = corpus.split(Split::Valid);
    let model = build_model(&cfg, cfg.corpus.feat_dim, cfg.corpus.grid, cfg.corpus.patch_len).unwrap();
    let out = train_model(&cfg, model, &train, None).unwrap();
    let model = out.trainer.model;
    let methods: Vec<String> = METHODS.iter().map(|m| m.to_string()).collect();
    let rep = evaluate(&model, &cfg, &valid, &methods, &|_| None).unwrap();
    let train_time = started.elapsed();
    let c0 = Instant::now();
    let corruption =
        run_corruption_suite(&model, &Vocabulary::characters(), &valid, &[0.3, 0.5, 0.7], corpus.feature_sigma, seed)
            .unwrap();
    let corruption_time = c0.elapsed();
    let (retrieval_train, _) = retrieval_accuracy(&model, &train, 8).unwrap();
    SeedRun {
        seed,
        wers: methods.iter().map(|m| (m.clone(), rep.wer(m).unwrap())).collect(),
        corruption,
        retrieval_train,
        train_time,
        corruption_time,
    }
}

fn criterion_vision_benefit(runs: &[SeedRun], total: Duration) -> Outcome {
    let ok: Vec<bool> = runs
        .iter()
        .map(|r| {
            let (asr, m2, m3) = (r.wer("asr"), r.wer("m2"), r.wer("m3"));
            m2 < asr && m3 <= m2 + 0.002 && m3 < asr
        })
        .collect();
    let passed = ok.iter().filter(|&&b| b).count();
    let per: Vec<String> = runs
        .iter()
        .zip(&ok)
        .map(|(r, k)| {
            format!(
                "seed {}: asr {:.4} m2 {:.4} m3 {:.4} {}",
                r.seed,
                r.wer("asr"),
                r.wer("m2"),
                r.wer("m3"),
                if *k { "ok" } else { "no" }
            )
        })
        .collect();
    Outcome {
        pass: 2 * passed > runs.len() && total < Duration::from_secs(600),
        detail: format!("{} ({passed}/{} seeds)", per.join("; "), runs.len()),
    }
}

fn criterion_corruption(runs: &[SeedRun], total: Duration) -> Outcome {
    let ok: Vec<bool> = runs
        .iter()
        .map(|r| r.corruption.iter().all(|c| c.m2.rr() >= c.asr.rr() && c.m2.wer() <= c.asr.wer()))
        .collect();
    let passed = ok.iter().filter(|&&b| b).count();
    let per: Vec<String> = runs
        .iter()
        .map(|r| {
            let rows: Vec<String> = r
                .corruption
                .iter()
                .map(|c| format!("{:.1}: rr {:.3}/{:.3} wer {:.3}/{:.3}", c.ratio, c.asr.rr(), c.m2.rr(), c.asr.wer(), c.m2.wer()))
                .collect();
            format!("seed {} [{}]", r.seed, rows.join(", "))
        })
        .collect();
    Outcome {
        pass: 2 * passed > runs.len() && total < Duration::from_secs(600),
        detail: format!("asr/m2 per ratio, {} ({passed}/{} seeds)", per.join("; "), runs.len()),
    }
}

fn criterion_retrieval(runs: &[SeedRun]) -> Outcome {
    let per: Vec<String> = runs.iter().map(|r| format!("seed {}: {:.3}", r.seed, r.retrieval_train)).collect();
    Outcome {
        pass: runs.iter().all(|r| r.retrieval_train > 0.9),
        detail: format!("batch-of-8 audio-to-image accuracy on training pairs, {} (limit > 0.9)", per.join(", ")),
    }
}

// ---------------------------------------------------------------- 8

fn vhot(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_vhot"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn pipeline_once(dir: &Path, cfg: &Path) -> Option<(String, Vec<u8>, Vec<u8>, Vec<u8>)> {
    let p = |x: &Path| x.to_str().unwrap().to_string();
    let (corpus, run, eval) = (dir.join("corpus"), dir.join("run"), dir.join("eval"));
    let ok = vhot(&["gen", "--config", &p(cfg), "--seed", "8", "--out", &p(&corpus)])
        && vhot(&["train", "--config", &p(cfg), "--seed", "8", "--corpus", &p(&corpus), "--out", &p(&run)])
        && vhot(&["eval", "--corpus", &p(&corpus), "--checkpoint", &p(&run.join("model.ckpt")), "--out", &p(&eval)]);
    if !ok {
        return None;
    }
    Some((
        directory_hash(&corpus).ok()?,
        fs::read(run.join("model.ckpt")).ok()?,
        fs::read(run.join("train_log.csv")).ok()?,
        fs::read(eval.join("metrics.csv")).ok()?,
    ))
}

fn criterion_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("repro.cfg");
    fs::write(&cfg, "train_utterances = 64\nvalid_utterances = 32\nepochs = 2\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    match (pipeline_once(&a, &cfg), pipeline_once(&b, &cfg)) {
        (Some(x), Some(y)) => {
            let same = [x.0 == y.0, x.1 == y.1, x.2 == y.2, x.3 == y.3];
            Outcome {
                pass: same.iter().all(|&s| s),
                detail: format!(
                    "two gen/train/eval runs: corpus hash {}, checkpoint {}, loss log {}, metrics CSV {}",
                    ["differs", "identical"][usize::from(same[0])],
                    ["differs", "identical"][usize::from(same[1])],
                    ["differs", "identical"][usize::from(same[2])],
                    ["differs", "identical"][usize::from(same[3])]
                ),
            }
        }
        _ => Outcome {
            pass: false,
            detail: "a vhot command failed".into(),
        },
    }
}

fn main() {
    let mut outcomes = Vec::new();
    let mut run = |n: usize, title: &str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let o = f();
        report(n, title, started, &o);
        outcomes.push(o.pass);
    };
    run(1, "gradient suite", &mut criterion_gradients);
    run(2, "oracle equivalences", &mut criterion_oracles);
    run(3, "exact invariants", &mut criterion_invariants);
    run(4, "overfit run", &mut criterion_overfit);

    let started = Instant::now();
    let runs: Vec<SeedRun> = RUN_SEEDS.iter().map(|&s| full_run(s)).collect();
    let train_total: Duration = runs.iter().map(|r| r.train_time).sum();
    let corruption_total: Duration = runs.iter().map(|r| r.corruption_time).sum();
    let _ = writeln!(
        std::io::stderr(),
        "three full-size runs took {:.1} s (train+eval {:.1} s, corruption {:.1} s)",
        started.elapsed().as_secs_f64(),
        train_total.as_secs_f64(),
        corruption_total.as_secs_f64()
    );
    run(5, "vision-benefit run", &mut || criterion_vision_benefit(&runs, train_total));
    run(6, "corruption run", &mut || criterion_corruption(&runs, train_total + corruption_total));
    run(7, "contrastive retrieval", &mut || criterion_retrieval(&runs));
    run(8, "reproducibility", &mut criterion_reproducibility);

    let failed = outcomes.iter().filter(|&&p| !p).count();
    let _ = writeln!(std::io::stderr(), "acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
