//! Implementations checked against independently written brute-force
//! references on random instances.

mod common;

use rand::Rng as _;
use vhot_core::asr::inference_fires;
use vhot_core::merge::{merge_m2, text_token_embed};
use vhot_core::score::word_error_rate;
use vhot_core::HypothesisBundle;
use vhot_numerics::{seeded_rng, Graph, Tensor};

/// Sequential integrate-and-fire: walk the frames, split a frame's weight
/// at each unit boundary, fire a trailing residue of at least one half.
fn hand_cif(alpha: &[f64], h: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = h[0].len();
    let mut fired = Vec::new();
    let mut acc = 0.0;
    let mut cur = vec![0.0; d];
    for (a, row) in alpha.iter().zip(h) {
        let mut rest = *a;
        while acc + rest >= 1.0 {
            let part = 1.0 - acc;
            cur.iter_mut().zip(row).for_each(|(c, x)| *c += part * x);
            fired.push(std::mem::replace(&mut cur, vec![0.0; d]));
            rest -= part;
            acc = 0.0;
        }
        acc += rest;
        cur.iter_mut().zip(row).for_each(|(c, x)| *c += rest * x);
    }
    if acc >= 0.5 {
        fired.push(cur);
    }
    fired
}

#[test]
fn cif_firing_matches_hand_accumulation() {
    assert_eq!(inference_fires(&[0.6, 0.5, 0.9, 1.0]), 3);
    let mut rng = seeded_rng(11);
    for _ in 0..200 {
        let t = rng.random_range(1..40);
        let alpha: Vec<f64> = (0..t).map(|_| rng.random::<f64>()).collect();
        let h: Vec<Vec<f64>> = (0..t).map(|_| (0..3).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let expected = hand_cif(&alpha, &h);
        let n = inference_fires(&alpha);
        assert_eq!(n, expected.len(), "alpha {alpha:?}");

        let mut g = Graph::new();
        let hn = g.input(Tensor::from_rows(&h).unwrap());
        let an = g.input(Tensor::vector(alpha.clone()));
        let out = g.cif(hn, an, n);
        for (j, row) in expected.iter().enumerate() {
            for (x, y) in g.value(out).row(j).iter().zip(row) {
                assert!((x - y).abs() < 1e-9, "fire {j}: {x} vs {y}");
            }
        }
    }
}

/// Textbook Levenshtein distance over words.
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

#[test]
fn wer_matches_dp_oracle() {
    let mut rng = seeded_rng(12);
    let pool = ["ba", "ko", "mi", "ta", "zu"];
    let draw = |n: usize, rng: &mut vhot_numerics::Rng| -> Vec<String> {
        (0..n).map(|_| pool[rng.random_range(0..pool.len())].to_string()).collect()
    };
    for _ in 0..1000 {
        let (nr, nh) = (rng.random_range(1..=30), rng.random_range(0..=30));
        let r = draw(nr, &mut rng);
        let h = draw(nh, &mut rng);
        let a = word_error_rate(&r, &h).unwrap();
        let dist = dp_distance(&r, &h);
        assert_eq!(a.report.errors(), dist, "{r:?} / {h:?}");
        assert_eq!(a.report.reference_words, nr);
        assert_eq!(a.report.wer(), dist as f64 / nr as f64);
    }
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

fn random_bundle(rng: &mut vhot_numerics::Rng, d: usize) -> HypothesisBundle {
    let n = rng.random_range(1..10);
    let v = 27;
    let tokens_asr: Vec<usize> = (0..n).map(|_| rng.random_range(0..v)).collect();
    let tokens_vh: Vec<usize> = tokens_asr
        .iter()
        .map(|&t| if rng.random::<f64>() < 0.5 { t } else { rng.random_range(0..v) })
        .collect();
    let grid = |tokens: &[usize]| {
        let mut data = vec![0.0; n * v];
        for (i, &t) in tokens.iter().enumerate() {
            data[i * v + t] = 1.0;
        }
        Tensor::new(vec![n, v], data).unwrap()
    };
    HypothesisBundle {
        id: "u".into(),
        probs_asr: grid(&tokens_asr),
        probs_vh: grid(&tokens_vh),
        tokens_asr,
        tokens_vh,
        adapted_cls: (0..d).map(|_| rng.random::<f64>() - 0.5).collect(),
        pooled_audio: vec![1.0; d],
        similarity: Vec::new(),
        empty: false,
        attention: None,
    }
}

#[test]
fn merge_m2_matches_per_position_oracle() {
    let model = common::tiny_model(3);
    let mut rng = seeded_rng(13);
    for _ in 0..500 {
        let b = random_bundle(&mut rng, model.cfg.d_model);
        let got = merge_m2(&b, &model).unwrap();
        let ea = text_token_embed(&model, &b.tokens_asr).unwrap();
        let ev = text_token_embed(&model, &b.tokens_vh).unwrap();
        let expected: Vec<usize> = (0..b.len())
            .map(|i| {
                let sa = cosine(ea.row(i), &b.adapted_cls);
                let sv = cosine(ev.row(i), &b.adapted_cls);
                if sv > sa {
                    b.tokens_vh[i]
                } else {
                    b.tokens_asr[i]
                }
            })
            .collect();
        assert_eq!(got, expected);
    }
}
