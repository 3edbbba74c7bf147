//! Synthetic corpus: determinism, homophone contracts, manifest round trip.

use vhot_harness::corpus::{generate_corpus, GenConfig, Split, JITTER};
use vhot_harness::manifest::{directory_hash, load_corpus, parse_manifest, write_corpus};

fn small() -> GenConfig {
    GenConfig {
        train_utterances: 40,
        valid_utterances: 20,
        ..GenConfig::default()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn same_seed_same_corpus() {
    let a = generate_corpus(&small(), 7).unwrap();
    let b = generate_corpus(&small(), 7).unwrap();
    assert_eq!(a.utterances, b.utterances);
    assert_eq!(a.lexicon.hash(), b.lexicon.hash());
    let c = generate_corpus(&small(), 8).unwrap();
    assert_ne!(a.lexicon.hash(), c.lexicon.hash());

    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_corpus(d1.path(), &a).unwrap();
    write_corpus(d2.path(), &b).unwrap();
    assert_eq!(directory_hash(d1.path()).unwrap(), directory_hash(d2.path()).unwrap());
}

#[test]
fn homophone_images_show_the_disambiguating_template() {
    let cfg = small();
    let corpus = generate_corpus(&cfg, 3).unwrap();
    let mut checked = 0;
    for u in &corpus.utterances {
        let words: Vec<&str> = u.text.split(' ').collect();
        for (w, &flag) in words.iter().zip(&u.homophone) {
            if !flag {
                continue;
            }
            let idx = corpus.lexicon.index_of(w).unwrap();
            let template = &corpus.lexicon.words[idx].patch;
            let patches = &u.example.image.patches;
            let best = (0..patches.rows())
                .map(|r| distance(patches.row(r), template))
                .fold(f64::INFINITY, f64::min);
            // Patch jitter has norm about 0.1 * sqrt(patch_len) = 0.4.
            assert!(best < 1.0, "{}: {w} not drawn (nearest {best})", u.example.speech.id);
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn homophone_pairs_share_audio() {
    let cfg = small();
    let corpus = generate_corpus(&cfg, 4).unwrap();
    let lex = &corpus.lexicon;
    assert_eq!(lex.pairs.len(), cfg.homophone_pairs);
    let mut inter = f64::INFINITY;
    for i in 0..lex.audio.len() {
        for j in 0..i {
            if lex.audio[i].shape() == lex.audio[j].shape() {
                inter = inter.min(distance(lex.audio[i].data(), lex.audio[j].data()));
            }
        }
    }
    for &(a, b) in &lex.pairs {
        assert_ne!(lex.words[a].text, lex.words[b].text);
        assert_eq!(lex.words[a].audio, lex.words[b].audio, "template distance 0");
        assert_ne!(lex.words[a].patch, lex.words[b].patch);
    }
    // Realised frames of a word differ from its template by jitter only.
    let u = corpus.utterances.iter().find(|u| u.homophone.iter().any(|&h| h)).unwrap();
    let k = u.homophone.iter().position(|&h| h).unwrap();
    let word = u.text.split(' ').nth(k).unwrap();
    let template = &lex.audio[lex.words[lex.index_of(word).unwrap()].audio];
    let span = u.example.speech.alignment[k];
    let d = cfg.feat_dim;
    let realised = &u.example.speech.frames.data()[span.start * d..span.end * d];
    assert_eq!(realised.len(), template.len());
    let jitter = distance(realised, template.data());
    assert!(jitter < 2.0 * JITTER * (realised.len() as f64).sqrt());
    assert!(jitter < inter / 2.0, "jitter {jitter} vs inter-word {inter}");
}

#[test]
fn splits_have_the_configured_sizes() {
    let corpus = generate_corpus(&small(), 5).unwrap();
    assert_eq!(corpus.split(Split::Train).len(), 40);
    assert_eq!(corpus.split(Split::Valid).len(), 20);
    assert!(corpus.feature_sigma > 0.0);
}

#[test]
fn manifest_round_trip_and_malformed_line() {
    let corpus = generate_corpus(&small(), 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &corpus).unwrap();
    let loaded = load_corpus(dir.path()).unwrap();
    let originals: Vec<_> = corpus.utterances.iter().map(|u| u.example.clone()).collect();
    assert_eq!(loaded.examples, originals);

    let text = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{\"kind\": \"utterance\", \"id\": ";
    let err = parse_manifest(&lines.join("\n")).unwrap_err().to_string();
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = GenConfig {
        homophone_fraction: 1.5,
        ..small()
    };
    assert!(generate_corpus(&bad, 1).is_err());
    let bad = GenConfig {
        homophone_pairs: 20,
        ..small()
    };
    assert!(generate_corpus(&bad, 1).is_err());
}
