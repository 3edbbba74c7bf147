//! Run configuration parsing and the training loop.

use vhot_harness::corpus::{generate_corpus, Split};
use vhot_harness::pipeline::{build_model, train_model};
use vhot_harness::runconfig::RunConfig;
use vhot_harness::HarnessError;

fn tiny() -> RunConfig {
    RunConfig::parse(
        "lexicon_size = 12\nhomophone_pairs = 2\ntrain_utterances = 16\nvalid_utterances = 4\nmax_words = 4\n\
         d_model = 16\nheads = 2\nencoder_layers = 1\ndecoder_layers = 1\nvision_layers = 1\nfsmn_kernel = 3\n\
         epochs = 2\nbatch_size = 4\nseed = 5\n",
    )
    .unwrap()
}

#[test]
fn config_text_round_trips() {
    let mut cfg = tiny();
    cfg.merge.alpha = 0.25;
    cfg.max_steps = Some(17);
    cfg.train.freeze_vh = true;
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    assert_eq!(RunConfig::parse(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
}

#[test]
fn config_errors_name_the_line() {
    let err = RunConfig::parse("seed = 1\n\n# note\nsped = 2\n").unwrap_err();
    assert!(matches!(err, HarnessError::Usage(_)));
    assert!(err.to_string().contains("line 4"), "{err}");
    let err = RunConfig::parse("alpha = high\n").unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");
    assert!(RunConfig::parse("gate_mode = sometimes\n").is_err());
}

#[test]
fn every_step_is_logged_and_finite() {
    let cfg = tiny();
    let corpus = generate_corpus(&cfg.corpus, cfg.seed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let model = build_model(&cfg, cfg.corpus.feat_dim, cfg.corpus.grid, cfg.corpus.patch_len).unwrap();
    let out = train_model(&cfg, model, &corpus.split(Split::Train), Some(dir.path())).unwrap();
    assert_eq!(out.log.len(), 8);
    assert!(out.log.iter().all(|l| l.is_finite() && l.grad_norm.is_finite()));
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 9);
    assert!(log.lines().skip(1).all(|l| l.split(',').count() == 10));
}

#[test]
fn baseline_and_joint_runs_share_the_start_and_split_after_one_step() {
    let cfg = tiny();
    let corpus = generate_corpus(&cfg.corpus, cfg.seed).unwrap();
    let train = corpus.split(Split::Train);
    let build = || build_model(&cfg, cfg.corpus.feat_dim, cfg.corpus.grid, cfg.corpus.patch_len).unwrap();
    assert_eq!(build().checkpoint_bytes(), build().checkpoint_bytes());

    let one = RunConfig {
        max_steps: Some(1),
        ..cfg.clone()
    };
    let mut base_cfg = one.clone();
    base_cfg.train.freeze_vh = true;
    let joint = train_model(&one, build(), &train, None).unwrap().trainer.model;
    let base = train_model(&base_cfg, build(), &train, None).unwrap().trainer.model;
    let asr = |m: &vhot_core::Model| -> Vec<Vec<f64>> {
        m.store
            .iter()
            .filter(|(_, p)| p.name.starts_with("asr."))
            .map(|(_, p)| p.tensor.data().to_vec())
            .collect()
    };
    assert_ne!(asr(&joint), asr(&base));
    let untouched = build();
    for ((_, p), (_, q)) in base.store.iter().zip(untouched.store.iter()) {
        if !p.name.starts_with("asr.") {
            assert_eq!(p.tensor, q.tensor, "{} moved in the baseline", p.name);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny();
    let corpus = generate_corpus(&cfg.corpus, cfg.seed).unwrap();
    let train = corpus.split(Split::Train);
    let run = || {
        let model = build_model(&cfg, cfg.corpus.feat_dim, cfg.corpus.grid, cfg.corpus.patch_len).unwrap();
        train_model(&cfg, model, &train, None).unwrap().trainer.model.checkpoint_bytes()
    };
    assert_eq!(run(), run());
}
