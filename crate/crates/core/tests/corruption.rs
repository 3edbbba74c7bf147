//! Audio corruption, recovery scoring and the corruption suite.

mod common;

use rand::Rng as _;
use vhot_core::corruption::{corrupt_audio, corruption_csv, run_corruption_suite, CorruptionSpec, CORRUPTION_HEADER};
use vhot_core::score::{recovery_rate, word_error_rate};
use vhot_core::{AlignmentSpan, SpeechSequence, Vocabulary};
use vhot_numerics::{seeded_rng, Tensor};

fn padded_speech(seed: u64) -> SpeechSequence {
    // Two silence frames, five words of 3..6 frames, two silence frames.
    let mut rng = seeded_rng(seed);
    let mut spans = Vec::new();
    let mut t = 2;
    for w in 0..5 {
        let len = rng.random_range(3..7);
        spans.push(AlignmentSpan {
            word: w,
            start: t,
            end: t + len,
        });
        t += len;
    }
    let frames = common::gaussian(&mut rng, t + 2, 8, 1.0);
    SpeechSequence::new("pad", frames, spans).unwrap()
}

fn spec(mask_ratio: f64, seed: u64) -> CorruptionSpec {
    CorruptionSpec {
        mask_ratio,
        noise_sigma: 0.7,
        seed,
    }
}

#[test]
fn zero_ratio_is_a_no_op() {
    let x = padded_speech(1);
    let (y, masked) = corrupt_audio(&x, &spec(0.0, 1)).unwrap();
    assert!(masked.is_empty());
    assert_eq!(y, x);
}

#[test]
fn full_ratio_masks_all_words_and_no_silence() {
    let x = padded_speech(2);
    let (y, masked) = corrupt_audio(&x, &spec(1.0, 2)).unwrap();
    assert_eq!(masked, vec![0, 1, 2, 3, 4]);
    let (first, last) = (x.alignment[0].start, x.alignment[4].end);
    for t in 0..x.num_frames() {
        let same = y.frames.row(t) == x.frames.row(t);
        assert_eq!(same, t < first || t >= last, "frame {t}");
    }
}

#[test]
fn unmasked_frames_are_bit_identical() {
    for seed in 0..50 {
        let x = padded_speech(seed);
        let (y, masked) = corrupt_audio(&x, &spec(0.4, seed)).unwrap();
        assert_eq!(masked.len(), 2);
        for span in &x.alignment {
            for t in span.start..span.end {
                if !masked.contains(&span.word) {
                    assert_eq!(y.frames.row(t), x.frames.row(t));
                }
            }
        }
        let (again, m2) = corrupt_audio(&x, &spec(0.4, seed)).unwrap();
        assert_eq!((again, m2), (y, masked));
    }
}

#[test]
fn noise_moments_match_the_target() {
    let sigma = 0.7;
    let spans: Vec<AlignmentSpan> = (0..100)
        .map(|w| AlignmentSpan {
            word: w,
            start: 4 * w,
            end: 4 * w + 4,
        })
        .collect();
    let x = SpeechSequence::new("m", Tensor::zeros(&[400, 40]), spans).unwrap();
    let (y, _) = corrupt_audio(&x, &spec(1.0, 3)).unwrap();
    let v = y.frames.data();
    let n = v.len() as f64;
    assert!(n >= 1e4);
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // z-tests at the 0.5% two-sided level (|z| < 2.81) on mean and variance.
    let z_mean = mean / (sigma / n.sqrt());
    let z_var = (var - sigma * sigma) / (sigma * sigma * (2.0 / (n - 1.0)).sqrt());
    assert!(z_mean.abs() < 2.81, "mean z {z_mean}");
    assert!(z_var.abs() < 2.81, "variance z {z_var}");
}

#[test]
fn crafted_recovery_case_agrees_with_the_trace() {
    let r = ["a", "b", "c", "d", "e"];
    let h = ["a", "x", "c", "d", "e"];
    let (rr, _) = recovery_rate(&r, &h, &[1, 2]).unwrap();
    assert_eq!(rr, 0.5);
    let a = word_error_rate(&r, &h).unwrap();
    assert_eq!(a.report.substitutions, 1);
    assert_eq!(recovery_rate(&r, &r, &[0, 3]).unwrap().0, 1.0);
    assert_eq!(recovery_rate(&r, &["a", "c", "e"], &[1, 3]).unwrap().0, 0.0);
}

#[test]
fn suite_rows_and_zero_ratio_equal_clean_scoring() {
    let cfg = common::tiny_config();
    let m = common::tiny_model(4);
    let test: Vec<_> = (0..4).map(|i| common::example(40 + i, &format!("t{i}"), "ab cd ef", &cfg)).collect();
    let vocab = Vocabulary::characters();
    let rows = run_corruption_suite(&m, &vocab, &test, &[0.0, 0.3, 0.5, 0.7], 0.7, 9).unwrap();
    assert_eq!(rows.len(), 4);
    let csv = corruption_csv(&rows);
    assert_eq!(csv.lines().next().unwrap(), CORRUPTION_HEADER);
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(rows[0].asr.masked, 0);

    let mut clean = vhot_core::score::ScoreReport::default();
    for ex in &test {
        let b = vhot_core::transcribe(&m, &ex.speech, &ex.image, false).unwrap();
        let r = vocab.words(&ex.tokens.ids);
        clean.absorb(&vhot_core::score::score_utterance(&r, &vocab.words(&b.tokens_asr), &[]).unwrap().0);
    }
    assert_eq!(rows[0].asr, clean);
}
