//! Word error rate with a retained alignment, and recovery rate of masked words.

use serde::Serialize;

use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EditKind {
    Match,
    Substitution,
    Insertion,
    Deletion,
}

/// One step of a word alignment; `reference`/`hypothesis` are word indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AlignStep {
    pub kind: EditKind,
    pub reference: Option<usize>,
    pub hypothesis: Option<usize>,
}

/// Error counts of one or more scored utterances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ScoreReport {
    pub reference_words: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub masked: usize,
    pub recovered: usize,
}

impl ScoreReport {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn wer(&self) -> f64 {
        if self.reference_words == 0 {
            0.0
        } else {
            self.errors() as f64 / self.reference_words as f64
        }
    }

    /// Recovered fraction of masked words; 1.0 when nothing was masked.
    pub fn rr(&self) -> f64 {
        if self.masked == 0 {
            1.0
        } else {
            self.recovered as f64 / self.masked as f64
        }
    }

    pub fn absorb(&mut self, other: &ScoreReport) {
        self.reference_words += other.reference_words;
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.masked += other.masked;
        self.recovered += other.recovered;
    }
}

/// A scored utterance: its counts and the alignment that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct WordAlignment {
    pub report: ScoreReport,
    pub steps: Vec<AlignStep>,
}

/// Word-level Levenshtein alignment of `hyp` against `reference`.
///
/// The backtrace prefers the diagonal, then deletions, then insertions, so
/// the alignment is deterministic.
pub fn word_error_rate<S: AsRef<str>>(reference: &[S], hyp: &[S]) -> Result<WordAlignment> {
    if reference.is_empty() {
        return Err(contract("reference transcription has no words"));
    }
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut dist = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        dist[i * w] = i;
    }
    for j in 0..=m {
        dist[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hyp[j - 1].as_ref();
            let diag = dist[(i - 1) * w + j - 1] + usize::from(!same);
            let del = dist[(i - 1) * w + j] + 1;
            let ins = dist[i * w + j - 1] + 1;
            dist[i * w + j] = diag.min(del).min(ins);
        }
    }
    let mut steps = Vec::with_capacity(n.max(m));
    let mut report = ScoreReport {
        reference_words: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dist[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hyp[j - 1].as_ref();
            if here == dist[(i - 1) * w + j - 1] + usize::from(!same) {
                let kind = if same {
                    EditKind::Match
                } else {
                    report.substitutions += 1;
                    EditKind::Substitution
                };
                steps.push(AlignStep {
                    kind,
                    reference: Some(i - 1),
                    hypothesis: Some(j - 1),
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dist[(i - 1) * w + j] + 1 {
            report.deletions += 1;
            steps.push(AlignStep {
                kind: EditKind::Deletion,
                reference: Some(i - 1),
                hypothesis: None,
            });
            i -= 1;
        } else {
            report.insertions += 1;
            steps.push(AlignStep {
                kind: EditKind::Insertion,
                reference: None,
                hypothesis: Some(j - 1),
            });
            j -= 1;
        }
    }
    steps.reverse();
    Ok(WordAlignment { report, steps })
}

/// Recovered masked words of an alignment: reference words in `masked`
/// whose alignment step is a match.
pub fn recovered_words(steps: &[AlignStep], masked: &[usize]) -> usize {
    steps
        .iter()
        .filter(|s| s.kind == EditKind::Match && s.reference.is_some_and(|r| masked.contains(&r)))
        .count()
}

/// Scores one utterance and its masked words from a single alignment.
///
/// Returns the report and whether the masked set was empty, in which case
/// the recovery rate is defined as 1.0.
pub fn score_utterance<S: AsRef<str>>(reference: &[S], hyp: &[S], masked: &[usize]) -> Result<(ScoreReport, bool)> {
    if let Some(&bad) = masked.iter().find(|&&i| i >= reference.len()) {
        return Err(contract(format!("masked word {bad} outside reference of {} words", reference.len())));
    }
    let mut a = word_error_rate(reference, hyp)?;
    a.report.masked = masked.len();
    a.report.recovered = recovered_words(&a.steps, masked);
    Ok((a.report, masked.is_empty()))
}

/// Recovery rate of one utterance and the empty-mask diagnostic flag.
pub fn recovery_rate<S: AsRef<str>>(reference: &[S], hyp: &[S], masked: &[usize]) -> Result<(f64, bool)> {
    let (report, empty) = score_utterance(reference, hyp, masked)?;
    Ok((report.rr(), empty))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_and_substitution() {
        assert_eq!(word_error_rate(&words("a b c"), &words("a b c")).unwrap().report.wer(), 0.0);
        let a = word_error_rate(&words("a b c"), &words("a x c")).unwrap();
        assert!((a.report.wer() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.report.substitutions, 1);
    }

    #[test]
    fn empty_hypothesis_deletes_everything() {
        let a = word_error_rate(&words("a b c"), &[] as &[&str]).unwrap();
        assert_eq!(a.report.deletions, 3);
        assert_eq!(a.report.wer(), 1.0);
    }

    #[test]
    fn empty_reference_rejected() {
        assert!(word_error_rate(&[] as &[&str], &words("a")).is_err());
    }

    #[test]
    fn recovery_cases() {
        let r = words("a b c d e");
        assert_eq!(recovery_rate(&r, &r, &[1, 3]).unwrap(), (1.0, false));
        assert_eq!(recovery_rate(&r, &words("a c e"), &[1, 3]).unwrap(), (0.0, false));
        // b is recovered, d is substituted by x.
        assert_eq!(recovery_rate(&r, &words("a b c x e"), &[1, 3]).unwrap(), (0.5, false));
        assert_eq!(recovery_rate(&r, &words("a"), &[]).unwrap(), (1.0, true));
    }
}
