use serde::{Deserialize, Serialize};
use vhot_numerics::Tensor;

use crate::error::{contract, Result};

/// Frames `[start, end)` carrying the audio of reference word `word`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentSpan {
    pub word: usize,
    pub start: usize,
    pub end: usize,
}

/// `T x D` acoustic feature frames plus word-level alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeechSequence {
    pub id: String,
    pub frames: Tensor,
    pub alignment: Vec<AlignmentSpan>,
}

impl SpeechSequence {
    pub fn new(id: impl Into<String>, frames: Tensor, alignment: Vec<AlignmentSpan>) -> Result<Self> {
        let s = Self {
            id: id.into(),
            frames,
            alignment,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.cols()
    }

    /// Spans must be sorted, non-overlapping, non-empty and inside `[0, T)`,
    /// with word indices `0, 1, 2, ...` in order.
    pub fn validate(&self) -> Result<()> {
        if self.frames.rank() != 2 {
            return Err(contract(format!("{}: frames must be a matrix", self.id)));
        }
        let t = self.num_frames();
        let mut prev_end = 0;
        for (i, s) in self.alignment.iter().enumerate() {
            if s.word != i {
                return Err(contract(format!("{}: span {i} names word {}", self.id, s.word)));
            }
            if s.start >= s.end || s.end > t || s.start < prev_end {
                return Err(contract(format!(
                    "{}: span {i} [{}, {}) is empty, overlapping or outside [0, {t})",
                    self.id, s.start, s.end
                )));
            }
            prev_end = s.end;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn check(&self, vocab_size: usize) -> Result<()> {
        if let Some(&bad) = self.ids.iter().find(|&&i| i >= vocab_size) {
            return Err(contract(format!("token id {bad} outside vocabulary of {vocab_size}")));
        }
        Ok(())
    }
}

/// Image as a `P x P` grid of flattened patches, stored `[P*P, patch_len]`
/// in row-major grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePatchGrid {
    pub id: String,
    pub grid: usize,
    pub patches: Tensor,
}

impl ImagePatchGrid {
    pub fn new(id: impl Into<String>, grid: usize, patches: Tensor) -> Result<Self> {
        if patches.rank() != 2 || patches.rows() != grid * grid {
            return Err(contract(format!(
                "image needs {} patches, got shape {:?}",
                grid * grid,
                patches.shape()
            )));
        }
        Ok(Self {
            id: id.into(),
            grid,
            patches,
        })
    }

    pub fn num_patches(&self) -> usize {
        self.grid * self.grid
    }

    pub fn patch_len(&self) -> usize {
        self.patches.cols()
    }
}

/// One training or evaluation item.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub speech: SpeechSequence,
    pub tokens: TokenSequence,
    pub image: ImagePatchGrid,
}
