//! Closed character vocabulary: space plus lowercase ASCII letters.

use crate::error::{contract, Result};

pub const SPACE: usize = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<char>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::characters()
    }
}

impl Vocabulary {
    pub fn characters() -> Self {
        let mut symbols = vec![' '];
        symbols.extend('a'..='z');
        Self { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn symbol(&self, id: usize) -> Option<char> {
        self.symbols.get(id).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.symbols
                    .iter()
                    .position(|&s| s == c)
                    .ok_or_else(|| contract(format!("character {c:?} is not in the vocabulary")))
            })
            .collect()
    }

    /// Renders ids as text; out-of-range ids become `?`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.symbol(i).unwrap_or('?')).collect()
    }

    pub fn words(&self, ids: &[usize]) -> Vec<String> {
        words_of(&self.decode(ids))
    }
}

pub fn words_of(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}
