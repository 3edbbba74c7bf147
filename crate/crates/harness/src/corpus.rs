//! Synthetic homophone corpus.
//!
//! Every lexicon word has a smooth audio template and a random image patch
//! template. Homophone pairs share one audio template, so their spoken
//! forms differ only by jitter, and only the paired image tells them apart.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use vhot_core::{AlignmentSpan, Example, ImagePatchGrid, SpeechSequence, TokenSequence, Vocabulary};
use vhot_numerics::{seeded_rng, Rng, Tensor};

use crate::error::{HarnessError, Result};

/// Standard deviation of per-frame jitter and of silence frames.
pub const JITTER: f64 = 0.1;
/// Standard deviation of the noise added to placed patch templates.
pub const PATCH_JITTER: f64 = 0.1;
const MIN_WORD_FRAMES: usize = 6;
const MAX_WORD_FRAMES: usize = 12;
/// Audio template keypoints are this many frames apart.
const KEYPOINT_STRIDE: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub lexicon_size: usize,
    pub homophone_pairs: usize,
    pub train_utterances: usize,
    pub valid_utterances: usize,
    /// Fraction of utterances containing at least one homophone word.
    pub homophone_fraction: f64,
    pub min_words: usize,
    pub max_words: usize,
    pub feat_dim: usize,
    pub grid: usize,
    pub patch_len: usize,
    /// Standard deviation of the background patches that fill cells
    /// without a word template.
    pub background_sigma: f64,
    /// Probability that a non-homophone word of the utterance is drawn
    /// in the image; homophone words always are.
    pub show_probability: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            lexicon_size: 40,
            homophone_pairs: 8,
            train_utterances: 600,
            valid_utterances: 200,
            homophone_fraction: 1.0,
            min_words: 3,
            max_words: 8,
            feat_dim: 40,
            grid: 4,
            patch_len: 16,
            background_sigma: 0.0,
            show_probability: 1.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Data(m));
        if self.train_utterances == 0 || self.valid_utterances == 0 {
            return bad("utterance counts must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.homophone_fraction) {
            return bad(format!("homophone fraction must lie in [0, 1], got {}", self.homophone_fraction));
        }
        if !(0.0..=1.0).contains(&self.show_probability) {
            return bad(format!("show probability must lie in [0, 1], got {}", self.show_probability));
        }
        if !(self.background_sigma >= 0.0 && self.background_sigma.is_finite()) {
            return bad(format!("background sigma must be finite and non-negative, got {}", self.background_sigma));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad(format!("word count range {}..={} is empty", self.min_words, self.max_words));
        }
        if 2 * self.homophone_pairs >= self.lexicon_size {
            return bad(format!(
                "lexicon of {} words cannot hold {} homophone pairs and any other word",
                self.lexicon_size, self.homophone_pairs
            ));
        }
        if self.homophone_fraction > 0.0 && self.homophone_pairs == 0 {
            return bad("homophone fraction > 0 needs at least one homophone pair".into());
        }
        if self.lexicon_size > 400 {
            return bad(format!("lexicon of {} words exceeds the 400 distinct spellings available", self.lexicon_size));
        }
        if self.feat_dim == 0 || self.grid == 0 || self.patch_len == 0 {
            return bad("feature, grid and patch sizes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LexiconWord {
    pub text: String,
    /// Index into [`Lexicon::audio`]; shared within a homophone pair.
    pub audio: usize,
    pub patch: Vec<f64>,
    pub homophone: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub words: Vec<LexiconWord>,
    /// Audio templates, each `[frames, feat_dim]`.
    pub audio: Vec<Tensor>,
    pub pairs: Vec<(usize, usize)>,
}

impl Lexicon {
    /// SHA-256 over the words, templates and pairs, in a fixed byte order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update((w.text.len() as u32).to_le_bytes());
            h.update(w.text.as_bytes());
            h.update((w.audio as u32).to_le_bytes());
            h.update([u8::from(w.homophone)]);
            for v in &w.patch {
                h.update(v.to_le_bytes());
            }
        }
        for t in &self.audio {
            for &d in t.shape() {
                h.update((d as u32).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        for &(a, b) in &self.pairs {
            h.update((a as u32).to_le_bytes());
            h.update((b as u32).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn index_of(&self, text: &str) -> Option<usize> {
        self.words.iter().position(|w| w.text == text)
    }
}

/// One generated utterance with the bookkeeping the manifest records.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub split: Split,
    pub example: Example,
    pub text: String,
    pub homophone: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub config: GenConfig,
    pub lexicon: Lexicon,
    pub utterances: Vec<Utterance>,
    /// Global standard deviation of all clean feature values.
    pub feature_sigma: f64,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<Example> {
        self.utterances.iter().filter(|u| u.split == split).map(|u| u.example.clone()).collect()
    }
}

/// SplitMix64 finaliser, used to derive independent stream seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn random_word(rng: &mut Rng) -> String {
    let len = rng.random_range(3..=4);
    (0..len)
        .map(|i| {
            let set = if i % 2 == 0 { CONSONANTS } else { VOWELS };
            *set.choose(rng).unwrap() as char
        })
        .collect()
}

/// A smooth `[frames, dim]` trajectory: standard-normal keypoints linearly
/// interpolated.
fn smooth_template(rng: &mut Rng, frames: usize, dim: usize) -> Tensor {
    let keys = frames.div_ceil(KEYPOINT_STRIDE) + 1;
    let points: Vec<Vec<f64>> = (0..keys).map(|_| (0..dim).map(|_| normal(rng)).collect()).collect();
    let mut data = Vec::with_capacity(frames * dim);
    for t in 0..frames {
        let pos = t as f64 / KEYPOINT_STRIDE as f64;
        let k = pos.floor() as usize;
        let frac = pos - k as f64;
        for d in 0..dim {
            data.push(points[k][d] * (1.0 - frac) + points[k + 1][d] * frac);
        }
    }
    Tensor::new(vec![frames, dim], data).expect("template shape")
}

pub fn generate_lexicon(cfg: &GenConfig, seed: u64) -> Result<Lexicon> {
    cfg.validate()?;
    let mut rng = seeded_rng(mix_seed(seed, 0x1E_C51C));
    let mut spellings: Vec<String> = Vec::with_capacity(cfg.lexicon_size);
    let fresh = |rng: &mut Rng, taken: &[String]| loop {
        let w = random_word(rng);
        if !taken.contains(&w) {
            return w;
        }
    };
    let mut pairs = Vec::with_capacity(cfg.homophone_pairs);
    for _ in 0..cfg.homophone_pairs {
        let base = fresh(&mut rng, &spellings);
        // The partner swaps the final letter for another of the same class.
        let partner = loop {
            let last = base.as_bytes()[base.len() - 1];
            let set = if VOWELS.contains(&last) { VOWELS } else { CONSONANTS };
            let c = *set.choose(&mut rng).unwrap() as char;
            let p = format!("{}{c}", &base[..base.len() - 1]);
            if p != base && !spellings.contains(&p) {
                break p;
            }
        };
        pairs.push((spellings.len(), spellings.len() + 1));
        spellings.push(base);
        spellings.push(partner);
    }
    while spellings.len() < cfg.lexicon_size {
        let w = fresh(&mut rng, &spellings);
        spellings.push(w);
    }
    let mut audio = Vec::new();
    let mut words: Vec<LexiconWord> = Vec::with_capacity(spellings.len());
    for (i, text) in spellings.into_iter().enumerate() {
        let partner_of = pairs.iter().find(|&&(_, b)| b == i).map(|&(a, _)| a);
        let audio_id = match partner_of {
            Some(a) => words[a].audio,
            None => {
                let frames = (2 * text.len() + rng.random_range(0..=2)).clamp(MIN_WORD_FRAMES, MAX_WORD_FRAMES);
                audio.push(smooth_template(&mut rng, frames, cfg.feat_dim));
                audio.len() - 1
            }
        };
        let patch = (0..cfg.patch_len).map(|_| normal(&mut rng)).collect();
        words.push(LexiconWord {
            text,
            audio: audio_id,
            patch,
            homophone: i < 2 * cfg.homophone_pairs,
        });
    }
    Ok(Lexicon { words, audio, pairs })
}

/// What one utterance says: its words as lexicon indices, and the seed
/// of its audio realisation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plan {
    pub words: Vec<usize>,
    pub audio_seed: u64,
}

/// Draws `min_words..=max_words` non-homophone words; with
/// `homophone` set, one or two random slots hold homophone words instead.
pub fn draw_plan(cfg: &GenConfig, lexicon: &Lexicon, rng: &mut Rng, homophone: bool) -> Plan {
    let homophones: Vec<usize> = (0..lexicon.words.len()).filter(|&i| lexicon.words[i].homophone).collect();
    let plain: Vec<usize> = (0..lexicon.words.len()).filter(|&i| !lexicon.words[i].homophone).collect();
    let count = rng.random_range(cfg.min_words..=cfg.max_words);
    let mut words: Vec<usize> = (0..count).map(|_| *plain.choose(rng).unwrap()).collect();
    if homophone && !homophones.is_empty() {
        let n_h = if count > 1 && rng.random::<f64>() < 0.3 { 2 } else { 1 };
        let mut slots: Vec<usize> = (0..count).collect();
        slots.shuffle(rng);
        for &s in &slots[..n_h] {
            words[s] = *homophones.choose(rng).unwrap();
        }
    }
    Plan {
        words,
        audio_seed: rng.random(),
    }
}

/// The plan with every homophone word replaced by its partner; the audio
/// seed is kept, so both plans realise to identical audio.
pub fn swap_homophones(lexicon: &Lexicon, plan: &Plan) -> Plan {
    let words = plan
        .words
        .iter()
        .map(|&w| {
            lexicon
                .pairs
                .iter()
                .find_map(|&(a, b)| if w == a { Some(b) } else if w == b { Some(a) } else { None })
                .unwrap_or(w)
        })
        .collect();
    Plan {
        words,
        audio_seed: plan.audio_seed,
    }
}

/// Word plans of a split.
///
/// Training homophone utterances come in minimal pairs: the same word
/// sequence and the same audio once with each spelling of its homophones,
/// so nothing in the speech determines the spelling and only the image
/// does.
/// Validation utterances are independent draws.
pub fn split_plans(cfg: &GenConfig, lexicon: &Lexicon, seed: u64, split: Split) -> Vec<Plan> {
    let mut rng = seeded_rng(mix_seed(seed, 0x9_1A45 + u64::from(split == Split::Valid)));
    match split {
        Split::Train => {
            let n = cfg.train_utterances;
            let pairs = ((cfg.homophone_fraction * n as f64) / 2.0).floor() as usize;
            let mut plans = Vec::with_capacity(n);
            for _ in 0..pairs {
                let p = draw_plan(cfg, lexicon, &mut rng, true);
                plans.push(swap_homophones(lexicon, &p));
                plans.push(p);
            }
            while plans.len() < n {
                plans.push(draw_plan(cfg, lexicon, &mut rng, false));
            }
            plans.shuffle(&mut rng);
            plans
        }
        Split::Valid => (0..cfg.valid_utterances)
            .map(|_| {
                let h = rng.random::<f64>() < cfg.homophone_fraction;
                draw_plan(cfg, lexicon, &mut rng, h)
            })
            .collect(),
    }
}

/// Realises one planned utterance: audio from the word templates plus
/// jitter and silences, drawn from the plan's audio seed, and an image
/// holding some of the words' patch templates, drawn from the
/// `(seed, split, index)` stream.
pub fn generate_utterance(
    cfg: &GenConfig,
    lexicon: &Lexicon,
    seed: u64,
    split: Split,
    index: usize,
    plan: &Plan,
) -> Result<Utterance> {
    let stream = (index as u64) << 1 | u64::from(split == Split::Valid);
    let words = plan.words.as_slice();
    let count = words.len();

    // Audio: optional leading silence, words separated by 1-2 silent
    // frames, optional trailing silence. Only word frames are aligned.
    let d = cfg.feat_dim;
    let mut frames: Vec<f64> = Vec::new();
    let mut alignment = Vec::with_capacity(count);
    let silence = |rng: &mut Rng, n: usize, out: &mut Vec<f64>| {
        out.extend((0..n * d).map(|_| JITTER * normal(rng)));
    };
    let mut rng = seeded_rng(mix_seed(seed, plan.audio_seed));
    let lead = rng.random_range(0..=3);
    silence(&mut rng, lead, &mut frames);
    for (k, &w) in words.iter().enumerate() {
        if k > 0 {
            let gap = rng.random_range(1..=2);
            silence(&mut rng, gap, &mut frames);
        }
        let template = &lexicon.audio[lexicon.words[w].audio];
        let start = frames.len() / d;
        frames.extend(template.data().iter().map(|v| v + JITTER * normal(&mut rng)));
        alignment.push(AlignmentSpan {
            word: k,
            start,
            end: frames.len() / d,
        });
    }
    let trail = rng.random_range(0..=3);
    silence(&mut rng, trail, &mut frames);
    let t = frames.len() / d;

    // Image: templates of a random subset of the words (homophones always)
    // at random grid cells; the other cells hold background noise.
    let mut rng = seeded_rng(mix_seed(seed, stream + 1));
    let k = cfg.grid * cfg.grid;
    let mut shown: Vec<usize> = Vec::new();
    for &w in words {
        if !shown.contains(&w) && (lexicon.words[w].homophone || rng.random::<f64>() < cfg.show_probability) {
            shown.push(w);
        }
    }
    shown.sort_by_key(|&w| !lexicon.words[w].homophone);
    shown.truncate(k);
    let mut cells: Vec<usize> = (0..k).collect();
    cells.shuffle(&mut rng);
    let mut patches: Vec<f64> = (0..k * cfg.patch_len).map(|_| cfg.background_sigma * normal(&mut rng)).collect();
    for (&w, &cell) in shown.iter().zip(&cells) {
        let dst = &mut patches[cell * cfg.patch_len..(cell + 1) * cfg.patch_len];
        for (v, &p) in dst.iter_mut().zip(&lexicon.words[w].patch) {
            *v = p + PATCH_JITTER * normal(&mut rng);
        }
    }

    let text = words.iter().map(|&w| lexicon.words[w].text.as_str()).collect::<Vec<_>>().join(" ");
    let ids = Vocabulary::characters().encode(&text)?;
    let id = format!("{}-{index:04}", split.name());
    let speech = SpeechSequence::new(id.clone(), Tensor::new(vec![t, d], frames)?, alignment)?;
    let image = ImagePatchGrid::new(id, cfg.grid, Tensor::new(vec![k, cfg.patch_len], patches)?)?;
    Ok(Utterance {
        split,
        example: Example {
            speech,
            tokens: TokenSequence::new(ids),
            image,
        },
        homophone: words.iter().map(|&w| lexicon.words[w].homophone).collect(),
        text,
    })
}

pub fn generate_corpus(cfg: &GenConfig, seed: u64) -> Result<Corpus> {
    let lexicon = generate_lexicon(cfg, seed)?;
    let mut utterances = Vec::with_capacity(cfg.train_utterances + cfg.valid_utterances);
    for (split, n) in [(Split::Train, cfg.train_utterances), (Split::Valid, cfg.valid_utterances)] {
        let plans = split_plans(cfg, &lexicon, seed, split);
        debug_assert_eq!(plans.len(), n);
        for (i, plan) in plans.iter().enumerate() {
            utterances.push(generate_utterance(cfg, &lexicon, seed, split, i, plan)?);
        }
    }
    let feature_sigma = feature_std(utterances.iter().map(|u| &u.example.speech.frames));
    Ok(Corpus {
        seed,
        config: cfg.clone(),
        lexicon,
        utterances,
        feature_sigma,
    })
}

/// Population standard deviation over every value of every matrix.
pub fn feature_std<'a>(frames: impl Iterator<Item = &'a Tensor>) -> f64 {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for t in frames {
        for &v in t.data() {
            n += 1;
            sum += v;
            sq += v * v;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    (sq / n as f64 - mean * mean).max(0.0).sqrt()
}
