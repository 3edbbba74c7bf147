//! Corpus on disk: `manifest.jsonl` (a header record, then one record per
//! utterance) beside `features/*.feat` and `images/*.img`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vhot_core::{AlignmentSpan, Example, ImagePatchGrid, SpeechSequence, TokenSequence, Vocabulary};

use crate::binio::{read_features, read_image, write_features, write_image};
use crate::corpus::{generate_lexicon, Corpus, GenConfig, Split};
use crate::error::{HarnessError, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub kind: String,
    pub version: u32,
    pub seed: u64,
    pub feature_sigma: f64,
    pub vocabulary: String,
    pub lexicon_hash: String,
    pub lexicon: Vec<String>,
    pub homophone_pairs: Vec<(usize, usize)>,
    pub feat_dim: usize,
    pub grid: usize,
    pub patch_len: usize,
    pub train_utterances: usize,
    pub valid_utterances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub kind: String,
    pub id: String,
    pub split: Split,
    pub text: String,
    pub features: String,
    pub image: String,
    /// `[start, end)` frame span of each word.
    pub alignment: Vec<(usize, usize)>,
    pub homophone: Vec<bool>,
}

/// A validated manifest with its examples loaded.
#[derive(Clone, Debug)]
pub struct LoadedCorpus {
    pub dir: PathBuf,
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
    pub examples: Vec<Example>,
}

impl LoadedCorpus {
    pub fn split(&self, split: Split) -> Vec<Example> {
        self.records
            .iter()
            .zip(&self.examples)
            .filter(|(r, _)| r.split == split)
            .map(|(_, e)| e.clone())
            .collect()
    }

    pub fn homophone_flags(&self, id: &str) -> Option<&[bool]> {
        self.records.iter().find(|r| r.id == id).map(|r| r.homophone.as_slice())
    }
}

/// Writes the corpus files and manifest under `dir`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir.join("features"))?;
    fs::create_dir_all(dir.join("images"))?;
    let vocab = Vocabulary::characters();
    let cfg = &corpus.config;
    let header = ManifestHeader {
        kind: "header".into(),
        version: MANIFEST_VERSION,
        seed: corpus.seed,
        feature_sigma: corpus.feature_sigma,
        vocabulary: vocab.symbols().iter().collect(),
        lexicon_hash: corpus.lexicon.hash(),
        lexicon: corpus.lexicon.words.iter().map(|w| w.text.clone()).collect(),
        homophone_pairs: corpus.lexicon.pairs.clone(),
        feat_dim: cfg.feat_dim,
        grid: cfg.grid,
        patch_len: cfg.patch_len,
        train_utterances: cfg.train_utterances,
        valid_utterances: cfg.valid_utterances,
    };
    let mut out = serde_json::to_string(&header).map_err(|e| HarnessError::Data(e.to_string()))?;
    out.push('\n');
    for u in &corpus.utterances {
        let id = &u.example.speech.id;
        let features = format!("features/{id}.feat");
        let image = format!("images/{id}.img");
        write_features(&dir.join(&features), &u.example.speech.frames)?;
        write_image(&dir.join(&image), u.example.image.grid, &u.example.image.patches)?;
        let record = ManifestRecord {
            kind: "utterance".into(),
            id: id.clone(),
            split: u.split,
            text: u.text.clone(),
            features,
            image,
            alignment: u.example.speech.alignment.iter().map(|s| (s.start, s.end)).collect(),
            homophone: u.homophone.clone(),
        };
        out.push_str(&serde_json::to_string(&record).map_err(|e| HarnessError::Data(e.to_string()))?);
        out.push('\n');
    }
    fs::write(dir.join(MANIFEST_FILE), out)?;
    Ok(())
}

fn line_error(line: usize, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data(format!("{MANIFEST_FILE} line {line}: {msg}"))
}

/// Parses and validates every record before any example is loaded; the
/// first malformed record fails with its line number.
pub fn parse_manifest(text: &str) -> Result<(ManifestHeader, Vec<ManifestRecord>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| line_error(1, "manifest is empty"))?;
    let header: ManifestHeader = serde_json::from_str(first).map_err(|e| line_error(1, e))?;
    if header.kind != "header" {
        return Err(line_error(1, "first record must be the header"));
    }
    if header.version != MANIFEST_VERSION {
        return Err(line_error(1, format!("unsupported manifest version {}", header.version)));
    }
    let vocab = Vocabulary::characters();
    if header.vocabulary != vocab.symbols().iter().collect::<String>() {
        return Err(line_error(1, "vocabulary differs from the recogniser's"));
    }
    let mut records = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in lines {
        let n = i + 1;
        let r: ManifestRecord = serde_json::from_str(line).map_err(|e| line_error(n, e))?;
        if r.kind != "utterance" {
            return Err(line_error(n, format!("unexpected record kind {:?}", r.kind)));
        }
        if !ids.insert(r.id.clone()) {
            return Err(line_error(n, format!("duplicate id {}", r.id)));
        }
        vocab.encode(&r.text).map_err(|e| line_error(n, e))?;
        let words = r.text.split(' ').count();
        if r.text.is_empty() || r.text.split(' ').any(str::is_empty) {
            return Err(line_error(n, "text must be words separated by single spaces"));
        }
        if r.alignment.len() != words || r.homophone.len() != words {
            return Err(line_error(
                n,
                format!(
                    "{} words but {} spans and {} homophone flags",
                    words,
                    r.alignment.len(),
                    r.homophone.len()
                ),
            ));
        }
        let mut prev = 0;
        for &(s, e) in &r.alignment {
            if s >= e || s < prev {
                return Err(line_error(n, format!("span [{s}, {e}) is empty or out of order")));
            }
            prev = e;
        }
        records.push(r);
    }
    Ok((header, records))
}

pub fn load_corpus(dir: &Path) -> Result<LoadedCorpus> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    let (header, records) = parse_manifest(&text)?;
    for (i, r) in records.iter().enumerate() {
        for f in [&r.features, &r.image] {
            if !dir.join(f).is_file() {
                return Err(line_error(i + 2, format!("missing file {f}")));
            }
        }
    }
    verify_lexicon(&header)?;
    let vocab = Vocabulary::characters();
    let mut examples = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let frames = read_features(&dir.join(&r.features))?;
        if frames.cols() != header.feat_dim {
            return Err(line_error(i + 2, format!("features have {} dims, header says {}", frames.cols(), header.feat_dim)));
        }
        let alignment = r
            .alignment
            .iter()
            .enumerate()
            .map(|(w, &(start, end))| AlignmentSpan { word: w, start, end })
            .collect();
        let speech = SpeechSequence::new(r.id.clone(), frames, alignment).map_err(|e| line_error(i + 2, e))?;
        let (grid, patches) = read_image(&dir.join(&r.image))?;
        if grid != header.grid || patches.cols() != header.patch_len {
            return Err(line_error(i + 2, "image grid differs from the header"));
        }
        let image = ImagePatchGrid::new(r.id.clone(), grid, patches)?;
        examples.push(Example {
            speech,
            tokens: TokenSequence::new(vocab.encode(&r.text)?),
            image,
        });
    }
    Ok(LoadedCorpus {
        dir: dir.to_path_buf(),
        header,
        records,
        examples,
    })
}

/// Regenerates the lexicon from the header's seed and sizes and checks
/// that its hash matches the recorded one.
pub fn verify_lexicon(header: &ManifestHeader) -> Result<()> {
    let cfg = GenConfig {
        lexicon_size: header.lexicon.len(),
        homophone_pairs: header.homophone_pairs.len(),
        homophone_fraction: 0.0,
        feat_dim: header.feat_dim,
        grid: header.grid,
        patch_len: header.patch_len,
        ..GenConfig::default()
    };
    let lexicon = generate_lexicon(&cfg, header.seed)?;
    if lexicon.hash() != header.lexicon_hash {
        return Err(line_error(1, "lexicon hash does not match regeneration from the recorded seed"));
    }
    Ok(())
}

/// SHA-256 over every file below `dir`, visited in sorted path order.
pub fn directory_hash(dir: &Path) -> Result<String> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                walk(&p, root, out)?;
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(fs::read(dir.join(&f))?);
    }
    Ok(hex::encode(h.finalize()))
}
