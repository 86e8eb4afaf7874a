//! Labelled byte corpora: ingestion from disk, deterministic synthesis, and
//! the stratified train/validation/test split.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bytes::ByteSequence;
use crate::error::{Error, Result};
use crate::preprocess::PreprocessConfig;
use crate::seed;

/// Extension of BIG2015-style hex dump files.
pub const HEXDUMP_EXTENSION: &str = "bytes";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub bytes: ByteSequence,
    pub label: usize,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub classes: Vec<String>,
    pub counts: Vec<usize>,
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

fn default_ratios() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

impl Default for CorpusManifest {
    /// Four classes of 500 samples each.
    fn default() -> Self {
        Self {
            classes: ["benign", "dropper", "worm", "trojan"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            counts: vec![500; 4],
            ratios: default_ratios(),
            seed: 2024,
        }
    }
}

impl CorpusManifest {
    pub fn validate(&self) -> Result<()> {
        if self.counts.len() != self.classes.len() {
            return Err(Error::Manifest(format!(
                "{} class names but {} counts",
                self.classes.len(),
                self.counts.len()
            )));
        }
        if self.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Manifest("split ratios must lie in [0, 1]".into()));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Manifest(format!("split ratios sum to {sum}, not 1")));
        }
        let unique: HashSet<&String> = self.classes.iter().collect();
        if unique.len() != self.classes.len() {
            return Err(Error::Manifest("duplicate class name".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_slice(&raw)?;
        m.validate()?;
        Ok(m)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Read one subdirectory per class; `.bytes` files are parsed as hex dumps,
/// everything else is taken as raw bytes.
pub fn ingest_binary_dir(dir: &Path, manifest: &CorpusManifest) -> Result<Vec<Sample>> {
    manifest.validate()?;
    let mut samples = Vec::new();
    for (label, class) in manifest.classes.iter().enumerate() {
        let class_dir = dir.join(class);
        let entries = fs::read_dir(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        let mut files: Vec<PathBuf> = entries
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&class_dir, err)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Corpus(format!("class `{class}` has no files")));
        }
        for path in files {
            let bytes = read_sample_file(&path)?;
            if bytes.is_empty() {
                return Err(Error::Corpus(format!("{} is empty", path.display())));
            }
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            samples.push(Sample {
                bytes,
                label,
                id: format!("{class}/{name}"),
            });
        }
    }
    Ok(samples)
}

fn read_sample_file(path: &Path) -> Result<ByteSequence> {
    if path.extension().is_some_and(|e| e == HEXDUMP_EXTENSION) {
        ingest_hexdump(path)
    } else {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(ByteSequence::original(raw))
    }
}

pub fn ingest_hexdump(path: &Path) -> Result<ByteSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_hexdump(&text)
}

/// Parse `ADDRESS XX XX ...` lines; the first token of each line is the
/// address and is skipped, `??` reads as 0x00.
pub fn parse_hexdump(text: &str) -> Result<ByteSequence> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        for tok in line.split_whitespace().skip(1) {
            if tok == "??" {
                out.push(0);
                continue;
            }
            if tok.len() != 2 {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("bad byte token `{tok}`"),
                });
            }
            let b = u8::from_str_radix(tok, 16).map_err(|_| Error::Parse {
                line: n + 1,
                message: format!("bad byte token `{tok}`"),
            })?;
            out.push(b);
        }
    }
    Ok(ByteSequence::original(out))
}

const MOTIFS_PER_CLASS: usize = 16;
const MOTIF_LEN: usize = 8;
const MIN_CONTENT: f64 = 4096.0;
const MAX_CONTENT: f64 = 65536.0;
/// Share of content bytes drawn from class motifs (60 of the 85 non-filler
/// percent); the rest is uniform noise.
const MOTIF_SHARE: f64 = 60.0 / 85.0;
/// Target filler fraction of the whole sample.
const FILLER_SHARE: f64 = 0.15;
/// Byte value of the filler run.
const FILLER_BYTE: u8 = 0x00;
/// Upper bound of the per-sample probability that a motif is borrowed from a
/// neighbouring class.
const MAX_CONFUSION: f64 = 0.35;
/// Motif bytes of all classes fall inside `[BAND_LO, BAND_LO + BAND_WIDTH)`.
const BAND_LO: usize = 16;
const BAND_WIDTH: usize = 224;

/// Probability of emitting a motif (8 bytes) rather than one noise byte so
/// that motif bytes make up `MOTIF_SHARE` of the content on average.
fn motif_probability() -> f64 {
    let m = MOTIF_LEN as f64;
    MOTIF_SHARE / (m - (m - 1.0) * MOTIF_SHARE)
}

/// Byte range `[lo, hi)` owned by class `k` out of `classes`.
fn class_band(k: usize, classes: usize) -> (u8, u8) {
    let lo = BAND_LO + BAND_WIDTH * k / classes;
    let hi = BAND_LO + BAND_WIDTH * (k + 1) / classes;
    (lo as u8, hi as u8)
}

fn motif_dictionaries(classes: usize, seed: u64) -> Vec<Vec<[u8; MOTIF_LEN]>> {
    let mut rng = seed::child_rng(seed, "motifs");
    let mut seen = HashSet::new();
    (0..classes)
        .map(|k| {
            let (lo, hi) = class_band(k, classes);
            let mut dict = Vec::with_capacity(MOTIFS_PER_CLASS);
            while dict.len() < MOTIFS_PER_CLASS {
                let mut m = [0u8; MOTIF_LEN];
                for b in m.iter_mut() {
                    *b = rng.gen_range(lo..hi);
                }
                if seen.insert(m) {
                    dict.push(m);
                }
            }
            dict
        })
        .collect()
}

/// Neighbouring class whose motifs may leak into a sample of `label`.
fn confuser(label: usize, classes: usize, rng: &mut seed::Rng) -> usize {
    if label == 0 {
        1
    } else if label + 1 == classes || rng.gen::<bool>() {
        label - 1
    } else {
        label + 1
    }
}

fn synth_sample(dicts: &[Vec<[u8; MOTIF_LEN]>], label: usize, rng: &mut seed::Rng, min_run: usize) -> Vec<u8> {
    let own = &dicts[label];
    let confusion = rng.gen::<f64>() * MAX_CONFUSION;
    let other = &dicts[confuser(label, dicts.len(), rng)];
    let content_len = (MIN_CONTENT.ln() + rng.gen::<f64>() * (MAX_CONTENT.ln() - MIN_CONTENT.ln()))
        .exp()
        .round() as usize;
    let p_motif = motif_probability();
    let mut content = Vec::with_capacity(content_len + MOTIF_LEN);
    while content.len() < content_len {
        if rng.gen::<f64>() < p_motif {
            let dict = if rng.gen::<f64>() < confusion { other } else { own };
            content.extend_from_slice(&dict[rng.gen_range(0..dict.len())]);
        } else {
            content.push(rng.gen());
        }
    }
    content.truncate(content_len);

    let share_len = (FILLER_SHARE / (1.0 - FILLER_SHARE) * content_len as f64).round() as usize;
    let run_len = share_len.max(min_run) + rng.gen_range(0..=min_run / 4);
    let at = rng.gen_range(0..=content_len);
    let mut out = Vec::with_capacity(content_len + run_len);
    out.extend_from_slice(&content[..at]);
    out.extend(std::iter::repeat(FILLER_BYTE).take(run_len));
    out.extend_from_slice(&content[at..]);
    out
}

/// Deterministic labelled corpus with per-class motif structure.
///
/// Each class owns 16 distinct 8-byte motifs whose bytes come from a band of
/// values reserved for that class. A sample holds 4–64 KiB of content
/// (log-uniform length) in which motifs appear at random offsets among
/// uniform noise bytes. Each sample borrows a random fraction (up to 0.35) of
/// its motifs from a neighbouring class, so classes overlap and a clean
/// detector is not trivially perfect. One run of zero bytes sits at a random
/// offset; it is at least twice the default preprocessing chunk length so
/// the entropy filter always has something to remove.
pub fn synth_corpus(manifest: &CorpusManifest) -> Result<Vec<Sample>> {
    manifest.validate()?;
    if manifest.classes.len() < 2 {
        return Err(Error::Manifest("synthesis needs at least two classes".into()));
    }
    if manifest.counts.iter().any(|&c| c == 0) {
        return Err(Error::Manifest("every class needs at least one sample".into()));
    }
    let dicts = motif_dictionaries(manifest.classes.len(), manifest.seed);
    let min_run = 2 * PreprocessConfig::default().chunk_len;
    let jobs: Vec<(usize, usize)> = manifest
        .counts
        .iter()
        .enumerate()
        .flat_map(|(label, &n)| (0..n).map(move |i| (label, i)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(label, i)| {
            let mut rng = seed::child_rng(manifest.seed, &format!("sample-{label}-{i}"));
            let bytes = synth_sample(&dicts, label, &mut rng, min_run);
            Sample {
                bytes: ByteSequence::original(bytes),
                label,
                id: format!("{}/{i:05}", manifest.classes[label]),
            }
        })
        .collect())
}

/// Sizes of the three splits for `n` samples: floor each share, then give
/// the remainder to train first and validation second.
pub fn split_sizes(n: usize, ratios: &[f64; 3]) -> (usize, usize, usize) {
    let floors: Vec<usize> = ratios.iter().map(|r| (r * n as f64 + 1e-9).floor() as usize).collect();
    let mut sizes = [floors[0], floors[1], floors[2]];
    let mut rest = n.saturating_sub(sizes.iter().sum());
    let mut k = 0;
    while rest > 0 {
        sizes[k % 2] += 1;
        rest -= 1;
        k += 1;
    }
    (sizes[0], sizes[1], sizes[2])
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Stratified, seeded split. Classes with fewer than three samples go
/// entirely to train.
pub fn split(samples: &[Sample], manifest: &CorpusManifest) -> Result<Split> {
    if samples.is_empty() {
        return Err(Error::Precondition("cannot split an empty corpus".into()));
    }
    let classes = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let mut out = Split::default();
    for c in 0..classes {
        let mut members: Vec<&Sample> = samples.iter().filter(|s| s.label == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            let name = manifest.classes.get(c).cloned().unwrap_or_else(|| c.to_string());
            log::warn!(
                "class `{name}` has only {} samples; placing it wholly in train",
                members.len()
            );
            out.train.extend(members.into_iter().cloned());
            continue;
        }
        let mut rng = seed::child_rng(manifest.seed, &format!("split-{c}"));
        members.shuffle(&mut rng);
        let (ntr, nva, _) = split_sizes(members.len(), &manifest.ratios);
        out.train.extend(members[..ntr].iter().map(|s| (*s).clone()));
        out.validation
            .extend(members[ntr..ntr + nva].iter().map(|s| (*s).clone()));
        out.test.extend(members[ntr + nva..].iter().map(|s| (*s).clone()));
    }
    Ok(out)
}

/// Seeded uniform subset of `test` of size `min(n, |test|)`, kept in input
/// order.
pub fn attack_subset(test: &[Sample], n: usize, seed: u64) -> Vec<Sample> {
    if n >= test.len() {
        return test.to_vec();
    }
    let mut rng = seed::child_rng(seed, "attack-subset");
    let mut idx = rand::seq::index::sample(&mut rng, test.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| test[i].clone()).collect()
}
