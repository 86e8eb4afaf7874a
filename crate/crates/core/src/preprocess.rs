//! Entropy filter applied in front of the classifier.
//!
//! The input is cut into consecutive, non-overlapping chunks of `chunk_len`
//! bytes. A chunk survives only if its Shannon entropy (bits per byte) is
//! strictly greater than the threshold. Long runs of a single padding value
//! (the typical signature of cheap byte-filling evasion) are therefore
//! dropped before imaging.

use serde::{Deserialize, Serialize};

use crate::bytes::{ByteSequence, Provenance};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Entropy threshold in bits per byte, in `[0, 8]`.
    pub threshold: f64,
    /// Chunk length in bytes, at least 2.
    pub chunk_len: usize,
    /// Keep a trailing chunk shorter than `chunk_len` without testing it.
    pub keep_partial_tail: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            chunk_len: 10 * 1024,
            keep_partial_tail: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=8.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "entropy threshold {} outside [0, 8]",
                self.threshold
            )));
        }
        if self.chunk_len < 2 {
            return Err(Error::Config(format!(
                "chunk length {} must be at least 2",
                self.chunk_len
            )));
        }
        Ok(())
    }
}

/// Shannon entropy of `chunk` in bits per symbol, in `[0, 8]`.
pub fn entropy(chunk: &[u8]) -> Result<f64> {
    if chunk.is_empty() {
        return Err(Error::Precondition("entropy of an empty chunk".into()));
    }
    let mut counts = [0usize; 256];
    for &b in chunk {
        counts[b as usize] += 1;
    }
    let len = chunk.len() as f64;
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / len;
            -p * p.log2()
        })
        .sum::<f64>();
    // a single symbol gives -1·log2(1) = -0.0
    Ok(h.max(0.0))
}

/// Input byte ranges that survive the filter, in order, with adjacent
/// ranges merged.
pub fn kept_ranges(x: &[u8], cfg: &PreprocessConfig) -> Vec<std::ops::Range<usize>> {
    let mut kept: Vec<std::ops::Range<usize>> = Vec::new();
    let mut start = 0;
    while start < x.len() {
        let end = (start + cfg.chunk_len).min(x.len());
        let chunk = &x[start..end];
        let partial = chunk.len() < cfg.chunk_len;
        let keep = if partial && cfg.keep_partial_tail {
            true
        } else {
            // chunk is non-empty here
            entropy(chunk).map(|h| h > cfg.threshold).unwrap_or(false)
        };
        if keep {
            match kept.last_mut() {
                Some(last) if last.end == start => last.end = end,
                _ => kept.push(start..end),
            }
        }
        start = end;
    }
    kept
}

/// Remove low-entropy chunks from `x`.
pub fn preprocess(x: &[u8], cfg: &PreprocessConfig) -> ByteSequence {
    let ranges = kept_ranges(x, cfg);
    let total = ranges.iter().map(|r| r.len()).sum();
    let mut out = Vec::with_capacity(total);
    for r in ranges {
        out.extend_from_slice(&x[r]);
    }
    ByteSequence::new(out, Provenance::Preprocessed)
}
