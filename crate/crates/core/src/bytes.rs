use std::ops::Deref;

use serde::{Deserialize, Serialize};

/// Where a byte sequence came from in the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Preprocessed,
    Adversarial,
}

/// An immutable run of bytes tagged with its provenance.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ByteSequence {
    data: Vec<u8>,
    provenance: Provenance,
}

impl ByteSequence {
    pub fn new(data: Vec<u8>, provenance: Provenance) -> Self {
        Self { data, provenance }
    }

    pub fn original(data: Vec<u8>) -> Self {
        Self::new(data, Provenance::Original)
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }

    /// Same bytes, different provenance tag.
    pub fn with_provenance(self, provenance: Provenance) -> Self {
        Self { provenance, ..self }
    }
}

impl Deref for ByteSequence {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.data
    }
}

impl AsRef<[u8]> for ByteSequence {
    fn as_ref(&self) -> &[u8] {
        &self.data
    }
}

impl From<Vec<u8>> for ByteSequence {
    fn from(data: Vec<u8>) -> Self {
        Self::original(data)
    }
}
