//! The full detection path: optional entropy filter → B2IMG → resize →
//! classifier.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imaging::{self, ResizedImage};
use crate::model::Classifier;
use crate::preprocess::{self, PreprocessConfig};

/// How raw bytes are turned into model input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub preprocess: Option<PreprocessConfig>,
    pub input_side: usize,
}

impl Pipeline {
    pub fn raw(input_side: usize) -> Self {
        Self {
            preprocess: None,
            input_side,
        }
    }

    pub fn filtered(cfg: PreprocessConfig, input_side: usize) -> Self {
        Self {
            preprocess: Some(cfg),
            input_side,
        }
    }

    pub fn input(&self, x: &[u8]) -> Result<ResizedImage> {
        match &self.preprocess {
            Some(cfg) => imaging::bytes_to_input(&preprocess::preprocess(x, cfg), self.input_side),
            None => imaging::bytes_to_input(x, self.input_side),
        }
    }
}

/// Black-box view of a detector: class probabilities for raw bytes and
/// nothing else.
pub trait Oracle: Sync {
    fn classes(&self) -> usize;

    fn predict(&self, x: &[u8]) -> Result<Vec<f64>>;

    fn predict_label(&self, x: &[u8]) -> Result<usize> {
        Ok(argmax(&self.predict(x)?))
    }
}

/// A trained classifier bound to the pipeline it was trained with.
#[derive(Clone, Copy, Debug)]
pub struct Detector<'a> {
    pub model: &'a Classifier,
    pub pipeline: Pipeline,
}

impl<'a> Detector<'a> {
    pub fn new(model: &'a Classifier, pipeline: Pipeline) -> Self {
        Self { model, pipeline }
    }
}

impl Oracle for Detector<'_> {
    fn classes(&self) -> usize {
        self.model.classes()
    }

    fn predict(&self, x: &[u8]) -> Result<Vec<f64>> {
        self.model.forward(&self.pipeline.input(x)?)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}
