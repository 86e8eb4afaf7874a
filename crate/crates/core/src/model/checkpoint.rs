use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Architecture, Classifier, TrainHistory};
use crate::pipeline::Pipeline;

pub const CHECKPOINT_FORMAT: &str = "byteguard-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint: architecture, `f64` parameters, class names, the input
/// pipeline the model was trained behind, and its training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub class_names: Vec<String>,
    pub pipeline: Pipeline,
    pub history: TrainHistory,
    pub parameters: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: &Classifier, class_names: Vec<String>, pipeline: Pipeline, history: TrainHistory) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: model.architecture(),
            class_names,
            pipeline,
            history,
            parameters: model.parameters().to_vec(),
        }
    }

    pub fn classifier(&self) -> Result<Classifier> {
        Classifier::from_parameters(self.architecture, self.parameters.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_slice(&raw)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                ckpt.version
            )));
        }
        if ckpt.class_names.len() != ckpt.architecture.classes {
            return Err(Error::Checkpoint("class names do not match class count".into()));
        }
        ckpt.classifier()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_preserves_parameters_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let m = Classifier::new(Architecture::new(8, 2).unwrap(), 3);
        let ck = Checkpoint::new(&m, vec!["a".into(), "b".into()], Pipeline::raw(8), TrainHistory::default());
        let path = dir.path().join("m.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.classifier().unwrap(), m);
    }

    #[test]
    fn rejects_wrong_version() {
        let dir = tempfile::tempdir().unwrap();
        let m = Classifier::new(Architecture::new(8, 2).unwrap(), 3);
        let mut ck = Checkpoint::new(&m, vec!["a".into(), "b".into()], Pipeline::raw(8), TrainHistory::default());
        ck.version = 99;
        let path = dir.path().join("m.json");
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
