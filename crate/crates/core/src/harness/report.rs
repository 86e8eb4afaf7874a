use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;
use crate::model::{EvalReport, Variant};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub classes: Vec<String>,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub attack_subset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub variant: Variant,
    pub train_samples: usize,
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdvSetSummary {
    /// Malware training samples that were perturbed.
    pub parents: usize,
    /// Parents with at least one fooling candidate.
    pub fooled_parents: usize,
    pub adversarial: usize,
    pub augmented: usize,
}

/// Everything a run produces apart from checkpoints and wall times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub corpus: CorpusSummary,
    pub training: Vec<TrainingSummary>,
    pub adversarial_set: Option<AdvSetSummary>,
    pub clean: Vec<EvalReport>,
    pub attacks: Vec<EvalReport>,
    pub completed_stages: Vec<String>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            config,
            corpus: CorpusSummary::default(),
            training: Vec::new(),
            adversarial_set: None,
            clean: Vec::new(),
            attacks: Vec::new(),
            completed_stages: Vec::new(),
            failed_stage: None,
            error: None,
            notes: vec![
                "adversarial examples are generated once before retraining (offline)".into(),
                "macro_f1 is the unweighted mean of per-class F1".into(),
                "auc is one-vs-rest macro ROC AUC (class-1 score for two classes)".into(),
            ],
        }
    }

    pub fn clean_accuracy(&self, variant: Variant) -> Option<f64> {
        self.clean
            .iter()
            .find(|r| r.variant == Some(variant))
            .map(|r| r.accuracy)
    }

    pub fn attack_accuracy(&self, variant: Variant, kind: AttackKind, budget: f64) -> Option<f64> {
        self.attacks
            .iter()
            .find(|r| r.variant == Some(variant) && r.condition == kind.name() && r.budget == Some(budget))
            .map(|r| r.accuracy)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&raw)?)
    }

    /// Write `report.json`, `clean.csv`, one `attack-<kind>.csv` per attack
    /// and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_vec_pretty(self)?;
        let path = dir.join("report.json");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

        let path = dir.join("clean.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["variant", "accuracy", "auc", "macro_f1", "samples"])?;
        for r in &self.clean {
            w.write_record([
                variant_tag(r),
                r.accuracy.to_string(),
                r.auc.to_string(),
                r.macro_f1.to_string(),
                r.samples.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        for kind in self.attack_kinds() {
            let path = dir.join(format!("attack-{kind}.csv"));
            let budgets = self.budgets(kind);
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["variant".to_string()];
            header.extend(budgets.iter().map(|b| b.to_string()));
            w.write_record(&header)?;
            for variant in self.attacked_variants(kind) {
                let mut row = vec![variant.tag().to_string()];
                for &b in &budgets {
                    row.push(
                        self.attack_accuracy(variant, kind, b)
                            .map(|a| a.to_string())
                            .unwrap_or_default(),
                    );
                }
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }

        let path = dir.join("report.txt");
        fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))
    }

    fn attack_kinds(&self) -> Vec<AttackKind> {
        let mut kinds: Vec<AttackKind> = AttackKind::ALL
            .into_iter()
            .filter(|k| self.attacks.iter().any(|r| r.condition == k.name()))
            .collect();
        kinds.dedup();
        kinds
    }

    fn budgets(&self, kind: AttackKind) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .attacks
            .iter()
            .filter(|r| r.condition == kind.name())
            .filter_map(|r| r.budget)
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    fn attacked_variants(&self, kind: AttackKind) -> Vec<Variant> {
        Variant::ALL
            .into_iter()
            .filter(|v| {
                self.attacks
                    .iter()
                    .any(|r| r.variant == Some(*v) && r.condition == kind.name())
            })
            .collect()
    }

    /// Plain-text tables.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "corpus: {} classes, train {} / validation {} / test {}, attack subset {}",
            self.corpus.classes.len(),
            self.corpus.train,
            self.corpus.validation,
            self.corpus.test,
            self.corpus.attack_subset
        );
        if let Some(a) = &self.adversarial_set {
            let _ = writeln!(
                out,
                "adversarial set: {} candidates from {} of {} malware parents; {} training samples",
                a.adversarial, a.fooled_parents, a.parents, a.augmented
            );
        }
        if !self.clean.is_empty() {
            let _ = writeln!(out, "\nclean test set");
            let _ = writeln!(out, "{:<8}{:>10}{:>10}{:>10}", "model", "accuracy", "auc", "macro-F1");
            for r in &self.clean {
                let _ = writeln!(
                    out,
                    "{:<8}{:>10.4}{:>10.4}{:>10.4}",
                    variant_tag(r),
                    r.accuracy,
                    r.auc,
                    r.macro_f1
                );
            }
        }
        for kind in self.attack_kinds() {
            let budgets = self.budgets(kind);
            let _ = writeln!(out, "\n{} attack, accuracy by budget", kind.name().to_uppercase());
            let _ = write!(out, "{:<8}", "model");
            for b in &budgets {
                let _ = write!(out, "{b:>8}");
            }
            out.push('\n');
            for variant in self.attacked_variants(kind) {
                let _ = write!(out, "{:<8}", variant.tag());
                for &b in &budgets {
                    match self.attack_accuracy(variant, kind, b) {
                        Some(a) => {
                            let _ = write!(out, "{a:>8.3}");
                        }
                        None => {
                            let _ = write!(out, "{:>8}", "-");
                        }
                    }
                }
                out.push('\n');
            }
        }
        if let Some(stage) = &self.failed_stage {
            let _ = writeln!(
                out,
                "\nstage `{stage}` failed: {}",
                self.error.as_deref().unwrap_or("unknown error")
            );
        }
        out
    }
}

fn variant_tag(r: &EvalReport) -> String {
    r.variant.map(|v| v.tag().to_string()).unwrap_or_else(|| "-".into())
}
