//! Accuracy, ROC AUC and macro-F1, plus the evaluation driver.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::pipeline::{argmax, Detector, Oracle, Pipeline};

/// Model variants compared by the experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Original model, raw bytes.
    #[serde(rename = "OM")]
    Original,
    /// Entropy filter in front of the original model.
    #[serde(rename = "P+OM")]
    FilteredOriginal,
    /// Entropy filter in front of the adversarially trained model.
    #[serde(rename = "P+ATM")]
    FilteredAdversarial,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::Original,
        Variant::FilteredOriginal,
        Variant::FilteredAdversarial,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Variant::Original => "OM",
            Variant::FilteredOriginal => "P+OM",
            Variant::FilteredAdversarial => "P+ATM",
        }
    }

    pub fn uses_preprocess(&self) -> bool {
        !matches!(self, Variant::Original)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub auc: f64,
    /// Unweighted mean of per-class F1.
    pub macro_f1: f64,
}

/// One (variant, condition) cell of an evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Option<Variant>,
    /// `clean`, or the attack name.
    pub condition: String,
    /// Injection budget for attack conditions.
    pub budget: Option<f64>,
    pub accuracy: f64,
    pub auc: f64,
    pub macro_f1: f64,
    pub samples: usize,
    /// Excluded from serialised reports so reruns compare bit-exactly.
    #[serde(skip)]
    pub wall_time_s: f64,
}

pub fn accuracy(labels: &[usize], predicted: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels.iter().zip(predicted).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len() as f64
}

/// Binary ROC AUC as the Mann-Whitney statistic with mid-ranks for ties.
/// Returns `None` when either class is absent.
pub fn binary_auc(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block i..=j shares the mean rank
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Binary: AUC of the class-1 score. Multiclass: mean one-vs-rest AUC over
/// classes that have both positives and negatives. 0.5 when undefined.
pub fn auc(labels: &[usize], probs: &[Vec<f64>], classes: usize) -> f64 {
    if classes == 2 {
        let pos: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        let s: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        return binary_auc(&pos, &s).unwrap_or(0.5);
    }
    let per_class: Vec<f64> = (0..classes)
        .filter_map(|c| {
            let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            binary_auc(&pos, &s)
        })
        .collect();
    if per_class.is_empty() {
        0.5
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    }
}

/// Mean F1 over every class that occurs in either the labels or the
/// predictions.
pub fn macro_f1(labels: &[usize], predicted: &[usize], classes: usize) -> f64 {
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fneg = vec![0usize; classes];
    for (&y, &p) in labels.iter().zip(predicted) {
        if y == p {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fneg[y] += 1;
        }
    }
    let scores: Vec<f64> = (0..classes)
        .filter(|&c| tp[c] + fp[c] + fneg[c] > 0)
        .map(|c| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fneg[c]) as f64)
        .collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

pub fn metrics(labels: &[usize], probs: &[Vec<f64>], classes: usize) -> Metrics {
    let predicted: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    Metrics {
        accuracy: accuracy(labels, &predicted),
        auc: auc(labels, probs, classes),
        macro_f1: macro_f1(labels, &predicted, classes),
    }
}

/// Score labelled byte sequences through an oracle.
pub fn evaluate_oracle<O: Oracle>(oracle: &O, items: &[(&[u8], usize)]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Precondition("evaluation set is empty".into()));
    }
    let start = Instant::now();
    let probs = items
        .par_iter()
        .map(|(x, _)| oracle.predict(x))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = items.iter().map(|(_, y)| *y).collect();
    let m = metrics(&labels, &probs, oracle.classes());
    Ok(EvalReport {
        variant: None,
        condition: "clean".into(),
        budget: None,
        accuracy: m.accuracy,
        auc: m.auc,
        macro_f1: m.macro_f1,
        samples: items.len(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Clean evaluation of `model` behind `pipeline`.
pub fn evaluate(model: &Classifier, samples: &[Sample], pipeline: &Pipeline) -> Result<EvalReport> {
    let items: Vec<(&[u8], usize)> = samples.iter().map(|s| (s.bytes.as_slice(), s.label)).collect();
    evaluate_oracle(&Detector::new(model, *pipeline), &items)
}
