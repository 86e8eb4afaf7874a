use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::attacks::{run_attack_suite, AttackTarget, BENIGN};
use crate::corpus::{attack_subset, ingest_binary_dir, split, synth_corpus, Sample, Split};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Resolved};
use crate::harness::report::{AdvSetSummary, CorpusSummary, ExperimentReport, TrainingSummary};
use crate::model::{evaluate, train, Architecture, Checkpoint, Classifier, LabeledInput, TrainHistory, Variant};
use crate::perturb::{generate_adversarial, PerturbSpec};
use crate::pipeline::{Detector, Pipeline};

pub fn load_corpus(cfg: &ExperimentConfig, resolved: &Resolved) -> Result<Vec<Sample>> {
    match &cfg.corpus_dir {
        Some(dir) => ingest_binary_dir(dir, &resolved.manifest),
        None => synth_corpus(&resolved.manifest),
    }
}

pub fn labeled_inputs(samples: &[Sample], pipeline: &Pipeline) -> Result<Vec<LabeledInput>> {
    samples
        .par_iter()
        .map(|s| Ok((pipeline.input(&s.bytes)?, s.label)))
        .collect()
}

/// Train one variant from its own fresh initialisation.
pub fn train_variant(
    variant: Variant,
    train_set: &[Sample],
    validation: &[Sample],
    cfg: &ExperimentConfig,
    resolved: &Resolved,
) -> Result<(Classifier, TrainHistory)> {
    let pipeline = cfg.pipeline(variant);
    let arch = Architecture::new(cfg.input_side, cfg.manifest.classes.len())?;
    let model = Classifier::new(arch, resolved.init(variant));
    let tr = labeled_inputs(train_set, &pipeline)?;
    let va = labeled_inputs(validation, &pipeline)?;
    let (model, history) = train(model, &tr, &va, &resolved.train(variant))?;
    log::info!(
        "{variant}: best validation accuracy {:.4} at epoch {}",
        history.best_validation_accuracy(),
        history.best_epoch
    );
    Ok((model, history))
}

/// OM on raw bytes and P+OM behind the entropy filter.
pub struct Pretrained {
    pub om: Classifier,
    pub om_history: TrainHistory,
    pub p_om: Classifier,
    pub p_om_history: TrainHistory,
}

pub fn pretrain(cfg: &ExperimentConfig, resolved: &Resolved, data: &Split) -> Result<Pretrained> {
    let (om, om_history) = train_variant(Variant::Original, &data.train, &data.validation, cfg, resolved)?;
    let (p_om, p_om_history) =
        train_variant(Variant::FilteredOriginal, &data.train, &data.validation, cfg, resolved)?;
    Ok(Pretrained {
        om,
        om_history,
        p_om,
        p_om_history,
    })
}

/// Originals plus every fooling candidate generated from a malware training
/// sample, each labelled with its parent's class.
pub fn build_adv_training_set(
    detector: &Detector<'_>,
    train_set: &[Sample],
    spec: &PerturbSpec,
) -> Result<(Vec<Sample>, AdvSetSummary)> {
    let parents: Vec<&Sample> = train_set.iter().filter(|s| s.label != BENIGN).collect();
    let generated = parents
        .par_iter()
        .map(|s| generate_adversarial(s, detector, spec))
        .collect::<Result<Vec<_>>>()?;
    let mut augmented = train_set.to_vec();
    let mut summary = AdvSetSummary {
        parents: parents.len(),
        ..Default::default()
    };
    for (parent, candidates) in parents.iter().zip(generated) {
        if !candidates.is_empty() {
            summary.fooled_parents += 1;
        }
        for (j, adv) in candidates.into_iter().enumerate() {
            augmented.push(Sample {
                bytes: adv.bytes,
                label: parent.label,
                id: format!("{}#adv{j}-{}", parent.id, generator_tag(&adv.generator)),
            });
            summary.adversarial += 1;
        }
    }
    summary.augmented = augmented.len();
    if summary.adversarial == 0 {
        log::warn!("no adversarial candidate fooled the pretrained model");
    }
    log::info!(
        "adversarial set: {} candidates from {} of {} parents",
        summary.adversarial,
        summary.fooled_parents,
        summary.parents
    );
    Ok((augmented, summary))
}

fn generator_tag(g: &crate::perturb::Generator) -> &'static str {
    match g {
        crate::perturb::Generator::RandomBytes => "random",
        crate::perturb::Generator::GradientBytes => "gradient",
    }
}

/// P+ATM: fresh initialisation, augmented set, entropy filter in front.
pub fn adv_train(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    augmented: &[Sample],
    validation: &[Sample],
) -> Result<(Classifier, TrainHistory)> {
    train_variant(Variant::FilteredAdversarial, augmented, validation, cfg, resolved)
}

fn summarize(variant: Variant, train_samples: usize, h: &TrainHistory) -> TrainingSummary {
    TrainingSummary {
        variant,
        train_samples,
        best_epoch: h.best_epoch,
        best_validation_accuracy: h.best_validation_accuracy(),
        epochs: h.epochs.len(),
    }
}

#[derive(Serialize)]
struct Timing {
    stage: String,
    seconds: f64,
}

/// Runs stages in order, recording timings and persisting the partial report
/// when a stage fails.
struct Runner<'a> {
    report: ExperimentReport,
    timings: Vec<Timing>,
    dir: &'a Path,
}

impl Runner<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut ExperimentReport) -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        let start = Instant::now();
        let out = f(&mut self.report);
        self.timings.push(Timing {
            stage: name.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        match out {
            Ok(v) => {
                self.report.completed_stages.push(name.into());
                Ok(v)
            }
            Err(e) => {
                self.report.failed_stage = Some(name.into());
                self.report.error = Some(e.to_string());
                if let Err(w) = self.persist() {
                    log::error!("could not persist partial results: {w}");
                }
                Err(Error::Stage {
                    stage: name.into(),
                    source: Box::new(e),
                })
            }
        }
    }

    fn persist(&self) -> Result<()> {
        self.report.write(self.dir)?;
        let path = self.dir.join("timings.json");
        fs::write(&path, serde_json::to_vec_pretty(&self.timings)?).map_err(|e| Error::io(&path, e))
    }

    fn checkpoint(&self, variant: Variant, model: &Classifier, cfg: &ExperimentConfig, h: &TrainHistory) -> Result<()> {
        let dir = self.dir.join("models");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let name = match variant {
            Variant::Original => "om.json",
            Variant::FilteredOriginal => "p-om.json",
            Variant::FilteredAdversarial => "p-atm.json",
        };
        Checkpoint::new(model, cfg.manifest.classes.clone(), cfg.pipeline(variant), h.clone()).save(&dir.join(name))
    }
}

/// corpus → pretrain → adversarial set → adversarial training → clean
/// evaluation → attack suite → reports.
///
/// Outputs go to `cfg.output_dir`: the report files, `timings.json` and the
/// three checkpoints under `models/`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let resolved = cfg.resolved();
    let mut run = Runner {
        report: ExperimentReport::new(cfg.clone()),
        timings: Vec::new(),
        dir,
    };

    let (data, subset) = run.stage("corpus", |report| {
        let samples = load_corpus(cfg, &resolved)?;
        let data = split(&samples, &resolved.manifest)?;
        if data.test.is_empty() || data.validation.is_empty() {
            return Err(Error::Corpus("validation and test splits must be non-empty".into()));
        }
        let subset = attack_subset(&data.test, cfg.attack_subset, resolved.subset_seed);
        report.corpus = CorpusSummary {
            classes: cfg.manifest.classes.clone(),
            train: data.train.len(),
            validation: data.validation.len(),
            test: data.test.len(),
            attack_subset: subset.len(),
        };
        Ok((data, subset))
    })?;

    let pre = run.stage("pretrain", |report| {
        let pre = pretrain(cfg, &resolved, &data)?;
        report.training.push(summarize(Variant::Original, data.train.len(), &pre.om_history));
        report
            .training
            .push(summarize(Variant::FilteredOriginal, data.train.len(), &pre.p_om_history));
        Ok(pre)
    })?;
    run.checkpoint(Variant::Original, &pre.om, cfg, &pre.om_history)?;
    run.checkpoint(Variant::FilteredOriginal, &pre.p_om, cfg, &pre.p_om_history)?;

    let augmented = run.stage("adversarial-set", |report| {
        let detector = Detector::new(&pre.p_om, cfg.pipeline(Variant::FilteredOriginal));
        let (augmented, summary) = build_adv_training_set(&detector, &data.train, &resolved.perturb)?;
        report.adversarial_set = Some(summary);
        Ok(augmented)
    })?;

    let (p_atm, p_atm_history) = run.stage("adversarial-training", |report| {
        let (m, h) = adv_train(cfg, &resolved, &augmented, &data.validation)?;
        report
            .training
            .push(summarize(Variant::FilteredAdversarial, augmented.len(), &h));
        Ok((m, h))
    })?;
    run.checkpoint(Variant::FilteredAdversarial, &p_atm, cfg, &p_atm_history)?;
    drop(augmented);

    let models = [
        (Variant::Original, &pre.om),
        (Variant::FilteredOriginal, &pre.p_om),
        (Variant::FilteredAdversarial, &p_atm),
    ];

    run.stage("evaluate", |report| {
        for (variant, model) in models {
            let mut r = evaluate(model, &data.test, &cfg.pipeline(variant))?;
            r.variant = Some(variant);
            log::info!("{variant} clean accuracy {:.4}", r.accuracy);
            report.clean.push(r);
        }
        Ok(())
    })?;

    run.stage("attack", |report| {
        let targets: Vec<AttackTarget<'_>> = models
            .iter()
            .filter(|(v, _)| cfg.attack_variants.contains(v))
            .map(|&(variant, model)| AttackTarget {
                variant,
                model,
                pipeline: cfg.pipeline(variant),
            })
            .collect();
        if targets.is_empty() || cfg.attacks.kinds.is_empty() {
            return Ok(());
        }
        report.attacks = run_attack_suite(&targets, &subset, &data.train, &resolved.attacks)?;
        Ok(())
    })?;

    run.stage("report", |_| Ok(()))?;
    run.persist()?;
    Ok(run.report)
}
