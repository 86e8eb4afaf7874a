use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use byteguard::attacks::{donors_for, run_attack, AttackKind, AttackSuiteConfig, AttackTarget};
use byteguard::corpus::{self, CorpusManifest, Sample};
use byteguard::harness::{self, ExperimentConfig, ExperimentReport};
use byteguard::imaging;
use byteguard::model::{evaluate, metrics, Checkpoint, Variant};
use byteguard::perturb::PerturbSpec;
use byteguard::pipeline::{Detector, Oracle};
use byteguard::preprocess::{self, PreprocessConfig};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

#[derive(Parser)]
#[command(name = "byteguard", version, about = "Byte-image malware detection with entropy filtering and adversarial training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelVariant {
    /// Raw bytes, no entropy filter.
    Om,
    /// Entropy filter in front of the model.
    POm,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitPart {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise a labelled corpus into one directory per class.
    GenCorpus {
        /// Manifest JSON; defaults to four classes of 500 samples.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove low-entropy chunks from one file.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        #[arg(long, default_value_t = 10)]
        chunk_kb: usize,
        /// Test the trailing partial chunk like any other chunk.
        #[arg(long)]
        drop_partial_tail: bool,
    },
    /// Render a file as a resized grayscale PGM image.
    ToImage {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = imaging::DEFAULT_SIDE)]
        size: usize,
    },
    /// Train OM or P+OM on the train split of a corpus directory.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Experiment config JSON (manifest, train, preprocess, input side).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModelVariant::POm)]
        variant: ModelVariant,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate fooling adversarial variants of the malware samples in a
    /// corpus split.
    GenAdv {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Perturbation spec JSON; defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitPart::Train)]
        split: SplitPart,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attack every sample of a corpus directory and score the model.
    Attack {
        #[arg(long, value_enum)]
        kind: AttackArg,
        #[arg(long, default_value_t = 0.2)]
        budget: f64,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        subset: PathBuf,
        /// Donor corpus for the genetic attack; defaults to the subset.
        #[arg(long)]
        donors: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train P+ATM from scratch on a corpus train split plus `gen-adv` output.
    AdvTrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        adv: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean evaluation of a checkpoint on a corpus split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitPart::Test)]
        split: SplitPart,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Full pipeline from corpus to attack tables.
    RunExperiment {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the desk-scale preset when no config is given.
        #[arg(long)]
        desk_scale: bool,
    },
    /// Re-render the CSV and text tables of a report JSON.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    Gamma,
    Baraf,
    Copycat,
}

impl From<AttackArg> for AttackKind {
    fn from(a: AttackArg) -> Self {
        match a {
            AttackArg::Gamma => AttackKind::Gamma,
            AttackArg::Baraf => AttackKind::Baraf,
            AttackArg::Copycat => AttackKind::Copycat,
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenCorpus { manifest, out } => gen_corpus(manifest.as_deref(), &out),
        Command::Preprocess {
            input,
            out,
            threshold,
            chunk_kb,
            drop_partial_tail,
        } => {
            let cfg = PreprocessConfig {
                threshold,
                chunk_len: chunk_kb * 1024,
                keep_partial_tail: !drop_partial_tail,
            };
            cfg.validate()?;
            let x = read(&input)?;
            let y = preprocess::preprocess(&x, &cfg);
            write(&out, &y)?;
            log::info!("{} -> {} bytes", x.len(), y.len());
            Ok(())
        }
        Command::ToImage { input, out, size } => {
            let x = read(&input)?;
            let img = imaging::bytes_to_input(&x, size)?;
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            imaging::write_pgm(BufWriter::new(file), img.pixels(), img.side())?;
            Ok(())
        }
        Command::Train {
            corpus,
            config,
            variant,
            out,
        } => train_cmd(&corpus, config.as_deref(), variant, &out),
        Command::GenAdv {
            corpus,
            model,
            spec,
            split,
            out,
        } => gen_adv(&corpus, &model, spec.as_deref(), split, &out),
        Command::Attack {
            kind,
            budget,
            model,
            subset,
            donors,
            seed,
            out,
            report,
        } => attack_cmd(kind.into(), budget, &model, &subset, donors.as_deref(), seed, &out, &report),
        Command::AdvTrain {
            corpus,
            adv,
            config,
            out,
        } => adv_train_cmd(&corpus, &adv, config.as_deref(), &out),
        Command::Evaluate {
            model,
            corpus,
            split,
            report,
        } => {
            let ckpt = Checkpoint::load(&model)?;
            let samples = select(&load_dir(&corpus, Some(&ckpt.class_names))?, &corpus, split)?;
            let r = evaluate(&ckpt.classifier()?, &samples, &ckpt.pipeline)?;
            println!(
                "accuracy {:.4}  auc {:.4}  macro-F1 {:.4}  ({} samples)",
                r.accuracy, r.auc, r.macro_f1, r.samples
            );
            if let Some(path) = report {
                write(&path, &serde_json::to_vec_pretty(&r)?)?;
            }
            Ok(())
        }
        Command::RunExperiment {
            config,
            out,
            desk_scale,
        } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None if desk_scale => ExperimentConfig::desk_scale(),
                None => ExperimentConfig::default(),
            };
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let report = harness::run_experiment(&cfg)?;
            print!("{}", report.render());
            Ok(())
        }
        Command::Report { input, out } => {
            let report = ExperimentReport::load(&input)?;
            if let Some(dir) = out {
                report.write(&dir)?;
            }
            print!("{}", report.render());
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

const MANIFEST_FILE: &str = "manifest.json";

fn gen_corpus(manifest: Option<&Path>, out: &Path) -> Result<()> {
    let manifest = match manifest {
        Some(p) => CorpusManifest::load(p)?,
        None => CorpusManifest::default(),
    };
    let samples = corpus::synth_corpus(&manifest)?;
    write_samples(out, &samples)?;
    write(&out.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    log::info!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

/// `<dir>/<id>.bin` for every sample; ids have the form `class/name`.
fn write_samples(dir: &Path, samples: &[Sample]) -> Result<()> {
    for s in samples {
        write(&dir.join(format!("{}.bin", s.id)), &s.bytes)?;
    }
    Ok(())
}

/// Manifest of a corpus directory: its `manifest.json` if present, else the
/// given class names with counts taken from the directory.
fn dir_manifest(dir: &Path, classes: Option<&[String]>) -> Result<CorpusManifest> {
    let path = dir.join(MANIFEST_FILE);
    if path.exists() {
        let m = CorpusManifest::load(&path)?;
        if let Some(c) = classes {
            if c != m.classes.as_slice() {
                bail!("corpus classes {:?} differ from model classes {:?}", m.classes, c);
            }
        }
        return Ok(m);
    }
    let Some(classes) = classes else {
        bail!("{} has no {MANIFEST_FILE}", dir.display());
    };
    Ok(CorpusManifest {
        classes: classes.to_vec(),
        counts: vec![0; classes.len()],
        ..CorpusManifest::default()
    })
}

fn load_dir(dir: &Path, classes: Option<&[String]>) -> Result<Vec<Sample>> {
    let manifest = dir_manifest(dir, classes)?;
    Ok(corpus::ingest_binary_dir(dir, &manifest)?)
}

fn select(samples: &[Sample], dir: &Path, part: SplitPart) -> Result<Vec<Sample>> {
    if let SplitPart::All = part {
        return Ok(samples.to_vec());
    }
    let manifest = dir_manifest(dir, None).or_else(|_| -> Result<CorpusManifest> {
        Ok(CorpusManifest {
            seed: 0,
            ..CorpusManifest::default()
        })
    })?;
    let split = corpus::split(samples, &manifest)?;
    Ok(match part {
        SplitPart::Train => split.train,
        SplitPart::Validation => split.validation,
        SplitPart::Test => split.test,
        SplitPart::All => unreachable!(),
    })
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn train_cmd(corpus_dir: &Path, config: Option<&Path>, variant: ModelVariant, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.manifest = dir_manifest(corpus_dir, None)?;
    let samples = corpus::ingest_binary_dir(corpus_dir, &cfg.manifest)?;
    let data = corpus::split(&samples, &cfg.manifest)?;
    let variant = match variant {
        ModelVariant::Om => Variant::Original,
        ModelVariant::POm => Variant::FilteredOriginal,
    };
    let resolved = cfg.resolved();
    let (model, history) = harness::train_variant(variant, &data.train, &data.validation, &cfg, &resolved)?;
    Checkpoint::new(&model, cfg.manifest.classes.clone(), cfg.pipeline(variant), history).save(out)?;
    Ok(())
}

fn gen_adv(corpus_dir: &Path, model: &Path, spec: Option<&Path>, part: SplitPart, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(model)?;
    let spec: PerturbSpec = match spec {
        Some(p) => serde_json::from_slice(&read(p)?)?,
        None => PerturbSpec::default(),
    };
    let samples = select(&load_dir(corpus_dir, Some(&ckpt.class_names))?, corpus_dir, part)?;
    let classifier = ckpt.classifier()?;
    let detector = Detector::new(&classifier, ckpt.pipeline);
    let (augmented, summary) = harness::build_adv_training_set(&detector, &samples, &spec)?;
    let adversarial = &augmented[samples.len()..];
    let mut index = Vec::new();
    for s in adversarial {
        let class = &ckpt.class_names[s.label];
        let name = s.id.replace(['/', '#'], "_");
        let file = format!("{class}/{name}.bin");
        write(&out.join(&file), &s.bytes)?;
        index.push(json!({ "file": file, "id": s.id, "label": s.label, "fooled": true }));
    }
    write(
        &out.join("index.json"),
        &serde_json::to_vec_pretty(&json!({ "summary": summary, "samples": index }))?,
    )?;
    log::info!("{} adversarial samples written to {}", adversarial.len(), out.display());
    Ok(())
}

fn adv_train_cmd(corpus_dir: &Path, adv: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.manifest = dir_manifest(corpus_dir, None)?;
    let samples = corpus::ingest_binary_dir(corpus_dir, &cfg.manifest)?;
    let data = corpus::split(&samples, &cfg.manifest)?;
    let index: serde_json::Value = serde_json::from_slice(&read(&adv.join("index.json"))?)?;
    let mut augmented = data.train.clone();
    for entry in index["samples"].as_array().context("index.json has no samples")? {
        let file = entry["file"].as_str().context("index entry without file")?;
        let label = entry["label"].as_u64().context("index entry without label")? as usize;
        if label >= cfg.manifest.classes.len() {
            bail!("{file}: label {label} out of range");
        }
        augmented.push(Sample {
            bytes: read(&adv.join(file))?.into(),
            label,
            id: file.to_string(),
        });
    }
    let resolved = cfg.resolved();
    let (model, history) = harness::adv_train(&cfg, &resolved, &augmented, &data.validation)?;
    Checkpoint::new(
        &model,
        cfg.manifest.classes.clone(),
        cfg.pipeline(Variant::FilteredAdversarial),
        history,
    )
    .save(out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn attack_cmd(
    kind: AttackKind,
    budget: f64,
    model: &Path,
    subset: &Path,
    donors: Option<&Path>,
    seed: u64,
    out: &Path,
    report: &Path,
) -> Result<()> {
    let ckpt = Checkpoint::load(model)?;
    let classifier = ckpt.classifier()?;
    let samples = load_dir(subset, Some(&ckpt.class_names))?;
    let donor_samples = match donors {
        Some(d) => load_dir(d, Some(&ckpt.class_names))?,
        None => samples.clone(),
    };
    let target = AttackTarget {
        variant: if ckpt.pipeline.preprocess.is_some() {
            Variant::FilteredAdversarial
        } else {
            Variant::Original
        },
        model: &classifier,
        pipeline: ckpt.pipeline,
    };
    let suite = AttackSuiteConfig {
        seed,
        ..AttackSuiteConfig::default()
    };
    let pools: Vec<_> = (0..classifier.classes()).map(|c| donors_for(c, &donor_samples)).collect();
    let attacked = samples
        .par_iter()
        .map(|s| run_attack(kind, s, &target, &pools[s.label], &suite.for_sample(kind, budget, &s.id)))
        .collect::<byteguard::Result<Vec<_>>>()?;
    let detector = Detector::new(&classifier, ckpt.pipeline);
    let probs = attacked
        .par_iter()
        .map(|x| detector.predict(x))
        .collect::<byteguard::Result<Vec<_>>>()?;
    for (s, x) in samples.iter().zip(&attacked) {
        write(&out.join(format!("{}.bin", s.id)), x)?;
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let m = metrics(&labels, &probs, classifier.classes());
    let r = json!({
        "condition": kind.name(),
        "budget": budget,
        "accuracy": m.accuracy,
        "auc": m.auc,
        "macro_f1": m.macro_f1,
        "samples": samples.len(),
    });
    write(report, &serde_json::to_vec_pretty(&r)?)?;
    println!("{kind} @ {budget}: accuracy {:.4} on {} samples", m.accuracy, samples.len());
    Ok(())
}
