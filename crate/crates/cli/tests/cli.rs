use std::path::Path;
use std::process::Command;

use byteguard::corpus::CorpusManifest;
use byteguard::harness::{ExperimentConfig, ExperimentReport};
use byteguard::model::Checkpoint;
use rand::{Rng, SeedableRng};

fn byteguard(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_byteguard"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn byteguard");
    assert!(
        out.status.success(),
        "byteguard {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(path: &Path) {
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.train.epochs = 2;
    cfg.save(path).unwrap();
}

#[test]
fn preprocess_drops_constant_chunks() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    let mut x: Vec<u8> = (0..4096).map(|_| rng.gen()).collect();
    x.extend(std::iter::repeat(0xFF).take(8192));
    x.extend((0..1000).map(|_| rng.gen::<u8>()));
    let input = dir.path().join("x.bin");
    let output = dir.path().join("y.bin");
    std::fs::write(&input, &x).unwrap();
    byteguard(&["preprocess", "--in", s(&input), "--out", s(&output), "--chunk-kb", "1"]);
    let y = std::fs::read(&output).unwrap();
    assert_eq!(y.len(), 4096 + 1000);
    assert_eq!(&y[..4096], &x[..4096]);
    assert_eq!(&y[4096..], &x[4096 + 8192..]);
}

#[test]
fn to_image_writes_a_square_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.bin");
    let output = dir.path().join("x.pgm");
    std::fs::write(&input, (0..=255u8).cycle().take(5000).collect::<Vec<_>>()).unwrap();
    byteguard(&["to-image", "--in", s(&input), "--out", s(&output), "--size", "16"]);
    let pgm = std::fs::read(&output).unwrap();
    let header = b"P5\n16 16\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(pgm.len(), header.len() + 256);
}

#[test]
fn stepwise_workflow_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = d.join("manifest.json");
    let m = CorpusManifest {
        counts: vec![10; 4],
        ..CorpusManifest::default()
    };
    std::fs::write(&manifest, serde_json::to_vec(&m).unwrap()).unwrap();
    let config = d.join("config.json");
    tiny_config(&config);

    let corpus = d.join("corpus");
    byteguard(&["gen-corpus", "--manifest", s(&manifest), "--out", s(&corpus)]);
    for class in &m.classes {
        assert_eq!(std::fs::read_dir(corpus.join(class)).unwrap().count(), 10);
    }

    let om = d.join("om.json");
    let p_om = d.join("p-om.json");
    byteguard(&["train", "--corpus", s(&corpus), "--config", s(&config), "--variant", "om", "--out", s(&om)]);
    byteguard(&["train", "--corpus", s(&corpus), "--config", s(&config), "--variant", "p-om", "--out", s(&p_om)]);
    assert!(Checkpoint::load(&om).unwrap().pipeline.preprocess.is_none());
    assert!(Checkpoint::load(&p_om).unwrap().pipeline.preprocess.is_some());

    let adv = d.join("adv");
    byteguard(&["gen-adv", "--corpus", s(&corpus), "--model", s(&p_om), "--out", s(&adv)]);
    let index: serde_json::Value = serde_json::from_slice(&std::fs::read(adv.join("index.json")).unwrap()).unwrap();
    for entry in index["samples"].as_array().unwrap() {
        assert_ne!(entry["label"].as_u64().unwrap(), 0);
        assert!(adv.join(entry["file"].as_str().unwrap()).is_file());
    }

    let p_atm = d.join("p-atm.json");
    byteguard(&["adv-train", "--corpus", s(&corpus), "--adv", s(&adv), "--config", s(&config), "--out", s(&p_atm)]);

    let eval = d.join("eval.json");
    let stdout = byteguard(&["evaluate", "--model", s(&p_atm), "--corpus", s(&corpus), "--report", s(&eval)]);
    assert!(stdout.starts_with("accuracy "));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&eval).unwrap()).unwrap();
    assert!((0.0..=1.0).contains(&r["accuracy"].as_f64().unwrap()));

    let attacked = d.join("attacked");
    let attack_report = d.join("attack.json");
    byteguard(&[
        "attack", "--kind", "baraf", "--budget", "0.1", "--model", s(&om), "--subset", s(&corpus), "--out",
        s(&attacked), "--report", s(&attack_report),
    ]);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&attack_report).unwrap()).unwrap();
    assert_eq!(r["condition"], "baraf");
    assert_eq!(r["samples"], 40);
}

#[test]
fn run_experiment_then_report_rerenders_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.manifest.counts = vec![6; 4];
    cfg.train.epochs = 1;
    cfg.attack_subset = 3;
    cfg.attacks.ga.population = 3;
    cfg.attacks.ga.iterations = 1;
    let config = d.join("config.json");
    cfg.save(&config).unwrap();
    let out = d.join("run");
    let printed = byteguard(&["run-experiment", "--config", s(&config), "--out", s(&out)]);
    let report = ExperimentReport::load(&out.join("report.json")).unwrap();
    assert_eq!(report.completed_stages.last().map(String::as_str), Some("report"));

    let again = d.join("again");
    let rerendered = byteguard(&["report", "--in", s(&out.join("report.json")), "--out", s(&again)]);
    assert_eq!(printed, rerendered);
    for name in ["clean.csv", "attack-gamma.csv", "attack-baraf.csv", "attack-copycat.csv"] {
        assert_eq!(
            std::fs::read(out.join(name)).unwrap(),
            std::fs::read(again.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn unknown_subcommand_fails() {
    let status = Command::new(env!("CARGO_BIN_EXE_byteguard"))
        .arg("frobnicate")
        .output()
        .unwrap()
        .status;
    assert!(!status.success());
}
