//! Evasion attacks used to measure robustness, each controlled by an
//! injection budget (fraction of the original length that may be added).
//!
//! * FF filling appends `0xFF` bytes; it needs no model access.
//! * Gradient append copies the tail of a gradient-signed version of the
//!   file onto its end (white box).
//! * The genetic attack appends blocks harvested from donor files, sized by
//!   a genome that a genetic algorithm tunes against the detector's
//!   probabilities (black box).

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bytes::{ByteSequence, Provenance};
use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::model::{metrics, Classifier, EvalReport, Variant};
use crate::perturb::gen_gradient_perturbation;
use crate::pipeline::{Detector, Oracle, Pipeline};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Gamma,
    Baraf,
    Copycat,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Gamma, AttackKind::Baraf, AttackKind::Copycat];

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Gamma => "gamma",
            AttackKind::Baraf => "baraf",
            AttackKind::Copycat => "copycat",
        }
    }

    pub fn is_black_box(&self) -> bool {
        !matches!(self, AttackKind::Copycat)
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(AttackKind::Gamma),
            "baraf" => Ok(AttackKind::Baraf),
            "copycat" => Ok(AttackKind::Copycat),
            other => Err(Error::Config(format!("unknown attack `{other}`"))),
        }
    }
}

/// Genetic-algorithm settings of the black-box donor attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub iterations: usize,
    pub population: usize,
    pub crossover: f64,
    pub mutation: f64,
    /// Donor blocks, one gene each.
    pub donors: usize,
    pub tournament: usize,
    pub elitism: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            population: 50,
            crossover: 0.7,
            mutation: 0.8,
            donors: 5,
            tournament: 3,
            elitism: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Injected bytes as a fraction of the original length.
    pub budget: f64,
    pub ga: GaConfig,
    /// Gradient step (pixel units) of the gradient-append attack.
    pub copycat_strength: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::Gamma,
            budget: 0.2,
            ga: GaConfig::default(),
            copycat_strength: 0.1,
            seed: 0,
        }
    }
}

fn budget_bytes(len: usize, budget: f64) -> usize {
    (budget * len as f64).round() as usize
}

/// Append `round(budget · len)` bytes of `0xFF`.
pub fn attack_baraf(x: &[u8], cfg: &AttackConfig) -> Result<ByteSequence> {
    if x.is_empty() {
        return Err(Error::Precondition("attack on empty sample".into()));
    }
    let mut out = x.to_vec();
    out.resize(x.len() + budget_bytes(x.len(), cfg.budget), 0xFF);
    Ok(ByteSequence::new(out, Provenance::Adversarial))
}

/// Append the last `round(budget · len)` bytes of the gradient-signed file.
pub fn attack_copycat(
    x: &[u8],
    label: usize,
    model: &Classifier,
    pipeline: &Pipeline,
    cfg: &AttackConfig,
) -> Result<ByteSequence> {
    if x.is_empty() {
        return Err(Error::Precondition("attack on empty sample".into()));
    }
    let n = budget_bytes(x.len(), cfg.budget).min(x.len());
    let mut out = x.to_vec();
    if n > 0 {
        let shifted = gen_gradient_perturbation(x, model, pipeline, label, cfg.copycat_strength)?;
        out.extend_from_slice(&shifted[x.len() - n..]);
    }
    Ok(ByteSequence::new(out, Provenance::Adversarial))
}

/// Oracle wrapper that counts queries.
pub struct CountingOracle<'a, O: Oracle> {
    inner: &'a O,
    calls: AtomicUsize,
}

impl<'a, O: Oracle> CountingOracle<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<O: Oracle> Oracle for CountingOracle<'_, O> {
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    fn predict(&self, x: &[u8]) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaOutcome {
    pub bytes: ByteSequence,
    pub genome: Vec<f64>,
    /// Probability of the true class for the returned phenotype.
    pub fitness: f64,
    /// Best fitness after initialisation and after each generation.
    pub best_per_generation: Vec<f64>,
    pub oracle_calls: usize,
    pub appended: usize,
}

/// Donor blocks and the byte cap per gene for one attacked file.
struct Donors {
    blocks: Vec<Vec<u8>>,
    per_gene_cap: f64,
}

impl Donors {
    fn harvest(x_len: usize, pool: &[ByteSequence], cfg: &AttackConfig, rng: &mut seed::Rng) -> Self {
        let k = cfg.ga.donors.max(1);
        let per_gene_cap = cfg.budget * x_len as f64 / k as f64;
        let cap = per_gene_cap.floor() as usize;
        let picks: Vec<usize> = if pool.len() >= k {
            index::sample(rng, pool.len(), k).into_vec()
        } else {
            (0..k).map(|j| j % pool.len()).collect()
        };
        let blocks = picks
            .into_iter()
            .map(|d| {
                let donor = pool[d].as_slice();
                let start = rng.gen_range(0..donor.len());
                (0..cap).map(|j| donor[(start + j) % donor.len()]).collect()
            })
            .collect();
        Self { blocks, per_gene_cap }
    }

    fn phenotype(&self, x: &[u8], genome: &[f64]) -> Vec<u8> {
        let mut out = x.to_vec();
        for (block, &g) in self.blocks.iter().zip(genome) {
            let n = ((g.clamp(0.0, 1.0) * self.per_gene_cap).floor() as usize).min(block.len());
            out.extend_from_slice(&block[..n]);
        }
        out
    }
}

fn tournament(fitness: &[f64], size: usize, rng: &mut seed::Rng) -> usize {
    let mut best = rng.gen_range(0..fitness.len());
    for _ in 1..size.max(1) {
        let c = rng.gen_range(0..fitness.len());
        if fitness[c] < fitness[best] {
            best = c;
        }
    }
    best
}

fn rank(fitness: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));
    order
}

/// Genetic black-box attack: minimise the oracle's probability of the true
/// class by appending donor blocks whose lengths are set by the genome.
///
/// The initial population contains the all-zero genome (the unmodified
/// file), so with elitism the result is never worse than `x` itself.
pub fn attack_gamma<O: Oracle>(
    x: &[u8],
    label: usize,
    oracle: &O,
    pool: &[ByteSequence],
    cfg: &AttackConfig,
) -> Result<GammaOutcome> {
    if x.is_empty() {
        return Err(Error::Precondition("attack on empty sample".into()));
    }
    if pool.is_empty() || pool.iter().any(|d| d.is_empty()) {
        return Err(Error::Precondition("donor pool is empty".into()));
    }
    let ga = &cfg.ga;
    if ga.population == 0 {
        return Err(Error::Config("population must be positive".into()));
    }
    let counting = CountingOracle::new(oracle);
    let mut rng = seed::rng(cfg.seed);
    let donors = Donors::harvest(x.len(), pool, cfg, &mut rng);
    let k = donors.blocks.len();

    let score = |genomes: &[Vec<f64>]| -> Result<Vec<f64>> {
        genomes
            .par_iter()
            .map(|g| counting.predict(&donors.phenotype(x, g)).map(|p| p[label]))
            .collect()
    };

    let mut population: Vec<Vec<f64>> = Vec::with_capacity(ga.population);
    population.push(vec![0.0; k]);
    while population.len() < ga.population {
        population.push((0..k).map(|_| rng.gen::<f64>()).collect());
    }
    let mut fitness = score(&population)?;
    let mut best_per_generation = vec![fitness[rank(&fitness)[0]]];

    for _ in 0..ga.iterations {
        let order = rank(&fitness);
        let elite = ga.elitism.min(ga.population);
        let mut next: Vec<Vec<f64>> = order[..elite].iter().map(|&i| population[i].clone()).collect();
        let mut next_fit: Vec<f64> = order[..elite].iter().map(|&i| fitness[i]).collect();
        let mut children = Vec::with_capacity(ga.population - elite);
        while elite + children.len() < ga.population {
            let a = &population[tournament(&fitness, ga.tournament, &mut rng)];
            let b = &population[tournament(&fitness, ga.tournament, &mut rng)];
            let mut child = if rng.gen::<f64>() < ga.crossover {
                a.iter()
                    .zip(b)
                    .map(|(&ga_, &gb)| if rng.gen::<bool>() { ga_ } else { gb })
                    .collect()
            } else {
                a.clone()
            };
            for gene in child.iter_mut() {
                if rng.gen::<f64>() < ga.mutation {
                    *gene = rng.gen();
                }
            }
            children.push(child);
        }
        let child_fit = score(&children)?;
        next.extend(children);
        next_fit.extend(child_fit);
        population = next;
        fitness = next_fit;
        best_per_generation.push(fitness[rank(&fitness)[0]]);
    }

    let best = rank(&fitness)[0];
    let bytes = donors.phenotype(x, &population[best]);
    let appended = bytes.len() - x.len();
    Ok(GammaOutcome {
        bytes: ByteSequence::new(bytes, Provenance::Adversarial),
        genome: population[best].clone(),
        fitness: fitness[best],
        best_per_generation,
        oracle_calls: counting.calls(),
        appended,
    })
}

/// Settings for a full attack sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSuiteConfig {
    pub kinds: Vec<AttackKind>,
    pub budgets: Vec<f64>,
    pub ga: GaConfig,
    pub copycat_strength: f64,
    pub seed: u64,
}

impl Default for AttackSuiteConfig {
    fn default() -> Self {
        Self {
            kinds: AttackKind::ALL.to_vec(),
            budgets: vec![0.1, 0.2, 0.3],
            ga: GaConfig::default(),
            copycat_strength: 0.1,
            seed: 0,
        }
    }
}

impl AttackSuiteConfig {
    /// Config for one attack on one sample; the random stream depends on the
    /// attack, budget and sample id but not on the model under attack.
    pub fn for_sample(&self, kind: AttackKind, budget: f64, sample_id: &str) -> AttackConfig {
        AttackConfig {
            kind,
            budget,
            ga: self.ga.clone(),
            copycat_strength: self.copycat_strength,
            seed: seed::child_seed(self.seed, &format!("{kind}/{budget}/{sample_id}")),
        }
    }
}

/// A detector under attack.
#[derive(Clone, Copy, Debug)]
pub struct AttackTarget<'a> {
    pub variant: Variant,
    pub model: &'a Classifier,
    pub pipeline: Pipeline,
}

/// Run one attack against one sample.
pub fn run_attack(
    kind: AttackKind,
    sample: &Sample,
    target: &AttackTarget<'_>,
    donors: &[ByteSequence],
    cfg: &AttackConfig,
) -> Result<ByteSequence> {
    let x = sample.bytes.as_slice();
    match kind {
        AttackKind::Baraf => attack_baraf(x, cfg),
        AttackKind::Copycat => attack_copycat(x, sample.label, target.model, &target.pipeline, cfg),
        AttackKind::Gamma => {
            let oracle = Detector::new(target.model, target.pipeline);
            attack_gamma(x, sample.label, &oracle, donors, cfg).map(|o| o.bytes)
        }
    }
}

/// Class index of benign software.
pub const BENIGN: usize = 0;

/// Donor pool for a target of class `label`: benign samples for malware
/// targets, malware samples for benign targets.
pub fn donors_for(label: usize, donors: &[Sample]) -> Vec<ByteSequence> {
    donors
        .iter()
        .filter(|d| (d.label == BENIGN) != (label == BENIGN))
        .map(|d| d.bytes.clone())
        .collect()
}

/// Attack every subset sample for each (target, attack, budget) and score
/// the detector on the results.
pub fn run_attack_suite(
    targets: &[AttackTarget<'_>],
    subset: &[Sample],
    donors: &[Sample],
    cfg: &AttackSuiteConfig,
) -> Result<Vec<EvalReport>> {
    if subset.is_empty() {
        return Err(Error::Precondition("attack subset is empty".into()));
    }
    let classes = targets.first().map(|t| t.model.classes()).unwrap_or(2);
    let pools: Vec<Vec<ByteSequence>> = (0..classes).map(|c| donors_for(c, donors)).collect();
    let mut reports = Vec::new();
    for target in targets {
        let detector = Detector::new(target.model, target.pipeline);
        for &kind in &cfg.kinds {
            for &budget in &cfg.budgets {
                let start = std::time::Instant::now();
                let probs = subset
                    .par_iter()
                    .map(|s| {
                        let attack_cfg = cfg.for_sample(kind, budget, &s.id);
                        let adv = run_attack(kind, s, target, &pools[s.label], &attack_cfg)?;
                        detector.predict(&adv)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let labels: Vec<usize> = subset.iter().map(|s| s.label).collect();
                let m = metrics(&labels, &probs, classes);
                log::info!(
                    "{} under {kind} @ {budget}: accuracy {:.4}",
                    target.variant,
                    m.accuracy
                );
                reports.push(EvalReport {
                    variant: Some(target.variant),
                    condition: kind.name().into(),
                    budget: Some(budget),
                    accuracy: m.accuracy,
                    auc: m.auc,
                    macro_f1: m.macro_f1,
                    samples: subset.len(),
                    wall_time_s: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::preprocess::{preprocess, PreprocessConfig};

    /// Deterministic oracle whose class-0 probability falls with length.
    struct LengthOracle;

    impl Oracle for LengthOracle {
        fn classes(&self) -> usize {
            2
        }

        fn predict(&self, x: &[u8]) -> Result<Vec<f64>> {
            let p = 1.0 / (1.0 + (x.len() as f64 / 100.0 - 10.0).exp());
            Ok(vec![p, 1.0 - p])
        }
    }

    fn cfg(kind: AttackKind, budget: f64) -> AttackConfig {
        AttackConfig {
            kind,
            budget,
            seed: 3,
            ..Default::default()
        }
    }

    fn noise(n: usize, seed: u64) -> Vec<u8> {
        let mut rng = seed::rng(seed);
        (0..n).map(|_| rng.gen()).collect()
    }

    #[test]
    fn baraf_appends_ff() {
        let x = vec![7u8; 1000];
        let y = attack_baraf(&x, &cfg(AttackKind::Baraf, 0.2)).unwrap();
        assert_eq!(y.len(), 1200);
        assert!(y[1000..].iter().all(|&b| b == 0xFF));
        assert_eq!(&y[..1000], &x[..]);
        assert_eq!(attack_baraf(&x, &cfg(AttackKind::Baraf, 0.0)).unwrap().as_slice(), &x[..]);
    }

    #[test]
    fn baraf_full_chunks_are_filtered() {
        let pcfg = PreprocessConfig::default();
        let x = noise(25_000, 1);
        let clean = preprocess(&x, &pcfg);
        let y = attack_baraf(&x, &cfg(AttackKind::Baraf, 1.5)).unwrap();
        let filtered = preprocess(&y, &pcfg);
        // only the boundary chunk and the kept partial tail can carry FF bytes
        let ff_left = filtered.len() - clean.len();
        assert!(ff_left < 2 * pcfg.chunk_len);
        assert_eq!(&filtered[..20480], &clean[..20480]);
    }

    #[test]
    fn copycat_with_zero_gradient_appends_raw_tail() {
        let mut model = Classifier::new(Architecture::new(8, 2).unwrap(), 1);
        model.zero_output_layer();
        let x = noise(1000, 2);
        let y = attack_copycat(&x, 0, &model, &Pipeline::raw(8), &cfg(AttackKind::Copycat, 0.1)).unwrap();
        assert_eq!(y.len(), 1100);
        assert_eq!(&y[1000..], &x[900..]);
    }

    #[test]
    fn copycat_appends_shifted_tail() {
        let model = Classifier::new(Architecture::new(8, 2).unwrap(), 1);
        let x = noise(1000, 4);
        let pipe = Pipeline::raw(8);
        let c = cfg(AttackKind::Copycat, 0.1);
        let y = attack_copycat(&x, 1, &model, &pipe, &c).unwrap();
        let s = gen_gradient_perturbation(&x, &model, &pipe, 1, 0.1).unwrap();
        assert_eq!(y.len(), 1100);
        assert_eq!(&y[1000..], &s[900..]);
        assert_eq!(&y[..1000], &x[..]);
    }

    #[test]
    fn gamma_accounting() {
        let x = noise(900, 5);
        let pool: Vec<ByteSequence> = (0..7).map(|i| ByteSequence::original(noise(300, 10 + i))).collect();
        let c = cfg(AttackKind::Gamma, 0.2);
        let out = attack_gamma(&x, 0, &LengthOracle, &pool, &c).unwrap();
        assert!(out.oracle_calls <= 50 * 21);
        assert!(out.appended as f64 <= 0.2 * 900.0);
        assert_eq!(&out.bytes[..900], &x[..]);
        assert!(out.best_per_generation.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(out.best_per_generation.len(), 21);
        let base = LengthOracle.predict(&x).unwrap()[0];
        assert!(out.fitness <= base);
        // longer is better for this oracle, so the GA should push towards the cap
        assert!(out.appended as f64 > 0.15 * 900.0);
        assert_eq!(out, attack_gamma(&x, 0, &LengthOracle, &pool, &c).unwrap());
    }

    #[test]
    fn gamma_zero_genome_is_identity() {
        let x = noise(100, 6);
        let pool = vec![ByteSequence::original(noise(50, 7))];
        let mut rng = seed::rng(0);
        let d = Donors::harvest(x.len(), &pool, &cfg(AttackKind::Gamma, 0.3), &mut rng);
        assert_eq!(d.phenotype(&x, &[0.0; 5]), x);
        assert!(d.phenotype(&x, &[1.0; 5]).len() <= 130);
    }

    #[test]
    fn gamma_rejects_empty_pool() {
        assert!(attack_gamma(&[1, 2, 3], 0, &LengthOracle, &[], &cfg(AttackKind::Gamma, 0.2)).is_err());
    }

    #[test]
    fn attack_kind_parsing() {
        assert_eq!("copycat".parse::<AttackKind>().unwrap(), AttackKind::Copycat);
        assert!("fgsm".parse::<AttackKind>().is_err());
        assert!(AttackKind::Baraf.is_black_box());
    }
}
