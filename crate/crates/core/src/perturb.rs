//! Perturbation content, injection operators, and the stochastic
//! adversarial-example generator used to build the adversarial training set.
//!
//! Two kinds of content are injected: uniform random bytes, and
//! gradient-signed bytes `clamp(x/255 + η·sign(∂L/∂x), 0, 1)·255`. Content
//! is either written over existing bytes or spliced in. Sites are applied
//! from the highest offset down so earlier insertions never shift later
//! sites.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bytes::{ByteSequence, Provenance};
use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::imaging::intensity_to_byte;
use crate::model::{input_gradient, Classifier};
use crate::pipeline::{Detector, Oracle, Pipeline};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbSpec {
    /// Number of injection sites per attempt.
    pub indexs: usize,
    /// Upper bound of the injected amount as a fraction of file length.
    pub sizes: f64,
    /// Gradient step in normalised pixel units.
    pub eta: f64,
    /// Attempts per sample.
    pub retries: usize,
    pub seed: u64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            indexs: 2,
            sizes: 0.2,
            eta: 0.3,
            retries: 10,
            seed: 0,
        }
    }
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        if self.indexs == 0 {
            return Err(Error::Config("indexs must be at least 1".into()));
        }
        if !(self.sizes > 0.0 && self.sizes <= 1.0) {
            return Err(Error::Config(format!("sizes {} outside (0, 1]", self.sizes)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta {} outside [0, 1]", self.eta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    RandomBytes,
    GradientBytes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Replace,
    Insert,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdvSample {
    pub bytes: ByteSequence,
    pub parent_id: String,
    pub generator: Generator,
    pub operation: Operation,
    pub fooled: bool,
}

/// `length` i.i.d. uniform bytes.
pub fn gen_random_perturbation(length: usize, seed: u64) -> Result<ByteSequence> {
    random_block(length, &mut seed::rng(seed))
}

fn random_block(length: usize, rng: &mut seed::Rng) -> Result<ByteSequence> {
    if length == 0 {
        return Err(Error::Precondition("random perturbation of length 0".into()));
    }
    let mut data = vec![0u8; length];
    rng.fill(&mut data[..]);
    Ok(ByteSequence::new(data, Provenance::Adversarial))
}

/// Move every byte `eta` (pixel units) along its gradient sign, clamped to
/// the byte range. Zero-gradient bytes are returned unchanged.
pub fn apply_gradient_sign(x: &[u8], sign: &[i8], eta: f64) -> Vec<u8> {
    x.iter()
        .zip(sign)
        .map(|(&b, &g)| {
            if g == 0 {
                b
            } else {
                intensity_to_byte(f64::from(b) / 255.0 + eta * f64::from(g))
            }
        })
        .collect()
}

/// Gradient-signed version of the whole of `x` for the loss of `label`
/// under `model` behind `pipeline`.
pub fn gen_gradient_perturbation(
    x: &[u8],
    model: &Classifier,
    pipeline: &Pipeline,
    label: usize,
    eta: f64,
) -> Result<ByteSequence> {
    if x.is_empty() {
        return Err(Error::Precondition("gradient perturbation of empty sample".into()));
    }
    if eta == 0.0 {
        return Ok(ByteSequence::new(x.to_vec(), Provenance::Adversarial));
    }
    let grad = input_gradient(model, pipeline, x, label)?;
    Ok(ByteSequence::new(
        apply_gradient_sign(x, &grad.sign, eta),
        Provenance::Adversarial,
    ))
}

/// Overwrite `x[index..index + block.len()]`, truncating at the end of `x`.
pub fn inject_replace(x: &[u8], index: usize, block: &[u8]) -> Result<Vec<u8>> {
    if index >= x.len() {
        return Err(Error::Precondition(format!(
            "replace index {index} outside sequence of length {}",
            x.len()
        )));
    }
    let mut out = x.to_vec();
    let end = (index + block.len()).min(x.len());
    out[index..end].copy_from_slice(&block[..end - index]);
    Ok(out)
}

/// Splice `block` in before position `index` (`index == len` appends).
pub fn inject_insert(x: &[u8], index: usize, block: &[u8]) -> Result<Vec<u8>> {
    if index > x.len() {
        return Err(Error::Precondition(format!(
            "insert index {index} outside sequence of length {}",
            x.len()
        )));
    }
    let mut out = Vec::with_capacity(x.len() + block.len());
    out.extend_from_slice(&x[..index]);
    out.extend_from_slice(block);
    out.extend_from_slice(&x[index..]);
    Ok(out)
}

pub fn inject(op: Operation, x: &[u8], index: usize, block: &[u8]) -> Result<Vec<u8>> {
    match op {
        Operation::Replace => inject_replace(x, index, block),
        Operation::Insert => inject_insert(x, index, block),
    }
}

/// Apply one block per site, sites visited in the order given (callers pass
/// them sorted descending).
pub fn inject_sites(op: Operation, x: &[u8], sites: &[(usize, &[u8])]) -> Result<Vec<u8>> {
    let mut cur = x.to_vec();
    for &(p, block) in sites {
        cur = inject(op, &cur, p, block)?;
    }
    Ok(cur)
}

/// Split `total` bytes over `k` sites: equal shares, remainder to the first.
pub fn apportion(total: usize, k: usize) -> Vec<usize> {
    let base = total / k;
    let mut out = vec![base; k];
    out[0] += total - base * k;
    out
}

/// One attempt's random choices, exposed for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct AttemptPlan {
    /// Distinct injection offsets, descending.
    pub positions: Vec<usize>,
    pub size: f64,
    pub block_lengths: Vec<usize>,
    pub operation: Operation,
}

pub fn plan_attempt(len: usize, spec: &PerturbSpec, rng: &mut seed::Rng) -> AttemptPlan {
    let k = spec.indexs.min(len);
    let mut positions = index::sample(rng, len, k).into_vec();
    positions.sort_unstable_by(|a, b| b.cmp(a));
    let size = rng.gen_range(0.0..spec.sizes);
    let total = (size * len as f64).round() as usize;
    let block_lengths = apportion(total, k);
    let operation = if rng.gen::<bool>() {
        Operation::Replace
    } else {
        Operation::Insert
    };
    AttemptPlan {
        positions,
        size,
        block_lengths,
        operation,
    }
}

/// Up to `spec.retries` attempts of random-site injection with random and
/// gradient content; stops after the first attempt that fools the detector
/// and returns that attempt's fooling candidates (empty if none did).
///
/// The random stream is derived from `(spec.seed, sample.id)`.
pub fn generate_adversarial(sample: &Sample, detector: &Detector<'_>, spec: &PerturbSpec) -> Result<Vec<AdvSample>> {
    spec.validate()?;
    let x = sample.bytes.as_slice();
    if x.is_empty() {
        return Err(Error::Precondition("cannot perturb an empty sample".into()));
    }
    let len = x.len();
    let mut rng = seed::child_rng(spec.seed, &sample.id);
    let grad = input_gradient(detector.model, &detector.pipeline, x, sample.label)?;
    let shifted = apply_gradient_sign(x, &grad.sign, spec.eta);

    for _ in 0..spec.retries {
        let plan = plan_attempt(len, spec, &mut rng);
        let mut random_blocks = Vec::with_capacity(plan.positions.len());
        let mut gradient_blocks = Vec::with_capacity(plan.positions.len());
        for (&p, &n) in plan.positions.iter().zip(&plan.block_lengths) {
            random_blocks.push(if n == 0 {
                Vec::new()
            } else {
                random_block(n, &mut rng)?.into_vec()
            });
            gradient_blocks.push((0..n).map(|j| shifted[(p + j) % len]).collect::<Vec<u8>>());
        }
        let mut fooled = Vec::new();
        for (generator, blocks) in [
            (Generator::RandomBytes, &random_blocks),
            (Generator::GradientBytes, &gradient_blocks),
        ] {
            let sites: Vec<(usize, &[u8])> = plan
                .positions
                .iter()
                .zip(blocks.iter())
                .map(|(&p, b)| (p, b.as_slice()))
                .collect();
            let candidate = inject_sites(plan.operation, x, &sites)?;
            if detector.predict_label(&candidate)? != sample.label {
                fooled.push(AdvSample {
                    bytes: ByteSequence::new(candidate, Provenance::Adversarial),
                    parent_id: sample.id.clone(),
                    generator,
                    operation: plan.operation,
                    fooled: true,
                });
            }
        }
        if !fooled.is_empty() {
            return Ok(fooled);
        }
    }
    Ok(Vec::new())
}
