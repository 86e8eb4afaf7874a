//! Small convolutional classifier with hand-written backpropagation.
//!
//! Layout (input `S × S`, one channel):
//! conv 3×3 (8) → relu → maxpool 2×2 → conv 3×3 (16) → relu → maxpool 2×2
//! → dense (64) → relu → dense (C) → softmax.
//!
//! Convolutions use zero padding of one pixel so spatial size is preserved
//! until pooling; pooling floors odd sizes. All parameters live in one flat
//! `f64` vector so optimisers, checkpoints and finite-difference checks can
//! treat them uniformly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ResizedImage;
use crate::seed;

pub const CONV1_FILTERS: usize = 8;
pub const CONV2_FILTERS: usize = 16;
pub const HIDDEN_UNITS: usize = 64;
const K: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_side: usize,
    pub classes: usize,
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Clone, Copy, Debug)]
struct Layout {
    s1: usize,
    s2: usize,
    s3: usize,
    flat: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    w4: usize,
    b4: usize,
    total: usize,
}

impl Architecture {
    pub fn new(input_side: usize, classes: usize) -> Result<Self> {
        if input_side < 4 {
            return Err(Error::Config(format!(
                "input side {input_side} too small for two pooling stages"
            )));
        }
        if classes < 2 {
            return Err(Error::Config(format!("{classes} classes; need at least 2")));
        }
        Ok(Self {
            input_side,
            classes,
        })
    }

    fn layout(&self) -> Layout {
        let s1 = self.input_side;
        let s2 = s1 / 2;
        let s3 = s2 / 2;
        let flat = CONV2_FILTERS * s3 * s3;
        let w1 = 0;
        let b1 = w1 + CONV1_FILTERS * K * K;
        let w2 = b1 + CONV1_FILTERS;
        let b2 = w2 + CONV2_FILTERS * CONV1_FILTERS * K * K;
        let w3 = b2 + CONV2_FILTERS;
        let b3 = w3 + HIDDEN_UNITS * flat;
        let w4 = b3 + HIDDEN_UNITS;
        let b4 = w4 + self.classes * HIDDEN_UNITS;
        let total = b4 + self.classes;
        Layout {
            s1,
            s2,
            s3,
            flat,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            w4,
            b4,
            total,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().total
    }
}

/// Network weights plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    arch: Architecture,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Vec<f64>,
    a1: Vec<f64>,
    p1: Vec<f64>,
    p1_idx: Vec<u32>,
    a2: Vec<f64>,
    p2: Vec<f64>,
    p2_idx: Vec<u32>,
    h: Vec<f64>,
    hr: Vec<f64>,
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardCache {
    /// Which relu units are active and which pool inputs won. Two inputs
    /// with the same pattern lie in the same smooth piece of the network.
    pub fn activation_pattern(&self) -> Vec<u32> {
        let mut pat = Vec::with_capacity(self.p1_idx.len() + self.p2_idx.len() + 64);
        pat.extend(&self.p1_idx);
        pat.extend(&self.p2_idx);
        for v in self.a1.iter().chain(&self.a2).chain(&self.h) {
            pat.push(u32::from(*v > 0.0));
        }
        pat
    }
}

impl Classifier {
    /// He-uniform weights (`U(±sqrt(6 / fan_in))`), zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let lay = arch.layout();
        let mut rng = seed::rng(seed);
        let mut params = vec![0.0; lay.total];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.gen_range(-bound..bound);
            }
        };
        fill(lay.w1..lay.b1, K * K);
        fill(lay.w2..lay.b2, CONV1_FILTERS * K * K);
        fill(lay.w3..lay.b3, lay.flat);
        fill(lay.w4..lay.b4, HIDDEN_UNITS);
        Self { arch, params }
    }

    pub fn from_parameters(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.parameter_count() {
            return Err(Error::Shape(format!(
                "{} parameters, architecture needs {}",
                params.len(),
                arch.parameter_count()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn input_side(&self) -> usize {
        self.arch.input_side
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Zero the output layer (weights and biases).
    pub fn zero_output_layer(&mut self) {
        let lay = self.arch.layout();
        self.params[lay.w4..].fill(0.0);
    }

    fn check_input(&self, img: &ResizedImage) -> Result<()> {
        if img.side() != self.arch.input_side {
            return Err(Error::Shape(format!(
                "image side {} but model expects {}",
                img.side(),
                self.arch.input_side
            )));
        }
        Ok(())
    }

    /// Class probabilities for one image.
    pub fn forward(&self, img: &ResizedImage) -> Result<Vec<f64>> {
        self.check_input(img)?;
        Ok(self.forward_cached(img.pixels()).probs)
    }

    pub fn forward_with_cache(&self, img: &ResizedImage) -> Result<ForwardCache> {
        self.check_input(img)?;
        Ok(self.forward_cached(img.pixels()))
    }

    pub(crate) fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        let lay = self.arch.layout();
        let p = &self.params;
        let (s1, s2, s3) = (lay.s1, lay.s2, lay.s3);

        let mut a1 = vec![0.0; CONV1_FILTERS * s1 * s1];
        conv_forward(
            input,
            1,
            s1,
            &p[lay.w1..lay.b1],
            &p[lay.b1..lay.w2],
            CONV1_FILTERS,
            &mut a1,
        );
        let (p1, p1_idx) = relu_pool(&a1, CONV1_FILTERS, s1);

        let mut a2 = vec![0.0; CONV2_FILTERS * s2 * s2];
        conv_forward(
            &p1,
            CONV1_FILTERS,
            s2,
            &p[lay.w2..lay.b2],
            &p[lay.b2..lay.w3],
            CONV2_FILTERS,
            &mut a2,
        );
        let (p2, p2_idx) = relu_pool(&a2, CONV2_FILTERS, s2);
        debug_assert_eq!(p2.len(), CONV2_FILTERS * s3 * s3);

        let mut h = p[lay.b3..lay.w4].to_vec();
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &p[lay.w3 + j * lay.flat..lay.w3 + (j + 1) * lay.flat];
            *hj += dot(row, &p2);
        }
        let hr: Vec<f64> = h.iter().map(|&v| v.max(0.0)).collect();

        let c = self.arch.classes;
        let mut logits = p[lay.b4..lay.b4 + c].to_vec();
        for (k, z) in logits.iter_mut().enumerate() {
            let row = &p[lay.w4 + k * HIDDEN_UNITS..lay.w4 + (k + 1) * HIDDEN_UNITS];
            *z += dot(row, &hr);
        }
        let probs = softmax(&logits);

        ForwardCache {
            input: input.to_vec(),
            a1,
            p1,
            p1_idx,
            a2,
            p2,
            p2_idx,
            h,
            hr,
            probs,
            logits,
        }
    }

    /// Backpropagate `dlogits` through a cached pass.
    ///
    /// Parameter gradients are added (scaled by `scale`) into `grad`, which
    /// must have `parameter_count` entries. When `want_input` is set, the
    /// gradient with respect to the input pixels is returned.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: &[f64],
        scale: f64,
        grad: Option<&mut [f64]>,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let lay = self.arch.layout();
        let p = &self.params;
        let (s1, s2, s3) = (lay.s1, lay.s2, lay.s3);
        let c = self.arch.classes;
        let mut grad = grad;

        let dz: Vec<f64> = dlogits.iter().map(|&v| v * scale).collect();

        // dense 2
        let mut dhr = vec![0.0; HIDDEN_UNITS];
        for (k, &g) in dz.iter().enumerate() {
            let row = &p[lay.w4 + k * HIDDEN_UNITS..lay.w4 + (k + 1) * HIDDEN_UNITS];
            axpy(g, row, &mut dhr);
        }
        if let Some(gr) = grad.as_deref_mut() {
            for (k, &g) in dz.iter().enumerate() {
                axpy(
                    g,
                    &cache.hr,
                    &mut gr[lay.w4 + k * HIDDEN_UNITS..lay.w4 + (k + 1) * HIDDEN_UNITS],
                );
            }
            for k in 0..c {
                gr[lay.b4 + k] += dz[k];
            }
        }
        let dh: Vec<f64> = dhr
            .iter()
            .zip(&cache.h)
            .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
            .collect();

        // dense 1
        let mut dp2 = vec![0.0; lay.flat];
        for (j, &g) in dh.iter().enumerate() {
            if g != 0.0 {
                let row = &p[lay.w3 + j * lay.flat..lay.w3 + (j + 1) * lay.flat];
                axpy(g, row, &mut dp2);
            }
        }
        if let Some(gr) = grad.as_deref_mut() {
            for (j, &g) in dh.iter().enumerate() {
                if g != 0.0 {
                    axpy(
                        g,
                        &cache.p2,
                        &mut gr[lay.w3 + j * lay.flat..lay.w3 + (j + 1) * lay.flat],
                    );
                }
                gr[lay.b3 + j] += g;
            }
        }

        // pool 2 + relu 2
        let da2 = unpool_relu(&dp2, &cache.p2_idx, &cache.a2, CONV2_FILTERS, s2, s3);

        // conv 2
        let mut dp1 = vec![0.0; CONV1_FILTERS * s2 * s2];
        let (gw2, gb2) = match grad.as_deref_mut() {
            Some(gr) => {
                let (head, tail) = gr.split_at_mut(lay.b2);
                (Some(&mut head[lay.w2..]), Some(&mut tail[..CONV2_FILTERS]))
            }
            None => (None, None),
        };
        conv_backward(
            &cache.p1,
            CONV1_FILTERS,
            s2,
            &p[lay.w2..lay.b2],
            CONV2_FILTERS,
            &da2,
            gw2,
            gb2,
            Some(&mut dp1),
        );

        // pool 1 + relu 1
        let da1 = unpool_relu(&dp1, &cache.p1_idx, &cache.a1, CONV1_FILTERS, s1, s2);

        // conv 1
        let mut dx = if want_input {
            Some(vec![0.0; s1 * s1])
        } else {
            None
        };
        let (gw1, gb1) = match grad.as_deref_mut() {
            Some(gr) => {
                let (head, tail) = gr.split_at_mut(lay.b1);
                (Some(&mut head[lay.w1..]), Some(&mut tail[..CONV1_FILTERS]))
            }
            None => (None, None),
        };
        conv_backward(
            &cache.input,
            1,
            s1,
            &p[lay.w1..lay.b1],
            CONV1_FILTERS,
            &da1,
            gw1,
            gb1,
            dx.as_deref_mut(),
        );
        dx
    }

    /// Gradient of `-ln p[label]` with respect to the input pixels.
    pub fn loss_input_gradient(&self, img: &ResizedImage, label: usize) -> Result<Vec<f64>> {
        self.check_input(img)?;
        self.check_label(label)?;
        let cache = self.forward_cached(img.pixels());
        let d = softmax_ce_grad(&cache.probs, label);
        Ok(self
            .backward(&cache, &d, 1.0, None, true)
            .expect("input gradient requested"))
    }

    /// Mean cross-entropy over `batch` and its gradient with respect to the
    /// parameters.
    pub fn loss_and_gradient(&self, batch: &[(&ResizedImage, usize)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Precondition("empty batch".into()));
        }
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for &(img, label) in batch {
            self.check_input(img)?;
            self.check_label(label)?;
            let cache = self.forward_cached(img.pixels());
            total += nll(&cache.logits, label);
            let d = softmax_ce_grad(&cache.probs, label);
            self.backward(&cache, &d, scale, Some(&mut grad), false);
        }
        Ok((total * scale, grad))
    }

    /// Mean cross-entropy of the batch (empirical risk).
    pub fn loss(&self, batch: &[(&ResizedImage, usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Precondition("empty batch".into()));
        }
        let mut total = 0.0;
        for &(img, label) in batch {
            self.check_input(img)?;
            self.check_label(label)?;
            total += nll(&self.forward_cached(img.pixels()).logits, label);
        }
        Ok(total / batch.len() as f64)
    }

    pub(crate) fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.arch.classes {
            return Err(Error::Precondition(format!(
                "label {label} out of range for {} classes",
                self.arch.classes
            )));
        }
        Ok(())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln softmax(logits)[label]`, computed stably.
pub fn nll(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// `-ln p[label]` for an explicit probability vector.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].ln()
}

fn softmax_ce_grad(probs: &[f64], label: usize) -> Vec<f64> {
    let mut d = probs.to_vec();
    d[label] -= 1.0;
    d
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorises
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Valid output column range for kernel column `kx` with one pixel of padding.
#[inline]
fn col_range(k: usize, side: usize) -> (usize, usize) {
    // source column = x + k - 1 must lie in [0, side)
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { side - 1 } else { side };
    (lo, hi)
}

fn conv_forward(
    input: &[f64],
    in_ch: usize,
    side: usize,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
    out: &mut [f64],
) {
    let plane = side * side;
    for o in 0..out_ch {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(bias[o]);
        for i in 0..in_ch {
            let src = &input[i * plane..(i + 1) * plane];
            let w = &weights[(o * in_ch + i) * K * K..(o * in_ch + i + 1) * K * K];
            for ky in 0..K {
                let (ylo, yhi) = col_range(ky, side);
                for kx in 0..K {
                    let wv = w[ky * K + kx];
                    let (xlo, xhi) = col_range(kx, side);
                    for y in ylo..yhi {
                        let sy = y + ky - 1;
                        let s = &src[sy * side + xlo + kx - 1..sy * side + xhi + kx - 1];
                        let d = &mut dst[y * side + xlo..y * side + xhi];
                        axpy(wv, s, d);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    in_ch: usize,
    side: usize,
    weights: &[f64],
    out_ch: usize,
    dout: &[f64],
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
    mut dinput: Option<&mut [f64]>,
) {
    let plane = side * side;
    for o in 0..out_ch {
        let g = &dout[o * plane..(o + 1) * plane];
        if let Some(db) = db.as_deref_mut() {
            db[o] += g.iter().sum::<f64>();
        }
        for i in 0..in_ch {
            let src = &input[i * plane..(i + 1) * plane];
            let wbase = (o * in_ch + i) * K * K;
            for ky in 0..K {
                let (ylo, yhi) = col_range(ky, side);
                for kx in 0..K {
                    let (xlo, xhi) = col_range(kx, side);
                    if let Some(dw) = dw.as_deref_mut() {
                        let mut acc = 0.0;
                        for y in ylo..yhi {
                            let sy = y + ky - 1;
                            acc += dot(
                                &g[y * side + xlo..y * side + xhi],
                                &src[sy * side + xlo + kx - 1..sy * side + xhi + kx - 1],
                            );
                        }
                        dw[wbase + ky * K + kx] += acc;
                    }
                    if let Some(dx) = dinput.as_deref_mut() {
                        let wv = weights[wbase + ky * K + kx];
                        let dplane = &mut dx[i * plane..(i + 1) * plane];
                        for y in ylo..yhi {
                            let sy = y + ky - 1;
                            axpy(
                                wv,
                                &g[y * side + xlo..y * side + xhi],
                                &mut dplane[sy * side + xlo + kx - 1..sy * side + xhi + kx - 1],
                            );
                        }
                    }
                }
            }
        }
    }
}

/// relu followed by 2×2 max-pooling; returns pooled values and the flat
/// index (within the channel plane) of each winning input.
fn relu_pool(a: &[f64], ch: usize, side: usize) -> (Vec<f64>, Vec<u32>) {
    let half = side / 2;
    let plane = side * side;
    let mut out = vec![0.0; ch * half * half];
    let mut idx = vec![0u32; ch * half * half];
    for c in 0..ch {
        let src = &a[c * plane..(c + 1) * plane];
        for y in 0..half {
            for x in 0..half {
                let base = 2 * y * side + 2 * x;
                let cand = [base, base + 1, base + side, base + side + 1];
                let mut best = cand[0];
                for &k in &cand[1..] {
                    if src[k] > src[best] {
                        best = k;
                    }
                }
                let o = c * half * half + y * half + x;
                out[o] = src[best].max(0.0);
                idx[o] = best as u32;
            }
        }
    }
    (out, idx)
}

fn unpool_relu(dpool: &[f64], idx: &[u32], pre: &[f64], ch: usize, side: usize, half: usize) -> Vec<f64> {
    let plane = side * side;
    let mut d = vec![0.0; ch * plane];
    for c in 0..ch {
        for o in 0..half * half {
            let k = c * half * half + o;
            let src = c * plane + idx[k] as usize;
            if pre[src] > 0.0 {
                d[src] += dpool[k];
            }
        }
    }
    d
}
