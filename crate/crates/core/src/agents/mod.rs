//! Sender/receiver networks on symbolic inputs, the forward pipeline
//! (sender → logit noise → Gumbel-Softmax straight-through → receiver),
//! the three-term loss, and exact reverse-mode gradients.

mod train;

pub use train::{adam_step, train_run, AdamState, Checkpoint, TrainConfig, TrainOutcome, Trainer};

use rand::Rng;

use crate::channel::{
    argmax, gumbel_draws, gumbel_softmax, noise_matrix, ChannelSpec, NoiseMatrix,
};
use crate::error::{Error, Result};
use crate::lang::{FeatureSpace, FeatureVector};

pub const HIDDEN: usize = 64;

/// Fully connected layer, `w` row-major `(rows × cols)`, `y = w x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    /// Glorot-uniform weights in ±√(6/(fan_in+fan_out)), zero biases.
    pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let w = (0..rows * cols)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            rows,
            cols,
            w,
            b: vec![0.0; rows],
        }
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for i in 0..self.rows {
            let row = &self.w[i * self.cols..(i + 1) * self.cols];
            let mut acc = self.b[i];
            for (wj, xj) in row.iter().zip(x) {
                acc += wj * xj;
            }
            out[i] = acc;
        }
    }

    /// Accumulate `∂L/∂w += g ⊗ x`, `∂L/∂b += g`, and return `∂L/∂x = wᵀ g`
    /// into `grad_in` (accumulated, not overwritten).
    fn backward(&self, x: &[f64], g: &[f64], grads: &mut Dense, grad_in: &mut [f64]) {
        for i in 0..self.rows {
            let gi = g[i];
            grads.b[i] += gi;
            let row = &self.w[i * self.cols..(i + 1) * self.cols];
            let grow = &mut grads.w[i * self.cols..(i + 1) * self.cols];
            for j in 0..self.cols {
                grow[j] += gi * x[j];
                grad_in[j] += row[j] * gi;
            }
        }
    }

    fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn elu_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        pre.exp()
    }
}

fn elu_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| elu(v)).collect()
}

fn softmax_vec(z: &[f64]) -> Vec<f64> {
    crate::channel::softmax(z)
}

/// `∂L/∂z` for `p = softmax(z)` given `∂L/∂p`.
fn softmax_backward(p: &[f64], gp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(gp).map(|(a, b)| a * b).sum();
    p.iter().zip(gp).map(|(&pi, &gi)| pi * (gi - dot)).collect()
}

/// Sender: one-hot feature concat → dense(64, ELU) ×2 → L softmax heads of
/// `d_s` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SenderParams {
    pub sizes: Vec<usize>,
    pub d_s: usize,
    pub length: usize,
    pub l1: Dense,
    pub l2: Dense,
    pub heads: Vec<Dense>,
}

impl SenderParams {
    pub fn new<R: Rng>(space: &FeatureSpace, d_s: usize, length: usize, rng: &mut R) -> Self {
        let input = space.sizes().iter().sum();
        Self {
            sizes: space.sizes().to_vec(),
            d_s,
            length,
            l1: Dense::glorot(HIDDEN, input, rng),
            l2: Dense::glorot(HIDDEN, HIDDEN, rng),
            heads: (0..length)
                .map(|_| Dense::glorot(d_s, HIDDEN, rng))
                .collect(),
        }
    }

    pub fn zeros(space: &FeatureSpace, d_s: usize, length: usize) -> Self {
        let input = space.sizes().iter().sum();
        Self {
            sizes: space.sizes().to_vec(),
            d_s,
            length,
            l1: Dense::zeros(HIDDEN, input),
            l2: Dense::zeros(HIDDEN, HIDDEN),
            heads: (0..length).map(|_| Dense::zeros(d_s, HIDDEN)).collect(),
        }
    }

    pub fn one_hot(&self, f: &FeatureVector) -> Vec<f64> {
        let mut x = vec![0.0; self.sizes.iter().sum()];
        let mut offset = 0;
        for (k, &v) in f.values.iter().enumerate() {
            x[offset + v] = 1.0;
            offset += self.sizes[k];
        }
        x
    }

    fn blocks(&self) -> Vec<&Dense> {
        let mut v = vec![&self.l1, &self.l2];
        v.extend(self.heads.iter());
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = vec![&mut self.l1, &mut self.l2];
        v.extend(self.heads.iter_mut());
        v
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_blocks(&self.blocks())
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        set_blocks(&mut self.blocks_mut(), flat)
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|d| d.len()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        norm_blocks(&self.blocks())
    }
}

/// Receiver: message one-hots `s` and `1−s` into two parallel dense(64)
/// paths, summed, ELU, dense(64, ELU) ×2, K softmax heads of `d_r` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverParams {
    pub k: usize,
    pub d_r: usize,
    pub input: usize,
    pub path_pos: Dense,
    pub path_neg: Dense,
    pub h2: Dense,
    pub h3: Dense,
    pub heads: Vec<Dense>,
}

impl ReceiverParams {
    pub fn new<R: Rng>(k: usize, d_r: usize, length: usize, d_s: usize, rng: &mut R) -> Self {
        let input = length * d_s;
        Self {
            k,
            d_r,
            input,
            path_pos: Dense::glorot(HIDDEN, input, rng),
            path_neg: Dense::glorot(HIDDEN, input, rng),
            h2: Dense::glorot(HIDDEN, HIDDEN, rng),
            h3: Dense::glorot(HIDDEN, HIDDEN, rng),
            heads: (0..k).map(|_| Dense::glorot(d_r, HIDDEN, rng)).collect(),
        }
    }

    pub fn zeros(k: usize, d_r: usize, length: usize, d_s: usize) -> Self {
        let input = length * d_s;
        Self {
            k,
            d_r,
            input,
            path_pos: Dense::zeros(HIDDEN, input),
            path_neg: Dense::zeros(HIDDEN, input),
            h2: Dense::zeros(HIDDEN, HIDDEN),
            h3: Dense::zeros(HIDDEN, HIDDEN),
            heads: (0..k).map(|_| Dense::zeros(d_r, HIDDEN)).collect(),
        }
    }

    fn blocks(&self) -> Vec<&Dense> {
        let mut v = vec![&self.path_pos, &self.path_neg, &self.h2, &self.h3];
        v.extend(self.heads.iter());
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = vec![
            &mut self.path_pos,
            &mut self.path_neg,
            &mut self.h2,
            &mut self.h3,
        ];
        v.extend(self.heads.iter_mut());
        v
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_blocks(&self.blocks())
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        set_blocks(&mut self.blocks_mut(), flat)
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|d| d.len()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        norm_blocks(&self.blocks())
    }
}

fn flatten_blocks(blocks: &[&Dense]) -> Vec<f64> {
    let mut out = Vec::with_capacity(blocks.iter().map(|d| d.len()).sum());
    for d in blocks {
        out.extend_from_slice(&d.w);
        out.extend_from_slice(&d.b);
    }
    out
}

fn set_blocks(blocks: &mut [&mut Dense], flat: &[f64]) -> Result<()> {
    let need: usize = blocks.iter().map(|d| d.len()).sum();
    if flat.len() != need {
        return Err(Error::LengthMismatch {
            left: flat.len(),
            right: need,
        });
    }
    let mut at = 0;
    for d in blocks {
        let nw = d.w.len();
        d.w.copy_from_slice(&flat[at..at + nw]);
        at += nw;
        let nb = d.b.len();
        d.b.copy_from_slice(&flat[at..at + nb]);
        at += nb;
    }
    Ok(())
}

fn norm_blocks(blocks: &[&Dense]) -> f64 {
    blocks
        .iter()
        .flat_map(|d| d.w.iter().chain(d.b.iter()))
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

struct SenderCache {
    x: Vec<f64>,
    u1: Vec<f64>,
    a1: Vec<f64>,
    u2: Vec<f64>,
    a2: Vec<f64>,
    probs: Vec<Vec<f64>>,
}

fn sender_forward_cache(p: &SenderParams, f: &FeatureVector) -> SenderCache {
    let x = p.one_hot(f);
    let mut u1 = vec![0.0; HIDDEN];
    p.l1.forward(&x, &mut u1);
    let a1 = elu_vec(&u1);
    let mut u2 = vec![0.0; HIDDEN];
    p.l2.forward(&a1, &mut u2);
    let a2 = elu_vec(&u2);
    let probs = p
        .heads
        .iter()
        .map(|h| {
            let mut z = vec![0.0; p.d_s];
            h.forward(&a2, &mut z);
            softmax_vec(&z)
        })
        .collect();
    SenderCache {
        x,
        u1,
        a1,
        u2,
        a2,
        probs,
    }
}

/// Sender message distributions: one softmax over `d_s` per position.
pub fn sender_forward(p: &SenderParams, f: &FeatureVector) -> Result<Vec<Vec<f64>>> {
    let cache = sender_forward_cache(p, f);
    for dist in &cache.probs {
        if !dist.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite sender output".into()));
        }
    }
    Ok(cache.probs)
}

struct ReceiverCache {
    s: Vec<f64>,
    u1: Vec<f64>,
    a1: Vec<f64>,
    u2: Vec<f64>,
    a2: Vec<f64>,
    u3: Vec<f64>,
    a3: Vec<f64>,
    probs: Vec<Vec<f64>>,
}

fn receiver_forward_cache(p: &ReceiverParams, s: &[f64]) -> ReceiverCache {
    let mut u1 = vec![0.0; HIDDEN];
    p.path_pos.forward(s, &mut u1);
    let comp: Vec<f64> = s.iter().map(|&v| 1.0 - v).collect();
    let mut u_neg = vec![0.0; HIDDEN];
    p.path_neg.forward(&comp, &mut u_neg);
    for (a, b) in u1.iter_mut().zip(&u_neg) {
        *a += b;
    }
    let a1 = elu_vec(&u1);
    let mut u2 = vec![0.0; HIDDEN];
    p.h2.forward(&a1, &mut u2);
    let a2 = elu_vec(&u2);
    let mut u3 = vec![0.0; HIDDEN];
    p.h3.forward(&a2, &mut u3);
    let a3 = elu_vec(&u3);
    let probs = p
        .heads
        .iter()
        .map(|h| {
            let mut z = vec![0.0; p.d_r];
            h.forward(&a3, &mut z);
            softmax_vec(&z)
        })
        .collect();
    ReceiverCache {
        s: s.to_vec(),
        u1,
        a1,
        u2,
        a2,
        u3,
        a3,
        probs,
    }
}

/// Receiver feature distributions from a concatenated (one-hot or relaxed)
/// message vector of length `L·d_s`.
pub fn receiver_forward(p: &ReceiverParams, s: &[f64]) -> Result<Vec<Vec<f64>>> {
    if s.len() != p.input {
        return Err(Error::LengthMismatch {
            left: s.len(),
            right: p.input,
        });
    }
    let cache = receiver_forward_cache(p, s);
    for dist in &cache.probs {
        if !dist.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite receiver output".into()));
        }
    }
    Ok(cache.probs)
}

/// Per-term loss values; `total = xent + λ_KL·kl + λ_l2·l2_norms`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub xent: f64,
    pub kl: f64,
    pub l2_norms: f64,
}

/// Frozen stochastic draws for one batch, making the loss a deterministic
/// differentiable function of the parameters.
#[derive(Debug, Clone)]
pub struct BatchDraws {
    /// Gumbel noise, one vector of `L·d_s` per example.
    pub gumbel: Vec<Vec<f64>>,
    /// Straight-through step: receiver consumes the sampled one-hot.
    pub hard: bool,
    /// Frozen `m̄ − m̂` offsets. When set on a hard step the receiver input is
    /// `m̂ + offset`, i.e. the straight-through surrogate with its
    /// stop-gradient branch held constant — the function finite differences
    /// must probe.
    pub st_offset: Option<Vec<Vec<f64>>>,
}

impl BatchDraws {
    pub fn sample<R: Rng>(rng: &mut R, n: usize, length: usize, d_s: usize, hard: bool) -> Self {
        let gumbel = (0..n).map(|_| gumbel_draws(rng, length * d_s)).collect();
        Self {
            gumbel,
            hard,
            st_offset: None,
        }
    }
}

/// One training batch: inputs drive the sender, labels score the receiver.
/// Labels equal inputs except under scrambled-label experiments.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<FeatureVector>,
    pub labels: Vec<FeatureVector>,
}

impl Batch {
    pub fn identity(inputs: Vec<FeatureVector>) -> Self {
        let labels = inputs.clone();
        Self { inputs, labels }
    }
}

pub struct LossConfig {
    pub lambda_kl: f64,
    pub lambda_l2: f64,
    pub tau: f64,
    pub eps: f64,
}

fn noise_for(eps: f64, d_s: usize) -> Result<NoiseMatrix> {
    let spec = ChannelSpec::symbol_replacement(eps, d_s)?;
    Ok(noise_matrix(&spec))
}

/// The value fed to the receiver for one position and the relaxed sample
/// behind it (gradients always flow through the relaxed sample).
fn pipeline_position(
    probs: &[f64],
    w: &NoiseMatrix,
    g: &[f64],
    tau: f64,
    hard: bool,
    offset: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let q = w.mul_vec(probs);
    if q.iter().any(|&v| v <= 0.0) {
        return Err(Error::Numeric("noisy distribution hit zero mass".into()));
    }
    let y: Vec<f64> = q.iter().map(|v| v.ln()).collect();
    let soft = gumbel_softmax(&y, tau, g)?;
    let feed = match (hard, offset) {
        (false, _) => soft.clone(),
        (true, Some(off)) => soft.iter().zip(off).map(|(a, b)| a + b).collect(),
        (true, None) => {
            let mut one = vec![0.0; soft.len()];
            one[argmax(y.iter().zip(g).map(|(a, b)| a + b))] = 1.0;
            one
        }
    };
    Ok((q, soft, feed))
}

struct ExampleCache {
    sender: SenderCache,
    q: Vec<Vec<f64>>,
    soft: Vec<Vec<f64>>,
    receiver: ReceiverCache,
}

fn forward_example(
    sp: &SenderParams,
    rp: &ReceiverParams,
    input: &FeatureVector,
    w: &NoiseMatrix,
    gumbel: &[f64],
    tau: f64,
    hard: bool,
    st_offset: Option<&Vec<f64>>,
) -> Result<ExampleCache> {
    let sender = sender_forward_cache(sp, input);
    let d = sp.d_s;
    let mut q = Vec::with_capacity(sp.length);
    let mut soft = Vec::with_capacity(sp.length);
    let mut s = Vec::with_capacity(sp.length * d);
    for i in 0..sp.length {
        let g = &gumbel[i * d..(i + 1) * d];
        let off = st_offset.map(|o| &o[i * d..(i + 1) * d]);
        let (qi, si, feed) = pipeline_position(&sender.probs[i], w, g, tau, hard, off)?;
        q.push(qi);
        soft.push(si);
        s.extend_from_slice(&feed);
    }
    let receiver = receiver_forward_cache(rp, &s);
    Ok(ExampleCache {
        sender,
        q,
        soft,
        receiver,
    })
}

fn loss_impl(
    sp: &SenderParams,
    rp: &ReceiverParams,
    batch: &Batch,
    cfg: &LossConfig,
    draws: &BatchDraws,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<(SenderParams, ReceiverParams)>)> {
    if batch.inputs.len() != batch.labels.len() || batch.inputs.is_empty() {
        return Err(Error::Precondition("batch inputs/labels mismatch".into()));
    }
    if draws.gumbel.len() != batch.inputs.len() {
        return Err(Error::Precondition("draws do not cover the batch".into()));
    }
    let n = batch.inputs.len() as f64;
    let w = noise_for(cfg.eps, sp.d_s)?;
    let d_s = sp.d_s;
    let uni = 1.0 / d_s as f64;

    let mut xent = 0.0;
    let mut kl = 0.0;
    let space = FeatureSpace::new(sp.sizes.clone())?;
    let mut grads = want_grads.then(|| {
        (
            SenderParams::zeros(&space, sp.d_s, sp.length),
            ReceiverParams::zeros(rp.k, rp.d_r, sp.length, sp.d_s),
        )
    });

    for (e, (input, label)) in batch.inputs.iter().zip(&batch.labels).enumerate() {
        let cache = forward_example(
            sp,
            rp,
            input,
            &w,
            &draws.gumbel[e],
            cfg.tau,
            draws.hard,
            draws.st_offset.as_ref().map(|o| &o[e]),
        )?;
        for (k, dist) in cache.receiver.probs.iter().enumerate() {
            xent -= dist[label.values[k]].max(f64::MIN_POSITIVE).ln();
        }
        for dist in &cache.sender.probs {
            kl -= (d_s as f64).ln();
            for &p in dist {
                kl -= uni * p.max(f64::MIN_POSITIVE).ln();
            }
        }

        if let Some((gs, gr)) = grads.as_mut() {
            backward_example(sp, rp, &cache, label, cfg, &w, n, gs, gr);
        }
    }
    xent /= n;
    kl /= n;

    let l2_norms = sp.l2_norm() + rp.l2_norm();
    let total = xent + cfg.lambda_kl * kl + cfg.lambda_l2 * l2_norms;

    if let Some((gs, gr)) = grads.as_mut() {
        add_l2_grad(&sp.flatten(), cfg.lambda_l2, gs);
        add_l2_grad_recv(&rp.flatten(), cfg.lambda_l2, gr);
    }

    Ok((
        LossBreakdown {
            total,
            xent,
            kl,
            l2_norms,
        },
        grads,
    ))
}

fn add_l2_grad(theta: &[f64], lambda: f64, grads: &mut SenderParams) {
    let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || lambda == 0.0 {
        return;
    }
    let mut flat = grads.flatten();
    for (g, t) in flat.iter_mut().zip(theta) {
        *g += lambda * t / norm;
    }
    grads.set_from_flat(&flat).expect("same shape");
}

fn add_l2_grad_recv(psi: &[f64], lambda: f64, grads: &mut ReceiverParams) {
    let norm = psi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || lambda == 0.0 {
        return;
    }
    let mut flat = grads.flatten();
    for (g, t) in flat.iter_mut().zip(psi) {
        *g += lambda * t / norm;
    }
    grads.set_from_flat(&flat).expect("same shape");
}

#[allow(clippy::too_many_arguments)]
fn backward_example(
    sp: &SenderParams,
    rp: &ReceiverParams,
    cache: &ExampleCache,
    label: &FeatureVector,
    cfg: &LossConfig,
    w: &NoiseMatrix,
    n: f64,
    gs: &mut SenderParams,
    gr: &mut ReceiverParams,
) {
    let rc = &cache.receiver;
    // receiver heads: ∂(−ln q[label])/∂z = q − one-hot(label), scaled 1/n
    let mut ga3 = vec![0.0; HIDDEN];
    for (k, head) in rp.heads.iter().enumerate() {
        let mut gz: Vec<f64> = rc.probs[k].iter().map(|&p| p / n).collect();
        gz[label.values[k]] -= 1.0 / n;
        head.backward(&rc.a3, &gz, &mut gr.heads[k], &mut ga3);
    }
    let gu3: Vec<f64> = ga3
        .iter()
        .zip(&rc.u3)
        .map(|(g, &u)| g * elu_grad(u))
        .collect();
    let mut ga2 = vec![0.0; HIDDEN];
    rp.h3.backward(&rc.a2, &gu3, &mut gr.h3, &mut ga2);
    let gu2: Vec<f64> = ga2
        .iter()
        .zip(&rc.u2)
        .map(|(g, &u)| g * elu_grad(u))
        .collect();
    let mut ga1 = vec![0.0; HIDDEN];
    rp.h2.backward(&rc.a1, &gu2, &mut gr.h2, &mut ga1);
    let gu1: Vec<f64> = ga1
        .iter()
        .zip(&rc.u1)
        .map(|(g, &u)| g * elu_grad(u))
        .collect();

    // u1 = path_pos·s + path_neg·(1−s) (+ biases): ∂u1/∂s = Wpos − Wneg
    let mut gs_in = vec![0.0; rp.input];
    rp.path_pos
        .backward(&rc.s, &gu1, &mut gr.path_pos, &mut gs_in);
    let comp: Vec<f64> = rc.s.iter().map(|&v| 1.0 - v).collect();
    let mut gs_neg = vec![0.0; rp.input];
    rp.path_neg
        .backward(&comp, &gu1, &mut gr.path_neg, &mut gs_neg);
    for (a, b) in gs_in.iter_mut().zip(&gs_neg) {
        *a -= b;
    }

    // back through Gumbel-Softmax, logit noise, and sender softmax per
    // position; straight-through passes the relaxed sample's gradient
    let d = sp.d_s;
    let mut ga2_s = vec![0.0; HIDDEN];
    for i in 0..sp.length {
        let gm = &gs_in[i * d..(i + 1) * d];
        let soft = &cache.soft[i];
        let gv: Vec<f64> = softmax_backward(soft, gm)
            .iter()
            .map(|g| g / cfg.tau)
            .collect();
        // v = ln q + g, so ∂L/∂q = gv / q, then ∂L/∂p = Wᵀ (gv/q)
        let q = &cache.q[i];
        let gq: Vec<f64> = gv.iter().zip(q).map(|(g, &qv)| g / qv).collect();
        let mut gp = w.mul_vec_transpose(&gq);
        let p = &cache.sender.probs[i];
        for (gpj, &pj) in gp.iter_mut().zip(p) {
            *gpj -= cfg.lambda_kl / (n * d as f64 * pj);
        }
        let gz = softmax_backward(p, &gp);
        sp.heads[i].backward(&cache.sender.a2, &gz, &mut gs.heads[i], &mut ga2_s);
    }
    let gu2_s: Vec<f64> = ga2_s
        .iter()
        .zip(&cache.sender.u2)
        .map(|(g, &u)| g * elu_grad(u))
        .collect();
    let mut ga1_s = vec![0.0; HIDDEN];
    sp.l2
        .backward(&cache.sender.a1, &gu2_s, &mut gs.l2, &mut ga1_s);
    let gu1_s: Vec<f64> = ga1_s
        .iter()
        .zip(&cache.sender.u1)
        .map(|(g, &u)| g * elu_grad(u))
        .collect();
    let mut gx = vec![0.0; cache.sender.x.len()];
    sp.l1.backward(&cache.sender.x, &gu1_s, &mut gs.l1, &mut gx);
}

/// Loss with fresh stochastic draws.
pub fn total_loss<R: Rng>(
    sp: &SenderParams,
    rp: &ReceiverParams,
    batch: &Batch,
    cfg: &LossConfig,
    hard: bool,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let draws = BatchDraws::sample(rng, batch.inputs.len(), sp.length, sp.d_s, hard);
    total_loss_with_draws(sp, rp, batch, cfg, &draws)
}

/// Loss as a deterministic function of parameters given frozen draws.
pub fn total_loss_with_draws(
    sp: &SenderParams,
    rp: &ReceiverParams,
    batch: &Batch,
    cfg: &LossConfig,
    draws: &BatchDraws,
) -> Result<LossBreakdown> {
    loss_impl(sp, rp, batch, cfg, draws, false).map(|(b, _)| b)
}

/// Exact reverse-mode gradients of the pathwise loss, flattened in the same
/// order as `flatten()`.
pub fn gradients(
    sp: &SenderParams,
    rp: &ReceiverParams,
    batch: &Batch,
    cfg: &LossConfig,
    draws: &BatchDraws,
) -> Result<(LossBreakdown, Vec<f64>, Vec<f64>)> {
    let (breakdown, grads) = loss_impl(sp, rp, batch, cfg, draws, true)?;
    let (gs, gr) = grads.expect("requested");
    Ok((breakdown, gs.flatten(), gr.flatten()))
}

/// Freeze the straight-through offsets `m̄ − m̂` of a hard step at the current
/// parameters, so that finite differences probe the surrogate whose gradient
/// the straight-through estimator computes.
pub fn freeze_straight_through(
    sp: &SenderParams,
    batch: &Batch,
    cfg: &LossConfig,
    draws: &mut BatchDraws,
) -> Result<()> {
    if !draws.hard {
        return Err(Error::Precondition(
            "offsets only apply to hard steps".into(),
        ));
    }
    let w = noise_for(cfg.eps, sp.d_s)?;
    let d = sp.d_s;
    let mut offsets = Vec::with_capacity(batch.inputs.len());
    for (e, input) in batch.inputs.iter().enumerate() {
        let sender = sender_forward_cache(sp, input);
        let mut off = vec![0.0; sp.length * d];
        for i in 0..sp.length {
            let g = &draws.gumbel[e][i * d..(i + 1) * d];
            let (_, soft, feed) = pipeline_position(&sender.probs[i], &w, g, cfg.tau, true, None)?;
            for j in 0..d {
                off[i * d + j] = feed[j] - soft[j];
            }
        }
        offsets.push(off);
    }
    draws.st_offset = Some(offsets);
    Ok(())
}

/// Greedy (argmax, no noise) decoding of the sender into a language table.
pub fn greedy_language(sp: &SenderParams) -> Result<crate::lang::Language> {
    let space = FeatureSpace::new(sp.sizes.clone())?;
    let alphabet = crate::lang::Alphabet::new(sp.d_s)?;
    crate::lang::Language::from_fn(space, alphabet, sp.length, |f| {
        let probs = sender_forward_cache(sp, f).probs;
        crate::lang::Message::new(
            probs
                .iter()
                .map(|dist| argmax(dist.iter().copied()))
                .collect(),
        )
    })
}
