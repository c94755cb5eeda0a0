//! Adam, the training loop, evaluation, and bit-exact checkpoint/resume.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    gradients, greedy_language, noise_for, receiver_forward_cache, sender_forward_cache, Batch,
    BatchDraws, LossBreakdown, LossConfig, ReceiverParams, SenderParams,
};
use crate::channel::argmax;
use crate::error::{Error, Result};
use crate::lang::{FeatureSpace, FeatureVector};
use crate::metrics::{self, MessageLog, MetricsReport};

fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_lambda_kl() -> f64 {
    0.01
}
fn default_lambda_l2() -> f64 {
    0.0003
}
fn default_tau() -> f64 {
    1.0
}
fn default_batch() -> usize {
    64
}
fn default_eval_every() -> u64 {
    2000
}
fn default_d_s() -> usize {
    5
}
fn default_d_r() -> usize {
    8
}
fn default_eval_samples() -> usize {
    256
}

/// Full training recipe; serde defaults carry the reference hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Feature space cardinalities (m_1, ..., m_K).
    pub sizes: Vec<usize>,
    /// Message length L; defaults to K.
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default = "default_d_s")]
    pub d_s: usize,
    #[serde(default = "default_d_r")]
    pub d_r: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_lambda_kl")]
    pub lambda_kl: f64,
    #[serde(default = "default_lambda_l2")]
    pub lambda_l2: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub steps: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Replacement-noise level of the channel.
    #[serde(default)]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(sizes: Vec<usize>, steps: u64) -> Self {
        Self {
            sizes,
            length: None,
            d_s: default_d_s(),
            d_r: default_d_r(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            lambda_kl: default_lambda_kl(),
            lambda_l2: default_lambda_l2(),
            tau: default_tau(),
            batch: default_batch(),
            steps,
            eval_every: default_eval_every(),
            eval_samples: default_eval_samples(),
            eps: 0.0,
            seed: 0,
        }
    }

    pub fn length(&self) -> usize {
        self.length.unwrap_or(self.sizes.len())
    }

    pub fn validate(&self) -> Result<()> {
        FeatureSpace::new(self.sizes.clone())?;
        for (name, v) in [
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("adam_eps", self.adam_eps),
            ("tau", self.tau),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Domain("betas must be < 1".into()));
        }
        if self.lambda_kl < 0.0 || self.lambda_l2 < 0.0 {
            return Err(Error::Domain("loss weights must be nonnegative".into()));
        }
        if self.batch == 0 || self.eval_every == 0 || self.eval_samples == 0 {
            return Err(Error::Domain("batch/eval sizes must be positive".into()));
        }
        if self.d_s < 2 || self.d_r < 2 || self.length() == 0 {
            return Err(Error::Domain("degenerate network dimensions".into()));
        }
        if !(0.0..1.0).contains(&self.eps) {
            return Err(Error::Domain("eps must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn loss_config(&self, eps: f64) -> LossConfig {
        LossConfig {
            lambda_kl: self.lambda_kl,
            lambda_l2: self.lambda_l2,
            tau: self.tau,
            eps,
        }
    }
}

/// First/second moment accumulators and the bias-correction step counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// Standard Adam update with bias correction, in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::LengthMismatch {
            left: params.len(),
            right: grads.len().max(state.m.len()),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

/// Serializable snapshot sufficient for bit-exact resume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub sender: Vec<f64>,
    pub receiver: Vec<f64>,
    pub adam: AdamState,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: (u64, u64),
    pub train_codes: Vec<usize>,
    pub label_map: Vec<usize>,
}

/// One sender/receiver pair under sequential optimization.
pub struct Trainer {
    pub config: TrainConfig,
    space: FeatureSpace,
    pub sender: SenderParams,
    pub receiver: ReceiverParams,
    adam: AdamState,
    rng: ChaCha8Rng,
    pub step: u64,
    /// Meaning codes sampled during training (holdout restricts this).
    train_codes: Vec<usize>,
    /// Training label per meaning code (scrambled-label experiments).
    label_map: Vec<usize>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let space = FeatureSpace::new(config.sizes.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let sender = SenderParams::new(&space, config.d_s, config.length(), &mut rng);
        let receiver =
            ReceiverParams::new(space.k(), config.d_r, config.length(), config.d_s, &mut rng);
        let n_params = sender.param_count() + receiver.param_count();
        let codes: Vec<usize> = (0..space.cardinality()).collect();
        Ok(Self {
            config,
            space,
            sender,
            receiver,
            adam: AdamState::new(n_params),
            rng,
            step: 0,
            train_codes: codes.clone(),
            label_map: codes,
        })
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    /// Restrict training draws to the given meaning codes.
    pub fn restrict_train_codes(&mut self, codes: Vec<usize>) -> Result<()> {
        if codes.is_empty() || codes.iter().any(|&c| c >= self.space.cardinality()) {
            return Err(Error::Domain("invalid training meaning codes".into()));
        }
        self.train_codes = codes;
        Ok(())
    }

    pub fn train_codes(&self) -> &[usize] {
        &self.train_codes
    }

    /// Relabel training targets by a bijection on meaning codes.
    pub fn set_label_map(&mut self, map: Vec<usize>) -> Result<()> {
        let n = self.space.cardinality();
        if map.len() != n {
            return Err(Error::LengthMismatch {
                left: map.len(),
                right: n,
            });
        }
        let mut seen = vec![false; n];
        for &c in &map {
            if c >= n || seen[c] {
                return Err(Error::Domain("label map is not a bijection".into()));
            }
            seen[c] = true;
        }
        self.label_map = map;
        Ok(())
    }

    pub fn label_map(&self) -> &[usize] {
        &self.label_map
    }

    fn sample_batch(&mut self) -> Batch {
        let mut inputs = Vec::with_capacity(self.config.batch);
        let mut labels = Vec::with_capacity(self.config.batch);
        for _ in 0..self.config.batch {
            let code = self.train_codes[self.rng.random_range(0..self.train_codes.len())];
            inputs.push(self.space.decode(code));
            labels.push(self.space.decode(self.label_map[code]));
        }
        Batch { inputs, labels }
    }

    pub fn step(&mut self) -> Result<LossBreakdown> {
        self.step_with_eps(self.config.eps)
    }

    /// One update at the given noise level. The receiver consumes the
    /// straight-through one-hot on odd steps and the relaxed sample on even
    /// ones.
    pub fn step_with_eps(&mut self, eps: f64) -> Result<LossBreakdown> {
        let batch = self.sample_batch();
        let hard = self.step % 2 == 1;
        let draws = BatchDraws::sample(
            &mut self.rng,
            batch.inputs.len(),
            self.config.length(),
            self.config.d_s,
            hard,
        );
        let cfg = self.config.loss_config(eps);
        let (breakdown, gs, gr) = gradients(&self.sender, &self.receiver, &batch, &cfg, &draws)?;
        if !breakdown.total.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                detail: format!(
                    "non-finite loss (xent {}, kl {}, l2 {})",
                    breakdown.xent, breakdown.kl, breakdown.l2_norms
                ),
            });
        }
        let mut flat = self.sender.flatten();
        let split = flat.len();
        flat.extend(self.receiver.flatten());
        let mut grads = gs;
        grads.extend(gr);
        adam_step(&mut flat, &grads, &mut self.adam, &self.config)?;
        self.sender.set_from_flat(&flat[..split])?;
        self.receiver.set_from_flat(&flat[split..])?;
        self.step += 1;
        Ok(breakdown)
    }

    /// Greedy noiseless language of the current sender.
    pub fn greedy_language(&self) -> Result<crate::lang::Language> {
        greedy_language(&self.sender)
    }

    /// One round-trip through the noisy discrete pipeline.
    pub fn communicate<R: Rng>(
        &self,
        f: &FeatureVector,
        eps: f64,
        rng: &mut R,
    ) -> Result<FeatureVector> {
        let w = noise_for(eps, self.config.d_s)?;
        let sender = sender_forward_cache(&self.sender, f);
        let d = self.config.d_s;
        let mut s = vec![0.0; self.config.length() * d];
        for i in 0..self.config.length() {
            let q = w.mul_vec(&sender.probs[i]);
            let y: Vec<f64> = q.iter().map(|v| v.ln()).collect();
            let g = crate::channel::gumbel_draws(rng, d);
            s[i * d + argmax(y.iter().zip(&g).map(|(a, b)| a + b))] = 1.0;
        }
        let out = receiver_forward_cache(&self.receiver, &s);
        Ok(FeatureVector::new(
            out.probs
                .iter()
                .map(|dist| argmax(dist.iter().copied()))
                .collect(),
        ))
    }

    /// Compositionality metrics of the greedy language plus round-trip
    /// accuracy on fresh uniform meaning draws through the noisy pipeline.
    /// Uses an rng stream keyed by the current step, so evaluation never
    /// perturbs the training stream.
    pub fn evaluate(&self, eps: f64) -> Result<MetricsReport> {
        let lang = self.greedy_language()?;
        let log = MessageLog::from_language(&lang);
        let mut report = metrics::compute_report(&log)?;

        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.step + 1);
        let mut preds = Vec::with_capacity(self.config.eval_samples);
        let mut truths = Vec::with_capacity(self.config.eval_samples);
        for _ in 0..self.config.eval_samples {
            let code = rng.random_range(0..self.space.cardinality());
            preds.push(self.communicate(&self.space.decode(code), eps, &mut rng)?);
            truths.push(self.space.decode(self.label_map[code]));
        }
        report.acc = Some(metrics::accuracy(&preds, &truths)?);
        Ok(report)
    }

    /// Train for `config.steps` updates with a per-step noise level,
    /// evaluating at step 0, every `eval_every` updates, and at the end.
    pub fn run(&mut self, eps_at: impl Fn(u64) -> f64) -> Result<TrainOutcome> {
        let mut trajectory = vec![(self.step, self.evaluate(eps_at(self.step))?)];
        let end = self.step + self.config.steps;
        while self.step < end {
            self.step_with_eps(eps_at(self.step))?;
            if self.step % self.config.eval_every == 0 || self.step == end {
                trajectory.push((self.step, self.evaluate(eps_at(self.step))?));
            }
        }
        let window = trajectory.len().min(20);
        let summary = mean_reports(
            trajectory[trajectory.len() - window..]
                .iter()
                .map(|(_, r)| r),
        );
        Ok(TrainOutcome {
            trajectory,
            summary,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            sender: self.sender.flatten(),
            receiver: self.receiver.flatten(),
            adam: self.adam.clone(),
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: {
                let p = self.rng.get_word_pos();
                ((p >> 64) as u64, p as u64)
            },
            train_codes: self.train_codes.clone(),
            label_map: self.label_map.clone(),
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(cp.config.clone())?;
        t.sender
            .set_from_flat(&cp.sender)
            .map_err(|e| Error::Checkpoint(format!("sender shape: {e}")))?;
        t.receiver
            .set_from_flat(&cp.receiver)
            .map_err(|e| Error::Checkpoint(format!("receiver shape: {e}")))?;
        if cp.adam.m.len() != t.adam.m.len() {
            return Err(Error::Checkpoint("optimizer state shape mismatch".into()));
        }
        t.adam = cp.adam.clone();
        t.step = cp.step;
        let mut rng = ChaCha8Rng::from_seed(cp.rng_seed);
        rng.set_stream(cp.rng_stream);
        rng.set_word_pos(((cp.rng_word_pos.0 as u128) << 64) | cp.rng_word_pos.1 as u128);
        t.rng = rng;
        t.restrict_train_codes(cp.train_codes.clone())?;
        t.set_label_map(cp.label_map.clone())?;
        Ok(t)
    }
}

/// Evaluation trajectory plus the mean over the final (≤ 20) evaluations.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trajectory: Vec<(u64, MetricsReport)>,
    pub summary: MetricsReport,
}

/// Fieldwise mean of reports; optional metrics average their defined values
/// and stay `None` only when undefined everywhere.
pub fn mean_reports<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> MetricsReport {
    let mut conf = (0.0, 0usize);
    let mut cont = (0.0, 0usize);
    let mut topo = (0.0, 0usize);
    let mut pos = (0.0, 0usize);
    let mut acc = (0.0, 0usize);
    for r in reports {
        conf = (conf.0 + r.conf, conf.1 + 1);
        cont = (cont.0 + r.cont, cont.1 + 1);
        if let Some(v) = r.topo {
            topo = (topo.0 + v, topo.1 + 1);
        }
        if let Some(v) = r.pos {
            pos = (pos.0 + v, pos.1 + 1);
        }
        if let Some(v) = r.acc {
            acc = (acc.0 + v, acc.1 + 1);
        }
    }
    let avg = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    MetricsReport {
        topo: avg(topo),
        conf: avg(conf).unwrap_or(0.0),
        cont: avg(cont).unwrap_or(0.0),
        pos: avg(pos),
        acc: avg(acc),
    }
}

/// Fresh trainer, full run at the config's constant noise level.
pub fn train_run(config: &TrainConfig) -> Result<TrainOutcome> {
    let eps = config.eps;
    Trainer::new(config.clone())?.run(|_| eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny_config(steps: u64, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(vec![2, 2], steps);
        c.d_s = 3;
        c.d_r = 4;
        c.batch = 8;
        c.eval_every = 25;
        c.eval_samples = 32;
        c.eps = 0.1;
        c.seed = seed;
        c
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let cfg = tiny_config(0, 0);
        let mut p = vec![0.5, -1.0, 2.0];
        let before = p.clone();
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[0.0, 0.0, 0.0], &mut st, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_magnitude_bounded_by_lr() {
        let cfg = tiny_config(0, 0);
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[3.0, -0.004], &mut st, &cfg).unwrap();
        for &v in &p {
            assert!(v.abs() <= cfg.lr * 1.01, "|Δ| = {}", v.abs());
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn adam_is_bitwise_deterministic() {
        let cfg = tiny_config(0, 0);
        let run = || {
            let mut p = vec![0.1, -0.2, 0.3];
            let mut st = AdamState::new(3);
            for _ in 0..10 {
                adam_step(&mut p, &[0.01, -0.02, 0.03], &mut st, &cfg).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn zero_steps_yields_initial_eval_only() {
        let out = train_run(&tiny_config(0, 4)).unwrap();
        assert_eq!(out.trajectory.len(), 1);
        assert_eq!(out.trajectory[0].0, 0);
        assert!(out.summary.acc.is_some());
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let a = train_run(&tiny_config(50, 9)).unwrap();
        let b = train_run(&tiny_config(50, 9)).unwrap();
        assert_eq!(a.trajectory.len(), b.trajectory.len());
        for ((sa, ra), (sb, rb)) in a.trajectory.iter().zip(&b.trajectory) {
            assert_eq!(sa, sb);
            assert_eq!(ra.topo, rb.topo);
            assert_eq!(ra.conf, rb.conf);
            assert_eq!(ra.acc, rb.acc);
        }
        let c = train_run(&tiny_config(50, 10)).unwrap();
        assert_ne!(
            a.trajectory.last().unwrap().1.acc,
            c.trajectory.last().unwrap().1.acc
        );
    }

    #[test]
    fn checkpoint_resume_is_bitwise_exact() {
        let cfg = tiny_config(0, 12);
        let mut t = Trainer::new(cfg).unwrap();
        for _ in 0..30 {
            t.step().unwrap();
        }
        let cp = t.checkpoint();
        let json = serde_json::to_string(&cp).unwrap();
        for _ in 0..30 {
            t.step().unwrap();
        }
        let reference = (t.sender.flatten(), t.receiver.flatten());

        let cp2: Checkpoint = serde_json::from_str(&json).unwrap();
        let mut r = Trainer::from_checkpoint(&cp2).unwrap();
        assert_eq!(r.step, 30);
        for _ in 0..30 {
            r.step().unwrap();
        }
        let resumed = (r.sender.flatten(), r.receiver.flatten());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&reference.0), bits(&resumed.0));
        assert_eq!(bits(&reference.1), bits(&resumed.1));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = tiny_config(0, 2);
        let mut t = Trainer::new(cfg).unwrap();
        let mut flat = t.sender.flatten();
        flat[0] = f64::NAN;
        t.sender.set_from_flat(&flat).unwrap();
        match t.step() {
            Err(Error::Diverged { step: 0, .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn label_map_and_code_restriction_validate() {
        let mut t = Trainer::new(tiny_config(0, 1)).unwrap();
        assert!(t.set_label_map(vec![0, 0, 1, 2]).is_err());
        assert!(t.set_label_map(vec![3, 2, 1, 0]).is_ok());
        assert!(t.restrict_train_codes(vec![]).is_err());
        assert!(t.restrict_train_codes(vec![0, 5]).is_err());
        assert!(t.restrict_train_codes(vec![1, 2]).is_ok());
    }

    #[test]
    fn mean_reports_handles_undefined_metrics() {
        let a = MetricsReport {
            topo: Some(0.5),
            conf: 2.0,
            cont: 0.4,
            pos: None,
            acc: Some(1.0),
        };
        let b = MetricsReport {
            topo: None,
            conf: 4.0,
            cont: 0.6,
            pos: None,
            acc: Some(0.5),
        };
        let m = mean_reports([&a, &b]);
        assert_abs_diff_eq!(m.topo.unwrap(), 0.5);
        assert_abs_diff_eq!(m.conf, 3.0);
        assert_abs_diff_eq!(m.cont, 0.5);
        assert!(m.pos.is_none());
        assert_abs_diff_eq!(m.acc.unwrap(), 0.75);
    }
}
