//! Noise mechanisms: the exact symbol-replacement corruption distribution,
//! the logit-matrix noise layer, permutation noise, and Gumbel-Softmax
//! sampling utilities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::{hamming, Message};

/// Dense distribution tables are guarded at this many entries.
pub const MAX_DISTRIBUTION_SIZE: usize = 1_000_000;

/// Clamp for uniform draws feeding the Gumbel transform.
const GUMBEL_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    SymbolReplacement,
    LogitMatrix,
    Permutation,
}

/// Noise model over messages: per-symbol corruption probability `epsilon`
/// on an alphabet of `d` symbols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub epsilon: f64,
    pub alphabet_size: usize,
    pub kind: ChannelKind,
}

impl ChannelSpec {
    pub fn new(epsilon: f64, alphabet_size: usize, kind: ChannelKind) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Domain(format!("epsilon {epsilon} outside [0,1)")));
        }
        if alphabet_size < 2 {
            return Err(Error::Domain("channel alphabet needs d >= 2".into()));
        }
        Ok(Self {
            epsilon,
            alphabet_size,
            kind,
        })
    }

    pub fn symbol_replacement(epsilon: f64, alphabet_size: usize) -> Result<Self> {
        Self::new(epsilon, alphabet_size, ChannelKind::SymbolReplacement)
    }

    /// The oracle bound from the optimality theorem: `eps < (d-1)/d`.
    pub fn within_theorem_bound(&self) -> bool {
        self.epsilon < (self.alphabet_size as f64 - 1.0) / self.alphabet_size as f64
    }
}

/// Exact probability that the channel turns `s` into `shat`:
/// `(1-eps)^(L-rho) * (eps/(d-1))^rho` with `rho = hamming(s, shat)`.
pub fn corruption_prob(s: &Message, shat: &Message, spec: &ChannelSpec) -> Result<f64> {
    if spec.kind != ChannelKind::SymbolReplacement {
        return Err(Error::Precondition(
            "corruption_prob requires a symbol-replacement channel".into(),
        ));
    }
    let rho = hamming(&s.symbols, &shat.symbols)?;
    Ok(corruption_prob_at_distance(
        rho,
        s.symbols.len(),
        spec.epsilon,
        spec.alphabet_size,
    ))
}

/// Same formula parameterized by the Hamming distance directly; the hot path
/// of the enumeration oracle.
pub fn corruption_prob_at_distance(rho: usize, length: usize, epsilon: f64, d: usize) -> f64 {
    debug_assert!(rho <= length && d >= 2);
    (1.0 - epsilon).powi((length - rho) as i32) * (epsilon / (d as f64 - 1.0)).powi(rho as i32)
}

/// Full corruption distribution of a source message, indexed by message code.
#[derive(Debug, Clone)]
pub struct CorruptionDistribution {
    pub source: Message,
    pub probs: Vec<f64>,
}

pub fn corruption_distribution(s: &Message, spec: &ChannelSpec) -> Result<CorruptionDistribution> {
    let length = s.symbols.len();
    let d = spec.alphabet_size;
    let n = d
        .checked_pow(length as u32)
        .filter(|&n| n <= MAX_DISTRIBUTION_SIZE)
        .ok_or_else(|| Error::InstanceTooLarge(format!("d^L exceeds {MAX_DISTRIBUTION_SIZE}")))?;
    let mut probs = Vec::with_capacity(n);
    for code in 0..n {
        let shat = crate::lang::decode_message(code, d, length);
        probs.push(corruption_prob(s, &shat, spec)?);
    }
    Ok(CorruptionDistribution {
        source: s.clone(),
        probs,
    })
}

/// Corrupt a message by sampling: each position independently kept with
/// probability `1-eps`, else replaced by a uniformly chosen different symbol.
pub fn sample_corrupt<R: Rng>(s: &Message, spec: &ChannelSpec, rng: &mut R) -> Message {
    let d = spec.alphabet_size;
    let symbols = s
        .symbols
        .iter()
        .map(|&sym| {
            if rng.random::<f64>() < spec.epsilon {
                let offset = rng.random_range(1..d);
                (sym + offset) % d
            } else {
                sym
            }
        })
        .collect();
    Message::new(symbols)
}

/// Row-stochastic noise matrix: diagonal `1-eps`, off-diagonal `eps/(d-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMatrix {
    d: usize,
    w: Vec<f64>, // row-major d x d
}

impl NoiseMatrix {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.d + j]
    }

    /// Arbitrary row-major matrix; the caller owns stochasticity. Exists so
    /// verification can be pointed at a corrupted matrix.
    pub fn from_raw(d: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != d * d {
            return Err(Error::LengthMismatch {
                left: w.len(),
                right: d * d,
            });
        }
        Ok(Self { d, w })
    }

    /// Every row is a probability distribution (within `tol`).
    pub fn rows_normalized(&self, tol: f64) -> bool {
        (0..self.d).all(|i| {
            let row = &self.w[i * self.d..(i + 1) * self.d];
            row.iter().all(|&v| v >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }

    /// `W p` for a probability vector `p`.
    pub fn mul_vec(&self, p: &[f64]) -> Vec<f64> {
        debug_assert_eq!(p.len(), self.d);
        (0..self.d)
            .map(|i| {
                let row = &self.w[i * self.d..(i + 1) * self.d];
                row.iter().zip(p).map(|(w, x)| w * x).sum()
            })
            .collect()
    }

    /// Backpropagate through `q = W p`: returns `W^T grad_q`.
    pub fn mul_vec_transpose(&self, grad_q: &[f64]) -> Vec<f64> {
        debug_assert_eq!(grad_q.len(), self.d);
        let mut out = vec![0.0; self.d];
        for i in 0..self.d {
            let row = &self.w[i * self.d..(i + 1) * self.d];
            for j in 0..self.d {
                out[j] += row[j] * grad_q[i];
            }
        }
        out
    }
}

pub fn noise_matrix(spec: &ChannelSpec) -> NoiseMatrix {
    let d = spec.alphabet_size;
    let off = spec.epsilon / (d as f64 - 1.0);
    let mut w = vec![off; d * d];
    for i in 0..d {
        w[i * d + i] = 1.0 - spec.epsilon;
    }
    NoiseMatrix { d, w }
}

/// `log(W p)` elementwise. Softmax of the result recovers `W p`.
pub fn apply_logit_noise(p: &[f64], w: &NoiseMatrix) -> Result<Vec<f64>> {
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!(
            "input is not a probability vector (sum = {total})"
        )));
    }
    let q = w.mul_vec(p);
    q.iter()
        .map(|&qi| {
            if qi <= 0.0 {
                Err(Error::Numeric(format!("nonpositive channel output {qi}")))
            } else {
                Ok(qi.ln())
            }
        })
        .collect()
}

/// Permutation noise: per position, with probability `eps` apply a uniformly
/// random permutation of the alphabet to the one-hot (or relaxed) vector,
/// else the identity. Each position draws its own permutation.
pub fn permutation_noise_sample<R: Rng>(
    positions: &[Vec<f64>],
    spec: &ChannelSpec,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    use rand::seq::SliceRandom;
    let d = spec.alphabet_size;
    positions
        .iter()
        .map(|m| {
            debug_assert_eq!(m.len(), d);
            if rng.random::<f64>() < spec.epsilon {
                let mut perm: Vec<usize> = (0..d).collect();
                perm.shuffle(rng);
                // out[perm[j]] = m[j]: permutation matrix applied to m
                let mut out = vec![0.0; d];
                for (j, &target) in perm.iter().enumerate() {
                    out[target] = m[j];
                }
                out
            } else {
                m.clone()
            }
        })
        .collect()
}

/// Softmax of `(x + g) / tau`, overflow-guarded by max subtraction.
pub fn gumbel_softmax(x: &[f64], tau: f64, g: &[f64]) -> Result<Vec<f64>> {
    if tau <= 0.0 {
        return Err(Error::Domain(format!("temperature {tau} must be positive")));
    }
    if x.len() != g.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: g.len(),
        });
    }
    let scaled: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| (xi + gi) / tau).collect();
    Ok(softmax(&scaled))
}

/// Argmax of `x + g`; ties break to the lowest index.
pub fn gumbel_sample(x: &[f64], g: &[f64]) -> usize {
    argmax(x.iter().zip(g).map(|(xi, gi)| xi + gi))
}

/// Lowest-index argmax over an iterator of values.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = 0;
    for (i, v) in values.into_iter().enumerate() {
        if v > best {
            best = v;
            best_idx = i;
        }
    }
    best_idx
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Standard Gumbel(0,1) draws via `-ln(-ln u)` with `u` clamped away from
/// `{0, 1}`.
pub fn gumbel_draws<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>().clamp(GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP);
            -((-u.ln()).ln())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn msg(symbols: &[usize]) -> Message {
        Message::new(symbols.to_vec())
    }

    #[test]
    fn corruption_prob_examples() {
        let spec = ChannelSpec::symbol_replacement(0.1, 5).unwrap();
        // identity: (1-eps)^L
        assert_abs_diff_eq!(
            corruption_prob(&msg(&[0, 0]), &msg(&[0, 0]), &spec).unwrap(),
            0.81,
            epsilon = 1e-15
        );
        // rho = 1: 0.9 * (0.1/4) = 0.0225
        assert_abs_diff_eq!(
            corruption_prob(&msg(&[0, 0]), &msg(&[0, 1]), &spec).unwrap(),
            0.0225,
            epsilon = 1e-15
        );
        // d=2, eps=0.5 is uniform over all messages
        let spec2 = ChannelSpec::symbol_replacement(0.5, 2).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert_abs_diff_eq!(
                    corruption_prob(&msg(&[0, 0]), &msg(&[a, b]), &spec2).unwrap(),
                    0.25,
                    epsilon = 1e-15
                );
            }
        }
    }

    #[test]
    fn corruption_distribution_examples() {
        // eps = 0: point mass
        let spec = ChannelSpec::symbol_replacement(0.0, 2).unwrap();
        let dist = corruption_distribution(&msg(&[1, 0]), &spec).unwrap();
        assert_eq!(dist.probs, vec![0.0, 0.0, 1.0, 0.0]);

        let spec = ChannelSpec::symbol_replacement(0.3, 2).unwrap();
        let dist = corruption_distribution(&msg(&[0]), &spec).unwrap();
        assert_abs_diff_eq!(dist.probs[0], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(dist.probs[1], 0.3, epsilon = 1e-15);

        // L=2: masses 0.49/0.21/0.21/0.09 by distance from source
        let dist = corruption_distribution(&msg(&[0, 0]), &spec).unwrap();
        assert_abs_diff_eq!(dist.probs[0], 0.49, epsilon = 1e-15);
        assert_abs_diff_eq!(dist.probs[1], 0.21, epsilon = 1e-15);
        assert_abs_diff_eq!(dist.probs[2], 0.21, epsilon = 1e-15);
        assert_abs_diff_eq!(dist.probs[3], 0.09, epsilon = 1e-15);
        assert_abs_diff_eq!(dist.probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn distribution_sums_to_one_all_small_instances() {
        for d in 2..=4usize {
            for length in 1..=4usize {
                for eps in [0.0, 0.05, 0.3, 0.6] {
                    if eps >= 1.0 {
                        continue;
                    }
                    let spec = ChannelSpec::symbol_replacement(eps, d).unwrap();
                    let source = msg(&vec![d - 1; length]);
                    let dist = corruption_distribution(&source, &spec).unwrap();
                    let sum: f64 = dist.probs.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12, "d={d} L={length} eps={eps}");
                    // P(unchanged) = (1-eps)^L
                    let self_code = crate::lang::encode_message(&source, d, length).unwrap();
                    assert_abs_diff_eq!(
                        dist.probs[self_code],
                        (1.0 - eps).powi(length as i32),
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn monotone_in_distance_iff_below_bound() {
        for (eps, d, expect_decreasing) in [(0.1, 5, true), (0.79, 5, true), (0.81, 5, false)] {
            let mut decreasing = true;
            for rho in 0..3usize {
                let p0 = corruption_prob_at_distance(rho, 3, eps, d);
                let p1 = corruption_prob_at_distance(rho + 1, 3, eps, d);
                if p1 >= p0 {
                    decreasing = false;
                }
            }
            assert_eq!(decreasing, expect_decreasing, "eps={eps}");
        }
    }

    #[test]
    fn sample_corrupt_matches_marginal() {
        let spec = ChannelSpec::symbol_replacement(0.1, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let source = msg(&[2, 4]);
        let n = 100_000;
        let mut flips = [0usize; 2];
        for _ in 0..n {
            let c = sample_corrupt(&source, &spec, &mut rng);
            for (i, (&a, &b)) in c.symbols.iter().zip(&source.symbols).enumerate() {
                if a != b {
                    flips[i] += 1;
                }
            }
        }
        for f in flips {
            let rate = f as f64 / n as f64;
            assert!((rate - 0.1).abs() < 0.005, "flip rate {rate}");
        }
    }

    #[test]
    fn sample_corrupt_eps_zero_is_identity() {
        let spec = ChannelSpec::symbol_replacement(0.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let source = msg(&[0, 1, 2]);
        for _ in 0..100 {
            assert_eq!(sample_corrupt(&source, &spec, &mut rng), source);
        }
    }

    #[test]
    fn sample_corrupt_chi_square_against_exact() {
        let spec = ChannelSpec::symbol_replacement(0.3, 3).unwrap();
        let source = msg(&[1, 2]);
        let exact = corruption_distribution(&source, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000usize;
        let mut counts = vec![0usize; exact.probs.len()];
        for _ in 0..n {
            let c = sample_corrupt(&source, &spec, &mut rng);
            counts[crate::lang::encode_message(&c, 3, 2).unwrap()] += 1;
        }
        let chi2: f64 = exact
            .probs
            .iter()
            .zip(&counts)
            .map(|(&p, &c)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // 8 degrees of freedom; 99.9th percentile is about 26.1
        assert!(chi2 < 26.1, "chi2 = {chi2}");
    }

    #[test]
    fn noise_matrix_examples() {
        let spec = ChannelSpec::new(0.0, 3, ChannelKind::LogitMatrix).unwrap();
        let w = noise_matrix(&spec);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(w.entry(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        let spec = ChannelSpec::new(0.1, 5, ChannelKind::LogitMatrix).unwrap();
        let w = noise_matrix(&spec);
        for i in 0..5 {
            let mut row_sum = 0.0;
            for j in 0..5 {
                let expect = if i == j { 0.9 } else { 0.025 };
                assert_abs_diff_eq!(w.entry(i, j), expect, epsilon = 1e-15);
                row_sum += w.entry(i, j);
            }
            assert_abs_diff_eq!(row_sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn logit_noise_one_hot_gives_log_column() {
        let spec = ChannelSpec::new(0.1, 5, ChannelKind::LogitMatrix).unwrap();
        let w = noise_matrix(&spec);
        let mut p = vec![0.0; 5];
        p[2] = 1.0;
        let logits = apply_logit_noise(&p, &w).unwrap();
        for (i, &v) in logits.iter().enumerate() {
            let expect = if i == 2 { 0.9f64 } else { 0.025 };
            assert_abs_diff_eq!(v, expect.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn logit_noise_softmax_recovers_wp() {
        let spec = ChannelSpec::new(0.2, 4, ChannelKind::LogitMatrix).unwrap();
        let w = noise_matrix(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let logits = apply_logit_noise(&p, &w).unwrap();
            let back = softmax(&logits);
            let wp = w.mul_vec(&p);
            for (a, b) in back.iter().zip(&wp) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn logit_matrix_one_hot_flip_rate_is_epsilon() {
        // With one-hot input, W p has mass eps spread off the active symbol,
        // so the per-symbol flip probability of this channel is exactly eps.
        let spec = ChannelSpec::new(0.17, 5, ChannelKind::LogitMatrix).unwrap();
        let w = noise_matrix(&spec);
        let mut p = vec![0.0; 5];
        p[3] = 1.0;
        let wp = w.mul_vec(&p);
        let off_mass: f64 = wp
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 3)
            .map(|(_, v)| v)
            .sum();
        assert_abs_diff_eq!(off_mass, 0.17, epsilon = 1e-12);
    }

    #[test]
    fn permutation_noise_eps_zero_and_marginals() {
        let spec = ChannelSpec::new(0.0, 4, ChannelKind::Permutation).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let one_hots = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]];
        assert_eq!(
            permutation_noise_sample(&one_hots, &spec, &mut rng),
            one_hots
        );

        // d=2, eps=1: the random permutation is identity or swap with prob
        // 1/2 each, so the marginal flip rate is 1/2. eps=1 is outside the
        // ChannelSpec invariant, so drive the test at eps just below 1 and
        // compare to eps/2.
        let spec = ChannelSpec::new(0.9, 2, ChannelKind::Permutation).unwrap();
        let n = 200_000;
        let mut flips = 0usize;
        for _ in 0..n {
            let out = permutation_noise_sample(&[vec![1.0, 0.0]], &spec, &mut rng);
            if out[0][0] != 1.0 {
                flips += 1;
            }
        }
        let rate = flips as f64 / n as f64;
        assert!((rate - 0.45).abs() < 0.005, "flip rate {rate}");
    }

    #[test]
    fn permutation_noise_change_rate_matches_enumeration() {
        // Exact per-position change rate: eps * P(uniform permutation moves
        // the active symbol). Enumerate all d! permutations for d = 5.
        let d = 5usize;
        let perms = crate::lang::factorial(d);
        let moving = (0..perms)
            .filter(|&r| crate::lang::permutation_at_rank(d, r)[0] != 0)
            .count();
        let exact_move_prob = moving as f64 / perms as f64; // 1 - 1/d
        assert_abs_diff_eq!(exact_move_prob, 1.0 - 1.0 / d as f64, epsilon = 1e-15);

        let eps = 0.015;
        let spec = ChannelSpec::new(eps, d, ChannelKind::Permutation).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut one_hot = vec![0.0; d];
        one_hot[0] = 1.0;
        let n = 1_000_000usize;
        let mut changed = 0usize;
        for _ in 0..n {
            let out = permutation_noise_sample(std::slice::from_ref(&one_hot), &spec, &mut rng);
            if out[0][0] != 1.0 {
                changed += 1;
            }
        }
        let rate = changed as f64 / n as f64;
        let expect = eps * exact_move_prob;
        assert!(
            (rate - expect).abs() < 4.0 * (expect / n as f64).sqrt() + 1e-4,
            "rate {rate} vs {expect}"
        );
    }

    #[test]
    fn gumbel_softmax_examples() {
        let x = vec![0.3, -1.0, 2.0];
        let zeros = vec![0.0; 3];
        let gs = gumbel_softmax(&x, 1.0, &zeros).unwrap();
        let sm = softmax(&x);
        for (a, b) in gs.iter().zip(&sm) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        // tau -> 0 approaches one-hot at argmax(x+g)
        let g = vec![0.1, 0.2, -0.4];
        let gs = gumbel_softmax(&x, 1e-6, &g).unwrap();
        let arg = gumbel_sample(&x, &g);
        assert!(gs[arg] > 1.0 - 1e-6);
        // argmax agreement at any temperature
        for tau in [0.1, 1.0, 10.0] {
            let gs = gumbel_softmax(&x, tau, &g).unwrap();
            assert_eq!(argmax(gs.iter().cloned()), arg);
        }
    }

    #[test]
    fn gumbel_sample_examples() {
        assert_eq!(gumbel_sample(&[10.0, 0.0], &[0.01, 0.02]), 0);
        // uniform logits: each symbol close to 1/d
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = vec![0.0; 4];
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            let g = gumbel_draws(&mut rng, 4);
            counts[gumbel_sample(&x, &g)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn gumbel_max_trick_matches_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 3.0 - 1.5).collect();
        let target = softmax(&x);
        let n = 100_000;
        let mut counts = vec![0usize; 5];
        for _ in 0..n {
            let g = gumbel_draws(&mut rng, 5);
            counts[gumbel_sample(&x, &g)] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&target)
            .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "total variation {tv}");
    }

    proptest! {
        #[test]
        fn gumbel_softmax_sums_to_one(seed in 0u64..500, tau in 0.05f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let g = gumbel_draws(&mut rng, 6);
            let p = gumbel_softmax(&x, tau, &g).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert_eq!(argmax(p.iter().cloned()), gumbel_sample(&x, &g));
        }
    }
}
