//! Exact evaluation of the communication losses, the closed-form optimum,
//! and the brute-force enumeration oracle for the optimality theorem.

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{corruption_prob_at_distance, ChannelKind, ChannelSpec};
use crate::error::{Error, Result};
use crate::lang::{
    enumerate_compositional_languages, factorial, hamming, hamming_codes, is_compositional,
    Alphabet, FeatureSpace, FeatureVector, Language,
};

/// Relative tolerance for extracting the argmin set of the enumeration sweep.
pub const ARGMIN_REL_TOL: f64 = 1e-9;

/// Penalty applied to the number of wrongly decoded features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PenaltyH {
    /// `H(x) = x / K`
    LinearNormalized,
    /// `H(x) = x`
    Linear,
    /// `H(x) = x^gamma`, `gamma >= 1`
    Power(f64),
}

impl PenaltyH {
    pub fn power(gamma: f64) -> Result<Self> {
        if gamma < 1.0 {
            return Err(Error::Domain(format!(
                "power penalty needs gamma >= 1, got {gamma}"
            )));
        }
        Ok(Self::Power(gamma))
    }

    pub fn eval(&self, rho: usize, k: usize) -> f64 {
        match self {
            Self::LinearNormalized => rho as f64 / k as f64,
            Self::Linear => rho as f64,
            Self::Power(gamma) => (rho as f64).powf(*gamma),
        }
    }

    /// `H(0) >= 0` and strictly increasing on the integers `0..=k`.
    pub fn is_valid_on(&self, k: usize) -> bool {
        let mut prev = self.eval(0, k);
        if prev < 0.0 {
            return false;
        }
        for rho in 1..=k {
            let v = self.eval(rho, k);
            if v <= prev {
                return false;
            }
            prev = v;
        }
        true
    }
}

fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

fn require_oracle_channel(spec: &ChannelSpec) -> Result<()> {
    if spec.kind != ChannelKind::SymbolReplacement {
        return Err(Error::Precondition(
            "loss oracles require the symbol-replacement channel".into(),
        ));
    }
    Ok(())
}

/// Exact expected penalty `E[H(rho(f', f))]` where `f'` is the meaning decoded
/// from the corrupted message, computed by full summation over `A^L`.
pub fn expected_j2(
    l: &Language,
    f: &FeatureVector,
    spec: &ChannelSpec,
    h: PenaltyH,
) -> Result<f64> {
    require_oracle_channel(spec)?;
    let inv = l
        .inverse_table()
        .ok_or_else(|| Error::Domain("expected_j2 requires a bijective language".into()))?;
    let k = l.space().k();
    let length = l.length();
    let d = spec.alphabet_size;
    let fcode = l.space().encode(f)?;
    let s0 = l.message_code(fcode);
    let terms = (0..inv.len()).map(|shat| {
        let rho_msg = hamming_codes(s0, shat, d, length);
        let p = corruption_prob_at_distance(rho_msg, length, spec.epsilon, d);
        let decoded = l.space().decode(inv[shat]);
        let rho_feat = hamming(&decoded.values, &f.values).expect("same space");
        h.eval(rho_feat, k) * p
    });
    Ok(kahan_sum(terms))
}

/// Per-feature error probabilities `e_j = P(f'_j != f_j)` under the exact
/// corruption distribution.
pub fn feature_error_probs(
    l: &Language,
    f: &FeatureVector,
    spec: &ChannelSpec,
) -> Result<Vec<f64>> {
    require_oracle_channel(spec)?;
    let inv = l
        .inverse_table()
        .ok_or_else(|| Error::Domain("feature_error_probs requires a bijective language".into()))?;
    let k = l.space().k();
    let length = l.length();
    let d = spec.alphabet_size;
    let fcode = l.space().encode(f)?;
    let s0 = l.message_code(fcode);
    let mut e = vec![0.0f64; k];
    for shat in 0..inv.len() {
        let rho_msg = hamming_codes(s0, shat, d, length);
        let p = corruption_prob_at_distance(rho_msg, length, spec.epsilon, d);
        let decoded = l.space().decode(inv[shat]);
        for j in 0..k {
            if decoded.values[j] != f.values[j] {
                e[j] += p;
            }
        }
    }
    Ok(e)
}

/// `J_1(l, f) = F(e_1, ..., e_K)` for a caller-supplied aggregate `F`.
pub fn expected_j1_with(
    l: &Language,
    f: &FeatureVector,
    spec: &ChannelSpec,
    aggregate: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    Ok(aggregate(&feature_error_probs(l, f, spec)?))
}

/// Default aggregate `F = sum_j (e_j - eps)^2`: nonnegative and zero exactly
/// at `(eps, ..., eps)`.
pub fn expected_j1(l: &Language, f: &FeatureVector, spec: &ChannelSpec) -> Result<f64> {
    let eps = spec.epsilon;
    expected_j1_with(l, f, spec, |e| {
        e.iter().map(|&ej| (ej - eps) * (ej - eps)).sum()
    })
}

/// Closed-form minimum of `J_2`: `E[H(B_eps)]` for `B_eps ~ Binomial(K, eps)`.
pub fn closed_form_min_j2(k: usize, eps: f64, h: PenaltyH) -> f64 {
    let terms = (0..=k).map(|i| {
        h.eval(i, k) * binomial(k, i) * eps.powi(i as i32) * (1.0 - eps).powi((k - i) as i32)
    });
    kahan_sum(terms)
}

fn binomial(n: usize, k: usize) -> f64 {
    (factorial(n) / (factorial(k) * factorial(n - k))) as f64
}

/// Result of the exhaustive optimality sweep.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub k: usize,
    pub m: usize,
    pub epsilon: f64,
    pub penalty: PenaltyH,
    pub min_loss: f64,
    pub closed_form_min: f64,
    pub argmin_count: usize,
    pub argmin_all_compositional: bool,
    pub compositional_all_argmin: bool,
    pub compositional_count: usize,
    pub per_f_constant_on_argmin: bool,
    pub languages_scored: usize,
    pub argmin_tolerance: f64,
}

/// Scores the f-averaged `J_2` of every bijective language by enumeration and
/// reports whether the argmin set coincides exactly with the compositional
/// family. Deterministic regardless of worker count: every loss is stored by
/// permutation rank before the reduction.
pub fn verify_theorem2(
    space: &FeatureSpace,
    alphabet: Alphabet,
    eps: f64,
    h: PenaltyH,
) -> Result<OracleReport> {
    let k = space.k();
    if k < 2 {
        return Err(Error::Precondition("theorem assumes K >= 2".into()));
    }
    let m = space.uniform_size().ok_or_else(|| {
        Error::Precondition("theorem assumes equal value counts across features".into())
    })?;
    if alphabet.size != m {
        return Err(Error::Precondition(format!(
            "theorem assumes |A| = |F_i|; got |A| = {} and m = {m}",
            alphabet.size
        )));
    }
    if m < 2 {
        return Err(Error::Precondition("theorem assumes |A| >= 2".into()));
    }
    let spec = ChannelSpec::symbol_replacement(eps, alphabet.size)?;
    if !spec.within_theorem_bound() {
        return Err(Error::Precondition(format!(
            "theorem assumes eps < (|A|-1)/|A| = {}; got {eps}",
            (alphabet.size as f64 - 1.0) / alphabet.size as f64
        )));
    }
    if !h.is_valid_on(k) {
        return Err(Error::Precondition(
            "penalty must be nonnegative and strictly increasing".into(),
        ));
    }

    let n = space.cardinality();
    if n > crate::lang::MAX_ENUMERABLE_CARDINALITY {
        return Err(Error::InstanceTooLarge(format!(
            "|F| = {n} exceeds enumeration guard"
        )));
    }
    let total = factorial(n);
    let d = alphabet.size;

    // Precomputed lookup tables shared by all workers.
    let feat_dist: Vec<Vec<usize>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    hamming(&space.decode(a).values, &space.decode(b).values).expect("same space")
                })
                .collect()
        })
        .collect();
    let msg_dist: Vec<Vec<usize>> = (0..n)
        .map(|a| (0..n).map(|b| hamming_codes(a, b, d, k)).collect())
        .collect();
    let chan_prob: Vec<f64> = (0..=k)
        .map(|rho| corruption_prob_at_distance(rho, k, eps, d))
        .collect();
    let h_val: Vec<f64> = (0..=k).map(|rho| h.eval(rho, k)).collect();

    let avg_loss_of = |table: &[usize]| -> f64 {
        let mut inv = vec![0usize; n];
        for (f, &msg) in table.iter().enumerate() {
            inv[msg] = f;
        }
        let per_lang = (0..n).map(|f0| {
            let s0 = table[f0];
            kahan_sum(
                (0..n).map(|shat| h_val[feat_dist[inv[shat]][f0]] * chan_prob[msg_dist[s0][shat]]),
            )
        });
        kahan_sum(per_lang) / n as f64
    };

    let losses: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|rank| avg_loss_of(&crate::lang::permutation_at_rank(n, rank)))
        .collect();

    let min_loss = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = ARGMIN_REL_TOL * min_loss.max(1e-300);
    let argmin_ranks: Vec<usize> = losses
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= min_loss + tol)
        .map(|(r, _)| r)
        .collect();

    let mut argmin_all_compositional = true;
    let mut per_f_constant_on_argmin = true;
    for &rank in &argmin_ranks {
        let l = crate::lang::bijective_language_at_rank(space, alphabet, rank)?;
        if !is_compositional(&l) {
            argmin_all_compositional = false;
        }
        let per_f: Vec<f64> = space
            .vectors()
            .map(|f| expected_j2(&l, &f, &spec, h))
            .collect::<Result<_>>()?;
        let first = per_f[0];
        if per_f.iter().any(|&v| (v - first).abs() > tol) {
            per_f_constant_on_argmin = false;
        }
    }

    // Membership of the compositional family in the argmin set, checked via
    // permutation ranks.
    let mut compositional_count = 0usize;
    let mut compositional_all_argmin = true;
    let argmin_set: std::collections::HashSet<usize> = argmin_ranks.iter().cloned().collect();
    for l in enumerate_compositional_languages(space, alphabet)? {
        compositional_count += 1;
        let rank = rank_of_permutation(l.message_codes());
        if !argmin_set.contains(&rank) {
            compositional_all_argmin = false;
        }
    }

    Ok(OracleReport {
        k,
        m,
        epsilon: eps,
        penalty: h,
        min_loss,
        closed_form_min: closed_form_min_j2(k, eps, h),
        argmin_count: argmin_ranks.len(),
        argmin_all_compositional,
        compositional_all_argmin,
        compositional_count,
        per_f_constant_on_argmin,
        languages_scored: total,
        argmin_tolerance: tol,
    })
}

/// Lexicographic rank of a permutation of `0..n` (inverse of
/// `permutation_at_rank`).
pub fn rank_of_permutation(perm: &[usize]) -> usize {
    let n = perm.len();
    let mut rank = 0;
    for i in 0..n {
        let smaller = perm[i + 1..].iter().filter(|&&p| p < perm[i]).count();
        rank += smaller * factorial(n - 1 - i);
    }
    rank
}
