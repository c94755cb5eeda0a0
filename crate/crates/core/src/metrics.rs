//! Compositionality metrics: topographic similarity, conflict count, context
//! independence, positional disentanglement, accuracy, and the closed-form
//! expected topo of a random bijective language with its Monte Carlo
//! cross-validator.

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lang::{
    factorial, hamming, permutation_at_rank, FeatureSpace, FeatureVector, Language, Message,
};

/// A `(features, message)` observation set over one feature space.
#[derive(Debug, Clone)]
pub struct MessageLog {
    space: FeatureSpace,
    length: usize,
    rows: Vec<LogRow>,
}

#[derive(Debug, Clone)]
pub struct LogRow {
    pub features: FeatureVector,
    pub message: Message,
    pub weight: f64,
}

impl MessageLog {
    pub fn new(space: FeatureSpace, rows: Vec<(FeatureVector, Message)>) -> Result<Self> {
        Self::with_weights(space, rows.into_iter().map(|(f, m)| (f, m, 1.0)).collect())
    }

    pub fn with_weights(
        space: FeatureSpace,
        rows: Vec<(FeatureVector, Message, f64)>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Domain("empty message log".into()));
        }
        let length = rows[0].1.symbols.len();
        let rows = rows
            .into_iter()
            .map(|(features, message, weight)| {
                space.encode(&features)?;
                if message.symbols.len() != length {
                    return Err(Error::LengthMismatch {
                        left: message.symbols.len(),
                        right: length,
                    });
                }
                if weight < 0.0 {
                    return Err(Error::Domain("negative row weight".into()));
                }
                Ok(LogRow {
                    features,
                    message,
                    weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            space,
            length,
            rows,
        })
    }

    /// One row per meaning, in code order.
    pub fn from_language(l: &Language) -> Self {
        let rows = l
            .space()
            .vectors()
            .map(|fv| {
                let message = l.message_of(&fv).expect("total table");
                LogRow {
                    features: fv,
                    message,
                    weight: 1.0,
                }
            })
            .collect();
        Self {
            space: l.space().clone(),
            length: l.length(),
            rows,
        }
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    /// Exactly one row per meaning.
    pub fn is_dense(&self) -> bool {
        let n = self.space.cardinality();
        if self.rows.len() != n {
            return false;
        }
        let mut seen = vec![false; n];
        for row in &self.rows {
            let code = self.space.encode(&row.features).expect("validated");
            if seen[code] {
                return false;
            }
            seen[code] = true;
        }
        true
    }

    /// Parse either the language table format (`f1,...,fK -> s1,...,sL`) or a
    /// CSV with header `f1,...,fK,s1,...,sL`.
    pub fn parse(text: &str) -> Result<Self> {
        let body = text.trim();
        if body.is_empty() {
            return Err(Error::Parse("empty log".into()));
        }
        let rows = if body.contains("->") {
            crate::lang::parse_table_rows(body)?
        } else {
            parse_csv_log(body)?
        };
        if rows.is_empty() {
            return Err(Error::Parse("no rows in log".into()));
        }
        let k = rows[0].0.values.len();
        let mut sizes = vec![1usize; k];
        for (fv, _) in &rows {
            if fv.values.len() != k {
                return Err(Error::Parse("ragged feature rows".into()));
            }
            for (i, &v) in fv.values.iter().enumerate() {
                sizes[i] = sizes[i].max(v + 1);
            }
        }
        MessageLog::new(FeatureSpace::new(sizes)?, rows)
    }
}

fn parse_csv_log(text: &str) -> Result<Vec<(FeatureVector, Message)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("missing CSV header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let k = cols.iter().take_while(|c| c.starts_with('f')).count();
    let l = cols.len() - k;
    if k == 0 || l == 0 || !cols[k..].iter().all(|c| c.starts_with('s')) {
        return Err(Error::Parse(
            "expected CSV header f1,...,fK,s1,...,sL".into(),
        ));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let vals: Vec<usize> = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if vals.len() != k + l {
            return Err(Error::Parse(format!("row {}: wrong arity", lineno + 1)));
        }
        rows.push((
            FeatureVector::new(vals[..k].to_vec()),
            Message::new(vals[k..].to_vec()),
        ));
    }
    Ok(rows)
}

/// The five evaluation numbers. Undefined metrics (zero variance or zero
/// entropy) are `None` and surface as empty CSV cells, never silent zeros.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub topo: Option<f64>,
    pub conf: f64,
    pub cont: f64,
    pub pos: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
}

/// Tie-rank convention for the random-language topo baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RankConvention {
    Min,
    Max,
    Avg,
}

impl std::str::FromStr for RankConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Self::Min),
            "max" => Ok(Self::Max),
            "avg" => Ok(Self::Avg),
            other => Err(Error::Parse(format!("unknown rank convention '{other}'"))),
        }
    }
}

/// Minimal edit distance with unit insert/delete/substitute costs.
pub fn levenshtein(a: &Message, b: &Message) -> usize {
    let (a, b) = (&a.symbols, &b.symbols);
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side has zero variance.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Domain(
            "spearman needs at least 2 observations".into(),
        ));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    Ok(pearson(&rx, &ry))
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &orig in &idx[i..=j] {
            ranks[orig] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Weighted Spearman over cells `(x, y, weight)` with count weights: tie
/// groups receive their weighted average rank.
fn spearman_weighted(cells: &[(f64, f64, f64)]) -> Option<f64> {
    let rank_map = |pick: fn(&(f64, f64, f64)) -> f64| -> HashMap<u64, f64> {
        let mut totals: Vec<(f64, f64)> = {
            let mut agg: HashMap<u64, f64> = HashMap::new();
            for cell in cells {
                *agg.entry(pick(cell).to_bits()).or_insert(0.0) += cell.2;
            }
            agg.into_iter()
                .map(|(k, w)| (f64::from_bits(k), w))
                .collect()
        };
        totals.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("no NaN"));
        let mut out = HashMap::new();
        let mut cum = 0.0;
        for (v, w) in totals {
            out.insert(v.to_bits(), cum + (w + 1.0) / 2.0);
            cum += w;
        }
        out
    };
    let rx = rank_map(|c| c.0);
    let ry = rank_map(|c| c.1);
    let total_w: f64 = cells.iter().map(|c| c.2).sum();
    let mx: f64 = cells.iter().map(|c| rx[&c.0.to_bits()] * c.2).sum::<f64>() / total_w;
    let my: f64 = cells.iter().map(|c| ry[&c.1.to_bits()] * c.2).sum::<f64>() / total_w;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for c in cells {
        let a = rx[&c.0.to_bits()] - mx;
        let b = ry[&c.1.to_bits()] - my;
        cov += a * b * c.2;
        vx += a * a * c.2;
        vy += b * b * c.2;
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Topographic similarity of a dense log: Spearman correlation between
/// pairwise Hamming distance on meanings and Levenshtein distance on
/// messages, over the joint uniform distribution of meaning pairs. Pairs
/// `(f, f)` belong to that distribution, so diagonal pairs enter with weight
/// 1 and unordered distinct pairs with weight 2.
pub fn topo(log: &MessageLog) -> Result<Option<f64>> {
    if !log.is_dense() {
        return Err(Error::Precondition(
            "topo requires a dense log (one row per meaning)".into(),
        ));
    }
    let n = log.rows().len();
    if n < 2 {
        return Err(Error::Precondition("topo needs |F| >= 2".into()));
    }
    let rows = log.rows();
    let mut cells: Vec<(f64, f64, f64)> = Vec::with_capacity(n * (n - 1) / 2 + 1);
    cells.push((0.0, 0.0, n as f64));
    for i in 0..n {
        for j in (i + 1)..n {
            let df = hamming(&rows[i].features.values, &rows[j].features.values)? as f64;
            let dm = levenshtein(&rows[i].message, &rows[j].message) as f64;
            cells.push((df, dm, 2.0));
        }
    }
    Ok(spearman_weighted(&cells))
}

/// Conflict count: minimum over position-to-feature assignments of how often
/// a symbol at a position diverges from its principal feature value.
/// Requires `L = K`; argmax ties in the principal meaning break to the lowest
/// value index (irrelevant to the score, which only needs the max count).
pub fn conflict_count(log: &MessageLog) -> Result<f64> {
    let k = log.space().k();
    if log.length() != k {
        return Err(Error::Domain(format!(
            "conflict count needs L = K (got L = {}, K = {k})",
            log.length()
        )));
    }
    let sizes = log.space().sizes();
    let mut best = f64::INFINITY;
    for phi_rank in 0..factorial(k) {
        let phi = permutation_at_rank(k, phi_rank);
        let mut score = 0.0;
        for j in 0..k {
            let feature = phi[j];
            // counts[symbol][value]
            let mut counts: HashMap<usize, Vec<f64>> = HashMap::new();
            for row in log.rows() {
                let s = row.message.symbols[j];
                let v = row.features.values[feature];
                counts.entry(s).or_insert_with(|| vec![0.0; sizes[feature]])[v] += row.weight;
            }
            for value_counts in counts.values() {
                let total: f64 = value_counts.iter().sum();
                let max = value_counts.iter().cloned().fold(0.0, f64::max);
                score += total - max;
            }
        }
        best = best.min(score);
    }
    Ok(best)
}

/// Context independence: for each feature value `f`, with `s^f` the symbol
/// maximizing `p(f|s)`, the mean of `p(s^f|f) * p(f|s^f)`. Symbol presence in
/// a message counts once regardless of multiplicity.
pub fn context_independence(log: &MessageLog) -> f64 {
    let k = log.space().k();
    let sizes = log.space().sizes();
    // weight totals
    let mut w_value: HashMap<(usize, usize), f64> = HashMap::new(); // (feature, value)
    let mut w_symbol: HashMap<usize, f64> = HashMap::new();
    let mut w_joint: HashMap<(usize, usize, usize), f64> = HashMap::new();
    for row in log.rows() {
        let mut present: Vec<usize> = row.message.symbols.clone();
        present.sort_unstable();
        present.dedup();
        for &s in &present {
            *w_symbol.entry(s).or_insert(0.0) += row.weight;
        }
        for (feat, &v) in row.features.values.iter().enumerate() {
            *w_value.entry((feat, v)).or_insert(0.0) += row.weight;
            for &s in &present {
                *w_joint.entry((feat, v, s)).or_insert(0.0) += row.weight;
            }
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for feat in 0..k {
        for v in 0..sizes[feat] {
            let wf = match w_value.get(&(feat, v)) {
                Some(&w) if w > 0.0 => w,
                _ => continue, // value never observed
            };
            count += 1;
            // s^f = argmax_s p(f|s), lowest symbol index on ties
            let mut best_s = None;
            let mut best_pfs = 0.0;
            let mut symbols: Vec<usize> = w_symbol.keys().cloned().collect();
            symbols.sort_unstable();
            for s in symbols {
                let ws = w_symbol[&s];
                let joint = w_joint.get(&(feat, v, s)).cloned().unwrap_or(0.0);
                let pfs = joint / ws;
                if pfs > best_pfs {
                    best_pfs = pfs;
                    best_s = Some(s);
                }
            }
            if let Some(s) = best_s {
                let joint = w_joint.get(&(feat, v, s)).cloned().unwrap_or(0.0);
                let psf = joint / wf;
                sum += psf * best_pfs;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn entropy(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            -p * p.ln()
        })
        .sum()
}

fn mutual_information(joint: &[Vec<f64>]) -> f64 {
    let total: f64 = joint.iter().flatten().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let rows: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..joint[0].len())
        .map(|j| joint.iter().map(|r| r[j]).sum())
        .collect();
    let mut mi = 0.0;
    for (i, row) in joint.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if w > 0.0 {
                let p = w / total;
                mi += p * (p * total * total / (rows[i] * cols[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Positional disentanglement: per message position, the gap between the
/// largest and second-largest plug-in mutual information with any feature,
/// normalized by the symbol entropy at that position; positions with zero
/// entropy are ignored. `None` when every position is ignored.
pub fn positional_disentanglement(log: &MessageLog) -> Result<Option<f64>> {
    let k = log.space().k();
    if k < 2 {
        return Err(Error::Domain(
            "positional disentanglement needs K >= 2".into(),
        ));
    }
    let sizes = log.space().sizes();
    let d = log
        .rows()
        .iter()
        .flat_map(|r| r.message.symbols.iter())
        .max()
        .map_or(1, |&m| m + 1);
    let mut total = 0.0;
    let mut used = 0usize;
    for j in 0..log.length() {
        let mut symbol_w = vec![0.0; d];
        for row in log.rows() {
            symbol_w[row.message.symbols[j]] += row.weight;
        }
        let h = entropy(&symbol_w);
        if h <= 0.0 {
            continue;
        }
        let mut infos: Vec<f64> = (0..k)
            .map(|feat| {
                let mut joint = vec![vec![0.0; sizes[feat]]; d];
                for row in log.rows() {
                    joint[row.message.symbols[j]][row.features.values[feat]] += row.weight;
                }
                mutual_information(&joint)
            })
            .collect();
        infos.sort_by(|a, b| b.partial_cmp(a).expect("no NaN"));
        total += (infos[0] - infos[1]) / h;
        used += 1;
    }
    Ok((used > 0).then(|| total / used as f64))
}

/// Mean per-feature correctness over prediction/truth rows.
pub fn accuracy(predictions: &[FeatureVector], truths: &[FeatureVector]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (p, t) in predictions.iter().zip(truths) {
        if p.values.len() != t.values.len() {
            return Err(Error::LengthMismatch {
                left: p.values.len(),
                right: t.values.len(),
            });
        }
        for (a, b) in p.values.iter().zip(&t.values) {
            total += 1;
            correct += usize::from(a == b);
        }
    }
    Ok(correct as f64 / total as f64)
}

/// All four compositionality metrics of one log (no accuracy).
pub fn compute_report(log: &MessageLog) -> Result<MetricsReport> {
    Ok(MetricsReport {
        topo: topo(log)?,
        conf: conflict_count(log)?,
        cont: context_independence(log),
        pos: positional_disentanglement(log)?,
        acc: None,
    })
}

fn rank_values(n: usize, rc: RankConvention) -> [f64; 3] {
    // distance distribution of an iid uniform pair on {0..n}^2
    let n4 = (n * n * n * n) as f64;
    let p0 = (n * n) as f64 / n4;
    let p1 = (2 * n * n * (n - 1)) as f64 / n4;
    let cum0 = p0;
    let cum1 = p0 + p1;
    match rc {
        RankConvention::Min => [0.0, cum0, cum1],
        RankConvention::Max => [cum0, cum1, 1.0],
        RankConvention::Avg => [cum0 / 2.0, (cum0 + cum1) / 2.0, (cum1 + 1.0) / 2.0],
    }
}

/// Closed-form expected topographic similarity of a uniformly random
/// bijective language on `{0..n}^2` with message length 2.
pub fn expected_topo_random(n: usize, rc: RankConvention) -> Result<f64> {
    if n < 2 {
        return Err(Error::Domain("closed form needs n >= 2".into()));
    }
    let nf = n as f64;
    let n4 = nf.powi(4);
    let p = [
        nf * nf / n4,
        2.0 * nf * nf * (nf - 1.0) / n4,
        nf * nf * (nf - 1.0) * (nf - 1.0) / n4,
    ];
    let r = rank_values(n, rc);
    let mean: f64 = (0..3).map(|i| p[i] * r[i]).sum();
    let var: f64 = (0..3).map(|i| p[i] * r[i] * r[i]).sum::<f64>() - mean * mean;
    let numerator = p[0] * r[0] * r[0]
        + (2.0 * p[1] / (nf + 1.0)) * r[1] * r[1]
        + (p[2] * (nf - 1.0) / (nf + 1.0)) * r[2] * r[2]
        + (4.0 * p[2] / (nf + 1.0)) * r[1] * r[2]
        - mean * mean;
    Ok(numerator / var)
}

fn random_bijection_topo<R: Rng>(n: usize, rng: &mut R) -> f64 {
    use rand::seq::SliceRandom;
    let space = FeatureSpace::uniform(2, n).expect("small space");
    let a = crate::lang::Alphabet::new(n).expect("n >= 2");
    let mut codes: Vec<usize> = (0..n * n).collect();
    codes.shuffle(rng);
    let l = Language::new(space, a, 2, codes).expect("valid table");
    topo(&MessageLog::from_language(&l))
        .expect("dense")
        .expect("bijective languages have message variance")
}

/// Empirical mean topo over uniformly random bijective languages on
/// `{0..n}^2`, with standard error (`None` when `trials = 1`).
pub fn monte_carlo_topo_random<R: Rng>(
    n: usize,
    trials: usize,
    rng: &mut R,
) -> Result<(f64, Option<f64>)> {
    if n < 2 {
        return Err(Error::Domain("needs n >= 2".into()));
    }
    if trials == 0 {
        return Err(Error::Domain("needs at least one trial".into()));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let t = random_bijection_topo(n, rng);
        sum += t;
        sum_sq += t * t;
    }
    let mean = sum / trials as f64;
    let stderr = (trials > 1).then(|| {
        let var = (sum_sq - sum * sum / trials as f64) / (trials as f64 - 1.0);
        (var.max(0.0) / trials as f64).sqrt()
    });
    Ok((mean, stderr))
}

/// Exact mean topo over all `(n^2)!` bijective languages; guarded to tiny
/// instances (n = 2 in practice).
pub fn exhaustive_topo_random_mean(n: usize) -> Result<f64> {
    let space = FeatureSpace::uniform(2, n)?;
    let a = crate::lang::Alphabet::new(n)?;
    let langs = crate::lang::enumerate_bijective_languages(&space, a)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for l in langs {
        sum += topo(&MessageLog::from_language(&l))?
            .ok_or_else(|| Error::Numeric("undefined topo on a bijection".into()))?;
        count += 1;
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::Alphabet;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn msg(s: &[usize]) -> Message {
        Message::new(s.to_vec())
    }

    fn fv(v: &[usize]) -> FeatureVector {
        FeatureVector::new(v.to_vec())
    }

    fn compositional_language(k: usize, m: usize) -> Language {
        let space = FeatureSpace::uniform(k, m).unwrap();
        Language::from_fn(space, Alphabet::new(m).unwrap(), k, |f| {
            Message::new(f.values.clone())
        })
        .unwrap()
    }

    fn fig1b_log() -> MessageLog {
        let space = FeatureSpace::uniform(2, 2).unwrap();
        let l = Language::new(space, Alphabet::new(2).unwrap(), 2, vec![0, 3, 1, 2]).unwrap();
        MessageLog::from_language(&l)
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein(&msg(&[0, 0]), &msg(&[0, 0])), 0);
        assert_eq!(levenshtein(&msg(&[0, 0]), &msg(&[0, 1])), 1);
        assert_eq!(levenshtein(&msg(&[0, 1, 2]), &msg(&[1, 2])), 1);
    }

    #[test]
    fn levenshtein_equals_hamming_exhaustive_small() {
        for d in 2..=3usize {
            for a in 0..d * d {
                for b in 0..d * d {
                    let ma = crate::lang::decode_message(a, d, 2);
                    let mb = crate::lang::decode_message(b, d, 2);
                    assert_eq!(
                        levenshtein(&ma, &mb),
                        hamming(&ma.symbols, &mb.symbols).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn spearman_basics() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = vec![2.0, 4.0, 6.0, 8.0];
        assert_abs_diff_eq!(spearman(&x, &y).unwrap().unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(spearman(&x, &neg).unwrap().unwrap(), -1.0, epsilon = 1e-12);
        let tied = vec![1.0, 2.0, 2.0, 4.0];
        assert_abs_diff_eq!(
            spearman(&tied, &tied).unwrap().unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).unwrap().is_none());
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn topo_compositional_is_one() {
        for m in [2usize, 3, 4] {
            let l = compositional_language(2, m);
            let log = MessageLog::from_language(&l);
            assert_abs_diff_eq!(topo(&log).unwrap().unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn topo_constant_messages_is_undefined() {
        let space = FeatureSpace::uniform(2, 2).unwrap();
        let rows = space.vectors().map(|f| (f, msg(&[0, 0]))).collect();
        let log = MessageLog::new(space, rows).unwrap();
        assert!(topo(&log).unwrap().is_none());
    }

    #[test]
    fn topo_requires_dense_log() {
        let space = FeatureSpace::uniform(2, 2).unwrap();
        let log = MessageLog::new(
            space,
            vec![(fv(&[0, 0]), msg(&[0, 0])), (fv(&[0, 1]), msg(&[0, 1]))],
        )
        .unwrap();
        assert!(topo(&log).is_err());
    }

    #[test]
    fn conflict_count_examples() {
        // compositional language on a dense log
        let l = compositional_language(2, 3);
        let log = MessageLog::from_language(&l);
        assert_eq!(conflict_count(&log).unwrap(), 0.0);

        // single row can never conflict
        let space = FeatureSpace::uniform(2, 2).unwrap();
        let single = MessageLog::new(space, vec![(fv(&[1, 0]), msg(&[0, 1]))]).unwrap();
        assert_eq!(conflict_count(&single).unwrap(), 0.0);

        // Fig 1b on the dense 4-row log: best assignment still pays 2
        assert_eq!(conflict_count(&fig1b_log()).unwrap(), 2.0);
    }

    #[test]
    fn conflict_count_requires_l_equals_k() {
        let space = FeatureSpace::uniform(2, 2).unwrap();
        let log = MessageLog::new(space, vec![(fv(&[0, 0]), msg(&[0, 0, 0]))]).unwrap();
        assert!(conflict_count(&log).is_err());
    }

    #[test]
    fn conflict_count_invariant_under_position_swap() {
        let log = fig1b_log();
        let swapped_rows: Vec<(FeatureVector, Message)> = log
            .rows()
            .iter()
            .map(|r| {
                let mut s = r.message.symbols.clone();
                s.swap(0, 1);
                (r.features.clone(), Message::new(s))
            })
            .collect();
        let swapped = MessageLog::new(log.space().clone(), swapped_rows).unwrap();
        assert_eq!(
            conflict_count(&log).unwrap(),
            conflict_count(&swapped).unwrap()
        );
    }

    #[test]
    fn context_independence_perfect_code() {
        // K=1, one symbol per value
        let l = compositional_language(1, 4);
        // conflict/pos need K >= 2 but cont works on K = 1
        let log = MessageLog::from_language(&l);
        assert_abs_diff_eq!(context_independence(&log), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn context_independence_constant_message_toy() {
        // 4 rows, K=1 with 2 values, constant message: p(s|f) = 1 and
        // p(f|s) = 1/2 for both values, so cont = 0.5.
        let space = FeatureSpace::uniform(1, 2).unwrap();
        let rows = vec![
            (fv(&[0]), msg(&[0])),
            (fv(&[0]), msg(&[0])),
            (fv(&[1]), msg(&[0])),
            (fv(&[1]), msg(&[0])),
        ];
        let log = MessageLog::new(space, rows).unwrap();
        assert_abs_diff_eq!(context_independence(&log), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn positional_disentanglement_compositional_is_one() {
        let l = compositional_language(2, 4);
        let log = MessageLog::from_language(&l);
        assert_abs_diff_eq!(
            positional_disentanglement(&log).unwrap().unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn positional_disentanglement_edge_cases() {
        // constant message: all positions have zero entropy
        let space = FeatureSpace::uniform(2, 2).unwrap();
        let rows = space.vectors().map(|f| (f, msg(&[1, 1]))).collect();
        let log = MessageLog::new(space, rows).unwrap();
        assert!(positional_disentanglement(&log).unwrap().is_none());

        // K = 1 is a domain error
        let space = FeatureSpace::uniform(1, 2).unwrap();
        let log =
            MessageLog::new(space, vec![(fv(&[0]), msg(&[0])), (fv(&[1]), msg(&[1]))]).unwrap();
        assert!(positional_disentanglement(&log).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let truths = vec![fv(&[0, 1]), fv(&[1, 1])];
        assert_eq!(accuracy(&truths, &truths).unwrap(), 1.0);
        let half = vec![fv(&[0, 0]), fv(&[0, 1])];
        assert_eq!(accuracy(&half, &truths).unwrap(), 0.5);
        let disjoint = vec![fv(&[1, 0]), fv(&[0, 0])];
        assert_eq!(accuracy(&disjoint, &truths).unwrap(), 0.0);
        assert!(accuracy(&truths, &half[..1].to_vec()).is_err());
    }

    #[test]
    fn expected_topo_matches_exhaustive_at_n2() {
        let exact = exhaustive_topo_random_mean(2).unwrap();
        let closed = expected_topo_random(2, RankConvention::Avg).unwrap();
        assert_abs_diff_eq!(exact, closed, epsilon = 1e-12);
        assert_abs_diff_eq!(closed, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn expected_topo_n5_below_reference_bound() {
        for rc in [
            RankConvention::Min,
            RankConvention::Max,
            RankConvention::Avg,
        ] {
            let v = expected_topo_random(5, rc).unwrap();
            assert!(v <= 0.2, "{rc:?} gives {v}");
        }
        // the three conventions are genuinely distinct curves
        let lo = expected_topo_random(5, RankConvention::Min).unwrap();
        let mid = expected_topo_random(5, RankConvention::Avg).unwrap();
        let hi = expected_topo_random(5, RankConvention::Max).unwrap();
        assert!(lo < mid && mid < hi);
    }

    #[test]
    fn monte_carlo_agrees_with_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (mean, stderr) = monte_carlo_topo_random(5, 4000, &mut rng).unwrap();
        let se = stderr.unwrap();
        let closed = expected_topo_random(5, RankConvention::Avg).unwrap();
        assert!(
            (mean - closed).abs() < 3.0 * se,
            "mean {mean} closed {closed} se {se}"
        );
        // single trial has no stderr
        let (_, none) = monte_carlo_topo_random(3, 1, &mut rng).unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn log_parsing_both_formats() {
        let arrow = "0,0 -> 1,2\n0,1 -> 1,0\n1,0 -> 0,2\n1,1 -> 0,0\n";
        let log = MessageLog::parse(arrow).unwrap();
        assert_eq!(log.rows().len(), 4);
        assert!(log.is_dense());

        let csv = "f1,f2,s1,s2\n0,0,1,2\n0,1,1,0\n1,0,0,2\n1,1,0,0\n";
        let log2 = MessageLog::parse(csv).unwrap();
        assert_eq!(log2.rows().len(), 4);
        assert_eq!(log2.rows()[2].message.symbols, vec![0, 2]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn metric_ranges_on_random_logs(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let space = FeatureSpace::uniform(2, 3).unwrap();
            let rows: Vec<(FeatureVector, Message)> = space
                .vectors()
                .map(|f| {
                    let m = Message::new(vec![
                        rng.random_range(0..4usize),
                        rng.random_range(0..4usize),
                    ]);
                    (f, m)
                })
                .collect();
            let log = MessageLog::new(space, rows).unwrap();
            if let Some(t) = topo(&log).unwrap() {
                prop_assert!((-1.0..=1.0 + 1e-12).contains(&t));
            }
            let conf = conflict_count(&log).unwrap();
            prop_assert!(conf >= 0.0);
            let cont = context_independence(&log);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&cont));
            if let Some(p) = positional_disentanglement(&log).unwrap() {
                prop_assert!((0.0..=1.0 + 1e-9).contains(&p));
            }
        }
    }
}
