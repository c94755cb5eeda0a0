//! Experiment harness: noise sweeps, variable-noise schedules, scrambled
//! labels, diagonal holdout with fine-tuning, bootstrap confidence
//! intervals, and deterministic CSV/plot-data emission.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{TrainConfig, Trainer};
use crate::channel::{noise_matrix, ChannelSpec};
use crate::error::{Error, Result};
use crate::lang::{Alphabet, FeaturePermutation, FeatureSpace};
use crate::losses::{verify_theorem2, OracleReport, PenaltyH};
use crate::metrics::{
    exhaustive_topo_random_mean, expected_topo_random, monte_carlo_topo_random, MetricsReport,
    RankConvention,
};

/// Step noise schedule: `eps0` before step `T`, `eps_t` from `T` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub eps0: f64,
    pub eps_t: f64,
    pub t: u64,
}

impl NoiseSchedule {
    pub fn constant(eps: f64) -> Result<Self> {
        Self::new(eps, eps, 0)
    }

    pub fn new(eps0: f64, eps_t: f64, t: u64) -> Result<Self> {
        for v in [eps0, eps_t] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Domain(format!("noise level {v} outside [0, 1)")));
            }
        }
        Ok(Self { eps0, eps_t, t })
    }
}

/// Right-continuous step function: `eps0` on `[0, T)`, `eps_t` afterwards.
pub fn schedule_noise(sched: &NoiseSchedule, step: u64) -> f64 {
    if step < sched.t {
        sched.eps0
    } else {
        sched.eps_t
    }
}

/// Seed specification: a count (seeds `0..n`) or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn expand(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

fn default_resamples() -> usize {
    4000
}

/// One experiment: a training recipe replicated over seeds and noise levels,
/// optionally with a noise switch, scrambled labels, or a held-out diagonal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub seeds: Seeds,
    /// Noise levels swept; single-element grid for plain runs.
    #[serde(default)]
    pub eps_grid: Option<Vec<f64>>,
    /// Initial level and switch step; the swept level plays `eps_t`.
    #[serde(default)]
    pub schedule: Option<NoiseSchedule>,
    #[serde(default)]
    pub scramble_labels: bool,
    #[serde(default)]
    pub scramble_seed: u64,
    #[serde(default)]
    pub holdout_diagonal: bool,
    #[serde(default)]
    pub finetune_steps: u64,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(train: TrainConfig, seeds: Seeds) -> Self {
        Self {
            train,
            seeds,
            eps_grid: None,
            schedule: None,
            scramble_labels: false,
            scramble_seed: 0,
            holdout_diagonal: false,
            finetune_steps: 0,
            bootstrap_resamples: default_resamples(),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds.expand().is_empty() {
            return Err(Error::Domain("need at least one seed".into()));
        }
        for &e in self.grid().iter() {
            if !(0.0..1.0).contains(&e) {
                return Err(Error::Domain(format!(
                    "grid noise level {e} outside [0, 1)"
                )));
            }
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::Domain("bootstrap needs resamples ≥ 1".into()));
        }
        Ok(())
    }

    /// Swept noise levels; the reference grid when unset.
    pub fn grid(&self) -> Vec<f64> {
        self.eps_grid
            .clone()
            .unwrap_or_else(|| (0..=15).map(|i| i as f64 * 0.02).collect())
    }
}

/// Uniform permutation of meaning codes and the induced relabeling
/// `f ↦ decode(π(encode(f)))`.
pub fn scramble_labels(
    space: &FeatureSpace,
    scramble_seed: u64,
) -> (FeaturePermutation, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(scramble_seed);
    let pi = FeaturePermutation::random(space.cardinality(), &mut rng);
    let map = (0..space.cardinality()).map(|c| pi.apply(c)).collect();
    (pi, map)
}

/// Remove the diagonal of a square K=2 space: held-out `{(v,v)}`, the rest
/// trains.
pub fn holdout_diagonal(space: &FeatureSpace) -> Result<(Vec<usize>, Vec<usize>)> {
    let m = space.uniform_size().ok_or_else(|| {
        Error::Precondition("diagonal holdout needs equal feature cardinalities".into())
    })?;
    if space.k() != 2 {
        return Err(Error::Precondition(
            "diagonal holdout is defined for K = 2".into(),
        ));
    }
    let mut train = Vec::with_capacity(m * m - m);
    let mut held = Vec::with_capacity(m);
    for code in 0..space.cardinality() {
        let f = space.decode(code);
        if f.values[0] == f.values[1] {
            held.push(code);
        } else {
            train.push(code);
        }
    }
    Ok((train, held))
}

/// Percentile bootstrap of the mean: `(mean, lo, hi)` at the given level.
pub fn bootstrap_ci<R: Rng>(
    values: &[f64],
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::Domain("bootstrap of an empty sample".into()));
    }
    if !(0.0..1.0).contains(&level) || resamples == 0 {
        return Err(Error::Domain("invalid bootstrap parameters".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let s: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
        means.push(s / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let q = |p: f64| means[((resamples - 1) as f64 * p).round() as usize];
    let alpha = (1.0 - level) / 2.0;
    Ok((mean, q(alpha).min(mean), q(1.0 - alpha).max(mean)))
}

/// One evaluation point of one run.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub eps: f64,
    pub eps0: f64,
    pub t: u64,
    pub step: u64,
    #[serde(flatten)]
    pub report: MetricsReport,
}

/// Bootstrap summary of one metric at one noise level.
#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub eps: f64,
    pub metric: &'static str,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunFailure {
    pub eps: f64,
    pub seed: u64,
    pub error: String,
}

/// All rows of a sweep, canonically sorted, plus per-level bootstrap CIs of
/// the final-window summaries and any per-run failures.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Final-window summary per (eps, seed), same sort order.
    pub summaries: Vec<SweepRow>,
    pub aggregates: Vec<Aggregate>,
    pub failures: Vec<RunFailure>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Deterministic CSV over evaluation rows; undefined metrics are empty
/// cells.
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("seed,eps,eps0,T,step,topo,conf,cont,pos,acc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{},{},{:.6},{:.6},{},{}",
            r.seed,
            r.eps,
            r.eps0,
            r.t,
            r.step,
            fmt_opt(r.report.topo),
            r.report.conf,
            r.report.cont,
            fmt_opt(r.report.pos),
            fmt_opt(r.report.acc),
        );
    }
    out
}

impl SweepResult {
    /// Deterministic CSV of every evaluation point.
    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }

    /// Tabular plot data for one metric: `eps mean lo hi` per noise level.
    pub fn to_plot_data(&self, metric: &str) -> String {
        let mut out = String::from("# eps mean lo hi\n");
        for a in self.aggregates.iter().filter(|a| a.metric == metric) {
            let _ = writeln!(out, "{:.6} {:.6} {:.6} {:.6}", a.eps, a.mean, a.lo, a.hi);
        }
        out
    }
}

/// Train one (eps, seed) cell of a sweep and return its evaluation
/// trajectory plus the final-window summary.
fn run_cell(cfg: &ExperimentConfig, eps: f64, seed: u64) -> Result<(Vec<SweepRow>, SweepRow)> {
    let mut train = cfg.train.clone();
    train.seed = seed;
    train.eps = eps;
    let sched = match cfg.schedule {
        Some(s) => NoiseSchedule::new(s.eps0, eps, s.t)?,
        None => NoiseSchedule::constant(eps)?,
    };
    let mut trainer = Trainer::new(train)?;
    if cfg.scramble_labels {
        let (_, map) = scramble_labels(trainer.space(), cfg.scramble_seed.wrapping_add(seed));
        trainer.set_label_map(map)?;
    }
    if cfg.holdout_diagonal {
        let (train_codes, _) = holdout_diagonal(trainer.space())?;
        trainer.restrict_train_codes(train_codes)?;
    }
    let outcome = trainer.run(|step| schedule_noise(&sched, step))?;
    let row = |step: u64, report: MetricsReport| SweepRow {
        seed,
        eps,
        eps0: sched.eps0,
        t: sched.t,
        step,
        report,
    };
    let rows = outcome
        .trajectory
        .into_iter()
        .map(|(step, r)| row(step, r))
        .collect();
    let summary = row(cfg.train.steps, outcome.summary);
    Ok((rows, summary))
}

/// Run seeds × noise levels in parallel and aggregate. Output is a pure
/// function of the config: results are collected keyed by cell and sorted
/// canonically, so worker count and scheduling never change a byte.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let grid = cfg.grid();
    let seeds = cfg.seeds.expand();
    let cells: Vec<(f64, u64)> = grid
        .iter()
        .flat_map(|&e| seeds.iter().map(move |&s| (e, s)))
        .collect();

    let outcomes: Vec<(f64, u64, Result<(Vec<SweepRow>, SweepRow)>)> = cells
        .into_par_iter()
        .map(|(eps, seed)| (eps, seed, run_cell(cfg, eps, seed)))
        .collect();

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for (eps, seed, res) in outcomes {
        match res {
            Ok((r, s)) => {
                rows.extend(r);
                summaries.push(s);
            }
            Err(e) => failures.push(RunFailure {
                eps,
                seed,
                error: e.to_string(),
            }),
        }
    }
    let key = |r: &SweepRow| (r.eps, r.seed, r.step);
    rows.sort_by(|a, b| key(a).partial_cmp(&key(b)).expect("no NaN"));
    summaries.sort_by(|a, b| key(a).partial_cmp(&key(b)).expect("no NaN"));
    failures.sort_by(|a, b| {
        (a.eps, a.seed)
            .partial_cmp(&(b.eps, b.seed))
            .expect("no NaN")
    });

    let mut aggregates = Vec::new();
    for &eps in &grid {
        let cell: Vec<&SweepRow> = summaries.iter().filter(|r| r.eps == eps).collect();
        if cell.is_empty() {
            continue;
        }
        let metrics: [(&'static str, Vec<f64>); 5] = [
            ("topo", cell.iter().filter_map(|r| r.report.topo).collect()),
            ("conf", cell.iter().map(|r| r.report.conf).collect()),
            ("cont", cell.iter().map(|r| r.report.cont).collect()),
            ("pos", cell.iter().filter_map(|r| r.report.pos).collect()),
            ("acc", cell.iter().filter_map(|r| r.report.acc).collect()),
        ];
        for (name, values) in metrics {
            if values.is_empty() {
                continue;
            }
            // fresh generator per cell so aggregation is order-independent
            let mut rng = ChaCha8Rng::seed_from_u64((eps * 1e6).round() as u64);
            let (mean, lo, hi) = bootstrap_ci(&values, cfg.bootstrap_resamples, 0.95, &mut rng)?;
            aggregates.push(Aggregate {
                eps,
                metric: name,
                mean,
                lo,
                hi,
                n: values.len(),
            });
        }
    }

    let result = SweepResult {
        rows,
        summaries,
        aggregates,
        failures,
    };
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.csv"), result.to_csv())?;
        for metric in ["topo", "conf", "cont", "pos", "acc"] {
            std::fs::write(
                dir.join(format!("{metric}.dat")),
                result.to_plot_data(metric),
            )?;
        }
    }
    Ok(result)
}

/// Continue a holdout run on the full meaning space (or the training set
/// only, when `include_heldout` is false), evaluating on all of F after
/// every update for the first 50 updates and every 10 afterwards. Update 0
/// is the zero-shot evaluation.
pub fn finetune(
    checkpoint: &crate::agents::Checkpoint,
    steps: u64,
    include_heldout: bool,
    eps: f64,
) -> Result<Vec<(u64, MetricsReport)>> {
    let mut trainer = Trainer::from_checkpoint(checkpoint)?;
    if include_heldout {
        let all: Vec<usize> = (0..trainer.space().cardinality()).collect();
        trainer.restrict_train_codes(all)?;
    }
    let mut trajectory = vec![(0, trainer.evaluate(eps)?)];
    for update in 1..=steps {
        trainer.step_with_eps(eps)?;
        if update <= 50 || update % 10 == 0 || update == steps {
            trajectory.push((update, trainer.evaluate(eps)?));
        }
    }
    Ok(trajectory)
}

/// One verification check: name, pass/fail, and a human-readable detail.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Combined report of the analytic verifications: pushforward invariance,
/// exhaustive optimality at (K=2, m=2) and (K=2, m=3), and the random-topo
/// closed form against enumeration and Monte Carlo.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub oracle_m2: Vec<OracleReport>,
    pub oracle_m3: OracleReport,
    pub all_pass: bool,
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        pass,
        detail,
    }
}

fn oracle_check(
    name: &str,
    r: &OracleReport,
    want_argmin: usize,
    want_min: f64,
    tol: f64,
) -> Check {
    let pass = r.argmin_all_compositional
        && r.compositional_all_argmin
        && r.per_f_constant_on_argmin
        && r.argmin_count == want_argmin
        && (r.min_loss - want_min).abs() <= tol
        && (r.closed_form_min - want_min).abs() <= tol;
    check(
        name,
        pass,
        format!(
            "argmin {}/{} languages, min {:.12}, expected {} / {:.12}",
            r.argmin_count, r.languages_scored, r.min_loss, want_argmin, want_min
        ),
    )
}

/// Run every analytic verification; `all_pass` drives the CLI exit code.
pub fn verify_all() -> Result<VerifyReport> {
    let mut checks = Vec::new();

    // Theorem 1: compositional relabelings push the uniform meaning
    // distribution to itself.
    let mut rng = ChaCha8Rng::seed_from_u64(0xF00D);
    let mut push_ok = true;
    for m in [2usize, 4] {
        let space = FeatureSpace::uniform(2, m)?;
        for _ in 0..100 {
            let p = FeaturePermutation::random(space.cardinality(), &mut rng);
            if !crate::lang::pushforward_uniform_is_uniform(&space, &p) {
                push_ok = false;
            }
        }
    }
    checks.push(check(
        "pushforward_uniform",
        push_ok,
        "100 random permutations at |F| ∈ {4, 16}".into(),
    ));

    // noise matrix normalization
    let w = noise_matrix(&ChannelSpec::symbol_replacement(0.2, 5)?);
    checks.push(check(
        "noise_matrix_rows_normalized",
        w.rows_normalized(1e-12),
        "W rows sum to 1 at (eps=0.2, d=5)".into(),
    ));

    // Theorem 2 by enumeration
    let space2 = FeatureSpace::uniform(2, 2)?;
    let mut oracle_m2 = Vec::new();
    for eps in [0.1, 0.3] {
        let r = verify_theorem2(&space2, Alphabet::new(2)?, eps, PenaltyH::LinearNormalized)?;
        checks.push(oracle_check(
            &format!("theorem2_m2_eps{eps}"),
            &r,
            8,
            eps,
            1e-12,
        ));
        oracle_m2.push(r);
    }
    let space3 = FeatureSpace::uniform(2, 3)?;
    let oracle_m3 = verify_theorem2(&space3, Alphabet::new(3)?, 0.2, PenaltyH::LinearNormalized)?;
    checks.push(oracle_check(
        "theorem2_m3_eps0.2",
        &oracle_m3,
        72,
        0.2,
        1e-10,
    ));
    checks.push(check(
        "theorem2_m3_exhaustive",
        oracle_m3.languages_scored == 362_880,
        format!("languages_scored = {}", oracle_m3.languages_scored),
    ));

    // random-language topo baseline: exact at n=2, Monte Carlo at 3, 4, 5
    let exact = exhaustive_topo_random_mean(2)?;
    let closed2 = expected_topo_random(2, RankConvention::Avg)?;
    checks.push(check(
        "expected_topo_n2_exact",
        (exact - closed2).abs() < 1e-12,
        format!("enumerated {exact:.12} vs closed form {closed2:.12}"),
    ));
    for n in [3usize, 4, 5] {
        let closed = expected_topo_random(n, RankConvention::Avg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + n as u64);
        let (mc, se) = monte_carlo_topo_random(n, 4000, &mut rng)?;
        let se = se.expect("trials > 1");
        checks.push(check(
            &format!("expected_topo_n{n}_monte_carlo"),
            (mc - closed).abs() < 3.0 * se,
            format!("MC {mc:.4} ± {se:.4} vs closed form {closed:.4}"),
        ));
    }

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport {
        checks,
        oracle_m2,
        oracle_m3,
        all_pass,
    })
}
