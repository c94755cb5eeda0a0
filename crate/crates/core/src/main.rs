//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 failed verification or failed runs, 2 usage or
//! config errors. `EMCOMM_WORKERS` caps the worker pool.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use emcomm::agents::{train_run, TrainConfig};
use emcomm::experiments::{rows_to_csv, run_sweep, verify_all, ExperimentConfig, SweepRow};
use emcomm::lang::{Alphabet, FeatureSpace};
use emcomm::losses::{verify_theorem2, PenaltyH};
use emcomm::metrics::{expected_topo_random, monte_carlo_topo_random, MessageLog, RankConvention};

#[derive(Parser)]
#[command(
    name = "emcomm",
    about = "Signaling games over noisy channels",
    version
)]
struct Cli {
    /// Emit machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate all bijective languages on small instances and check that
    /// exactly the compositional ones minimize the expected loss.
    VerifyOptimality,
    /// Run every analytic verification (pushforward, optimality,
    /// random-topo baseline).
    VerifyAll,
    /// Closed-form expected topographic similarity of a random bijective
    /// language on an n×n meaning space.
    ExpectedTopo {
        #[arg(long)]
        n: usize,
        /// Tie-rank convention: min, max, or avg.
        #[arg(long, default_value = "avg")]
        ranks: RankConvention,
        /// Also cross-check with this many Monte Carlo trials.
        #[arg(long)]
        mc: Option<usize>,
    },
    /// Train one sender/receiver pair and write its evaluation trajectory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train seeds × noise levels in parallel and aggregate with bootstrap
    /// confidence intervals.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for sweep.csv and per-metric plot data.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compositionality metrics of a message log
    /// (`f1,...,fK -> s1,...,sL` lines or CSV with an f*/s* header).
    Metrics {
        #[arg(long)]
        log: PathBuf,
    },
}

fn read_config<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn init_workers() {
    if let Ok(n) = std::env::var("EMCOMM_WORKERS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, emcomm::Error> {
    match cli.command {
        Command::VerifyOptimality => {
            let mut pass = true;
            let mut reports = Vec::new();
            for (m, eps, want_argmin) in [(2usize, 0.1, 8usize), (2, 0.3, 8), (3, 0.2, 72)] {
                let space = FeatureSpace::uniform(2, m)?;
                let r =
                    verify_theorem2(&space, Alphabet::new(m)?, eps, PenaltyH::LinearNormalized)?;
                pass &= r.argmin_all_compositional
                    && r.compositional_all_argmin
                    && r.argmin_count == want_argmin;
                if !cli.json {
                    println!(
                        "(K=2, m={m}, eps={eps}): argmin {}/{} languages, min loss {:.12} \
                         (closed form {:.12}), compositional-iff-optimal: {}",
                        r.argmin_count,
                        r.languages_scored,
                        r.min_loss,
                        r.closed_form_min,
                        r.argmin_all_compositional && r.compositional_all_argmin
                    );
                }
                reports.push(r);
            }
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&reports)?);
            }
            Ok(if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::VerifyAll => {
            let report = verify_all()?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                for c in &report.checks {
                    println!(
                        "[{}] {}: {}",
                        if c.pass { "PASS" } else { "FAIL" },
                        c.name,
                        c.detail
                    );
                }
            }
            Ok(if report.all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::ExpectedTopo { n, ranks, mc } => {
            let value = expected_topo_random(n, ranks)?;
            let mc_result = match mc {
                Some(trials) => {
                    let mut rng = rand::SeedableRng::seed_from_u64(0);
                    let (mean, se) =
                        monte_carlo_topo_random::<rand_chacha::ChaCha8Rng>(n, trials, &mut rng)?;
                    Some((mean, se))
                }
                None => None,
            };
            if cli.json {
                let mut doc = serde_json::json!({"n": n, "ranks": ranks, "value": value});
                if let Some((mean, se)) = mc_result {
                    doc["monte_carlo"] = serde_json::json!({"mean": mean, "stderr": se});
                }
                println!("{}", serde_json::to_string_pretty(&doc)?);
            } else {
                println!("expected topo (n={n}, ranks {ranks:?}): {value:.6}");
                if let Some((mean, se)) = mc_result {
                    match se {
                        Some(se) => println!("monte carlo: {mean:.6} ± {se:.6}"),
                        None => println!("monte carlo: {mean:.6}"),
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { config, seed, out } => {
            let mut cfg: TrainConfig = match read_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(2));
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = train_run(&cfg)?;
            let rows: Vec<SweepRow> = outcome
                .trajectory
                .into_iter()
                .map(|(step, report)| SweepRow {
                    seed: cfg.seed,
                    eps: cfg.eps,
                    eps0: cfg.eps,
                    t: 0,
                    step,
                    report,
                })
                .collect();
            let csv = rows_to_csv(&rows);
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, out } => {
            let mut cfg: ExperimentConfig = match read_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(2));
                }
            };
            if let Some(dir) = out {
                cfg.out_dir = Some(dir);
            }
            let result = run_sweep(&cfg)?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&result.aggregates)?);
            } else {
                for a in &result.aggregates {
                    println!(
                        "eps {:.2} {}: {:.4} [{:.4}, {:.4}] (n={})",
                        a.eps, a.metric, a.mean, a.lo, a.hi, a.n
                    );
                }
            }
            for f in &result.failures {
                eprintln!("run failed (eps {}, seed {}): {}", f.eps, f.seed, f.error);
            }
            Ok(if result.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Metrics { log } => {
            let text = match std::fs::read_to_string(&log) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", log.display());
                    return Ok(ExitCode::from(2));
                }
            };
            let parsed = match MessageLog::parse(&text) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(2));
                }
            };
            let report = emcomm::metrics::compute_report(&parsed)?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                let show = |v: Option<f64>| {
                    v.map(|x| format!("{x:.6}"))
                        .unwrap_or_else(|| "undefined".into())
                };
                println!("topo: {}", show(report.topo));
                println!("conf: {:.6}", report.conf);
                println!("cont: {:.6}", report.cont);
                println!("pos:  {}", show(report.pos));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    init_workers();
    let cli = Cli::parse(); // clap exits with code 2 on usage errors
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
