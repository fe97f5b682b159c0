//! `slokit` command-line front end.
//!
//! Exit status: 0 on success, 1 when configuration or input is rejected,
//! 2 when a run fails.

use std::fs;
use std::io::Write;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use slokit::crypto::Hash32;
use slokit::harness::{self, BenchSettings, HarnessError, ScenarioConfig, Stage};
use slokit::ledger::{read_chain_dump, Block};
use slokit::{metrics, nft, Duration};

#[derive(Parser)]
#[command(name = "slokit", version, about = "SLI discovery, SLO generation, ledger provenance and budget monitoring")]
struct Cli {
    /// Scenario file, or the name of a built-in scenario such as `default`.
    #[arg(long, global = true, default_value = "default")]
    config: PathBuf,
    /// Artifact directory; overrides the scenario's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the synthetic services and write their trace and a metrics snapshot.
    Simulate {
        #[arg(long)]
        duration: Option<Duration>,
    },
    /// Deploy the services and scrape them over HTTP.
    Scrape,
    /// Train the violation predictor across peers and rank candidate SLIs.
    Discover,
    /// Generate SLOs and alert rules from the ranking.
    Generate,
    /// Mint SLI and SLO tokens.
    Mint,
    /// Verify a token against a chain dump.
    Verify {
        token_id: String,
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// List tokens for a service from a chain dump.
    Audit {
        #[arg(long)]
        service: String,
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// Evaluate budgets and alerts; `--serve` switches to live wall-clock mode with the HTTP API.
    Monitor {
        #[arg(long)]
        serve: Option<String>,
        /// How long live mode runs.
        #[arg(long = "for", default_value = "60s")]
        run_for: Duration,
    },
    /// Block acceptance latency for one peer count or a range such as `1-7`.
    BenchLedger {
        #[arg(long)]
        peers: Option<String>,
        #[arg(long, default_value_t = 50)]
        latency_ms: u64,
        #[arg(long, default_value_t = 20.0)]
        tx_rate: f64,
        #[arg(long, default_value = "30s")]
        duration: Duration,
    },
    /// The full pipeline.
    Run,
}

// Writes to stdout, ignoring a closed pipe so `slokit audit | head` exits quietly.
macro_rules! out {
    ($($t:tt)*) => {{ let _ = writeln!(std::io::stdout().lock(), $($t)*); }};
}
macro_rules! out_raw {
    ($($t:tt)*) => {{ let _ = write!(std::io::stdout().lock(), $($t)*); }};
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_validation() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn out_dir(cli: &Cli, cfg: &ScenarioConfig) -> PathBuf {
    cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("slokit-out").join(&cfg.name))
}

fn load_chain(path: &Path) -> Result<Vec<Block>, Failure> {
    let f = fs::File::open(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    read_chain_dump(BufReader::new(f)).map_err(runtime)
}

fn parse_peers(s: Option<&str>) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::Invalid(format!("--peers expects N or A-B with 1 <= A <= B <= {}", slokit::ledger::MAX_PEERS));
    let v: Vec<usize> = match s {
        None => (1..=slokit::ledger::MAX_PEERS).collect(),
        Some(s) => match s.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                (a..=b).collect()
            }
            None => vec![s.parse().map_err(|_| bad())?],
        },
    };
    if v.is_empty() || v.iter().any(|&n| n == 0 || n > slokit::ledger::MAX_PEERS) {
        return Err(bad());
    }
    Ok(v)
}

fn print_json<T: serde::Serialize>(v: &T) {
    out!("{}", slokit::canonical::to_string(v).expect("output serializes"));
}

fn exec(cli: &Cli) -> Result<(), Failure> {
    let cfg = ScenarioConfig::load(&cli.config).map_err(|e| match e {
        HarnessError::Io(io) => Failure::Invalid(format!("{}: {io}", cli.config.display())),
        other => other.into(),
    })?;
    let out = out_dir(cli, &cfg);
    let chain_path = |p: &Option<PathBuf>| p.clone().unwrap_or_else(|| out.join("chain.jsonl"));
    match &cli.cmd {
        Cmd::Simulate { duration } => {
            let mut cfg = cfg.clone();
            if let Some(d) = duration {
                cfg.duration = *d;
            }
            let (store, trace) = harness::simulate_direct(&cfg)?;
            fs::create_dir_all(&out).map_err(runtime)?;
            harness::write_trace(fs::File::create(out.join("trace.csv")).map_err(runtime)?, &trace)?;
            fs::write(out.join("metrics.snapshot"), metrics::snapshot::encode(&store.dump())).map_err(runtime)?;
            for s in &cfg.services {
                let rows = trace.iter().filter(|r| r.service == s.name);
                let (req, err) = rows.fold((0u64, 0u64), |(a, b), r| (a + r.requests, b + r.errors));
                out!("{} requests={req} errors={err}", s.name);
            }
        }
        Cmd::Scrape => {
            let p = harness::run_until(&cfg, Stage::Scrape, Some(&out))?;
            print_json(&p.report.scrape);
        }
        Cmd::Discover => {
            let p = harness::run_until(&cfg, Stage::Discover, Some(&out))?;
            for (i, r) in p.report.sli_ranking.iter().enumerate() {
                out!("{:>2} {:.6} {}", i + 1, r.importance, r.name);
            }
            if let Some(a) = p.report.auc {
                out!("holdout auc {a:.4}");
            }
        }
        Cmd::Generate => {
            harness::run_until(&cfg, Stage::Generate, Some(&out))?;
            out_raw!("{}", fs::read_to_string(out.join("slos.jsonl")).map_err(runtime)?);
        }
        Cmd::Mint => {
            let p = harness::run_until(&cfg, Stage::Mint, Some(&out))?;
            for t in &p.report.slo_tokens {
                out!("{} {} v{} height {}", t.token_id, t.subject, t.version, t.height);
            }
        }
        Cmd::Verify { token_id, chain } => {
            let id: Hash32 = token_id.parse().map_err(|e| Failure::Invalid(format!("{e}")))?;
            let blocks = load_chain(&chain_path(chain))?;
            match nft::verify(&id, &blocks) {
                Ok(v) => out!("verified {} at height {} tx {}", v.token.token_id, v.block_height, v.tx_id),
                Err(e) => return Err(Failure::Runtime(format!("{}: {e}", e.code()))),
            }
        }
        Cmd::Audit { service, chain } => {
            let blocks = load_chain(&chain_path(chain))?;
            nft::check_chain(&blocks).map_err(|e| Failure::Runtime(format!("{}: {e}", e.code())))?;
            for r in nft::audit_query(&blocks, service) {
                print_json(&r);
            }
        }
        Cmd::Monitor { serve, run_for } => match serve {
            None => {
                let mut p = harness::run_until(&cfg, Stage::Mint, Some(&out))?;
                p.monitor(Some(&out))?;
                let statuses = p.monitor_records.iter().filter(|r| matches!(r, slokit::monitor::SinkRecord::Status(_))).count();
                out!("records={} statuses={statuses} alerts={}", p.monitor_records.len(), p.report.alerts.len());
                for pr in &p.report.predictions {
                    print_json(&pr.prediction);
                }
            }
            Some(addr) => {
                let stop = Arc::new(AtomicBool::new(false));
                let api = harness::serve(&cfg, addr, Some(&out), stop.clone())?;
                out!("serving on http://{}", api.addr);
                std::thread::sleep(run_for.to_std());
                stop.store(true, Ordering::Relaxed);
            }
        },
        Cmd::BenchLedger { peers, latency_ms, tx_rate, duration } => {
            if !(*tx_rate > 0.0) {
                return Err(Failure::Invalid("--tx-rate must be positive".into()));
            }
            let s = BenchSettings {
                peer_counts: parse_peers(peers.as_deref())?,
                latency_ms: *latency_ms,
                block_interval_ms: cfg.ledger.block_interval_ms,
                max_block_txs: cfg.ledger.max_block_txs,
                tx_rate: *tx_rate,
                duration: *duration,
            };
            let runs = harness::bench_ledger(&s)?;
            fs::create_dir_all(&out).map_err(runtime)?;
            for (row, rep) in &runs {
                fs::write(out.join(format!("bench-blocks-{}.csv", row.peer_count)), rep.to_csv()).map_err(runtime)?;
            }
            let rows: Vec<_> = runs.into_iter().map(|r| r.0).collect();
            let csv = harness::bench_csv(&rows);
            fs::write(out.join("bench.csv"), &csv).map_err(runtime)?;
            out_raw!("{csv}");
            if rows.iter().any(|r| !r.consistent) {
                return Err(Failure::Runtime("peers diverged".into()));
            }
        }
        Cmd::Run => {
            let p = harness::pipeline_run(&cfg, Some(&out))?;
            let r = &p.report;
            let chain = r.chain.as_ref().expect("full run summarises the chain");
            out!(
                "tokens={} alerts={} fallback={} height={} state_hash={}",
                r.slo_tokens.len(),
                r.alerts.len(),
                r.llm_fallback,
                chain.height,
                chain.state_hash
            );
            out!("report {}", out.join("run_report.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match exec(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
