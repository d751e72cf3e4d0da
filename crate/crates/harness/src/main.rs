use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use contact_harness::attacks::{self, ATTACKS};
use contact_harness::bench::bench_psi;
use contact_harness::e2e::{self, run_e2e, simulate_scenario};
use contact_harness::{HarnessError, Mode, ScenarioOutcome};
use contact_server::{ServerConfig, SystemClock, TracingServer};
use contact_sim::experiments::{crowd_sweep, pair_sweep};
use contact_sim::RadioConfig;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "contact-trace", version, about = "Contact tracing scenarios, attacks and benchmarks")]
struct Cli {
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Server configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Mode::Direct)]
    mode: Mode,
    /// Directory for machine-readable results.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file through the radio simulator, or the standard
    /// discovery sweeps when no file is given.
    Simulate {
        scenario: Option<PathBuf>,
        /// Runs of the two-node sweep.
        #[arg(long, default_value_t = 500)]
        pair_runs: u64,
        /// Runs of the 100-node sweep.
        #[arg(long, default_value_t = 100)]
        crowd_runs: u64,
    },
    /// Simulate encounters and replay the scenario's steps against the server.
    E2e { scenario: PathBuf },
    /// Run an attack experiment: linkage, rebroadcast, foreign-upload,
    /// self-report or all.
    Attack {
        name: String,
        #[arg(long)]
        trials: Option<usize>,
        /// TCNs logged by the linkage attacker.
        #[arg(long, default_value_t = 1000)]
        logged: usize,
    },
    /// Time the PSI phases for each size.
    BenchPsi {
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
        sizes: Vec<usize>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
    },
    /// Apply retention to the configured storage.
    Purge,
}

fn load_config(path: Option<&Path>) -> Result<ServerConfig, String> {
    let Some(path) = path else {
        return Ok(ServerConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ServerConfig::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_json(out: &Path, name: &str, value: &impl Serialize) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("{name}.json"));
    let json = serde_json::to_vec_pretty(value).expect("results serialize");
    std::fs::write(&path, json)?;
    Ok(path)
}

fn report(outcomes: &[ScenarioOutcome], out: &Path, name: &str) -> Result<bool, HarnessError> {
    for o in outcomes {
        println!("{}", o.render());
    }
    let path = write_json(out, name, &outcomes)?;
    println!("results written to {}", path.display());
    Ok(outcomes.iter().all(ScenarioOutcome::meets_requirement))
}

fn run_attack(
    name: &str,
    cli: &Cli,
    config: &ServerConfig,
    trials: Option<usize>,
    logged: usize,
) -> Result<Vec<ScenarioOutcome>, HarnessError> {
    let seed = cli.seed;
    Ok(match name {
        "linkage" => vec![attacks::attack_linkage(cli.mode, logged, trials.unwrap_or(1), seed, config)?],
        "rebroadcast" => vec![attacks::attack_rebroadcast(cli.mode, trials.unwrap_or(100), seed, config)?],
        "foreign-upload" => vec![attacks::attack_foreign_upload(cli.mode, trials.unwrap_or(100), seed, config)?],
        "self-report" => vec![attacks::attack_self_report(trials.unwrap_or(100), 100, seed, config)?],
        "all" => vec![
            attacks::attack_linkage(Mode::Direct, logged, trials.unwrap_or(1), seed, config)?,
            attacks::attack_linkage(Mode::Psi, logged, trials.unwrap_or(1), seed, config)?,
            attacks::attack_rebroadcast(cli.mode, trials.unwrap_or(100), seed, config)?,
            attacks::attack_foreign_upload(cli.mode, trials.unwrap_or(100), seed, config)?,
            attacks::attack_self_report(100, 100, seed, config)?,
        ],
        other => {
            return Err(HarnessError::Scenario {
                line: 0,
                message: format!("unknown attack {other:?}, expected one of {ATTACKS:?} or all"),
            })
        }
    })
}

#[derive(Serialize)]
struct SimulateSummary {
    scenario: String,
    sightings: usize,
    latency: contact_sim::LatencyStats,
    duty_proxy: Vec<(String, f64)>,
}

fn simulate(path: &Path, out: &Path) -> Result<(), HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let (trace, _) = simulate_scenario(&e2e::parse(&text)?)?;
    std::fs::create_dir_all(out)?;
    let csv = out.join("trace.csv");
    trace.write_csv(std::fs::File::create(&csv)?)?;
    let summary = SimulateSummary {
        scenario: path.display().to_string(),
        sightings: trace.sightings.len(),
        latency: trace.latency_stats(),
        duty_proxy: trace.node_ids.iter().cloned().zip(trace.duty()).collect(),
    };
    let stats = &summary.latency;
    println!(
        "{} sightings; pairs discovered {}/{}; latency ms min {:?} median {:?} p95 {:?} max {:?}",
        summary.sightings,
        stats.discovered,
        stats.pairs.len(),
        stats.min_ms,
        stats.median_ms,
        stats.p95_ms,
        stats.max_ms
    );
    let path = write_json(out, "simulate", &summary)?;
    println!("trace written to {}, summary to {}", csv.display(), path.display());
    Ok(())
}

fn sweeps(pair_runs: u64, crowd_runs: u64, out: &Path) -> Result<(), HarnessError> {
    let pair = pair_sweep(&RadioConfig::default(), 0..pair_runs)?;
    println!(
        "2 nodes, 1 m, default radio, {} runs: p95 {:?} ms, median {:?} ms, under 5 s {:.3}, duty proxy {:.3}",
        pair.runs, pair.p95_ms, pair.median_ms, pair.under_5s_fraction, pair.duty_proxy
    );
    let crowd = crowd_sweep(&RadioConfig::with_real_airtime(), 100, 10_000_000, 0..crowd_runs)?;
    println!(
        "100 nodes, 10 s, 0.376 ms packets, {} runs: mean discovered fraction {:.4}, min {:.4}",
        crowd.runs, crowd.mean_fraction, crowd.min_fraction
    );
    let crowd_default = crowd_sweep(&RadioConfig::default(), 100, 10_000_000, 0..crowd_runs)?;
    println!(
        "100 nodes, 10 s, 1 ms packets, {} runs: mean discovered fraction {:.4}, min {:.4}",
        crowd_default.runs, crowd_default.mean_fraction, crowd_default.min_fraction
    );
    let path = write_json(
        out,
        "discovery",
        &serde_json::json!({ "pair": pair, "crowd": crowd, "crowd_default_airtime": crowd_default }),
    )?;
    println!("results written to {}", path.display());
    Ok(())
}

fn serve(config: ServerConfig, listen: &str) -> Result<(), HarnessError> {
    let server = Arc::new(TracingServer::open(config, Arc::new(SystemClock))?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen).await?;
        println!("listening on {}", listener.local_addr()?);
        let ticker = server.clone();
        tokio::spawn(async move {
            let mut every = tokio::time::interval(std::time::Duration::from_secs(60));
            loop {
                every.tick().await;
                let s = ticker.clone();
                match tokio::task::spawn_blocking(move || s.tick()).await {
                    Ok(Ok(Some(batch))) => println!("sealed batch {} with {} entries", batch.id(), batch.len()),
                    Ok(Err(e)) => eprintln!("sealing failed: {e}"),
                    _ => {}
                }
            }
        });
        axum::serve(listener, contact_server::api::router(server))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Serve { listen } => serve(config, listen).map(|_| true),
        Command::Purge => {
            if config.storage.is_none() {
                eprintln!("error: purge needs `storage` in the configuration");
                return ExitCode::from(2);
            }
            TracingServer::open(config, Arc::new(SystemClock))
                .and_then(|s| s.purge())
                .map(|counts| {
                    println!("purged {} batches and {} TANs", counts.batches, counts.tans);
                    true
                })
                .map_err(HarnessError::from)
        }
        command => {
            // Scripted runs are reproducible from --seed alone.
            config.seed.get_or_insert(cli.seed);
            match command {
                Command::Simulate { scenario: Some(path), .. } => simulate(path, &cli.out).map(|_| true),
                Command::Simulate { scenario: None, pair_runs, crowd_runs } => {
                    sweeps(*pair_runs, *crowd_runs, &cli.out).map(|_| true)
                }
                Command::E2e { scenario } => std::fs::read_to_string(scenario)
                    .map_err(HarnessError::from)
                    .and_then(|text| {
                        let name = scenario.file_stem().map_or("e2e".into(), |s| s.to_string_lossy().into_owned());
                        let outcome = run_e2e(&text, &name, cli.mode, config.clone())?;
                        report(&[outcome], &cli.out, &format!("e2e-{name}"))
                    }),
                Command::Attack { name, trials, logged } => run_attack(name, &cli, &config, *trials, *logged)
                    .and_then(|outcomes| report(&outcomes, &cli.out, &format!("attack-{name}"))),
                Command::BenchPsi { sizes } => bench_psi(sizes, cli.seed).and_then(|table| {
                    print!("{}", table.render());
                    let path = write_json(&cli.out, "bench-psi", &table)?;
                    println!("results written to {}", path.display());
                    Ok(table.rows.iter().all(|r| r.correct))
                }),
                Command::Serve { .. } | Command::Purge => unreachable!("handled above"),
            }
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("a required verdict or correctness check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
