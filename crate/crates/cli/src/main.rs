use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use flaps_cli::config::TransportName;
use flaps_cli::{
    compare_report, parse_drop, parse_k_list, run_sweep_collect, write_metrics_csv, write_time_csv,
    CliError, ExperimentConfig, ModeName,
};
use flaps_core::orchestrator::{DropPhase, Mode};

/// Clustered federated learning sweeps with FL and centralized baselines.
#[derive(Debug, Parser)]
#[command(name = "flaps", version)]
struct Args {
    /// TOML experiment file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Modes to run (flaps, fl, central); repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    mode: Vec<Mode>,
    /// Cluster budgets: `2..20`, `2,5,10` or a single value.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    clients: Option<usize>,
    /// Seeds; repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Drop probability for a phase (ready, report, post_report, training).
    #[arg(long, value_parser = parse_drop)]
    drop: Vec<(DropPhase, f64)>,
    /// Output directory (default: $FLAPS_OUT_DIR, then ./flaps-results).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["sim", "tcp"])]
    transport: Option<String>,
    /// Print FLaPS deltas against the baselines per k.
    #[arg(long)]
    compare: bool,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

fn build_config(args: &Args) -> Result<ExperimentConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if !args.mode.is_empty() {
        config.modes = args.mode.iter().map(|&m| ModeName::from(m)).collect();
    }
    if let Some(k) = &args.k {
        config.k_list = parse_k_list(k).map_err(CliError::Config)?;
    }
    if let Some(n) = args.clients {
        config.n_clients = n;
    }
    if !args.seed.is_empty() {
        config.seeds = args.seed.clone();
    }
    for &(phase, p) in &args.drop {
        config.drops.set(phase, p);
    }
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    match args.transport.as_deref() {
        Some("tcp") => config.transport = TransportName::Tcp,
        Some(_) => config.transport = TransportName::Sim,
        None => {}
    }
    config.validate()?;
    Ok(config)
}

fn run(args: &Args) -> Result<bool, CliError> {
    let config = build_config(args)?;
    if args.print_config {
        print!("{}", config.to_toml());
        return Ok(true);
    }
    let outcome = run_sweep_collect(&config)?;
    for failure in &outcome.failures {
        eprintln!("round {} failed: {}", failure.key, failure.error);
    }
    if !outcome.results.is_empty() {
        let dir = config.out_dir();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io {
            path: dir.clone(),
            source: e,
        })?;
        write_time_csv(&outcome.results, dir.join("time.csv"))?;
        write_metrics_csv(&outcome.results, dir.join("metrics.csv"))?;
        println!(
            "{} rounds written to {}",
            outcome.results.len(),
            dir.display()
        );
    }
    if args.compare {
        print!("{}", compare_report(&outcome.results));
    }
    Ok(outcome.failures.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
