use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use itp_cli::{run, Experiment, RunConfig};

/// Green-function experiments for the parabolic interior transmission problem.
#[derive(Parser)]
#[command(name = "itp", version)]
struct Cli {
    #[command(subcommand)]
    experiment: Experiment,
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: `out/<experiment>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the parallel parts of a run.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(p) => match RunConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        None => RunConfig::default(),
    };
    if cli.workers.is_some() {
        config.workers = cli.workers;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if cli.out.is_some() {
        config.out = cli.out.clone();
    }
    let out = config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cli.experiment.name()));
    match run(&config, cli.experiment, &out) {
        Ok(m) => {
            for (k, v) in &m.metrics {
                println!("{k} = {v:e}");
            }
            for c in &m.checks {
                let status = if c.pass {
                    "PASS"
                } else if c.expected_failure {
                    "FAIL (expected)"
                } else {
                    "FAIL"
                };
                println!("{status} {}", c.name);
            }
            println!("manifest: {}", out.join(itp_cli::RunManifest::FILE).display());
            if m.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
