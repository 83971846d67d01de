use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jko_cli::config::{ExperimentConfig, Format};
use jko_cli::output::{write_json, write_table, Cell, Table};
use jko_cli::{certify, convergence_study, run, toy_potential, CertifyOptions, CliError};

#[derive(Parser)]
#[command(name = "jko", version, about = "Fully discrete JKO schemes on regular grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Artifact format; overrides `output.format`.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a JKO trajectory and write snapshots and diagnostics.
    Run,
    /// L¹ error against a fine reference along a (h, τ) path.
    ConvergenceStudy,
    /// Grid versus continuous proximal iteration of one particle.
    ToyPotential,
    /// Check the solvers against independent oracles.
    Certify {
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config is required".into()))?;
    ExperimentConfig::load(path)?.resolve()
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory))
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Validation("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    match &cli.command {
        Command::Run => {
            let cfg = load(cli)?;
            let out = out_dir(cli, &cfg);
            let s = run(&cfg, &out, cli.format.unwrap_or(cfg.output.format))?;
            println!(
                "{} steps, energy {} -> {}, max gap {:e}; wrote {}",
                s.steps_completed,
                s.initial_energy,
                s.final_energy,
                s.max_gap,
                out.display()
            );
        }
        Command::ConvergenceStudy => {
            let cfg = load(cli)?;
            let out = out_dir(cli, &cfg);
            let (s, rows) = convergence_study(&cfg, &out, cli.format.unwrap_or(cfg.output.format))?;
            println!("{:>12} {:>12} {:>10} {:>14} {:>7}", "h", "tau", "h/tau", "L1 error", "frozen");
            for r in &rows {
                println!("{:>12.6} {:>12.6} {:>10.4} {:>14.6e} {:>7}", r.h, r.tau, r.h_over_tau, r.error, r.frozen);
            }
            println!("monotone: {}; wrote {}", s.monotone, out.display());
        }
        Command::ToyPotential => {
            let cfg = load(cli)?;
            let out = out_dir(cli, &cfg);
            let s = toy_potential(&cfg, &out, cli.format.unwrap_or(cfg.output.format))?;
            println!(
                "{} steps at τ = {}: max error {:e}, bound {:e}; wrote {}",
                s.steps,
                s.tau,
                s.max_error,
                s.bound,
                out.display()
            );
        }
        Command::Certify { seed } => {
            let cfg = match &cli.config {
                Some(_) => Some(load(cli)?),
                None => None,
            };
            let seed = seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            let report = certify(&CertifyOptions::new(seed));
            print!("{}", report.matrix());
            for s in &report.suites {
                for f in &s.failures {
                    log::error!("{}: {f}", s.name);
                }
            }
            let out = cli.out.clone().or_else(|| cfg.as_ref().map(|c| PathBuf::from(&c.output.directory)));
            if let Some(out) = out {
                let mut t = Table::new("certify", &["suite", "cases", "passed", "failed"]);
                for s in &report.suites {
                    t.push(vec![Cell::Text(s.name.into()), s.cases.into(), s.passed.into(), s.failed.into()]);
                }
                let format = cli.format.or(cfg.as_ref().map(|c| c.output.format)).unwrap_or_default();
                let meta = serde_json::json!({ "command": "certify", "seed": seed, "config": cfg });
                write_table(&out, &t, format, &meta)?;
                write_json(&out.join("summary.json"), &report)?;
            }
            if !report.passed {
                let bad: Vec<&str> = report.suites.iter().filter(|s| s.failed > 0).map(|s| s.name).collect();
                return Err(CliError::Certification(bad.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LOG_LEVEL", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
