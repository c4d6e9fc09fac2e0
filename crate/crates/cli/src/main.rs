mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, CliResult};
use config::RawConfig;

/// Non-Markovian collisional models through their Markovian embedding.
#[derive(Parser)]
#[command(name = "qcm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deterministic evolution: embedding and convolution routes.
    Evolve(RunArgs),
    /// Quantum-jump ensemble: mean channels, jump times, single realizations.
    Trajectories(RunArgs),
    /// Memory kernel k(t).
    Kernel(RunArgs),
    /// Waiting-time density w(t) and survival P0(t).
    Wtd(RunArgs),
    /// Relative entropy to the stationary state and back-flow episodes.
    Backflow(RunArgs),
    /// Consistency checks for one model, or the full suite with --all.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Run every numbered criterion.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (`key = value` lines).
    config: Option<PathBuf>,
    /// Overrides traj.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides out.prefix.
    #[arg(long)]
    out: Option<String>,
    /// Overrides model.name.
    #[arg(long)]
    model: Option<String>,
    /// Any `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for trajectory batches.
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn raw(&self) -> CliResult<RawConfig> {
        let cfg = |e: config::ConfigError| CliError::Config(e.0);
        let mut raw = match &self.config {
            Some(p) => RawConfig::load(p).map_err(cfg)?,
            None => RawConfig::default(),
        };
        if let Some(s) = self.seed {
            raw.set("traj.seed", &s.to_string());
        }
        if let Some(o) = &self.out {
            raw.set("out.prefix", o);
        }
        if let Some(m) = &self.model {
            raw.set("model.name", m);
        }
        for pair in &self.set {
            raw.set_pair(pair).map_err(cfg)?;
        }
        Ok(raw)
    }

    fn resolve(&self) -> CliResult<config::RunConfig> {
        self.raw()?.resolve().map_err(|e| CliError::Config(e.0))
    }

    fn install_threads(&self) -> CliResult<()> {
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(CliError::Config("--threads must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Numerical(e.to_string()))?;
        }
        Ok(())
    }
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Evolve(a) => report_written(&commands::cmd_evolve(&a.resolve()?)?),
        Command::Trajectories(a) => {
            a.install_threads()?;
            report_written(&commands::cmd_trajectories(&a.resolve()?)?)
        }
        Command::Kernel(a) => report_written(&commands::cmd_kernel(&a.resolve()?)?),
        Command::Wtd(a) => report_written(&commands::cmd_wtd(&a.resolve()?)?),
        Command::Backflow(a) => {
            let (paths, report) = commands::cmd_backflow(&a.resolve()?)?;
            report_written(&paths);
            for line in report {
                println!("{line}");
            }
        }
        Command::Verify { run, all } => {
            run.install_threads()?;
            let reports = if all {
                let seed = run.seed.unwrap_or(qcm_core::verify::DEFAULT_SEED);
                commands::verify_all(seed)
            } else if run.config.is_some() || run.model.is_some() || !run.set.is_empty() {
                commands::cmd_verify_config(&run.resolve()?)?
            } else {
                return Err(CliError::Config(
                    "verify needs a configuration or --all".into(),
                ));
            };
            commands::print_reports(&reports)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qcm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
