use clap::{Parser, Subcommand};
use smcgm_cli::commands::{self, RunOptions};
use smcgm_cli::config::ExperimentConfig;
use smcgm_cli::CliResult;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "smcgm", version, about = "Tempered SMC samplers for function-space inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML), or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Restores the published meshes and particle counts.
    #[arg(long)]
    paper_scale: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one SMC experiment.
    Run {
        #[command(flatten)]
        common: Common,
        /// Observation CSV from `synth-data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare the ensembles of two runs.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic Darcy observations; --seed overrides the data seed.
    SynthData {
        #[command(flatten)]
        common: Common,
    },
    /// Recompute diagnostics of a run and print a summary.
    Report {
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn options(c: &Common, data: Option<PathBuf>) -> RunOptions {
    RunOptions {
        out: c.out.clone(),
        threads: c.threads,
        paper_scale: c.paper_scale,
        seed: c.seed,
        data,
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { common, data } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let s = commands::run(cfg, &options(&common, data))?;
            println!("{}", serde_json::to_string_pretty(&s).expect("serialisable"));
        }
        Command::Compare { run_a, run_b, out } => {
            let c = commands::compare(&run_a, &run_b, out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&c).expect("serialisable"));
        }
        Command::SynthData { common } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let s = commands::synth_data(cfg, &options(&common, None))?;
            println!("{}", serde_json::to_string_pretty(&s).expect("serialisable"));
        }
        Command::Report { run, out } => print!("{}", commands::report(&run, out.as_deref())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
