//! Runs one experiment config and writes its outputs and manifest.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use jumpflow::harness::{run, validate, ExperimentConfig, HarnessError, Overrides};
use jumpflow::par;

#[derive(Parser, Debug)]
#[command(
    name = "jumpflow",
    version,
    about = "Run a jump SDE experiment from a TOML config"
)]
struct Cli {
    /// Experiment config.
    config: PathBuf,
    /// Override `sim.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the task's path count.
    #[arg(long)]
    paths: Option<usize>,
    /// Override `sim.dt`.
    #[arg(long)]
    dt: Option<f64>,
    /// Override `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate the config and exit without running.
    #[arg(long)]
    check: bool,
}

fn fail(e: &HarnessError) -> ExitCode {
    eprint!("jumpflow: {e}");
    if !matches!(e, HarnessError::Config(_)) {
        eprintln!();
    }
    ExitCode::from(e.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = par::init_threads_from_env() {
        eprintln!("jumpflow: {e}");
        return ExitCode::from(2);
    }
    let mut cfg = match ExperimentConfig::from_file(&cli.config) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let overrides = Overrides {
        seed: cli.seed,
        paths: cli.paths,
        dt: cli.dt,
        out: cli.out,
    };
    cfg.apply(&overrides);
    let diags = validate(&cfg);
    if !diags.is_empty() {
        return fail(&HarnessError::Config(diags));
    }
    if cli.check {
        println!("{}: ok ({} task)", cli.config.display(), cfg.task.name());
        return ExitCode::SUCCESS;
    }
    match run(&cfg, &overrides) {
        Ok(m) => {
            println!(
                "wrote {} files to {} in {:.2}s",
                m.files.len(),
                cfg.output.dir.display(),
                m.wall_time_s
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
