//! Command-line driver: verification suites, learning-rate sweeps,
//! perturbation curves, ablations and checkpoints.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, TensorMap};
pub use config::ExperimentConfig;
pub use error::{CliError, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VERIFY};

#[derive(Debug, Parser)]
#[command(name = "ether", version, about = "Reflection-based finetuning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Flags that override config-file values.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output file.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// ether | ether_plus | oft | naive | lora
    #[arg(long, global = true, value_name = "NAME")]
    pub method: Option<String>,
    #[arg(long, global = true, value_name = "REAL")]
    pub lr: Option<f64>,
    /// Number of diagonal blocks.
    #[arg(long, global = true, value_name = "N")]
    pub blocks: Option<usize>,
    /// LoRA rank.
    #[arg(long, global = true, value_name = "R")]
    pub rank: Option<usize>,
    #[arg(long = "two-sided", global = true, value_name = "BOOL")]
    pub two_sided: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    pub epochs: Option<usize>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Any config key, as `key=value`; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the built-in verification suites.
    Verify {
        /// Restrict to one suite; may be repeated.
        #[arg(long = "suite", value_name = "NAME")]
        suites: Vec<String>,
        /// Deliberately break a component to confirm the checks catch it.
        #[arg(long = "inject-fault", value_name = "FAULT", default_value = "none")]
        inject_fault: verify::Fault,
    },
    /// Learning-rate sweep; writes per-epoch rows to CSV.
    Sweep,
    /// Output deviation under controlled perturbations; writes CSV.
    Perturb,
    /// Block-count and sidedness ablations; writes CSV.
    Ablate,
    /// Finetune one method and save a checkpoint.
    Train,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        let mut pairs: Vec<(String, String, String)> = Vec::new();
        let mut flag = |name: &str, key: &str, value: Option<String>| {
            if let Some(v) = value {
                pairs.push((format!("--{name}"), key.to_string(), v));
            }
        };
        flag("seed", "seed", self.seed.map(|v| v.to_string()));
        flag("out", "out", self.out.as_ref().map(|p| p.display().to_string()));
        flag("method", "method", self.method.clone());
        flag("lr", "lr", self.lr.map(|v| v.to_string()));
        flag("blocks", "blocks", self.blocks.map(|v| v.to_string()));
        flag("rank", "rank", self.rank.map(|v| v.to_string()));
        flag("two-sided", "two_sided", self.two_sided.clone());
        flag("epochs", "epochs", self.epochs.map(|v| v.to_string()));
        flag("threads", "threads", self.threads.map(|v| v.to_string()));
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got '{s}'")))?;
            pairs.push(("--set".into(), k.trim().to_string(), v.to_string()));
        }
        for (name, key, value) in pairs {
            config
                .set(&key, &value)
                .map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut config = ExperimentConfig::default();
    cli.overrides.apply(&mut config)?;
    let io = |e: std::io::Error| CliError::io(std::path::Path::new("<stdout>"), e);
    match &cli.command {
        Command::Verify { suites, inject_fault } => {
            let report = verify::run(suites, *inject_fault).map_err(CliError::Config)?;
            write!(out, "{report}").map_err(io)?;
            Ok(if report.passed() { EXIT_OK } else { EXIT_VERIFY })
        }
        Command::Sweep => {
            let (result, _) = commands::cmd_sweep(&config)?;
            write!(out, "{}", config.echo()).map_err(io)?;
            writeln!(out, "method,best_lr,best_loss,robust_lrs,robust_span_decades").map_err(io)?;
            for s in result.summaries() {
                let lrs: Vec<String> = s.robust_lrs.iter().map(|x| x.to_string()).collect();
                writeln!(out, "{},{},{},{},{}", s.method, s.best_lr, s.best_loss, lrs.join(";"), s.robust_span)
                    .map_err(io)?;
            }
            Ok(EXIT_OK)
        }
        Command::Perturb => {
            commands::cmd_perturb(&config)?;
            Ok(EXIT_OK)
        }
        Command::Ablate => {
            commands::cmd_ablate(&config)?;
            Ok(EXIT_OK)
        }
        Command::Train => {
            let (_, log) = commands::cmd_train(&config)?;
            write!(out, "{log}").map_err(io)?;
            Ok(EXIT_OK)
        }
    }
}
