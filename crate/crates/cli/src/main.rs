use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blflab_core::experiment::{resolve_config, run_command, Command, RunOutput, PRESETS};
use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CommandArg {
    Theorems,
    Train,
    Evaluate,
    Sweep,
    Surface,
    Opnorms,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::Theorems => Command::Theorems,
            CommandArg::Train => Command::Train,
            CommandArg::Evaluate => Command::Evaluate,
            CommandArg::Sweep => Command::Sweep,
            CommandArg::Surface => Command::Surface,
            CommandArg::Opnorms => Command::Opnorms,
        }
    }
}

/// Bounded logit function experiments.
#[derive(Debug, Parser)]
#[command(name = "blflab", version, after_help = presets_help())]
struct Cli {
    command: CommandArg,
    /// JSON config file, or a preset name.
    #[arg(long)]
    config: String,
    /// Replaces the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "blflab-out")]
    out: PathBuf,
    /// Dotted-path override such as `train.sgd.lr=0.05`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn presets_help() -> String {
    format!("Presets: {}", PRESETS.join(", "))
}

fn write_outputs(dir: &Path, output: &RunOutput) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for (name, bytes) in &output.files {
        fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = Command::from(cli.command);
    let cfg = match resolve_config(&cli.config, &cli.overrides, cli.seed, command) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("blflab: {e}");
            return ExitCode::from(2);
        }
    };
    let output = match run_command(command, &cfg) {
        Ok(output) => output,
        Err(e) => {
            eprintln!("blflab {}: {e}", command.name());
            return ExitCode::from(2);
        }
    };
    if let Err(e) = write_outputs(&cli.out, &output) {
        eprintln!("blflab: cannot write to {}: {e}", cli.out.display());
        return ExitCode::from(2);
    }
    let record = &output.record;
    let checks = record.theorems.as_ref().map_or(&record.checks, |t| &t.checks);
    for c in checks {
        println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
    }
    for p in &record.accuracy {
        println!("eps={} accuracy={:.4} stderr={:.4}", p.epsilon, p.accuracy, p.stderr);
    }
    if record.aborted {
        println!("aborted: see record.json");
    }
    println!("wrote {} files to {}", output.files.len(), cli.out.display());
    if record.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
