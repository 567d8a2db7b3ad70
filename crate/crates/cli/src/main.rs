use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hcbf::filters::FilterMode;
use hcbf_cli::{
    cmd_compare, cmd_run, cmd_tune, output_dir, parse_modes, CliError, CompareArgs, RunArgs, TuneArgs, OUT_DIR_ENV,
};

#[derive(Parser)]
#[command(
    name = "hcbf",
    version,
    about = "Prioritized CBF safety filters on a planar double integrator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and export its trace.
    Run {
        /// TOML config with optional [scenario] and [tune] blocks.
        config: Option<PathBuf>,
        /// Builtin scenario used as the base (sim-paper, exp-paper).
        #[arg(long)]
        scenario: Option<String>,
        /// Filter mode overriding the config.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<FilterMode>,
        #[arg(long, help = format!("Output directory [env: {OUT_DIR_ENV}]"))]
        out: Option<PathBuf>,
    },
    /// Sample relaxation schedules and keep the cheapest.
    Tune {
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, help = format!("Output directory [env: {OUT_DIR_ENV}]"))]
        out: Option<PathBuf>,
        /// Evaluate samples on the calling thread only.
        #[arg(long)]
        serial: bool,
    },
    /// Run several filter modes on the same scenario.
    Compare {
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        /// Comma-separated modes, at least two.
        #[arg(long, default_value = "relaxed,hierarchical")]
        modes: String,
        #[arg(long, help = format!("Output directory [env: {OUT_DIR_ENV}]"))]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<FilterMode, String> {
    s.parse().map_err(|e: hcbf::filters::FilterError| e.to_string())
}

fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Run {
            config,
            scenario,
            mode,
            out,
        } => {
            let args = RunArgs {
                config,
                scenario,
                mode,
                out: output_dir(out.as_deref()),
            };
            let m = cmd_run(&args)?;
            Ok(format!("wrote {} files to {}", m.files.len() + 1, m.output_dir))
        }
        Command::Tune {
            config,
            scenario,
            out,
            serial,
        } => {
            let args = TuneArgs {
                config,
                scenario,
                out: output_dir(out.as_deref()),
                serial,
            };
            let (m, report) = cmd_tune(&args)?;
            Ok(format!(
                "best (gamma0, delta_gamma) = ({}, {}) with cost {}; wrote {}",
                report.best.0, report.best.1, report.best_cost, m.output_dir
            ))
        }
        Command::Compare {
            config,
            scenario,
            modes,
            out,
        } => {
            let args = CompareArgs {
                config,
                scenario,
                modes: parse_modes(&modes)?,
                out: output_dir(out.as_deref()),
            };
            let (m, report) = cmd_compare(&args)?;
            let mut line = String::new();
            for c in &report.modes {
                line.push_str(&format!(
                    "{}: final error {:.4}, mean error {:.4}\n",
                    c.mode, c.final_error, c.mean_error
                ));
            }
            line.push_str(&format!("wrote {}", m.output_dir));
            Ok(line)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
