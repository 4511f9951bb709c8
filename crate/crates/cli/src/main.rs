use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use nematiq::config::{parse_config, Command};
use nematiq::parse_overrides;
use nematiq::run::{run, Outcome};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Simulate,
    Ensemble,
    Picard,
    Verify,
    ConvolutionTest,
}

/// Stochastic nematic liquid crystal simulations and checks.
#[derive(Parser, Debug)]
#[command(name = "nematiq", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides: `--key value`, `--key=value` or `key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::Ensemble => Command::Ensemble,
        Cmd::Picard => Command::Picard,
        Cmd::Verify => Command::Verify,
        Cmd::ConvolutionTest => Command::ConvolutionTest,
    };
    let text = match &cli.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {}: {e}", p.display());
                return ExitCode::from(2);
            }
        },
        None => String::new(),
    };
    let cfg = match parse_overrides(&cli.overrides).and_then(|o| parse_config(command, &text, &o)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(o) => {
            match &o {
                Outcome::Ok => println!("{}: ok ({})", command.name(), cfg.output_dir.display()),
                Outcome::Failed(fs) => fs.iter().for_each(|f| eprintln!("FAILED {f}")),
                Outcome::Fatal(m) => eprintln!("fatal: {m}"),
            }
            ExitCode::from(o.code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
