use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sigpass_cli::{analyze, Overrides};

#[derive(Parser)]
#[command(name = "sigpass", version, about = "Dominance and signed-passivity analysis of PWL circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify, simulate and classify a circuit file.
    ///
    /// Exit status: 0 when the observed behavior matches the certificate,
    /// 2 when it does not, 1 on errors.
    Analyze {
        file: PathBuf,
        /// Output directory for report.json and trajectory.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Single rate λ (1/s); replaces the file's rate list.
        #[arg(long)]
        rate: Option<f64>,
        /// Simulation sample step h (s); replaces the file value.
        #[arg(long)]
        step: Option<f64>,
        /// Simulation horizon T (s); replaces the file value.
        #[arg(long)]
        horizon: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Analyze { file, out, rate, step, horizon } => {
            match analyze(&file, &out, &Overrides { rate, step, horizon }) {
                Ok(code) => ExitCode::from(code as u8),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
