//! Library side of the `sigpass` command: file schema, analysis pipeline and
//! output files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::Path;

pub mod pipeline;
pub mod schema;

pub use pipeline::{run_analysis, Analysis, AnalysisReport, Classification};
pub use schema::{parse, parse_str, CircuitFile};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("schema error at line {line}, column {column}: {message}")]
    Schema { line: usize, column: usize, message: String },
    #[error("invalid circuit: {0}")]
    Invalid(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: sigpass_core::Error,
    },
    #[error("i/o: {0}")]
    Io(String),
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub rate: Option<f64>,
    pub step: Option<f64>,
    pub horizon: Option<f64>,
}

impl Overrides {
    /// `--rate` replaces the rate list; `--step` and `--horizon` replace the
    /// simulation values and need a simulation block.
    pub fn apply(&self, cf: &mut CircuitFile) -> Result<(), CliError> {
        if let Some(r) = self.rate {
            cf.analysis.rates = vec![r];
        }
        if self.step.is_some() || self.horizon.is_some() {
            let sim = cf
                .simulation
                .as_mut()
                .ok_or_else(|| CliError::Invalid("--step and --horizon need a simulation block".into()))?;
            if let Some(h) = self.step {
                sim.step = Some(h);
            }
            if let Some(t) = self.horizon {
                sim.horizon = t;
            }
        }
        cf.validate()
    }
}

/// Writes `report.json` and, for simulated runs, `trajectory.csv`.
pub fn emit(analysis: &Analysis, out_dir: &Path) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", out_dir.display()));
    fs::create_dir_all(out_dir).map_err(io)?;
    let mut json = analysis.report.to_json();
    json.push('\n');
    fs::write(out_dir.join("report.json"), json).map_err(io)?;
    if let Some(tr) = &analysis.trajectory {
        let file = fs::File::create(out_dir.join("trajectory.csv")).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        tr.write_csv(&analysis.report.states, &mut w).map_err(io)?;
        std::io::Write::flush(&mut w).map_err(io)?;
    }
    Ok(())
}

/// Parses, analyzes and writes outputs; returns the process exit code.
pub fn analyze(path: &Path, out_dir: &Path, overrides: &Overrides) -> Result<i32, CliError> {
    let mut cf = parse(path)?;
    overrides.apply(&mut cf)?;
    let analysis = run_analysis(&cf)?;
    emit(&analysis, out_dir)?;
    Ok(analysis.report.exit_code())
}
