use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use smica::data::format_number;
use smica::metrics::{align, apply_alignment, kurtosis_per_channel, AlignmentResult, MseCurve};
use smica::SignalMatrix;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};

/// Outputs with `ε_MSE` above this count as not separated.
pub const SEPARATION_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    Usage,
    Numerical,
    Io,
}

impl FailureKind {
    pub fn of(e: &CliError) -> Self {
        match e {
            CliError::Usage(_) => FailureKind::Usage,
            CliError::Numerical(_) => FailureKind::Numerical,
            CliError::Io(_) => FailureKind::Io,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub samples_seen: usize,
    pub epochs: usize,
    /// Samples whose Euler dynamics hit the iteration cap.
    pub unconverged_steps: usize,
    /// Adjacent FOBI eigenvalue pairs that were too close to separate.
    pub fobi_tied_pairs: Option<Vec<usize>>,
    pub final_objective: Option<f64>,
    /// `‖(1/T) Y Yᵀ − I‖_F` of the final outputs.
    pub final_decorrelation: Option<f64>,
}

/// Which pass a curve point was measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvePass {
    /// On-the-fly outputs of a streaming learner.
    Online,
    /// Prefixes of the final outputs of a batch method.
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub config: RunConfig,
    pub status: RunStatus,
    pub failure: Option<FailureKind>,
    pub error: Option<String>,
    pub alignment: Option<AlignmentResult>,
    pub final_mse: Option<f64>,
    pub separated: Option<bool>,
    pub curve: Option<MseCurve>,
    pub curve_pass: Option<CurvePass>,
    pub source_kurtosis: Option<Vec<f64>>,
    pub output_kurtosis: Option<Vec<f64>>,
    /// `|corr|` between each truth channel and its aligned output.
    pub channel_correlation: Option<Vec<f64>>,
    pub convergence: Convergence,
    pub provenance: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl SeparationReport {
    pub fn failed(config: RunConfig, err: &CliError, provenance: Vec<String>) -> Self {
        SeparationReport {
            config,
            status: RunStatus::Failed,
            failure: Some(FailureKind::of(err)),
            error: Some(err.to_string()),
            alignment: None,
            final_mse: None,
            separated: None,
            curve: None,
            curve_pass: None,
            source_kurtosis: None,
            output_kurtosis: None,
            channel_correlation: None,
            convergence: Convergence::default(),
            provenance,
            wall_clock_seconds: 0.0,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.failure {
            None => EXIT_OK,
            Some(FailureKind::Usage) => EXIT_USAGE,
            Some(FailureKind::Numerical) => EXIT_NUMERICAL,
            Some(FailureKind::Io) => EXIT_IO,
        }
    }

    /// Writes the `t,mse,pass` curve followed by the final-output row.
    pub fn write_curve(&self, path: &Path) -> CliResult<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t,mse,pass")?;
        let pass = match self.curve_pass {
            Some(CurvePass::Batch) => "batch",
            _ => "online",
        };
        if let Some(c) = &self.curve {
            for (t, v) in c.times.iter().zip(&c.values) {
                writeln!(f, "{t},{},{pass}", format_number(*v))?;
            }
        }
        if let Some(m) = self.final_mse {
            writeln!(f, "{},{},final", self.convergence.samples_seen, format_number(m))?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Alignment, error and kurtosis of `outputs` against `truth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub alignment: AlignmentResult,
    pub final_mse: f64,
    pub source_kurtosis: Option<Vec<f64>>,
    pub output_kurtosis: Option<Vec<f64>>,
    pub channel_correlation: Vec<f64>,
}

pub fn compare(truth: &SignalMatrix, outputs: &SignalMatrix) -> CliResult<Comparison> {
    if truth.channels() != outputs.channels() || truth.samples() != outputs.samples() {
        return Err(CliError::Usage(format!(
            "shape mismatch: truth is {}x{}, outputs are {}x{}",
            truth.channels(),
            truth.samples(),
            outputs.channels(),
            outputs.samples()
        )));
    }
    let alignment = align(truth, outputs)?;
    let aligned = apply_alignment(outputs, &alignment)?;
    let channel_correlation = (0..truth.channels())
        .map(|i| pearson(&truth.channel(i), &aligned.channel(i)).abs())
        .collect();
    Ok(Comparison {
        final_mse: alignment.aligned_mse,
        alignment,
        source_kurtosis: kurtosis_per_channel(truth).ok(),
        output_kurtosis: kurtosis_per_channel(outputs).ok(),
        channel_correlation,
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}
