//! Loading datasets and running one algorithm on one dataset.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;
use smica::baselines::{BaselineConfig, BaselineLearner};
use smica::data::{
    reference_mixing, audio_bundle, gen_sources_with, image_bundle, random_mixing, read_signal_csv, scenario,
    sha256_file, write_signal_csv, DatasetBundle, GenOptions, MixingModel, DEFAULT_CONDITION_CAP,
};
use smica::fobi::fobi_separate;
use smica::metrics::{decorrelation_error, mse_curve};
use smica::smica::{fit_offline, lambda_sq_from, DynamicsConfig, OfflineConfig, OnlineLearner, SmicaState};
use smica::stream::{fit_stream, StreamConfig, StreamingLearner};
use smica::SignalMatrix;

use crate::config::{AlgoTag, DatasetSpec, MixingChoice, RunConfig};
use crate::error::{CliError, CliResult};
use crate::report::{compare, Convergence, CurvePass, RunStatus, SeparationReport, SEPARATION_THRESHOLD};

pub struct Dataset {
    pub mixture: SignalMatrix,
    pub sources: Option<SignalMatrix>,
    pub model: Option<MixingModel>,
    pub provenance: Vec<String>,
}

impl From<DatasetBundle> for Dataset {
    fn from(b: DatasetBundle) -> Self {
        Dataset { mixture: b.mixture, sources: Some(b.sources), model: Some(b.model), provenance: b.provenance }
    }
}

fn mixing_matrix(choice: MixingChoice, d: usize, seed: u64) -> CliResult<DMatrix<f64>> {
    Ok(match choice {
        MixingChoice::Reference => reference_mixing(),
        MixingChoice::Random => random_mixing(d, seed, DEFAULT_CONDITION_CAP)?,
        MixingChoice::Identity => DMatrix::identity(d, d),
    })
}

fn explicit_mixing(choice: MixingChoice, d: usize, seed: u64) -> CliResult<Option<DMatrix<f64>>> {
    match choice {
        MixingChoice::Random => Ok(None),
        c => mixing_matrix(c, d, seed).map(Some),
    }
}

pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> CliResult<Dataset> {
    match spec {
        DatasetSpec::Scenario { id, samples } => Ok(scenario(*id, *samples, seed)?.into()),
        DatasetSpec::Generator { sources, mixing, samples, shuffle } => {
            let s = gen_sources_with(sources, *samples, seed, GenOptions { shuffle: *shuffle })?;
            let a = mixing_matrix(*mixing, sources.len(), seed)?;
            let provenance = vec![format!("generated: samples={samples} seed={seed} shuffle={shuffle}")];
            let model = MixingModel { mixing: a, source_specs: sources.clone(), seed };
            Ok(DatasetBundle::assemble(s, model, provenance)?.into())
        }
        DatasetSpec::Files { input, truth } => {
            let mut provenance = vec![format!("{} sha256={}", input.display(), sha256_file(input)?)];
            let (mixture, _) = read_signal_csv(input)?;
            let sources = match truth {
                Some(p) => {
                    provenance.push(format!("{} sha256={}", p.display(), sha256_file(p)?));
                    Some(read_signal_csv(p)?.0)
                }
                None => None,
            };
            Ok(Dataset { mixture, sources, model: None, provenance })
        }
        DatasetSpec::Audio { paths, mixing } => {
            let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
            let a = explicit_mixing(*mixing, paths.len() + 1, seed)?;
            Ok(audio_bundle(&refs, seed, a)?.into())
        }
        DatasetSpec::Images { paths, mixing } => {
            let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
            let a = explicit_mixing(*mixing, paths.len(), seed)?;
            Ok(image_bundle(&refs, seed, a)?.into())
        }
    }
}

fn channel_names(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|i| format!("{prefix}{i}")).collect()
}

#[derive(Serialize)]
struct ModelFile<'a> {
    #[serde(flatten)]
    model: &'a MixingModel,
    provenance: &'a [String],
}

/// Writes `sources.csv`, `mixture.csv` and `model.json`.
pub fn write_dataset(out: &Path, data: &Dataset) -> CliResult<()> {
    let (Some(sources), Some(model)) = (&data.sources, &data.model) else {
        return Err(CliError::Usage("only generated datasets can be written".into()));
    };
    std::fs::create_dir_all(out)?;
    let d = sources.channels();
    write_signal_csv(&out.join("sources.csv"), sources, &channel_names("s", d))?;
    write_signal_csv(&out.join("mixture.csv"), &data.mixture, &channel_names("x", d))?;
    let json = serde_json::to_string_pretty(&ModelFile { model, provenance: &data.provenance })?;
    std::fs::write(out.join("model.json"), json + "\n")?;
    Ok(())
}

struct Fit {
    outputs: SignalMatrix,
    curve: Option<smica::metrics::MseCurve>,
    curve_pass: CurvePass,
    convergence: Convergence,
}

fn stride(total: usize, points: usize) -> usize {
    if points == 0 {
        0
    } else {
        (total / points).max(1)
    }
}

fn run_stream(
    learner: &mut impl StreamingLearner,
    cfg: &RunConfig,
    x: &SignalMatrix,
    truth: Option<&SignalMatrix>,
) -> CliResult<Fit> {
    let sc = StreamConfig {
        epochs: cfg.epochs,
        shuffle: cfg.shuffle_epochs,
        seed: cfg.seed,
        curve_stride: stride(cfg.epochs * x.samples(), cfg.curve_points),
        frozen_pass: true,
        guard_every: 256,
    };
    let r = fit_stream(learner, x, truth, &sc)?;
    Ok(Fit {
        convergence: Convergence {
            samples_seen: r.samples_seen,
            epochs: cfg.epochs,
            unconverged_steps: r.unconverged_steps,
            final_decorrelation: Some(decorrelation_error(&r.outputs)),
            ..Convergence::default()
        },
        outputs: r.outputs,
        curve: r.curve,
        curve_pass: CurvePass::Online,
    })
}

fn batch_curve(cfg: &RunConfig, truth: Option<&SignalMatrix>, y: &SignalMatrix) -> CliResult<Option<smica::metrics::MseCurve>> {
    match truth {
        Some(s) if cfg.curve_points > 0 => Ok(Some(mse_curve(s, y, stride(y.samples(), cfg.curve_points))?)),
        _ => Ok(None),
    }
}

fn fit(cfg: &RunConfig, x: &SignalMatrix, truth: Option<&SignalMatrix>) -> CliResult<Fit> {
    let d = x.channels();
    let lambda_sq = || -> CliResult<Vec<f64>> {
        let l = cfg.lambda.as_ref().ok_or_else(|| CliError::Usage("lambda is unset".into()))?;
        Ok(lambda_sq_from(l, cfg.lambda_is_inverse)?)
    };
    match cfg.algorithm {
        AlgoTag::Fobi => {
            let r = fobi_separate(x)?;
            let curve = batch_curve(cfg, truth, &r.sources)?;
            let convergence = Convergence {
                samples_seen: x.samples(),
                epochs: 1,
                fobi_tied_pairs: Some(r.tied_pairs.clone()),
                final_decorrelation: Some(decorrelation_error(&r.sources)),
                ..Convergence::default()
            };
            Ok(Fit { outputs: r.sources, curve, curve_pass: CurvePass::Batch, convergence })
        }
        AlgoTag::SmicaOffline => {
            let state = SmicaState::init(d, lambda_sq()?, cfg.eta.unwrap_or(0.0), cfg.tau.unwrap_or(1.0), cfg.seed)?;
            let oc = OfflineConfig { epochs: cfg.epochs, diagnostics_every: cfg.epochs };
            let r = fit_offline(x, oc, state, truth)?;
            let curve = batch_curve(cfg, truth, &r.outputs)?;
            let convergence = Convergence {
                samples_seen: x.samples(),
                epochs: r.epochs,
                final_objective: r.diagnostics.last().map(|d| d.objective),
                final_decorrelation: Some(decorrelation_error(&r.outputs)),
                ..Convergence::default()
            };
            Ok(Fit { outputs: r.outputs, curve, curve_pass: CurvePass::Batch, convergence })
        }
        AlgoTag::SmicaOnline => {
            let state = SmicaState::init(d, lambda_sq()?, cfg.eta.unwrap_or(0.0), cfg.tau.unwrap_or(1.0), cfg.seed)?;
            let dynamics = DynamicsConfig { mode: cfg.dynamics.unwrap_or_default(), gamma: cfg.gamma, ..DynamicsConfig::default() };
            let mut learner = OnlineLearner::new(state, dynamics)?;
            run_stream(&mut learner, cfg, x, truth)
        }
        tag => {
            let algorithm = tag.baseline().expect("remaining tags are baselines");
            let mut bc = BaselineConfig::new(algorithm);
            bc.eta = cfg.eta.unwrap_or(bc.eta);
            bc.nonlinearity = cfg.nonlinearity.unwrap_or(bc.nonlinearity);
            bc.seed = cfg.seed;
            bc.extended_infomax = cfg.extended_infomax;
            let mut learner = BaselineLearner::new(bc, d)?;
            run_stream(&mut learner, cfg, x, truth)
        }
    }
}

/// Result of one run; outputs are absent when the run failed.
pub struct RunOutcome {
    pub report: SeparationReport,
    pub outputs: Option<SignalMatrix>,
}

fn run_loaded(cfg: &mut RunConfig, data: &Dataset) -> CliResult<(SeparationReport, SignalMatrix)> {
    cfg.finalize(data.mixture.channels())?;
    let truth = data.sources.as_ref();
    if let Some(s) = truth {
        if s.channels() != data.mixture.channels() || s.samples() != data.mixture.samples() {
            return Err(CliError::Usage("truth and mixture shapes differ".into()));
        }
    }
    let fit = fit(cfg, &data.mixture, truth)?;
    let cmp = truth.map(|s| compare(s, &fit.outputs)).transpose()?;
    let final_mse = cmp.as_ref().map(|c| c.final_mse);
    let report = SeparationReport {
        config: cfg.clone(),
        status: RunStatus::Ok,
        failure: None,
        error: None,
        final_mse,
        separated: final_mse.map(|m| m <= SEPARATION_THRESHOLD),
        alignment: cmp.as_ref().map(|c| c.alignment.clone()),
        curve: fit.curve,
        curve_pass: Some(fit.curve_pass),
        source_kurtosis: cmp.as_ref().and_then(|c| c.source_kurtosis.clone()),
        output_kurtosis: cmp
            .as_ref()
            .and_then(|c| c.output_kurtosis.clone())
            .or_else(|| smica::metrics::kurtosis_per_channel(&fit.outputs).ok()),
        channel_correlation: cmp.map(|c| c.channel_correlation),
        convergence: fit.convergence,
        provenance: data.provenance.clone(),
        wall_clock_seconds: 0.0,
    };
    Ok((report, fit.outputs))
}

/// Runs `cfg`; failures are captured in the report rather than returned.
pub fn execute(cfg: &RunConfig) -> RunOutcome {
    let start = Instant::now();
    let mut cfg = cfg.clone();
    let mut outcome = match load_dataset(&cfg.dataset, cfg.seed) {
        Err(e) => RunOutcome { report: SeparationReport::failed(cfg, &e, Vec::new()), outputs: None },
        Ok(data) => match run_loaded(&mut cfg, &data) {
            Ok((report, outputs)) => RunOutcome { report, outputs: Some(outputs) },
            Err(e) => RunOutcome { report: SeparationReport::failed(cfg, &e, data.provenance), outputs: None },
        },
    };
    outcome.report.wall_clock_seconds = start.elapsed().as_secs_f64();
    outcome
}

/// Writes `report.json`, `curve.csv` and, on success, `outputs.csv`.
pub fn write_run(out: &Path, outcome: &RunOutcome) -> CliResult<()> {
    std::fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(&outcome.report)?;
    std::fs::write(out.join("report.json"), json + "\n")?;
    outcome.report.write_curve(&out.join("curve.csv"))?;
    if let Some(y) = &outcome.outputs {
        write_signal_csv(&out.join("outputs.csv"), y, &channel_names("y", y.channels()))?;
    }
    Ok(())
}
