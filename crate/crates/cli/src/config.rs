//! Run configuration: flag/file overrides resolved against the built-in
//! hyperparameter tables.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use smica::baselines::{Algorithm, Nonlinearity};
use smica::data::{parse_specs, SourceSpec};
use smica::smica::{default_lambda, DynamicsMode};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AlgoTag {
    Fobi,
    SmicaOffline,
    SmicaOnline,
    HeraultJutten,
    Easi,
    Infomax,
    Amari,
    NonlinearOja,
}

impl AlgoTag {
    /// The streaming algorithms compared in the scenario benchmark.
    pub const BENCH: [AlgoTag; 6] = [
        AlgoTag::SmicaOnline,
        AlgoTag::HeraultJutten,
        AlgoTag::Easi,
        AlgoTag::Infomax,
        AlgoTag::Amari,
        AlgoTag::NonlinearOja,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgoTag::Fobi => "fobi",
            AlgoTag::SmicaOffline => "smica-offline",
            AlgoTag::SmicaOnline => "smica-online",
            AlgoTag::HeraultJutten => "herault-jutten",
            AlgoTag::Easi => "easi",
            AlgoTag::Infomax => "infomax",
            AlgoTag::Amari => "amari",
            AlgoTag::NonlinearOja => "nonlinear-oja",
        }
    }

    pub fn baseline(self) -> Option<Algorithm> {
        match self {
            AlgoTag::HeraultJutten => Some(Algorithm::HeraultJutten),
            AlgoTag::Easi => Some(Algorithm::Easi),
            AlgoTag::Infomax => Some(Algorithm::Infomax),
            AlgoTag::Amari => Some(Algorithm::Amari),
            AlgoTag::NonlinearOja => Some(Algorithm::NonlinearOja),
            _ => None,
        }
    }

    fn is_smica(self) -> bool {
        matches!(self, AlgoTag::SmicaOffline | AlgoTag::SmicaOnline)
    }
}

impl fmt::Display for AlgoTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgoTag {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        <AlgoTag as ValueEnum>::from_str(s.trim(), true).map_err(|_| CliError::Usage(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MixingChoice {
    Reference,
    #[default]
    Random,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    Scenario { id: u8, samples: usize },
    Generator { sources: Vec<SourceSpec>, mixing: MixingChoice, samples: usize, shuffle: bool },
    Files { input: PathBuf, truth: Option<PathBuf> },
    Audio { paths: Vec<PathBuf>, mixing: MixingChoice },
    Images { paths: Vec<PathBuf>, mixing: MixingChoice },
}

/// Which hyperparameter column applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Scenario(u8),
    Synthetic,
    Audio,
    Image,
}

impl DatasetSpec {
    pub fn kind(&self) -> DataKind {
        match self {
            DatasetSpec::Scenario { id, .. } => DataKind::Scenario(*id),
            DatasetSpec::Generator { .. } | DatasetSpec::Files { .. } => DataKind::Synthetic,
            DatasetSpec::Audio { .. } => DataKind::Audio,
            DatasetSpec::Images { .. } => DataKind::Image,
        }
    }

    /// Channel count when it is known without loading anything.
    pub fn known_dim(&self) -> Option<usize> {
        match self {
            DatasetSpec::Scenario { .. } => Some(3),
            DatasetSpec::Generator { sources, .. } => Some(sources.len()),
            DatasetSpec::Audio { paths, .. } => Some(paths.len() + 1),
            DatasetSpec::Images { paths, .. } => Some(paths.len()),
            DatasetSpec::Files { .. } => None,
        }
    }
}

pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_OFFLINE_EPOCHS: usize = 5000;
pub const DEFAULT_CURVE_POINTS: usize = 400;

/// Partially specified settings from flags or a JSON config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Overrides {
    pub algo: Option<AlgoTag>,
    pub scenario: Option<u8>,
    pub sources: Option<String>,
    pub mixing: Option<MixingChoice>,
    pub samples: Option<usize>,
    pub no_shuffle: Option<bool>,
    pub input: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub audio: Option<Vec<PathBuf>>,
    pub images: Option<Vec<PathBuf>>,
    pub seed: Option<u64>,
    pub eta: Option<f64>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda: Option<Vec<f64>>,
    pub lambda_is_inverse: Option<bool>,
    pub epochs: Option<usize>,
    pub dynamics: Option<DynamicsMode>,
    pub nonlinearity: Option<Nonlinearity>,
    pub extended_infomax: Option<bool>,
    pub shuffle_epochs: Option<bool>,
    pub curve_points: Option<usize>,
}

macro_rules! prefer {
    ($hi:ident, $lo:ident, $($f:ident),*) => {
        Overrides { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Overrides {
    /// Fields set in `self` win over `lower`.
    pub fn over(self, lower: Overrides) -> Overrides {
        let (a, b) = (self, lower);
        // The dataset descriptor is taken whole from one layer so that a
        // flag like --input is not combined with a file's scenario.
        let (a, b) = if a.has_dataset() { (a, b.without_dataset()) } else { (a, b) };
        prefer!(
            a, b, algo, scenario, sources, mixing, samples, no_shuffle, input, truth, audio, images, seed, eta, tau,
            gamma, lambda, lambda_is_inverse, epochs, dynamics, nonlinearity, extended_infomax, shuffle_epochs,
            curve_points
        )
    }

    fn has_dataset(&self) -> bool {
        self.scenario.is_some()
            || self.sources.is_some()
            || self.input.is_some()
            || self.audio.is_some()
            || self.images.is_some()
    }

    fn without_dataset(self) -> Overrides {
        Overrides { scenario: None, sources: None, input: None, truth: None, audio: None, images: None, ..self }
    }

    pub fn from_file(path: &Path) -> CliResult<Overrides> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn dataset(&self) -> CliResult<DatasetSpec> {
        let set = [
            self.scenario.is_some(),
            self.sources.is_some(),
            self.input.is_some(),
            self.audio.is_some(),
            self.images.is_some(),
        ];
        match set.iter().filter(|&&b| b).count() {
            0 => return Err(CliError::Usage("no dataset: give --scenario, --sources, --input, --audio or --images".into())),
            1 => {}
            _ => return Err(CliError::Usage("give only one of --scenario, --sources, --input, --audio, --images".into())),
        }
        if self.truth.is_some() && self.input.is_none() {
            return Err(CliError::Usage("--truth needs --input".into()));
        }
        let samples = self.samples.unwrap_or(DEFAULT_SAMPLES);
        let mixing = self.mixing.unwrap_or_default();
        if let Some(id) = self.scenario {
            if !(1..=4).contains(&id) {
                return Err(CliError::Usage(format!("scenario must be 1, 2, 3 or 4, got {id}")));
            }
            if self.mixing.is_some() {
                return Err(CliError::Usage("scenarios fix their own mixing".into()));
            }
            return Ok(DatasetSpec::Scenario { id, samples });
        }
        if let Some(list) = &self.sources {
            let sources = parse_specs(list)?;
            if mixing == MixingChoice::Reference && sources.len() != 2 {
                return Err(CliError::Usage("the reference mixing needs exactly two sources".into()));
            }
            let shuffle = !self.no_shuffle.unwrap_or(false);
            return Ok(DatasetSpec::Generator { sources, mixing, samples, shuffle });
        }
        if let Some(input) = &self.input {
            return Ok(DatasetSpec::Files { input: input.clone(), truth: self.truth.clone() });
        }
        if let Some(paths) = &self.audio {
            if mixing == MixingChoice::Reference {
                return Err(CliError::Usage("the reference mixing needs exactly two sources".into()));
            }
            return Ok(DatasetSpec::Audio { paths: paths.clone(), mixing });
        }
        let paths = self.images.clone().unwrap_or_default();
        if mixing == MixingChoice::Reference && paths.len() != 2 {
            return Err(CliError::Usage("the reference mixing needs exactly two sources".into()));
        }
        Ok(DatasetSpec::Images { paths, mixing })
    }
}

/// Fully resolved settings for one run; echoed in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub algorithm: AlgoTag,
    pub dataset: DatasetSpec,
    pub seed: u64,
    pub eta: Option<f64>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    /// The user-facing values, read as `λ_i` or as `1/λ_i`.
    pub lambda: Option<Vec<f64>>,
    pub lambda_is_inverse: bool,
    pub dynamics: Option<DynamicsMode>,
    pub epochs: usize,
    pub nonlinearity: Option<Nonlinearity>,
    pub extended_infomax: bool,
    pub shuffle_epochs: bool,
    pub curve_points: usize,
}

/// Learning rates `(η, τ)` and Λ values from the hyperparameter tables.
pub fn smica_table(algo: AlgoTag, kind: DataKind) -> (f64, f64, Option<Vec<f64>>) {
    match (algo, kind) {
        (AlgoTag::SmicaOnline, DataKind::Scenario(id)) => {
            let (eta, tau) = if id % 2 == 1 { (5e-3, 0.75) } else { (5e-4, 0.85) };
            let lambda = if id <= 2 { vec![1.0, 1.5, 1.8] } else { vec![1.0, 1.5, 6.07] };
            (eta, tau, Some(lambda))
        }
        (AlgoTag::SmicaOnline, kind) => (2e-5, 1.5, table_lambda(kind)),
        (_, DataKind::Audio) => (5e-4, 0.85, table_lambda(DataKind::Audio)),
        (_, kind) => (5e-3, 0.75, table_lambda(kind)),
    }
}

fn table_lambda(kind: DataKind) -> Option<Vec<f64>> {
    match kind {
        DataKind::Audio => Some(vec![1.8, 6.15, 19.7]),
        DataKind::Image => Some(vec![2.48, 3.06, 6.64]),
        _ => Some(vec![1.0, 1.5, 1.8, 6.07]),
    }
}

/// Table Λ values fitted to `d` channels: the synthetic row is truncated,
/// other mismatches fall back to evenly spaced values.
pub fn lambda_for(table: Option<Vec<f64>>, kind: DataKind, d: usize) -> Vec<f64> {
    match table {
        Some(v) if v.len() == d => v,
        Some(v) if v.len() > d && matches!(kind, DataKind::Synthetic | DataKind::Scenario(_)) => v[..d].to_vec(),
        _ => default_lambda(d),
    }
}

impl RunConfig {
    /// Layers `flags` over `file` over the tables and validates the result.
    pub fn resolve(ov: Overrides) -> CliResult<RunConfig> {
        let algorithm = ov.algo.ok_or_else(|| CliError::Usage("--algo is required".into()))?;
        let dataset = ov.dataset()?;
        let kind = dataset.kind();
        let mut cfg = RunConfig {
            algorithm,
            dataset,
            seed: ov.seed.unwrap_or(0),
            eta: None,
            tau: None,
            gamma: None,
            lambda: None,
            lambda_is_inverse: false,
            dynamics: None,
            epochs: 1,
            nonlinearity: None,
            extended_infomax: false,
            shuffle_epochs: ov.shuffle_epochs.unwrap_or(false),
            curve_points: ov.curve_points.unwrap_or(DEFAULT_CURVE_POINTS),
        };
        if algorithm.is_smica() {
            let (eta, tau, lambda) = smica_table(algorithm, kind);
            cfg.eta = Some(ov.eta.unwrap_or(eta));
            cfg.tau = Some(ov.tau.unwrap_or(tau));
            cfg.lambda_is_inverse = ov.lambda_is_inverse.unwrap_or(false);
            cfg.lambda = match (ov.lambda, cfg.dataset.known_dim()) {
                (Some(v), _) => Some(v),
                (None, Some(d)) => Some(lambda_for(lambda, kind, d)),
                (None, None) => None,
            };
            if algorithm == AlgoTag::SmicaOffline {
                cfg.epochs = ov.epochs.unwrap_or(DEFAULT_OFFLINE_EPOCHS);
            } else {
                cfg.epochs = ov.epochs.unwrap_or(1);
                let mode = ov.dynamics.unwrap_or_default();
                cfg.dynamics = Some(mode);
                cfg.gamma = if mode == DynamicsMode::Euler { ov.gamma } else { None };
            }
        } else if let Some(b) = algorithm.baseline() {
            cfg.eta = Some(ov.eta.unwrap_or(b.default_eta()));
            cfg.epochs = ov.epochs.unwrap_or(1);
            cfg.nonlinearity = Some(ov.nonlinearity.unwrap_or(b.default_nonlinearity()));
            cfg.extended_infomax = b == Algorithm::Infomax && ov.extended_infomax.unwrap_or(false);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fills in Λ once the channel count is known.
    pub fn finalize(&mut self, d: usize) -> CliResult<()> {
        if self.algorithm.is_smica() && self.lambda.is_none() {
            let (_, _, table) = smica_table(self.algorithm, self.dataset.kind());
            self.lambda = Some(lambda_for(table, self.dataset.kind(), d));
        }
        if let Some(l) = &self.lambda {
            if l.len() != d {
                return Err(CliError::Usage(format!("{} lambda values for {d} channels", l.len())));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if let Some(eta) = self.eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return bad(format!("eta must be finite and non-negative, got {eta}"));
            }
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return bad(format!("tau must be positive, got {tau}"));
            }
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma must be positive, got {g}"));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if let Some(l) = &self.lambda {
            smica::smica::lambda_sq_from(l, self.lambda_is_inverse)?;
        }
        match &self.dataset {
            DatasetSpec::Scenario { samples, .. } | DatasetSpec::Generator { samples, .. } if *samples < 2 => {
                bad("samples must be at least 2".into())
            }
            DatasetSpec::Audio { paths, .. } | DatasetSpec::Images { paths, .. } if paths.is_empty() => {
                bad("no input files".into())
            }
            _ => Ok(()),
        }
    }
}

pub fn parse_dynamics(s: &str) -> Result<DynamicsMode, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "exact" => Ok(DynamicsMode::Exact),
        "euler" => Ok(DynamicsMode::Euler),
        other => Err(format!("unknown dynamics mode {other:?} (expected exact or euler)")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(algo: AlgoTag) -> Overrides {
        Overrides { algo: Some(algo), scenario: Some(1), ..Overrides::default() }
    }

    #[test]
    fn scenario_defaults_follow_the_tables() {
        let c = RunConfig::resolve(base(AlgoTag::SmicaOnline)).unwrap();
        assert_eq!((c.eta, c.tau), (Some(5e-3), Some(0.75)));
        assert_eq!(c.lambda, Some(vec![1.0, 1.5, 1.8]));
        let c = RunConfig::resolve(Overrides { scenario: Some(4), ..base(AlgoTag::SmicaOnline) }).unwrap();
        assert_eq!((c.eta, c.tau), (Some(5e-4), Some(0.85)));
        assert_eq!(c.lambda, Some(vec![1.0, 1.5, 6.07]));
        let c = RunConfig::resolve(base(AlgoTag::Easi)).unwrap();
        assert_eq!(c.eta, Some(1e-4));
        assert_eq!(c.tau, None);
        let c = RunConfig::resolve(base(AlgoTag::NonlinearOja)).unwrap();
        assert_eq!(c.nonlinearity, Some(Nonlinearity::Tanh));
    }

    #[test]
    fn generator_and_media_defaults() {
        let ov = Overrides {
            algo: Some(AlgoTag::SmicaOffline),
            sources: Some("sine,sawtooth".into()),
            mixing: Some(MixingChoice::Reference),
            ..Overrides::default()
        };
        let c = RunConfig::resolve(ov).unwrap();
        assert_eq!((c.eta, c.tau), (Some(5e-3), Some(0.75)));
        assert_eq!(c.lambda, Some(vec![1.0, 1.5]));
        assert_eq!(c.epochs, DEFAULT_OFFLINE_EPOCHS);
        let ov = Overrides { algo: Some(AlgoTag::SmicaOnline), images: Some(vec!["a".into(), "b".into(), "c".into()]), ..Overrides::default() };
        let c = RunConfig::resolve(ov).unwrap();
        assert_eq!((c.eta, c.tau), (Some(2e-5), Some(1.5)));
        assert_eq!(c.lambda, Some(vec![2.48, 3.06, 6.64]));
    }

    #[test]
    fn flags_beat_file_beat_tables() {
        let file = Overrides { eta: Some(1e-3), tau: Some(2.0), scenario: Some(2), ..Overrides::default() };
        let flags = Overrides { algo: Some(AlgoTag::SmicaOnline), eta: Some(7e-4), ..Overrides::default() };
        let c = RunConfig::resolve(flags.over(file)).unwrap();
        assert_eq!((c.eta, c.tau), (Some(7e-4), Some(2.0)));
        assert_eq!(c.dataset, DatasetSpec::Scenario { id: 2, samples: DEFAULT_SAMPLES });

        let file = Overrides { scenario: Some(2), ..Overrides::default() };
        let flags = Overrides { algo: Some(AlgoTag::Fobi), input: Some("m.csv".into()), ..Overrides::default() };
        let c = RunConfig::resolve(flags.over(file)).unwrap();
        assert!(matches!(c.dataset, DatasetSpec::Files { .. }));
    }

    #[test]
    fn invalid_settings_are_usage_errors() {
        let cases = [
            Overrides { scenario: Some(5), ..base(AlgoTag::Easi) },
            Overrides { eta: Some(-1.0), ..base(AlgoTag::Easi) },
            Overrides { tau: Some(0.0), ..base(AlgoTag::SmicaOnline) },
            Overrides { lambda: Some(vec![1.0, 1.0, 2.0]), ..base(AlgoTag::SmicaOnline) },
            Overrides { epochs: Some(0), ..base(AlgoTag::SmicaOffline) },
            Overrides { sources: Some("sine".into()), ..base(AlgoTag::Fobi) },
            Overrides { algo: None, ..base(AlgoTag::Fobi) },
            Overrides { sources: Some("sine,laplace,square".into()), mixing: Some(MixingChoice::Reference), scenario: None, ..base(AlgoTag::Fobi) },
        ];
        for ov in cases {
            let e = RunConfig::resolve(ov.clone()).unwrap_err();
            assert_eq!(e.exit_code(), crate::error::EXIT_USAGE, "{ov:?}");
        }
    }

    #[test]
    fn lambda_fitting() {
        assert_eq!(lambda_for(Some(vec![1.0, 1.5, 1.8, 6.07]), DataKind::Synthetic, 2), vec![1.0, 1.5]);
        assert_eq!(lambda_for(Some(vec![1.8, 6.15, 19.7]), DataKind::Audio, 2), default_lambda(2));
        assert_eq!(lambda_for(None, DataKind::Synthetic, 5).len(), 5);
    }

    #[test]
    fn config_file_round_trip() {
        let ov = Overrides { eta: Some(1e-3), lambda: Some(vec![1.0, 2.0]), dynamics: Some(DynamicsMode::Euler), ..base(AlgoTag::SmicaOnline) };
        let text = serde_json::to_string(&ov).unwrap();
        assert_eq!(serde_json::from_str::<Overrides>(&text).unwrap(), ov);
        assert!(serde_json::from_str::<Overrides>(r#"{"etta": 1}"#).is_err());
    }
}
