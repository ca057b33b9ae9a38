//! Source synthesis, mixing and dataset assembly.
//!
//! Every generated or loaded source channel is centered and scaled to unit
//! variance before mixing, since covariances elsewhere are uncentered.

mod csv;
mod image;
mod wav;

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::linalg::{condition_number, sample_covariance, whitening_for};
use crate::{Error, Result, SignalMatrix};

pub use self::csv::{format_number, read_signal_csv, write_signal_csv};
pub use self::image::{load_image_channel, load_image_gray, GrayImage};
pub use self::wav::{load_wav, write_wav_pcm16, WavData};

/// Mixing matrix of the two-source illustrative example.
pub const REFERENCE_MIXING: [[f64; 2]; 2] = [[0.10054428, 0.81736508], [0.75216771, 0.44640104]];

pub const DEFAULT_CONDITION_CAP: f64 = 100.0;
const MAX_MIXING_ATTEMPTS: usize = 1000;
const MIN_ABS_DET: f64 = 1e-9;

/// Cycles per sample of channel 0; channel `i` uses `BASE * (1 + i·√2)`.
const BASE_FREQUENCY: f64 = 0.0113;

pub fn reference_mixing() -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |i, j| REFERENCE_MIXING[i][j])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceSpec {
    Square,
    Sine,
    Sawtooth,
    Laplace,
    Uniform,
    File(String),
}

impl SourceSpec {
    pub fn name(&self) -> String {
        match self {
            SourceSpec::Square => "square".into(),
            SourceSpec::Sine => "sine".into(),
            SourceSpec::Sawtooth => "sawtooth".into(),
            SourceSpec::Laplace => "laplace".into(),
            SourceSpec::Uniform => "uniform".into(),
            SourceSpec::File(p) => format!("file:{p}"),
        }
    }
}

impl fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for SourceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "square" => Ok(SourceSpec::Square),
            "sine" | "sin" => Ok(SourceSpec::Sine),
            "sawtooth" | "saw" => Ok(SourceSpec::Sawtooth),
            "laplace" => Ok(SourceSpec::Laplace),
            "uniform" => Ok(SourceSpec::Uniform),
            other if other.starts_with("file:") => Ok(SourceSpec::File(s.trim()[5..].to_string())),
            _ => Err(Error::Config(format!("unknown source spec '{s}'"))),
        }
    }
}

pub fn parse_specs(list: &str) -> Result<Vec<SourceSpec>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingModel {
    pub mixing: DMatrix<f64>,
    pub source_specs: Vec<SourceSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub sources: SignalMatrix,
    pub mixture: SignalMatrix,
    pub model: MixingModel,
    pub provenance: Vec<String>,
}

impl DatasetBundle {
    /// Mixes normalized sources and records the model.
    pub fn assemble(sources: SignalMatrix, model: MixingModel, provenance: Vec<String>) -> Result<Self> {
        if model.source_specs.len() != sources.channels() {
            return Err(Error::Config(format!(
                "{} source specs for {} channels",
                model.source_specs.len(),
                sources.channels()
            )));
        }
        let mixture = mix(&sources, &model.mixing)?;
        Ok(Self { sources, mixture, model, provenance })
    }

    /// Checks `mixture = A·sources` and the per-channel normalization.
    pub fn verify(&self) -> Result<()> {
        let resid = (&self.model.mixing * self.sources.as_matrix() - self.mixture.as_matrix()).amax();
        let scale = self.mixture.as_matrix().amax().max(1.0);
        if resid > 1e-12 * scale {
            return Err(Error::invalid(format!("mixture differs from A·S by {resid:e}")));
        }
        for i in 0..self.sources.channels() {
            let (mean, var) = mean_var(&self.sources.channel(i));
            if mean.abs() > 1e-10 || (var - 1.0).abs() > 1e-10 {
                return Err(Error::invalid(format!("source {i} has mean {mean:e}, variance {var}")));
            }
        }
        Ok(())
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Centers and scales a channel to unit variance in place.
pub fn normalize_channel(v: &mut [f64], channel: usize) -> Result<()> {
    let (mean, var) = mean_var(v);
    if !(var > 1e-12) {
        return Err(Error::DegenerateChannel { channel, variance: var });
    }
    let sd = var.sqrt();
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    // Second pass removes the rounding left by the first.
    let (mean, var) = mean_var(v);
    let sd = var.sqrt();
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenOptions {
    /// Shuffle each channel independently to destroy temporal structure.
    pub shuffle: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self { shuffle: true }
    }
}

fn channel_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn waveform(spec: &SourceSpec, channel: usize, t: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let freq = BASE_FREQUENCY * (1.0 + channel as f64 * SQRT_2);
    let phase: f64 = rng.random();
    let v = match spec {
        SourceSpec::Sine => (0..t).map(|k| (2.0 * PI * (freq * k as f64 + phase)).sin()).collect(),
        SourceSpec::Square => (0..t)
            .map(|k| if (2.0 * PI * (freq * k as f64 + phase)).sin() >= 0.0 { 1.0 } else { -1.0 })
            .collect(),
        SourceSpec::Sawtooth => (0..t).map(|k| 2.0 * (freq * k as f64 + phase).fract() - 1.0).collect(),
        SourceSpec::Laplace => (0..t)
            .map(|_| {
                // Inverse CDF on u ∈ (-1/2, 1/2).
                let u: f64 = rng.random::<f64>() - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
            })
            .collect(),
        SourceSpec::Uniform => (0..t).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        SourceSpec::File(p) => {
            return Err(Error::Config(format!("'file:{p}' sources are loaded, not generated")));
        }
    };
    Ok(v)
}

/// Generates normalized source channels (shuffled per channel).
pub fn gen_sources(specs: &[SourceSpec], t: usize, seed: u64) -> Result<SignalMatrix> {
    gen_sources_with(specs, t, seed, GenOptions::default())
}

pub fn gen_sources_with(specs: &[SourceSpec], t: usize, seed: u64, opts: GenOptions) -> Result<SignalMatrix> {
    if t < 2 {
        return Err(Error::Config(format!("need at least 2 samples, got {t}")));
    }
    if specs.is_empty() {
        return Err(Error::Config("no source specs given".into()));
    }
    let mut channels = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let mut rng = channel_rng(seed, 1 + i as u64);
        let mut v = waveform(spec, i, t, &mut rng)?;
        // Normalizing first keeps the shuffled multiset bit-identical.
        normalize_channel(&mut v, i)?;
        if opts.shuffle {
            v.shuffle(&mut rng);
        }
        channels.push(v);
    }
    SignalMatrix::from_channels(&channels)
}

/// `X = A S`.
pub fn mix(sources: &SignalMatrix, a: &DMatrix<f64>) -> Result<SignalMatrix> {
    let d = sources.channels();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::Config(format!("mixing matrix is {}x{}, sources have {d} channels", a.nrows(), a.ncols())));
    }
    let det = a.determinant();
    if !(det.abs() > MIN_ABS_DET) {
        return Err(Error::Config(format!("mixing matrix is singular (det {det:e})")));
    }
    SignalMatrix::new(a * sources.as_matrix())
}

/// Uniform [0,1) mixing matrix redrawn until its condition number is at
/// most `cap`. Also returns the number of draws.
pub fn random_mixing_with_attempts(d: usize, seed: u64, cap: f64) -> Result<(DMatrix<f64>, usize)> {
    if d < 2 {
        return Err(Error::Config(format!("random mixing needs d >= 2, got {d}")));
    }
    let mut rng = channel_rng(seed, 0);
    for attempt in 1..=MAX_MIXING_ATTEMPTS {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>());
        if a.determinant().abs() > MIN_ABS_DET && condition_number(&a) <= cap {
            return Ok((a, attempt));
        }
    }
    Err(Error::Config(format!(
        "no {d}x{d} mixing matrix with condition <= {cap} in {MAX_MIXING_ATTEMPTS} draws"
    )))
}

pub fn random_mixing(d: usize, seed: u64, cap: f64) -> Result<DMatrix<f64>> {
    random_mixing_with_attempts(d, seed, cap).map(|(a, _)| a)
}

/// Generated sources mixed by `mixing`.
pub fn synthetic_bundle(specs: &[SourceSpec], t: usize, seed: u64, mixing: DMatrix<f64>) -> Result<DatasetBundle> {
    let sources = gen_sources(specs, t, seed)?;
    let provenance = vec![format!(
        "generated: specs={} samples={t} seed={seed} shuffle=per-channel",
        specs.iter().map(SourceSpec::name).collect::<Vec<_>>().join(",")
    )];
    DatasetBundle::assemble(sources, MixingModel { mixing, source_specs: specs.to_vec(), seed }, provenance)
}

/// The benchmark scenarios: 1/2 use three sub-Gaussian sources, 3/4 swap
/// the sawtooth for a Laplace source; 1/3 stream a whitened mixture.
pub fn scenario(id: u8, t: usize, seed: u64) -> Result<DatasetBundle> {
    let specs = scenario_specs(id)?;
    let sources = gen_sources(&specs, t, seed)?;
    let raw = random_mixing(3, seed, DEFAULT_CONDITION_CAP)?;
    let mixing = if matches!(id, 1 | 3) {
        let colored = mix(&sources, &raw)?;
        whitening_for(&colored)?.inv_sqrt * raw
    } else {
        raw
    };
    let provenance = vec![format!(
        "scenario {id}: samples={t} seed={seed} whitened={}",
        matches!(id, 1 | 3)
    )];
    DatasetBundle::assemble(sources, MixingModel { mixing, source_specs: specs, seed }, provenance)
}

pub fn scenario_specs(id: u8) -> Result<Vec<SourceSpec>> {
    use SourceSpec::*;
    match id {
        1 | 2 => Ok(vec![Square, Sine, Sawtooth]),
        3 | 4 => Ok(vec![Square, Sine, Laplace]),
        _ => Err(Error::Config(format!("scenario must be 1, 2, 3 or 4, got {id}"))),
    }
}

/// Sum of squared off-diagonal entries of the stream covariance.
pub fn off_diagonal_energy(x: &SignalMatrix) -> f64 {
    let c = sample_covariance(x);
    let mut e = 0.0;
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            if i != j {
                e += c[(i, j)] * c[(i, j)];
            }
        }
    }
    e
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Loaded channels truncated to the shortest, normalized and mixed.
pub fn bundle_from_channels(
    mut channels: Vec<Vec<f64>>,
    specs: Vec<SourceSpec>,
    mixing: DMatrix<f64>,
    seed: u64,
    mut provenance: Vec<String>,
) -> Result<DatasetBundle> {
    let len = channels.iter().map(Vec::len).min().unwrap_or(0);
    if len < 2 {
        return Err(Error::Config("loaded channels are too short".into()));
    }
    for (i, c) in channels.iter_mut().enumerate() {
        c.truncate(len);
        normalize_channel(c, i)?;
    }
    provenance.push(format!("truncated to {len} samples"));
    let sources = SignalMatrix::from_channels(&channels)?;
    DatasetBundle::assemble(sources, MixingModel { mixing, source_specs: specs, seed }, provenance)
}

/// Speech clips plus one synthetic uniform-noise channel.
pub fn audio_bundle(paths: &[&Path], seed: u64, mixing: Option<DMatrix<f64>>) -> Result<DatasetBundle> {
    let mut channels = Vec::new();
    let mut specs = Vec::new();
    let mut provenance = Vec::new();
    for p in paths {
        let wav = load_wav(p)?;
        provenance.push(format!("{} sha256={} rate={}", p.display(), sha256_file(p)?, wav.sample_rate));
        channels.push(wav.samples);
        specs.push(SourceSpec::File(p.display().to_string()));
    }
    let len = channels.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = channel_rng(seed, 1 + paths.len() as u64);
    channels.push((0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
    specs.push(SourceSpec::Uniform);
    let d = channels.len();
    let mixing = match mixing {
        Some(a) => a,
        None => random_mixing(d, seed, DEFAULT_CONDITION_CAP)?,
    };
    bundle_from_channels(channels, specs, mixing, seed, provenance)
}

/// One source per grayscale image, pixels as samples.
pub fn image_bundle(paths: &[&Path], seed: u64, mixing: Option<DMatrix<f64>>) -> Result<DatasetBundle> {
    let mut channels = Vec::new();
    let mut specs = Vec::new();
    let mut provenance = Vec::new();
    for p in paths {
        let img = load_image_gray(p)?;
        provenance.push(format!("{} sha256={} size={}x{}", p.display(), sha256_file(p)?, img.width, img.height));
        channels.push(img.pixels);
        specs.push(SourceSpec::File(p.display().to_string()));
    }
    let mixing = match mixing {
        Some(a) => a,
        None => random_mixing(channels.len(), seed, DEFAULT_CONDITION_CAP)?,
    };
    bundle_from_channels(channels, specs, mixing, seed, provenance)
}
