//! Competing online ICA rules: Herault-Jutten, EASI, Infomax, Amari's
//! natural gradient and the nonlinear Oja rule.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::stream::StreamingLearner;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    HeraultJutten,
    Easi,
    Infomax,
    Amari,
    NonlinearOja,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::HeraultJutten, Algorithm::Easi, Algorithm::Infomax, Algorithm::Amari, Algorithm::NonlinearOja];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::HeraultJutten => "herault-jutten",
            Algorithm::Easi => "easi",
            Algorithm::Infomax => "infomax",
            Algorithm::Amari => "amari",
            Algorithm::NonlinearOja => "nonlinear-oja",
        }
    }

    pub fn default_nonlinearity(self) -> Nonlinearity {
        match self {
            Algorithm::NonlinearOja => Nonlinearity::Tanh,
            _ => Nonlinearity::Cubic,
        }
    }

    /// Learning rates used in the scenario benchmark.
    pub fn default_eta(self) -> f64 {
        match self {
            Algorithm::HeraultJutten | Algorithm::Easi => 1e-4,
            Algorithm::NonlinearOja => 1e-3,
            Algorithm::Infomax | Algorithm::Amari => 5e-4,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "herault-jutten" | "hj" => Ok(Algorithm::HeraultJutten),
            "easi" => Ok(Algorithm::Easi),
            "infomax" | "bell-sejnowski" => Ok(Algorithm::Infomax),
            "amari" => Ok(Algorithm::Amari),
            "nonlinear-oja" | "oja" => Ok(Algorithm::NonlinearOja),
            _ => Err(Error::Config(format!("unknown baseline '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    /// `y³`
    Cubic,
    /// `tanh(y)`
    Tanh,
    /// `y − tanh(y)`
    TanhScaled,
    /// `y`; turns the Oja rule back into subspace learning.
    Linear,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Cubic => v * v * v,
            Nonlinearity::Tanh => v.tanh(),
            Nonlinearity::TanhScaled => v - v.tanh(),
            Nonlinearity::Linear => v,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::Cubic => "cubic",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::TanhScaled => "tanh-scaled",
            Nonlinearity::Linear => "linear",
        }
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cubic" | "cube" => Ok(Nonlinearity::Cubic),
            "tanh" => Ok(Nonlinearity::Tanh),
            "tanh-scaled" => Ok(Nonlinearity::TanhScaled),
            "linear" | "identity" => Ok(Nonlinearity::Linear),
            _ => Err(Error::Config(format!("unknown nonlinearity '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub algorithm: Algorithm,
    pub eta: f64,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
    /// Infomax only: flip the score per channel by a running kurtosis sign.
    pub extended_infomax: bool,
}

impl BaselineConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            eta: algorithm.default_eta(),
            nonlinearity: algorithm.default_nonlinearity(),
            seed: 0,
            extended_infomax: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be non-negative, got {}", self.eta)));
        }
        Ok(())
    }
}

/// Learner state. For Herault-Jutten `w` holds the off-diagonal feedback
/// matrix `C`; otherwise it is the separating matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub algorithm: Algorithm,
    pub w: DMatrix<f64>,
}

impl BaselineState {
    /// `W = I` (or `C = 0`).
    pub fn init(algorithm: Algorithm, d: usize) -> Self {
        let w = match algorithm {
            Algorithm::HeraultJutten => DMatrix::zeros(d, d),
            _ => DMatrix::identity(d, d),
        };
        Self { algorithm, w }
    }
}

fn col(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

/// `y = W x`, `ΔW = η[g(y)xᵀ − g(y)g(y)ᵀ W]`. Expects whitened input.
pub fn nonlinear_oja_step(w: &mut DMatrix<f64>, x: &[f64], eta: f64, g: Nonlinearity) -> DVector<f64> {
    let xv = col(x);
    let y = &*w * &xv;
    let gy = y.map(|v| g.apply(v));
    let gw = gy.transpose() * &*w;
    *w += (&gy * xv.transpose() - &gy * gw) * eta;
    y
}

/// `y = W x`, `ΔW = −η[(yyᵀ − I) + g(y)yᵀ − y g(y)ᵀ] W`.
pub fn easi_step(w: &mut DMatrix<f64>, x: &[f64], eta: f64, g: Nonlinearity) -> DVector<f64> {
    let d = x.len();
    let y = &*w * col(x);
    let gy = y.map(|v| g.apply(v));
    let h = &y * y.transpose() - DMatrix::identity(d, d) + &gy * y.transpose() - &y * gy.transpose();
    *w -= h * &*w * eta;
    y
}

/// `y = W x`, `ΔW = η[I − φ(y)yᵀ] W`.
pub fn amari_step(w: &mut DMatrix<f64>, x: &[f64], eta: f64, g: Nonlinearity) -> DVector<f64> {
    let d = x.len();
    let y = &*w * col(x);
    let gy = y.map(|v| g.apply(v));
    let h = DMatrix::identity(d, d) - &gy * y.transpose();
    *w += h * &*w * eta;
    y
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `y = W x`, `ΔW = η[W⁻ᵀ + (1 − 2σ(y)) xᵀ]`; with `signs`, the extended
/// rule `ΔW = η[W⁻ᵀ − (k ∘ tanh(y) + y) xᵀ]`.
pub fn infomax_step(w: &mut DMatrix<f64>, x: &[f64], eta: f64, signs: Option<&[f64]>) -> Result<DVector<f64>> {
    let xv = col(x);
    let y = &*w * &xv;
    let inv = w
        .clone()
        .try_inverse()
        .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    let score = match signs {
        None => y.map(|v| 1.0 - 2.0 * logistic(v)),
        Some(k) => DVector::from_fn(y.len(), |i, _| -(k[i] * y[i].tanh() + y[i])),
    };
    *w += (inv.transpose() + score * xv.transpose()) * eta;
    Ok(y)
}

/// `y = (I + C)⁻¹ x`, `ΔC_ij = η y_i³ y_j` for `i ≠ j`.
pub fn herault_jutten_step(c: &mut DMatrix<f64>, x: &[f64], eta: f64, g: Nonlinearity) -> Result<DVector<f64>> {
    let d = x.len();
    let a = DMatrix::identity(d, d) + &*c;
    let y = a.lu().solve(&col(x)).ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    for i in 0..d {
        let gi = g.apply(y[i]);
        for j in 0..d {
            if i != j {
                c[(i, j)] += eta * gi * y[j];
            }
        }
    }
    Ok(y)
}

const KURTOSIS_WINDOW: usize = 1000;

/// Kurtosis sign per channel over the trailing window of outputs.
#[derive(Debug, Clone)]
struct KurtosisSign {
    window: Vec<Vec<f64>>,
    next: usize,
    filled: usize,
    signs: Vec<f64>,
}

impl KurtosisSign {
    fn new(d: usize) -> Self {
        Self { window: vec![vec![0.0; d]; KURTOSIS_WINDOW], next: 0, filled: 0, signs: vec![1.0; d] }
    }

    fn push(&mut self, y: &[f64]) {
        self.window[self.next].copy_from_slice(y);
        self.next = (self.next + 1) % KURTOSIS_WINDOW;
        self.filled = (self.filled + 1).min(KURTOSIS_WINDOW);
        if self.filled < KURTOSIS_WINDOW {
            return;
        }
        let n = KURTOSIS_WINDOW as f64;
        for i in 0..self.signs.len() {
            let mean = self.window.iter().map(|r| r[i]).sum::<f64>() / n;
            let (mut m2, mut m4) = (0.0, 0.0);
            for r in &self.window {
                let v = (r[i] - mean) * (r[i] - mean);
                m2 += v;
                m4 += v * v;
            }
            let kurt = (m4 / n) / (m2 / n).powi(2);
            self.signs[i] = if kurt >= 3.0 { 1.0 } else { -1.0 };
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineLearner {
    pub config: BaselineConfig,
    pub state: BaselineState,
    kurtosis: Option<KurtosisSign>,
}

impl BaselineLearner {
    pub fn new(config: BaselineConfig, d: usize) -> Result<Self> {
        config.validate()?;
        if d == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        let kurtosis = (config.extended_infomax && config.algorithm == Algorithm::Infomax).then(|| KurtosisSign::new(d));
        Ok(Self { config, state: BaselineState::init(config.algorithm, d), kurtosis })
    }

    fn forward(&self, x: &[f64]) -> Result<DVector<f64>> {
        match self.config.algorithm {
            Algorithm::HeraultJutten => {
                let d = x.len();
                (DMatrix::identity(d, d) + &self.state.w)
                    .lu()
                    .solve(&col(x))
                    .ok_or(Error::IllConditioned { condition: f64::INFINITY })
            }
            _ => Ok(&self.state.w * col(x)),
        }
    }
}

impl StreamingLearner for BaselineLearner {
    fn dim(&self) -> usize {
        self.state.w.nrows()
    }

    fn step(&mut self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let BaselineConfig { eta, nonlinearity: g, .. } = self.config;
        let w = &mut self.state.w;
        let out = match self.config.algorithm {
            Algorithm::HeraultJutten => herault_jutten_step(w, x, eta, g)?,
            Algorithm::Easi => easi_step(w, x, eta, g),
            Algorithm::Amari => amari_step(w, x, eta, g),
            Algorithm::NonlinearOja => nonlinear_oja_step(w, x, eta, g),
            Algorithm::Infomax => {
                let signs = self.kurtosis.as_ref().map(|k| k.signs.clone());
                let out = infomax_step(w, x, eta, signs.as_deref())?;
                if let Some(k) = self.kurtosis.as_mut() {
                    k.push(out.as_slice());
                }
                out
            }
        };
        y.copy_from_slice(out.as_slice());
        Ok(())
    }

    fn infer(&mut self, x: &[f64], y: &mut [f64]) -> Result<()> {
        y.copy_from_slice(self.forward(x)?.as_slice());
        Ok(())
    }

    fn weight_norm(&self) -> f64 {
        self.state.w.norm()
    }
}
