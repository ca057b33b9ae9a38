//! Similarity-matching ICA: feedforward weights `W`, lateral weights `M`
//! and the per-neuron scales `λ_i²` that break the rotation symmetry.

pub mod offline;
pub mod online;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{asymmetry, min_eigenvalue};
use crate::{Error, Result};

pub use offline::{fit_offline, gamma_inv, loss, offline_step, optimal_y, EpochDiagnostics, OfflineConfig, OfflineFitReport};
pub use online::{
    neural_dynamics, project, step_online, synaptic_update, DynamicsConfig, DynamicsMode, NeuralStep, OnlineLearner,
};

/// Fits abort once `‖W‖_F` exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

const M_SYMMETRY_TOLERANCE: f64 = 1e-10;
const LAMBDA_MIN_RELATIVE_GAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmicaState {
    pub w: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub lambda_sq: Vec<f64>,
    pub eta: f64,
    pub tau: f64,
    pub rng_seed: u64,
}

impl SmicaState {
    /// Random `W ~ N(0, 1)` and `M = I`.
    pub fn init(d: usize, lambda_sq: Vec<f64>, eta: f64, tau: f64, rng_seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let w = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        Self::new(w, DMatrix::identity(d, d), lambda_sq, eta, tau, rng_seed)
    }

    pub fn new(w: DMatrix<f64>, m: DMatrix<f64>, lambda_sq: Vec<f64>, eta: f64, tau: f64, rng_seed: u64) -> Result<Self> {
        let s = Self { w, m, lambda_sq, eta, tau, rng_seed };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.w.nrows();
        if self.w.ncols() != d || self.m.shape() != (d, d) || self.lambda_sq.len() != d {
            return Err(Error::Config(format!(
                "shape mismatch: W {:?}, M {:?}, {} lambdas",
                self.w.shape(),
                self.m.shape(),
                self.lambda_sq.len()
            )));
        }
        validate_lambda_sq(&self.lambda_sq)?;
        if !(self.eta >= 0.0 && self.tau > 0.0 && self.eta < self.tau) {
            return Err(Error::Config(format!("need 0 <= eta < tau, got eta={} tau={}", self.eta, self.tau)));
        }
        if self.w.iter().chain(self.m.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite weights"));
        }
        if asymmetry(&self.m) > M_SYMMETRY_TOLERANCE {
            return Err(Error::invalid("M is not symmetric"));
        }
        let lmin = min_eigenvalue(&self.m)?;
        if lmin <= 0.0 {
            return Err(Error::IllConditioned { condition: f64::INFINITY });
        }
        Ok(())
    }
}

pub fn validate_lambda_sq(lambda_sq: &[f64]) -> Result<()> {
    if lambda_sq.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
        return Err(Error::Config(format!("lambda values must be finite and positive: {lambda_sq:?}")));
    }
    for i in 0..lambda_sq.len() {
        for j in (i + 1)..lambda_sq.len() {
            let (a, b) = (lambda_sq[i], lambda_sq[j]);
            if (a - b).abs() < LAMBDA_MIN_RELATIVE_GAP * a.max(b) {
                return Err(Error::Config(format!("lambda values {i} and {j} are not distinct: {lambda_sq:?}")));
            }
        }
    }
    Ok(())
}

/// `λ_i²` from user values read either as `λ_i` or as `1/λ_i`.
pub fn lambda_sq_from(values: &[f64], is_inverse: bool) -> Result<Vec<f64>> {
    let sq: Vec<f64> = values
        .iter()
        .map(|&v| if is_inverse { 1.0 / (v * v) } else { v * v })
        .collect();
    validate_lambda_sq(&sq)?;
    Ok(sq)
}

/// `λ_i = 1 + i/2`.
pub fn default_lambda(d: usize) -> Vec<f64> {
    (0..d).map(|i| 1.0 + 0.5 * i as f64).collect()
}

fn check_divergence(w: &DMatrix<f64>, at: impl FnOnce() -> String) -> Result<()> {
    let norm = w.norm();
    if !(norm <= DIVERGENCE_LIMIT) {
        return Err(Error::Divergence { at: at(), norm, limit: DIVERGENCE_LIMIT });
    }
    Ok(())
}
