//! Streaming learner: project, settle the recurrent dynamics, then apply
//! the local synaptic updates.

use serde::{Deserialize, Serialize};

use super::SmicaState;
use crate::stream::StreamingLearner;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsMode {
    /// Solve `M y = c` directly.
    #[default]
    Exact,
    /// Iterate `y ← y + γ(c − M y)` from `y = 0`.
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub mode: DynamicsMode,
    /// Euler step; `None` means `0.5 / trace(M)` at each sample.
    pub gamma: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { mode: DynamicsMode::Exact, gamma: None, tolerance: 1e-10, max_iterations: 10_000 }
    }
}

impl DynamicsConfig {
    pub fn euler() -> Self {
        Self { mode: DynamicsMode::Euler, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be positive, got {g}")));
            }
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("dynamics tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralStep {
    pub c: Vec<f64>,
    pub y: Vec<f64>,
    /// `‖y‖²`, the global modulator of the feedforward update.
    pub alpha: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn check_input(state: &SmicaState, x: &[f64]) -> Result<()> {
    if x.len() != state.dim() {
        return Err(Error::invalid(format!("sample has {} entries, state dimension is {}", x.len(), state.dim())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    Ok(())
}

/// `c = W x`.
pub fn project(state: &SmicaState, x: &[f64]) -> Result<Vec<f64>> {
    check_input(state, x)?;
    let mut c = vec![0.0; x.len()];
    project_into(state, x, &mut c);
    Ok(c)
}

fn project_into(state: &SmicaState, x: &[f64], c: &mut [f64]) {
    let d = x.len();
    c.iter_mut().for_each(|v| *v = 0.0);
    let w = state.w.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        let col = &w[j * d..(j + 1) * d];
        for i in 0..d {
            c[i] += col[i] * xj;
        }
    }
}

/// In-place Cholesky of a column-major `d×d` buffer; false unless SPD.
fn cholesky_in_place(a: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[k * d + j] * a[k * d + j];
        }
        if !(diag > 0.0) {
            return false;
        }
        let l = diag.sqrt();
        a[j * d + j] = l;
        for i in (j + 1)..d {
            let mut v = a[j * d + i];
            for k in 0..j {
                v -= a[k * d + i] * a[k * d + j];
            }
            a[j * d + i] = v / l;
        }
    }
    true
}

/// Solves `L Lᵀ y = b` in place given the factor from [`cholesky_in_place`].
fn cholesky_solve(l: &[f64], d: usize, b: &mut [f64]) {
    for i in 0..d {
        let mut v = b[i];
        for k in 0..i {
            v -= l[k * d + i] * b[k];
        }
        b[i] = v / l[i * d + i];
    }
    for i in (0..d).rev() {
        let mut v = b[i];
        for k in (i + 1)..d {
            v -= l[i * d + k] * b[k];
        }
        b[i] = v / l[i * d + i];
    }
}

fn residual_norm(state: &SmicaState, c: &[f64], y: &[f64]) -> f64 {
    let d = c.len();
    let m = state.m.as_slice();
    let mut r2 = 0.0;
    for i in 0..d {
        let mut r = c[i];
        for j in 0..d {
            r -= m[j * d + i] * y[j];
        }
        r2 += r * r;
    }
    r2.sqrt()
}

fn exact_solve(state: &SmicaState, c: &[f64], y: &mut [f64], scratch: &mut [f64]) -> Result<()> {
    let d = c.len();
    scratch.copy_from_slice(state.m.as_slice());
    if !cholesky_in_place(scratch, d) {
        return Err(Error::IllConditioned { condition: f64::INFINITY });
    }
    y.copy_from_slice(c);
    cholesky_solve(scratch, d, y);
    Ok(())
}

/// Euler iteration; returns (iterations, residual, converged).
fn euler_settle(state: &SmicaState, c: &[f64], y: &mut [f64], cfg: &DynamicsConfig, r: &mut [f64]) -> Result<(usize, f64, bool)> {
    let d = c.len();
    let m = state.m.as_slice();
    let gamma = cfg.gamma.unwrap_or_else(|| 0.5 / state.m.trace());
    y.iter_mut().for_each(|v| *v = 0.0);
    let mut residual = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut it = 0;
    while residual > cfg.tolerance && it < cfg.max_iterations {
        for i in 0..d {
            let mut v = c[i];
            for j in 0..d {
                v -= m[j * d + i] * y[j];
            }
            r[i] = v;
        }
        for i in 0..d {
            y[i] += gamma * r[i];
        }
        it += 1;
        residual = residual_norm(state, c, y);
        if !residual.is_finite() {
            return Err(Error::Divergence { at: format!("neural dynamics iteration {it}"), norm: residual, limit: f64::MAX });
        }
    }
    Ok((it, residual, residual <= cfg.tolerance))
}

/// Settles the output for a projected input `c`.
pub fn neural_dynamics(state: &SmicaState, c: &[f64], cfg: &DynamicsConfig) -> Result<NeuralStep> {
    check_input(state, c)?;
    cfg.validate()?;
    let d = c.len();
    let mut y = vec![0.0; d];
    let (iterations, residual, converged) = match cfg.mode {
        DynamicsMode::Exact => {
            let mut scratch = vec![0.0; d * d];
            exact_solve(state, c, &mut y, &mut scratch)?;
            (1, residual_norm(state, c, &y), true)
        }
        DynamicsMode::Euler => {
            let mut r = vec![0.0; d];
            euler_settle(state, c, &mut y, cfg, &mut r)?
        }
    };
    let alpha = y.iter().map(|v| v * v).sum();
    Ok(NeuralStep { c: c.to_vec(), y, alpha, iterations, residual, converged })
}

/// Per synapse: `ΔW_ij = 2η(y_i x_j − ‖y‖² (c_i/λ_i²) x_j)` and
/// `ΔM_ij = (η/τ)(y_i y_j − δ_ij)`.
pub(crate) fn apply_update(state: &mut SmicaState, x: &[f64], c: &[f64], y: &[f64]) {
    let d = x.len();
    let alpha: f64 = y.iter().map(|v| v * v).sum();
    let eta = state.eta;
    let rate_m = state.eta / state.tau;
    let w = state.w.as_mut_slice();
    for j in 0..d {
        for i in 0..d {
            w[j * d + i] += 2.0 * eta * (y[i] * x[j] - alpha * (c[i] / state.lambda_sq[i]) * x[j]);
        }
    }
    let m = state.m.as_mut_slice();
    for j in 0..d {
        for i in 0..d {
            let delta = if i == j { 1.0 } else { 0.0 };
            m[j * d + i] += rate_m * (y[i] * y[j] - delta);
        }
    }
}

pub fn synaptic_update(state: &mut SmicaState, x: &[f64], step: &NeuralStep) -> Result<()> {
    check_input(state, x)?;
    apply_update(state, x, &step.c, &step.y);
    debug_assert!(crate::linalg::asymmetry(&state.m) <= 1e-12);
    Ok(())
}

/// One sample of the streaming algorithm. The returned output uses the
/// weights from before the update.
pub fn step_online(state: &mut SmicaState, x: &[f64], cfg: &DynamicsConfig) -> Result<NeuralStep> {
    let c = project(state, x)?;
    let step = neural_dynamics(state, &c, cfg)?;
    synaptic_update(state, x, &step)?;
    Ok(step)
}

/// Allocation-free streaming wrapper around [`SmicaState`].
#[derive(Debug, Clone)]
pub struct OnlineLearner {
    pub state: SmicaState,
    pub dynamics: DynamicsConfig,
    c: Vec<f64>,
    scratch: Vec<f64>,
    unconverged: usize,
}

impl OnlineLearner {
    pub fn new(state: SmicaState, dynamics: DynamicsConfig) -> Result<Self> {
        state.validate()?;
        dynamics.validate()?;
        let d = state.dim();
        Ok(Self { state, dynamics, c: vec![0.0; d], scratch: vec![0.0; d * d], unconverged: 0 })
    }

    fn settle(&mut self, x: &[f64], y: &mut [f64]) -> Result<()> {
        project_into(&self.state, x, &mut self.c);
        match self.dynamics.mode {
            DynamicsMode::Exact => exact_solve(&self.state, &self.c, y, &mut self.scratch),
            DynamicsMode::Euler => {
                let d = x.len();
                let (_, _, ok) = euler_settle(&self.state, &self.c, y, &self.dynamics, &mut self.scratch[..d])?;
                if !ok {
                    self.unconverged += 1;
                }
                Ok(())
            }
        }
    }
}

impl StreamingLearner for OnlineLearner {
    fn dim(&self) -> usize {
        self.state.dim()
    }

    fn step(&mut self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.settle(x, y)?;
        apply_update(&mut self.state, x, &self.c, y);
        Ok(())
    }

    fn infer(&mut self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.settle(x, y)
    }

    fn weight_norm(&self) -> f64 {
        self.state.w.norm()
    }

    fn unconverged_steps(&self) -> usize {
        self.unconverged
    }
}
