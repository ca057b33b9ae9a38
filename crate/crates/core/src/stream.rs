//! Shared driver for per-sample learners.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{align, AlignmentResult, CurveTracker, MseCurve};
use crate::smica::DIVERGENCE_LIMIT;
use crate::{Error, Result, SignalMatrix};

/// A learner that consumes one sample at a time and emits one output.
pub trait StreamingLearner {
    fn dim(&self) -> usize;

    /// Emits the output for `x` and then learns from it.
    fn step(&mut self, x: &[f64], y: &mut [f64]) -> Result<()>;

    /// Emits the output for `x` without learning.
    fn infer(&mut self, x: &[f64], y: &mut [f64]) -> Result<()>;

    fn weight_norm(&self) -> f64;

    /// Samples whose dynamics hit the iteration cap.
    fn unconverged_steps(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub epochs: usize,
    /// Reshuffle the sample order each epoch instead of replaying in order.
    pub shuffle: bool,
    pub seed: u64,
    /// Curve points every this many samples; 0 disables the curve.
    pub curve_stride: usize,
    /// Run a second pass with frozen weights after training.
    pub frozen_pass: bool,
    /// How often (in samples) the weight norm is checked.
    pub guard_every: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { epochs: 1, shuffle: false, seed: 0, curve_stride: 0, frozen_pass: true, guard_every: 256 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamReport {
    pub samples_seen: usize,
    /// Prefix error of the on-the-fly outputs.
    pub curve: Option<MseCurve>,
    /// Alignment of the final outputs against the truth.
    pub alignment: Option<AlignmentResult>,
    /// Frozen-pass outputs, or the last epoch's on-the-fly outputs.
    pub outputs: SignalMatrix,
    pub unconverged_steps: usize,
}

impl StreamReport {
    pub fn final_mse(&self) -> Option<f64> {
        self.alignment.as_ref().map(|a| a.aligned_mse)
    }
}

fn guard(learner: &impl StreamingLearner, seen: usize) -> Result<()> {
    let norm = learner.weight_norm();
    if !(norm <= DIVERGENCE_LIMIT) {
        return Err(Error::Divergence { at: format!("sample {seen}"), norm, limit: DIVERGENCE_LIMIT });
    }
    Ok(())
}

/// Streams `x` through the learner for the configured epochs.
pub fn fit_stream<L: StreamingLearner>(
    learner: &mut L,
    x: &SignalMatrix,
    truth: Option<&SignalMatrix>,
    cfg: &StreamConfig,
) -> Result<StreamReport> {
    let (d, t) = (x.channels(), x.samples());
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if t == 0 {
        return Err(Error::invalid("empty stream"));
    }
    if learner.dim() != d {
        return Err(Error::invalid(format!("learner dimension {} for {d}-channel data", learner.dim())));
    }
    if let Some(s) = truth {
        if s.channels() != d || s.samples() != t {
            return Err(Error::invalid("truth shape differs from the stream"));
        }
    }
    let xm = x.as_matrix().as_slice();
    let tm = truth.map(|s| s.as_matrix().as_slice());
    let mut tracker = match (truth, cfg.curve_stride) {
        (Some(_), stride) if stride > 0 => Some(CurveTracker::new(d, stride)),
        _ => None,
    };
    let keep_online = !cfg.frozen_pass;
    let mut outputs = if keep_online { vec![0.0; d * t] } else { Vec::new() };
    let mut order: Vec<usize> = (0..t).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y = vec![0.0; d];
    let guard_every = cfg.guard_every.max(1);
    let mut seen = 0usize;
    for _ in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for &k in &order {
            let xs = &xm[k * d..(k + 1) * d];
            learner.step(xs, &mut y)?;
            seen += 1;
            if let (Some(tr), Some(tm)) = (tracker.as_mut(), tm) {
                tr.push(&tm[k * d..(k + 1) * d], &y);
            }
            if keep_online {
                outputs[k * d..(k + 1) * d].copy_from_slice(&y);
            }
            if seen % guard_every == 0 {
                guard(learner, seen)?;
            }
        }
    }
    guard(learner, seen)?;
    if cfg.frozen_pass {
        outputs = vec![0.0; d * t];
        for k in 0..t {
            learner.infer(&xm[k * d..(k + 1) * d], &mut y)?;
            outputs[k * d..(k + 1) * d].copy_from_slice(&y);
        }
    }
    let outputs = SignalMatrix::new(DMatrix::from_vec(d, t, outputs))
        .map_err(|_| Error::Divergence { at: format!("sample {seen}"), norm: f64::NAN, limit: DIVERGENCE_LIMIT })?;
    let alignment = truth.map(|s| align(s, &outputs)).transpose()?;
    Ok(StreamReport {
        samples_seen: seen,
        curve: tracker.map(CurveTracker::finish),
        alignment,
        outputs,
        unconverged_steps: learner.unconverged_steps(),
    })
}
