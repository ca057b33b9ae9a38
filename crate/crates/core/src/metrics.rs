//! Scoring of recovered sources: kurtosis, sign/permutation alignment and
//! the prefix mean-squared-error curve.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, SignalMatrix};

/// Above this many channels `align` switches from exhaustive search to an
/// optimal assignment.
pub const BRUTE_FORCE_MAX_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMethod {
    BruteForce,
    Assignment,
}

/// Best sign flip and permutation mapping outputs onto the truth.
///
/// Truth channel `i` is matched by `signs[i] * outputs[permutation[i]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub permutation: Vec<usize>,
    pub signs: Vec<i8>,
    pub aligned_mse: f64,
    pub method: AlignMethod,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MseCurve {
    pub times: Vec<usize>,
    pub values: Vec<f64>,
}

impl MseCurve {
    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }
}

/// Fourth standardized moment with 1/T moments (3 for a Gaussian).
pub fn kurtosis(v: &[f64]) -> Result<f64> {
    if v.len() < 4 {
        return Err(Error::invalid(format!("kurtosis needs at least 4 samples, got {}", v.len())));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let (m2, m4) = v.iter().fold((0.0, 0.0), |(m2, m4), &x| {
        let d2 = (x - mean) * (x - mean);
        (m2 + d2, m4 + d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 <= 1e-12 {
        return Err(Error::DegenerateChannel { channel: 0, variance: m2 });
    }
    Ok(m4 / (m2 * m2))
}

pub fn kurtosis_per_channel(s: &SignalMatrix) -> Result<Vec<f64>> {
    (0..s.channels())
        .map(|i| {
            kurtosis(&s.channel(i)).map_err(|e| match e {
                Error::DegenerateChannel { variance, .. } => Error::DegenerateChannel { channel: i, variance },
                other => other,
            })
        })
        .collect()
}

/// `‖(1/T) Y Yᵀ − I‖_F`.
pub fn decorrelation_error(y: &SignalMatrix) -> f64 {
    let d = y.channels();
    (crate::linalg::sample_covariance(y) - DMatrix::identity(d, d)).norm()
}

/// `‖W Wᵀ − I‖_F`.
pub fn orthogonality_error(w: &DMatrix<f64>) -> f64 {
    (w * w.transpose() - DMatrix::identity(w.nrows(), w.nrows())).norm()
}

/// Running sums of `(s_i − y_j)²` and `(s_i + y_j)²` over a prefix.
#[derive(Debug, Clone)]
struct PairErrors {
    d: usize,
    plus: Vec<f64>,
    minus: Vec<f64>,
}

impl PairErrors {
    fn new(d: usize) -> Self {
        Self { d, plus: vec![0.0; d * d], minus: vec![0.0; d * d] }
    }

    fn accumulate(&mut self, s: &[f64], y: &[f64]) {
        let d = self.d;
        for i in 0..d {
            for j in 0..d {
                let a = s[i] - y[j];
                let b = s[i] + y[j];
                self.plus[i * d + j] += a * a;
                self.minus[i * d + j] += b * b;
            }
        }
    }

    /// Best sign for pairing truth `i` with output `j`, and its error.
    fn best(&self, i: usize, j: usize) -> (i8, f64) {
        let k = i * self.d + j;
        if self.plus[k] <= self.minus[k] {
            (1, self.plus[k])
        } else {
            (-1, self.minus[k])
        }
    }

    fn align(&self, samples: usize) -> AlignmentResult {
        let d = self.d;
        let norm = (samples * d) as f64;
        if d <= BRUTE_FORCE_MAX_CHANNELS {
            // Exhaustive over permutations. For a fixed permutation the
            // sign of each pairing enters the sum independently, so the
            // per-pair best sign is the minimum over all 2^d sign vectors.
            let mut perm: Vec<usize> = (0..d).collect();
            let mut best_perm = perm.clone();
            let mut best_cost = f64::INFINITY;
            loop {
                let cost: f64 = (0..d).map(|i| self.best(i, perm[i]).1).sum();
                if cost < best_cost {
                    best_cost = cost;
                    best_perm.copy_from_slice(&perm);
                }
                if !next_permutation(&mut perm) {
                    break;
                }
            }
            let signs = (0..d).map(|i| self.best(i, best_perm[i]).0).collect();
            AlignmentResult {
                permutation: best_perm,
                signs,
                aligned_mse: best_cost / norm,
                method: AlignMethod::BruteForce,
            }
        } else {
            self.align_by_assignment(samples)
        }
    }

    fn align_by_assignment(&self, samples: usize) -> AlignmentResult {
        let d = self.d;
        let cost = DMatrix::from_fn(d, d, |i, j| self.best(i, j).1);
        let perm = hungarian(&cost);
        let total: f64 = (0..d).map(|i| cost[(i, perm[i])]).sum();
        AlignmentResult {
            signs: (0..d).map(|i| self.best(i, perm[i]).0).collect(),
            permutation: perm,
            aligned_mse: total / (samples * d) as f64,
            method: AlignMethod::Assignment,
        }
    }
}

fn pair_errors(truth: &SignalMatrix, outputs: &SignalMatrix) -> Result<PairErrors> {
    check_shapes(truth, outputs)?;
    let mut pe = PairErrors::new(truth.channels());
    for t in 0..truth.samples() {
        pe.accumulate(truth.sample(t).as_slice(), outputs.sample(t).as_slice());
    }
    Ok(pe)
}

fn check_shapes(truth: &SignalMatrix, outputs: &SignalMatrix) -> Result<()> {
    if truth.channels() != outputs.channels() || truth.samples() != outputs.samples() {
        return Err(Error::invalid(format!(
            "truth is {}x{} but outputs are {}x{}",
            truth.channels(),
            truth.samples(),
            outputs.channels(),
            outputs.samples()
        )));
    }
    Ok(())
}

/// Sign/permutation alignment minimizing the mean squared error.
pub fn align(truth: &SignalMatrix, outputs: &SignalMatrix) -> Result<AlignmentResult> {
    Ok(pair_errors(truth, outputs)?.align(truth.samples()))
}

/// Alignment through the assignment solver regardless of channel count.
pub fn align_assignment(truth: &SignalMatrix, outputs: &SignalMatrix) -> Result<AlignmentResult> {
    Ok(pair_errors(truth, outputs)?.align_by_assignment(truth.samples()))
}

/// Final prefix error over the full signal.
pub fn mse(truth: &SignalMatrix, outputs: &SignalMatrix) -> Result<f64> {
    Ok(align(truth, outputs)?.aligned_mse)
}

/// Outputs reordered and sign-flipped onto the truth channels.
pub fn apply_alignment(outputs: &SignalMatrix, a: &AlignmentResult) -> Result<SignalMatrix> {
    let m = outputs.as_matrix();
    SignalMatrix::new(DMatrix::from_fn(m.nrows(), m.ncols(), |i, t| {
        f64::from(a.signs[i]) * m[(a.permutation[i], t)]
    }))
}

/// Prefix error `ε(t)` at every `stride`-th sample (and at the last one),
/// with the alignment re-optimized for each prefix.
pub fn mse_curve(truth: &SignalMatrix, outputs: &SignalMatrix, stride: usize) -> Result<MseCurve> {
    check_shapes(truth, outputs)?;
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let mut tracker = CurveTracker::new(truth.channels(), stride);
    for t in 0..truth.samples() {
        tracker.push(truth.sample(t).as_slice(), outputs.sample(t).as_slice());
    }
    Ok(tracker.finish())
}

/// Incremental form of [`mse_curve`] for outputs produced on the fly.
#[derive(Debug, Clone)]
pub struct CurveTracker {
    pairs: PairErrors,
    stride: usize,
    seen: usize,
    curve: MseCurve,
}

impl CurveTracker {
    pub fn new(d: usize, stride: usize) -> Self {
        Self { pairs: PairErrors::new(d), stride: stride.max(1), seen: 0, curve: MseCurve::default() }
    }

    pub fn push(&mut self, truth: &[f64], output: &[f64]) {
        self.pairs.accumulate(truth, output);
        self.seen += 1;
        if self.seen % self.stride == 0 {
            self.record();
        }
    }

    fn record(&mut self) {
        let a = self.pairs.align(self.seen);
        self.curve.times.push(self.seen);
        self.curve.values.push(a.aligned_mse);
    }

    pub fn finish(mut self) -> MseCurve {
        if self.seen > 0 && self.curve.times.last() != Some(&self.seen) {
            self.record();
        }
        self.curve
    }
}

/// Lexicographic next permutation; false once the last one is reached.
fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Minimum-cost perfect matching on a square cost matrix (shortest
/// augmenting path with potentials). Returns the column assigned to each row.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            assignment[row_of[j] - 1] = j - 1;
        }
    }
    assignment
}
