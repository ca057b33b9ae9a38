//! Dense symmetric kernels: covariance, eigendecomposition, inverse square
//! root and whitening.
//!
//! Signals are stored channel-major as a `d × T` matrix whose columns are
//! the samples. nalgebra is column-major, so a sample is a contiguous slice.

use nalgebra::{DMatrix, DVector, DVectorView, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative asymmetry accepted by [`sym_eig`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// A `d × T` block of `d`-channel samples, all finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalMatrix {
    data: DMatrix<f64>,
}

impl SignalMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid(format!(
                "signal must have at least one channel and one sample, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % data.nrows(), pos / data.nrows());
            return Err(Error::invalid(format!("non-finite entry at channel {r}, sample {c}")));
        }
        Ok(Self { data })
    }

    /// Builds a signal from one vector per channel.
    pub fn from_channels(channels: &[Vec<f64>]) -> Result<Self> {
        let d = channels.len();
        let t = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != t) {
            return Err(Error::invalid("channels have different lengths"));
        }
        Self::new(DMatrix::from_fn(d, t, |i, j| channels[i][j]))
    }

    pub fn zeros(d: usize, t: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(d, t))
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn sample(&self, t: usize) -> DVectorView<'_, f64> {
        self.data.column(t)
    }

    pub fn channel(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Column-sliced copy of samples `start..end`.
    pub fn slice_samples(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.samples() {
            return Err(Error::invalid(format!("bad sample range {start}..{end}")));
        }
        Self::new(self.data.columns(start, end - start).into_owned())
    }

    /// Channel subset / reordering.
    pub fn select_channels(&self, idx: &[usize]) -> Result<Self> {
        if idx.iter().any(|&i| i >= self.channels()) {
            return Err(Error::invalid("channel index out of range"));
        }
        Self::new(self.data.select_rows(idx))
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymmetricEig {
    pub eigenvalues: DVector<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
}

/// `C^{1/2}` and `C^{-1/2}` of a covariance, after eigenvalue flooring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningTransform {
    pub inv_sqrt: DMatrix<f64>,
    pub sqrt: DMatrix<f64>,
    pub eigenvalue_floor: f64,
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Largest |a_ij - a_ji| relative to the largest |a_ij|.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).amax() / scale
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::invalid(format!(
            "{what} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// Uncentered sample covariance `(1/T) X Xᵀ`.
pub fn sample_covariance(x: &SignalMatrix) -> DMatrix<f64> {
    let m = x.as_matrix();
    let mut c = m * m.transpose();
    c /= x.samples() as f64;
    symmetrize(&mut c);
    c
}

/// Symmetric eigendecomposition with descending eigenvalues. Each
/// eigenvector is signed so that its largest-magnitude entry is positive.
pub fn sym_eig(c: &DMatrix<f64>) -> Result<SymmetricEig> {
    check_square(c, "matrix")?;
    let asym = asymmetry(c);
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::invalid(format!("matrix is not symmetric (relative asymmetry {asym:e})")));
    }
    let mut sym = c.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);

    let n = c.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let pivot = col.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(SymmetricEig { eigenvalues, eigenvectors })
}

fn spectral_fn(eig: &SymmetricEig, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let q = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * f(eig.eigenvalues[j]));
    let mut out = scaled * q.transpose();
    symmetrize(&mut out);
    out
}

/// Default eigenvalue floor: `1e-12 · λ_max`.
pub fn default_floor(c: &DMatrix<f64>) -> Result<f64> {
    let eig = sym_eig(c)?;
    Ok(1e-12 * eig.eigenvalues[0].max(0.0))
}

/// `C^{-1/2}` and `C^{1/2}` of a PSD matrix. Eigenvalues below `floor` are
/// raised to `floor`.
pub fn inv_sqrt(c: &DMatrix<f64>, floor: f64) -> Result<WhiteningTransform> {
    let eig = sym_eig(c)?;
    let lmax = eig.eigenvalues[0];
    if !(floor > 0.0) {
        if lmax <= 0.0 {
            return Err(Error::DegenerateCovariance { max_eigenvalue: lmax, floor });
        }
        return Err(Error::invalid(format!("eigenvalue floor must be positive, got {floor:e}")));
    }
    if lmax <= floor {
        return Err(Error::DegenerateCovariance { max_eigenvalue: lmax, floor });
    }
    let lmin = eig.eigenvalues[eig.eigenvalues.len() - 1];
    if lmin < -1e-10 * lmax {
        return Err(Error::invalid(format!(
            "matrix is not positive semi-definite (eigenvalue {lmin:e}, max {lmax:e})"
        )));
    }
    Ok(WhiteningTransform {
        inv_sqrt: spectral_fn(&eig, |l| 1.0 / l.max(floor).sqrt()),
        sqrt: spectral_fn(&eig, |l| l.max(floor).sqrt()),
        eigenvalue_floor: floor,
    })
}

/// [`inv_sqrt`] with the default relative floor.
pub fn inv_sqrt_auto(c: &DMatrix<f64>) -> Result<WhiteningTransform> {
    let floor = default_floor(c)?;
    inv_sqrt(c, floor)
}

/// `H = C^{-1/2} X`.
pub fn whiten(x: &SignalMatrix, w: &WhiteningTransform) -> Result<SignalMatrix> {
    if w.inv_sqrt.ncols() != x.channels() {
        return Err(Error::invalid(format!(
            "whitening transform is {}x{}, signal has {} channels",
            w.inv_sqrt.nrows(),
            w.inv_sqrt.ncols(),
            x.channels()
        )));
    }
    SignalMatrix::new(&w.inv_sqrt * x.as_matrix())
}

/// Whitening transform estimated from the signal itself.
pub fn whitening_for(x: &SignalMatrix) -> Result<WhiteningTransform> {
    inv_sqrt_auto(&sample_covariance(x))
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when the
/// smallest is not positive.
pub fn spd_condition(m: &DMatrix<f64>) -> Result<f64> {
    let eig = sym_eig(m)?;
    let lmax = eig.eigenvalues[0];
    let lmin = eig.eigenvalues[eig.eigenvalues.len() - 1];
    Ok(if lmin <= 0.0 { f64::INFINITY } else { lmax / lmin })
}

/// Spectral condition number of a general square matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    let eig = sym_eig(m)?;
    Ok(eig.eigenvalues[eig.eigenvalues.len() - 1])
}
