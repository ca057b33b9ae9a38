//! Fourth-order blind identification: whiten, weight each sample by its
//! norm, diagonalize the weighted covariance, rotate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{sample_covariance, sym_eig, whiten, whitening_for, WhiteningTransform};
use crate::metrics::{align, kurtosis};
use crate::{Error, Result, SignalMatrix};

/// Adjacent weighted eigenvalues closer than this fraction of the largest
/// are reported as tied.
pub const TIE_RELATIVE_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FobiResult {
    pub whitening: WhiteningTransform,
    /// Rows are eigenvectors of the weighted covariance, eigenvalues descending.
    pub rotation: DMatrix<f64>,
    pub weighted_eigenvalues: Vec<f64>,
    pub sources: SignalMatrix,
    /// Indices `i` whose eigenvalue ties with `i + 1`; those channels may be
    /// mixed with each other.
    pub tied_pairs: Vec<usize>,
}

impl FobiResult {
    pub fn has_tie(&self) -> bool {
        !self.tied_pairs.is_empty()
    }

    /// `W_z C^{-1/2}`, mapping raw mixtures to separated outputs.
    pub fn separating_matrix(&self) -> DMatrix<f64> {
        &self.rotation * &self.whitening.inv_sqrt
    }
}

/// `z_t = ‖h_t‖ h_t`.
pub fn norm_weight(h: &SignalMatrix) -> SignalMatrix {
    let mut z = h.as_matrix().clone();
    for mut col in z.column_iter_mut() {
        let n = col.norm();
        col *= n;
    }
    SignalMatrix::new(z).expect("scaling finite columns by their norms stays finite")
}

pub fn fobi_separate(x: &SignalMatrix) -> Result<FobiResult> {
    let d = x.channels();
    if d < 2 {
        return Err(Error::invalid(format!("FOBI needs at least 2 channels, got {d}")));
    }
    if x.samples() < d {
        return Err(Error::invalid(format!("{} samples for {d} channels", x.samples())));
    }
    let whitening = whitening_for(x)?;
    let h = whiten(x, &whitening)?;
    let cz = sample_covariance(&norm_weight(&h));
    let eig = sym_eig(&cz)?;
    let rotation = eig.eigenvectors.transpose();
    let weighted_eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let lmax = weighted_eigenvalues[0].abs();
    let tied_pairs = (0..d - 1)
        .filter(|&i| (weighted_eigenvalues[i] - weighted_eigenvalues[i + 1]).abs() <= TIE_RELATIVE_GAP * lmax)
        .collect();
    let sources = SignalMatrix::new(&rotation * h.as_matrix())?;
    Ok(FobiResult { whitening, rotation, weighted_eigenvalues, sources, tied_pairs })
}

/// Expected weighted eigenvalue of a unit-variance source with (non-excess)
/// kurtosis `kurt` among `d` independent sources: `E s⁴ + (d − 1)`, i.e.
/// excess kurtosis plus `d + 2`.
pub fn expected_weighted_eigenvalue(kurt: f64, d: usize) -> f64 {
    kurt + d as f64 - 1.0
}

/// Per output channel, the distance between its weighted eigenvalue and the
/// value predicted from the kurtosis of the true source it aligns with.
pub fn weighted_eigenvalue_identity_check(s: &SignalMatrix, result: &FobiResult) -> Result<Vec<f64>> {
    let a = align(s, &result.sources)?;
    let d = s.channels();
    let mut residuals = vec![0.0; d];
    for (truth, &out) in a.permutation.iter().enumerate() {
        let expected = expected_weighted_eigenvalue(kurtosis(&s.channel(truth))?, d);
        residuals[out] = (result.weighted_eigenvalues[out] - expected).abs();
    }
    Ok(residuals)
}
