//! Completion of hearing-aid-only prototype sets with an element for the
//! uncalibrated external microphone.
//!
//! With the whitened noise subspace `Q_n` split into its hearing-aid rows
//! `Q_ha` (M x M) and external-microphone row `q_e`, the orthogonality
//! `Q_n^H a^w = 0` reads `Q_ha^H a_ha + conj(q_e) A_e = 0`. Setting
//! `alpha = -1 / A_e`, the hearing-aid part must satisfy
//! `Q_ha^{-H} conj(q_e) = alpha * a_ha`, and the least-squares solution is
//! `alpha = a_ha^H r / ||a_ha||^2` with `r = Q_ha^{-H} conj(q_e)`.
//!
//! `r` depends only on the decomposition, so it is solved once per bin and
//! reused for every candidate direction.

use crate::error::{Error, Result};
use crate::numerics::{condition_estimate, solve_inverse_hermitian_transpose, CMatrix, CVector, CholeskyFactor, C64, MAX_CONDITION};
use crate::subspace::{RtfVector, WhitenedDecomposition};

/// `|alpha|` below this cannot be inverted into a completed element.
pub const MIN_ALPHA: f64 = 1e-12;

/// Row split of the noise basis into hearing-aid block and external-microphone row.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSubspacePartition {
    /// Leading `M` rows of the noise basis, `M x M`.
    pub q_ha: CMatrix,
    /// Last row of the noise basis (not conjugated), length `M`.
    pub q_e: CVector,
    pub condition_estimate: f64,
}

impl NoiseSubspacePartition {
    /// Stacks `[q_ha; q_e^T]` back into the `(M+1) x M` noise basis.
    pub fn restack(&self) -> CMatrix {
        let m = self.q_ha.nrows();
        let mut q = CMatrix::zeros(m + 1, m);
        q.rows_mut(0, m).copy_from(&self.q_ha);
        q.row_mut(m).copy_from(&self.q_e.transpose());
        q
    }

    /// `r = Q_ha^{-H} conj(q_e)`.
    pub fn completion_vector(&self) -> Result<CVector> {
        if !(self.condition_estimate <= MAX_CONDITION) {
            return Err(Error::IllConditioned {
                condition: self.condition_estimate,
            });
        }
        solve_inverse_hermitian_transpose(&self.q_ha, &self.q_e.map(|z| z.conj()))
    }
}

pub fn partition_noise_subspace(d: &WhitenedDecomposition) -> Result<NoiseSubspacePartition> {
    let rows = d.noise_basis.nrows();
    let cols = d.noise_basis.ncols();
    if rows != cols + 1 || cols == 0 {
        return Err(Error::invalid(format!(
            "noise basis must be (M+1) x M, got {rows}x{cols}"
        )));
    }
    let q_ha = d.noise_basis.rows(0, cols).into_owned();
    let q_e = d.noise_basis.row(cols).transpose();
    let condition_estimate = condition_estimate(&q_ha);
    Ok(NoiseSubspacePartition {
        q_ha,
        q_e,
        condition_estimate,
    })
}

/// Least-squares coefficient `a^H r / ||a||^2`.
pub fn alpha_opt(a_ha_w: &CVector, r: &CVector) -> Result<C64> {
    let norm = a_ha_w.norm_squared();
    if !(norm > 0.0) {
        return Err(Error::invalid("zero-norm hearing-aid prototype"));
    }
    if a_ha_w.len() != r.len() {
        return Err(Error::invalid("prototype and completion vector differ in length"));
    }
    Ok(a_ha_w.dotc(r) / norm)
}

/// Completed whitened element `-1 / alpha_opt` from a precomputed `r`.
pub fn complete_with_vector(a_ha_w: &CVector, r: &CVector) -> Result<C64> {
    let alpha = alpha_opt(a_ha_w, r)?;
    if alpha.norm() < MIN_ALPHA {
        return Err(Error::DegenerateAlpha);
    }
    Ok(-1.0 / alpha)
}

/// Whitened external-microphone element for one hearing-aid prototype.
pub fn complete_atf_element(a_ha_w: &CVector, p: &NoiseSubspacePartition) -> Result<C64> {
    let r = p.completion_vector()?;
    complete_with_vector(a_ha_w, &r)
}

/// Completed whitened prototypes for one time-frequency bin.
#[derive(Debug, Clone)]
pub struct CompletedBin {
    /// `[a_ha^w; A_e^w]` per direction, length `M + 1`.
    pub vectors: Vec<CVector>,
    /// Directions whose coefficient was degenerate; their element is zero.
    pub degenerate: Vec<bool>,
}

impl CompletedBin {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// Appends the completed element to every whitened hearing-aid prototype.
///
/// A degenerate direction gets a zero element (the zero-padded vector) and
/// is flagged; an ill-conditioned `Q_ha` fails the whole bin.
pub fn complete_prototype_atf_set(
    ha_set_w: &[CVector],
    p: &NoiseSubspacePartition,
) -> Result<CompletedBin> {
    let r = p.completion_vector()?;
    let m = r.len();
    let mut vectors = Vec::with_capacity(ha_set_w.len());
    let mut degenerate = Vec::with_capacity(ha_set_w.len());
    for a in ha_set_w {
        let (element, bad) = match complete_with_vector(a, &r) {
            Ok(e) => (e, false),
            Err(Error::DegenerateAlpha) => (C64::new(0.0, 0.0), true),
            Err(e) => return Err(e),
        };
        let mut v = CVector::zeros(m + 1);
        v.rows_mut(0, m).copy_from(a);
        v[m] = element;
        vectors.push(v);
        degenerate.push(bad);
    }
    Ok(CompletedBin { vectors, degenerate })
}

/// De-whitens completed prototypes and normalizes them by the reference element.
pub fn complete_prototype_rtf_set(
    completed_w: &[CVector],
    factor: &CholeskyFactor,
    reference_index: usize,
) -> Vec<Result<RtfVector>> {
    completed_w
        .iter()
        .map(|v| RtfVector::normalize(&factor.apply(v), reference_index))
        .collect()
}
