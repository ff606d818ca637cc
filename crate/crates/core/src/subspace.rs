//! Signal/noise subspace split of the whitened covariance and
//! covariance-whitening RTF estimation.

use crate::error::{Error, Result};
use crate::numerics::{hermitian_evd, CMatrix, CVector, CholeskyFactor, HermitianMatrix};

/// Eigen-structure of a pre-whitened noisy covariance with a one-dimensional
/// signal subspace.
#[derive(Debug, Clone)]
pub struct WhitenedDecomposition {
    /// Principal eigenvector (unit norm).
    pub principal: CVector,
    /// Remaining eigenvectors as columns, `dim x (dim - 1)`.
    pub noise_basis: CMatrix,
    pub eigenvalues: Vec<f64>,
    /// Square root of the undesired covariance used for whitening.
    pub factor: CholeskyFactor,
}

impl WhitenedDecomposition {
    pub fn dim(&self) -> usize {
        self.principal.len()
    }
}

pub fn decompose(phi_y_w: &HermitianMatrix, factor: CholeskyFactor) -> Result<WhitenedDecomposition> {
    let n = phi_y_w.dim();
    if n < 2 {
        return Err(Error::invalid("subspace split needs at least two channels"));
    }
    if factor.dim() != n {
        return Err(Error::invalid(format!(
            "factor dimension {} does not match covariance dimension {n}",
            factor.dim()
        )));
    }
    let evd = hermitian_evd(phi_y_w)?;
    let principal = evd.eigenvectors.column(0).into_owned();
    let noise_basis = evd.eigenvectors.columns(1, n - 1).into_owned();
    Ok(WhitenedDecomposition {
        principal,
        noise_basis,
        eigenvalues: evd.eigenvalues,
        factor,
    })
}

/// Transfer-function vector normalized so that the reference element is exactly one.
#[derive(Debug, Clone, PartialEq)]
pub struct RtfVector {
    pub values: CVector,
    pub reference_index: usize,
}

impl RtfVector {
    /// Divides by the reference element; rejects references below `1e-12 * ||v||`.
    pub fn normalize(v: &CVector, reference_index: usize) -> Result<Self> {
        let r = *v
            .get(reference_index)
            .ok_or_else(|| Error::invalid("reference index out of range"))?;
        if !(r.norm() > 1e-12 * v.norm()) {
            return Err(Error::DegenerateReference);
        }
        let mut values = v.map(|z| z / r);
        values[reference_index] = crate::numerics::C64::new(1.0, 0.0);
        Ok(Self {
            values,
            reference_index,
        })
    }

    /// The first `n` entries (the hearing-aid sub-vector when the reference is among them).
    pub fn head(&self, n: usize) -> Result<Self> {
        if self.reference_index >= n {
            return Err(Error::invalid("reference not contained in sub-vector"));
        }
        Ok(Self {
            values: self.values.rows(0, n).into_owned(),
            reference_index: self.reference_index,
        })
    }
}

/// De-whitens the principal eigenvector and normalizes it by the reference element.
pub fn estimate_rtf_cw(d: &WhitenedDecomposition, reference_index: usize) -> Result<RtfVector> {
    let dewhitened = d.factor.apply(&d.principal);
    RtfVector::normalize(&dewhitened, reference_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cholesky, LoadingPolicy, C64};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn identity_factor(n: usize) -> CholeskyFactor {
        CholeskyFactor {
            lower: CMatrix::identity(n, n),
            loading_applied: 0.0,
        }
    }

    /// Hermitian angle between two complex vectors.
    fn hermitian_angle(a: &CVector, b: &CVector) -> f64 {
        crate::spectra::neg_hermitian_angle(a, b).unwrap().abs()
    }

    #[test]
    fn diagonal_split() {
        let d = decompose(&HermitianMatrix::diagonal(&[5.0, 1.0, 1.0, 1.0, 1.0]), identity_factor(5)).unwrap();
        let mut e1 = CVector::zeros(5);
        e1[0] = c(1.0, 0.0);
        assert_eq!(d.principal, e1);
        assert!(d.noise_basis.row(0).iter().all(|z| z.norm() == 0.0));
        assert!((d.noise_basis.adjoint() * &d.noise_basis - CMatrix::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn identity_tie_still_unitary() {
        let d = decompose(&HermitianMatrix::identity(5), identity_factor(5)).unwrap();
        let mut q = CMatrix::zeros(5, 5);
        q.set_column(0, &d.principal);
        q.columns_mut(1, 4).copy_from(&d.noise_basis);
        assert!((q.adjoint() * &q - CMatrix::identity(5, 5)).norm() < 1e-10);
    }

    #[test]
    fn rank_one_model_principal_aligns() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let aw = CVector::from_fn(5, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let w = HermitianMatrix::outer(&aw).scale(2.5).add(&HermitianMatrix::identity(5));
        let d = decompose(&w, identity_factor(5)).unwrap();
        assert!(hermitian_angle(&d.principal, &aw) < 1e-8);
        assert!((d.noise_basis.adjoint() * &d.principal).norm() < 1e-10);
        assert!((d.eigenvalues[0] - (2.5 * aw.norm_squared() + 1.0)).abs() < 1e-10);
    }

    #[test]
    fn cw_hand_case_and_scale_invariance() {
        let mut d = decompose(&HermitianMatrix::identity(5), identity_factor(5)).unwrap();
        d.principal = CVector::from_vec(vec![c(2.0, 0.0), c(0.0, 2.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let g = estimate_rtf_cw(&d, 0).unwrap();
        let expected = CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(g.values, expected);

        let rot = C64::from_polar(1.7, 0.9);
        d.principal *= rot;
        let g2 = estimate_rtf_cw(&d, 0).unwrap();
        assert!((g2.values - expected).norm() < 1e-15);

        d.principal = CVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(matches!(estimate_rtf_cw(&d, 0), Err(Error::DegenerateReference)));
    }

    #[test]
    fn cw_recovers_rtf_under_exact_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let b = CMatrix::from_fn(5, 5, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let pu = HermitianMatrix::symmetrized(&(&b * b.adjoint() + CMatrix::identity(5, 5) * c(0.05, 0.0)));
            let a = CVector::from_fn(5, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let py = HermitianMatrix::outer(&a).scale(rng.gen_range(0.1..100.0)).add(&pu);
            let l = cholesky(&pu, &LoadingPolicy::default()).unwrap();
            let w = l.whiten(&py);
            let d = decompose(&w, l).unwrap();
            let g = estimate_rtf_cw(&d, 0).unwrap();
            let truth = a.map(|z| z / a[0]);
            assert!((&g.values - &truth).norm() / truth.norm() < 1e-8);
            assert!(hermitian_angle(&g.values, &truth) < 1e-6);
        }
    }
}
