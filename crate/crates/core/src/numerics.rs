//! Small dense complex linear algebra.
//!
//! Everything here targets matrices of dimension at most eight (one row per
//! microphone), so the algorithms favour accuracy and determinism over
//! asymptotic speed: cyclic Jacobi for the Hermitian eigenproblem, a plain
//! Cholesky with escalating diagonal loading, and partial-pivot LU for the
//! occasional general solve.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Condition estimates above this are reported as [`Error::IllConditioned`].
pub const MAX_CONDITION: f64 = 1e10;

/// Square complex matrix with exact Hermitian symmetry.
///
/// Only the lower triangle is ever computed; the upper triangle is its
/// conjugate mirror and the diagonal is real, so `a[(i, j)] == a[(j, i)].conj()`
/// holds bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Wraps `m` after checking it is square, finite and Hermitian to a
    /// relative tolerance of 1e-10; the stored value is the exact symmetrization.
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("non-finite matrix entry"));
        }
        let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let n = m.nrows();
        for i in 0..n {
            for j in 0..=i {
                if (m[(i, j)] - m[(j, i)].conj()).norm() > 1e-10 * scale {
                    return Err(Error::invalid("matrix is not Hermitian"));
                }
            }
        }
        Ok(Self::symmetrized(&m))
    }

    /// Hermitian part `(m + m^H) / 2`, with an exactly real diagonal.
    pub fn symmetrized(m: &CMatrix) -> Self {
        let n = m.nrows();
        Self::from_lower_fn(n, |i, j| {
            if i == j {
                C64::new(m[(i, i)].re, 0.0)
            } else {
                (m[(i, j)] + m[(j, i)].conj()) * 0.5
            }
        })
    }

    /// Builds from a generator evaluated on the lower triangle (`i >= j`).
    pub fn from_lower_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v.conj();
            }
            m[(i, i)] = C64::new(f(i, i).re, 0.0);
        }
        Self(m)
    }

    pub fn identity(n: usize) -> Self {
        Self(CMatrix::identity(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Self(CMatrix::identity(n, n) * C64::new(s, 0.0))
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMatrix::zeros(n, n))
    }

    /// Rank-one outer product `v v^H`.
    pub fn outer(v: &CVector) -> Self {
        Self::from_lower_fn(v.len(), |i, j| v[i] * v[j].conj())
    }

    /// Real diagonal matrix.
    pub fn diagonal(d: &[f64]) -> Self {
        Self::from_lower_fn(d.len(), |i, j| if i == j { C64::new(d[i], 0.0) } else { ZERO })
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Leading `n x n` principal block, i.e. `E A E^T` with `E = [I_n, 0]`.
    pub fn leading_block(&self, n: usize) -> Self {
        Self(self.0.view((0, 0), (n, n)).into_owned())
    }

    /// `alpha * self + (1 - alpha) * v v^H`, computed entrywise on the lower triangle.
    pub fn recursive_update(&self, alpha: f64, v: &CVector) -> Self {
        let beta = 1.0 - alpha;
        Self::from_lower_fn(self.dim(), |i, j| self.0[(i, j)] * alpha + v[i] * v[j].conj() * beta)
    }

    /// Sum of two Hermitian matrices.
    pub fn add(&self, other: &Self) -> Self {
        Self::from_lower_fn(self.dim(), |i, j| self.0[(i, j)] + other.0[(i, j)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_lower_fn(self.dim(), |i, j| self.0[(i, j)] * s)
    }
}

impl std::ops::Index<(usize, usize)> for HermitianMatrix {
    type Output = C64;
    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.0[idx]
    }
}

/// Eigenvalues in non-increasing order with unitary eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

impl EigenPair {
    /// `Q diag(lambda) Q^H`.
    pub fn reconstruct(&self) -> CMatrix {
        let q = &self.eigenvectors;
        let mut scaled = q.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(l);
        }
        &scaled * q.adjoint()
    }
}

/// Makes the first element of each column with magnitude above 1e-12 real
/// and non-negative. Applying it twice is a no-op.
pub fn fix_column_phases(q: &mut CMatrix) {
    for mut col in q.column_iter_mut() {
        if let Some(idx) = col.iter().position(|z| z.norm() > 1e-12) {
            let pivot = col[idx];
            if pivot.im == 0.0 && pivot.re > 0.0 {
                continue;
            }
            let rot = pivot.conj() / pivot.norm();
            for z in col.iter_mut() {
                *z *= rot;
            }
            col[idx] = C64::new(pivot.norm(), 0.0);
        }
    }
}

const JACOBI_MAX_SWEEPS: usize = 64;

/// Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi rotations.
pub fn hermitian_evd(a: &HermitianMatrix) -> Result<EigenPair> {
    let n = a.dim();
    // column-major working copies: element (r, c) at r + c * n
    let mut m: Vec<C64> = a.as_matrix().as_slice().to_vec();
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NumericalFailure("non-finite input to eigen-solver".into()));
    }
    let mut q = vec![ZERO; n * n];
    for i in 0..n {
        q[i + i * n] = C64::new(1.0, 0.0);
    }
    let total: f64 = m.iter().map(|z| z.norm_sqr()).sum();

    let off_norm = |m: &[C64]| -> f64 {
        let mut s = 0.0;
        for c in 0..n {
            for r in (c + 1)..n {
                s += 2.0 * m[r + c * n].norm_sqr();
            }
        }
        s
    };

    let mut converged = total == 0.0;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        if off_norm(&m) <= (f64::EPSILON * f64::EPSILON) * total {
            converged = true;
            break;
        }
        for p in 0..n {
            for qi in (p + 1)..n {
                let b = m[p + qi * n];
                let b_abs = b.norm_sqr().sqrt();
                if b_abs == 0.0 {
                    continue;
                }
                let app = m[p + p * n].re;
                let aqq = m[qi + qi * n].re;
                // Skip negligible couplings relative to both diagonals.
                if b_abs < 1e-300 || (b_abs * 1e18 < app.abs() && b_abs * 1e18 < aqq.abs()) {
                    m[p + qi * n] = ZERO;
                    m[qi + p * n] = ZERO;
                    continue;
                }
                let phase = b / b_abs;
                let theta = (aqq - app) / (2.0 * b_abs);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // V = diag(1, conj(phase)) * [[c, s], [-s, c]] restricted to (p, q).
                let v_qp = -phase.conj() * s;
                let v_qq = phase.conj() * c;

                for r in 0..n {
                    let x = m[r + p * n];
                    let y = m[r + qi * n];
                    m[r + p * n] = x * c + y * v_qp;
                    m[r + qi * n] = x * s + y * v_qq;
                    let x = q[r + p * n];
                    let y = q[r + qi * n];
                    q[r + p * n] = x * c + y * v_qp;
                    q[r + qi * n] = x * s + y * v_qq;
                }
                for col in 0..n {
                    let x = m[p + col * n];
                    let y = m[qi + col * n];
                    m[p + col * n] = x * c + v_qp.conj() * y;
                    m[qi + col * n] = x * s + v_qq.conj() * y;
                }
                m[p + qi * n] = ZERO;
                m[qi + p * n] = ZERO;
                m[p + p * n].im = 0.0;
                m[qi + qi * n].im = 0.0;
            }
        }
    }
    if !converged && off_norm(&m) > 1e-24 * total {
        return Err(Error::NumericalFailure(
            "Jacobi eigen-solver did not converge".into(),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps index order for ties.
    order.sort_by(|&i, &j| m[j + j * n].re.partial_cmp(&m[i + i * n].re).unwrap());
    let eigenvalues = order.iter().map(|&i| m[i + i * n].re).collect();
    let mut eigenvectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.column_mut(dst).copy_from_slice(&q[src * n..(src + 1) * n]);
    }
    fix_column_phases(&mut eigenvectors);
    Ok(EigenPair {
        eigenvalues,
        eigenvectors,
    })
}

/// Diagonal-loading escalation used when a matrix is not numerically positive definite.
///
/// Each step adds `step * trace / dim` to the diagonal; a zero trace uses a
/// unit scale instead so the all-zero matrix still factorizes.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingPolicy {
    pub steps: Vec<f64>,
}

impl Default for LoadingPolicy {
    fn default() -> Self {
        Self {
            steps: vec![1e-10, 1e-8, 1e-6],
        }
    }
}

impl LoadingPolicy {
    pub fn none() -> Self {
        Self { steps: Vec::new() }
    }
}

/// Lower-triangular square root `A + loading*I = L L^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    pub lower: CMatrix,
    pub loading_applied: f64,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Factor of the leading `n x n` block. For a lower-triangular factor this
    /// is exactly the Cholesky factor of the leading block of the input.
    pub fn leading_block(&self, n: usize) -> Self {
        Self {
            lower: self.lower.view((0, 0), (n, n)).into_owned(),
            loading_applied: self.loading_applied,
        }
    }

    /// `L x`.
    pub fn apply(&self, x: &CVector) -> CVector {
        let n = self.dim();
        let mut out = CVector::zeros(n);
        for i in 0..n {
            let mut s = ZERO;
            for j in 0..=i {
                s += self.lower[(i, j)] * x[j];
            }
            out[i] = s;
        }
        out
    }

    /// Solves `L x = b` by forward substitution.
    pub fn solve_lower(&self, b: &CVector) -> CVector {
        let n = self.dim();
        let mut x = b.clone();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lower[(i, j)] * x[j];
            }
            x[i] = s / self.lower[(i, i)];
        }
        x
    }

    /// Solves `L^H x = b` by back substitution.
    pub fn solve_lower_adjoint(&self, b: &CVector) -> CVector {
        let n = self.dim();
        let mut x = b.clone();
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lower[(j, i)].conj() * x[j];
            }
            x[i] = s / self.lower[(i, i)].re;
        }
        x
    }

    /// Solves `L X = B` for every column of `B`.
    pub fn solve_lower_columns<S>(&self, b: &nalgebra::Matrix<C64, nalgebra::Dyn, nalgebra::Dyn, S>) -> CMatrix
    where
        S: nalgebra::RawStorage<C64, nalgebra::Dyn, nalgebra::Dyn>,
    {
        let n = self.dim();
        assert_eq!(b.nrows(), n, "right-hand side has the wrong number of rows");
        let mut x = CMatrix::from_iterator(n, b.ncols(), b.iter().copied());
        for c in 0..x.ncols() {
            let mut col = x.column_mut(c);
            for i in 0..n {
                let mut s = col[i];
                for j in 0..i {
                    s -= self.lower[(i, j)] * col[j];
                }
                col[i] = s / self.lower[(i, i)];
            }
        }
        x
    }

    /// `L^{-1} A L^{-H}` via two triangular solves per column.
    pub fn whiten(&self, a: &HermitianMatrix) -> HermitianMatrix {
        let n = self.dim();
        // X = L^{-1} A
        let mut x = CMatrix::zeros(n, n);
        for c in 0..n {
            let col: CVector = a.as_matrix().column(c).into_owned();
            x.set_column(c, &self.solve_lower(&col));
        }
        // L^{-1} X^H = (X L^{-H})^H, which is the (Hermitian) result itself.
        let xh = x.adjoint();
        let mut w = CMatrix::zeros(n, n);
        for c in 0..n {
            let col: CVector = xh.column(c).into_owned();
            w.set_column(c, &self.solve_lower(&col));
        }
        HermitianMatrix::symmetrized(&w)
    }
}

fn try_cholesky(a: &CMatrix, load: f64) -> Option<CMatrix> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].re.abs()).fold(0.0, f64::max) + load;
    let threshold = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re + load;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > threshold) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = C64::new(djj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Cholesky factorization with diagonal-loading fallback.
pub fn cholesky(a: &HermitianMatrix, policy: &LoadingPolicy) -> Result<CholeskyFactor> {
    let m = a.as_matrix();
    if let Some(lower) = try_cholesky(m, 0.0) {
        return Ok(CholeskyFactor {
            lower,
            loading_applied: 0.0,
        });
    }
    let tr = a.trace() / a.dim().max(1) as f64;
    let scale = if tr > 0.0 && tr.is_finite() { tr } else { 1.0 };
    for &step in &policy.steps {
        let load = step * scale;
        if let Some(lower) = try_cholesky(m, load) {
            return Ok(CholeskyFactor {
                lower,
                loading_applied: load,
            });
        }
    }
    Err(Error::NumericalFailure(
        "matrix not positive definite after maximum diagonal loading".into(),
    ))
}

/// Partial-pivot LU factorization `P A = L U` of a small complex matrix.
#[derive(Debug, Clone)]
pub struct LuFactor {
    lu: CMatrix,
    perm: Vec<usize>,
    norm1: f64,
}

impl LuFactor {
    /// Factorizes `a`; an exactly or numerically zero pivot yields
    /// [`Error::IllConditioned`] with an infinite condition.
    pub fn new(a: &CMatrix) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(Error::invalid("LU requires a square matrix"));
        }
        let norm1 = (0..n)
            .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].norm()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax <= f64::EPSILON * norm1 * 1e-6 || pmax == 0.0 {
                return Err(Error::IllConditioned {
                    condition: f64::INFINITY,
                });
            }
            if piv != k {
                lu.swap_rows(piv, k);
                perm.swap(piv, k);
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                for j in (k + 1)..n {
                    let u = lu[(k, j)];
                    lu[(i, j)] -= f * u;
                }
            }
        }
        Ok(Self { lu, perm, norm1 })
    }

    pub fn solve(&self, b: &CVector) -> CVector {
        let n = self.lu.nrows();
        let mut x = CVector::from_fn(n, |i, _| b[self.perm[i]]);
        for i in 0..n {
            for j in 0..i {
                let l = self.lu[(i, j)];
                let xj = x[j];
                x[i] -= l * xj;
            }
        }
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                let u = self.lu[(i, j)];
                let xj = x[j];
                x[i] -= u * xj;
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }

    /// 1-norm condition number `||A||_1 ||A^{-1}||_1`, with the inverse norm
    /// obtained column by column from solves against unit vectors.
    pub fn condition_1(&self) -> f64 {
        let n = self.lu.nrows();
        let mut inv_norm: f64 = 0.0;
        for j in 0..n {
            let mut e = CVector::zeros(n);
            e[j] = ONE;
            let col = self.solve(&e);
            inv_norm = inv_norm.max(col.iter().map(|z| z.norm()).sum());
        }
        self.norm1 * inv_norm
    }
}

/// Condition estimate of `b` (1-norm of `b^H`, i.e. the infinity norm of `b`).
pub fn condition_estimate(b: &CMatrix) -> f64 {
    match LuFactor::new(&b.adjoint()) {
        Ok(lu) => lu.condition_1(),
        Err(_) => f64::INFINITY,
    }
}

/// Solves `B^H x = v` through an LU factorization of `B^H`.
pub fn solve_inverse_hermitian_transpose(b: &CMatrix, v: &CVector) -> Result<CVector> {
    if !b.is_square() || b.nrows() != v.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: B is {}x{}, v has {}",
            b.nrows(),
            b.ncols(),
            v.len()
        )));
    }
    let lu = LuFactor::new(&b.adjoint())?;
    let condition = lu.condition_1();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    Ok(lu.solve(v))
}

/// Relative Frobenius distance `||a - b||_F / max(||b||_F, floor)`.
pub fn relative_frobenius(a: &CMatrix, b: &CMatrix, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    pub(crate) fn random_hermitian(rng: &mut impl Rng, n: usize) -> HermitianMatrix {
        HermitianMatrix::from_lower_fn(n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn column_solve_matches_vector_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = random_hermitian(&mut rng, 5).add(&HermitianMatrix::scaled_identity(5, 6.0));
        let f = cholesky(&a, &LoadingPolicy::none()).unwrap();
        let b = CMatrix::from_fn(5, 7, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let x = f.solve_lower_columns(&b);
        for j in 0..7 {
            let v = f.solve_lower(&b.column(j).into_owned());
            assert!((x.column(j) - v).norm() < 1e-14);
        }
        assert!((&f.lower * &x - &b).norm() < 1e-12);
    }

    fn unitarity_error(q: &CMatrix) -> f64 {
        let n = q.ncols();
        (q.adjoint() * q - CMatrix::identity(n, n)).norm()
    }

    #[test]
    fn evd_identity() {
        let e = hermitian_evd(&HermitianMatrix::identity(5)).unwrap();
        assert!(e.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-15));
        assert!(unitarity_error(&e.eigenvectors) < 1e-10);
    }

    #[test]
    fn evd_diagonal_orders_descending() {
        let e = hermitian_evd(&HermitianMatrix::diagonal(&[1.0, 3.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 1.0]);
        assert_eq!(e.eigenvectors[(1, 0)], ONE);
        assert_eq!(e.eigenvectors[(0, 1)], ONE);
        let e = hermitian_evd(&HermitianMatrix::diagonal(&[3.0, 1.0])).unwrap();
        assert_eq!(e.eigenvectors, CMatrix::identity(2, 2));
    }

    #[test]
    fn evd_random_reconstructs_and_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=8 {
            for _ in 0..20 {
                let a = random_hermitian(&mut rng, n);
                let e = hermitian_evd(&a).unwrap();
                assert!(relative_frobenius(&e.reconstruct(), a.as_matrix(), 1e-300) < 1e-10);
                assert!(unitarity_error(&e.eigenvectors) < 1e-10);
                assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
                // independent route: nalgebra's symmetric eigen-solver
                let mut reference: Vec<f64> = a
                    .as_matrix()
                    .clone()
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .copied()
                    .collect();
                reference.sort_by(|x, y| y.partial_cmp(x).unwrap());
                for (x, y) in e.eigenvalues.iter().zip(&reference) {
                    assert!((x - y).abs() < 1e-10, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn phase_convention_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_hermitian(&mut rng, 5);
        let e = hermitian_evd(&a).unwrap();
        let mut q = e.eigenvectors.clone();
        fix_column_phases(&mut q);
        assert_eq!(q, e.eigenvectors);
        for col in q.column_iter() {
            let first = col.iter().find(|z| z.norm() > 1e-12).unwrap();
            assert_eq!(first.im, 0.0);
            assert!(first.re >= 0.0);
        }
    }

    #[test]
    fn cholesky_identity_and_hand_case() {
        let f = cholesky(&HermitianMatrix::identity(4), &LoadingPolicy::default()).unwrap();
        assert_eq!(f.lower, CMatrix::identity(4, 4));
        assert_eq!(f.loading_applied, 0.0);

        let a = HermitianMatrix::new(CMatrix::from_row_slice(
            2,
            2,
            &[c(4.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(3.0, 0.0)],
        ))
        .unwrap();
        let f = cholesky(&a, &LoadingPolicy::default()).unwrap();
        let expected =
            CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), ZERO, c(1.0, 0.0), c(2f64.sqrt(), 0.0)]);
        assert!((&f.lower - expected).norm() < 1e-15);
        assert!((&f.lower * f.lower.adjoint() - a.as_matrix()).norm() < 1e-14);
    }

    #[test]
    fn cholesky_loads_degenerate_input() {
        let f = cholesky(&HermitianMatrix::zeros(3), &LoadingPolicy::default()).unwrap();
        assert!(f.loading_applied > 0.0);
        let v = CVector::from_vec(vec![c(1.0, 1.0), c(0.5, 0.0), c(0.0, 0.0)]);
        let rank1 = HermitianMatrix::outer(&v);
        let f = cholesky(&rank1, &LoadingPolicy::default()).unwrap();
        assert!(f.loading_applied > 0.0);
        let loaded = rank1.as_matrix() + CMatrix::identity(3, 3) * c(f.loading_applied, 0.0);
        assert!((&f.lower * f.lower.adjoint() - &loaded).norm() / rank1.frobenius_norm().max(1.0) < 1e-10);
        assert!(cholesky(&rank1, &LoadingPolicy::none()).is_err());
    }

    #[test]
    fn cholesky_fails_on_indefinite() {
        let a = HermitianMatrix::diagonal(&[1.0, -1.0]);
        assert!(matches!(
            cholesky(&a, &LoadingPolicy::default()),
            Err(Error::NumericalFailure(_))
        ));
    }

    #[test]
    fn triangular_solves_invert_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = CMatrix::from_fn(5, 5, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let spd = HermitianMatrix::symmetrized(&(&b * b.adjoint() + CMatrix::identity(5, 5)));
        let f = cholesky(&spd, &LoadingPolicy::default()).unwrap();
        let x = CVector::from_fn(5, |i, _| c(i as f64, 1.0 - i as f64));
        assert!((f.apply(&f.solve_lower(&x)) - &x).norm() < 1e-12);
        let y = f.solve_lower_adjoint(&x);
        assert!((f.lower.adjoint() * y - &x).norm() < 1e-12);
        let w = f.whiten(&spd);
        assert!((w.as_matrix() - CMatrix::identity(5, 5)).norm() < 1e-10);
    }

    #[test]
    fn transposed_solve_identity_unitary_singular() {
        let v = CVector::from_vec(vec![c(1.0, 2.0), c(-3.0, 0.5), c(0.0, 1.0)]);
        let x = solve_inverse_hermitian_transpose(&CMatrix::identity(3, 3), &v).unwrap();
        assert!((x - &v).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_hermitian(&mut rng, 3);
        let u = hermitian_evd(&a).unwrap().eigenvectors;
        let x = solve_inverse_hermitian_transpose(&u, &v).unwrap();
        assert!((x - &u * &v).norm() < 1e-12);

        let singular = CMatrix::from_row_slice(
            3,
            3,
            &[ONE, ONE, ZERO, ONE, ONE, ZERO, ZERO, ZERO, ONE],
        );
        assert!(matches!(
            solve_inverse_hermitian_transpose(&singular, &v),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn hermitian_new_rejects_asymmetric() {
        let m = CMatrix::from_row_slice(2, 2, &[ONE, c(0.0, 1.0), c(0.0, 1.0), ONE]);
        assert!(HermitianMatrix::new(m).is_err());
        assert!(HermitianMatrix::new(CMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn recursive_update_is_exactly_hermitian() {
        let v = CVector::from_vec(vec![c(0.3, -1.2), c(2.0, 0.7), c(-0.1, 0.1)]);
        let h = HermitianMatrix::identity(3).recursive_update(0.9, &v);
        for i in 0..3 {
            assert_eq!(h[(i, i)].im, 0.0);
            for j in 0..3 {
                assert_eq!(h[(i, j)], h[(j, i)].conj());
            }
        }
    }
}
