//! Symmetric eigendecomposition and the positive definite matrix kernel.
//!
//! Every derived quantity (square root, inverse square root, inverse,
//! log-determinant, exponential) goes through [`sym_eig`], so there is a
//! single numerical primitive to validate. Inputs are symmetrized first;
//! asymmetry above `ASYMMETRY_TOL * ||S||_F` is rejected.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated (and silently repaired) by [`sym_eig`].
pub const ASYMMETRY_TOL: f64 = 1e-8;

/// Default singularity floor, relative to `trace / dim`.
pub const DEFAULT_REL_FLOOR: f64 = 1e-12;

/// Symmetry tolerance for a stored [`PdTuple`] entry, relative to `1 + max|Y|`.
pub const PD_TUPLE_SYMMETRY_TOL: f64 = 1e-12;

/// `(S + S^T) / 2`.
pub fn symmetrize(s: &DMatrix<f64>) -> DMatrix<f64> {
    (s + s.transpose()) * 0.5
}

/// Largest absolute entry of `S - S^T`.
pub fn asymmetry(s: &DMatrix<f64>) -> f64 {
    (s - s.transpose()).amax()
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and each eigenvector's first nonzero coordinate positive.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, aligned with `values`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn trace(&self) -> f64 {
        self.values.sum()
    }

    /// Singularity floor `rel * trace / dim` (zero for a non-positive trace).
    pub fn floor(&self, rel: f64) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        rel * (self.trace() / self.dim() as f64).max(0.0)
    }

    /// True when the smallest eigenvalue exceeds [`SymEigen::floor`].
    pub fn is_positive_definite(&self, rel: f64) -> bool {
        self.dim() == 0 || self.min() > self.floor(rel)
    }

    fn check_pd(&self, rel: f64) -> Result<()> {
        if self.is_positive_definite(rel) {
            Ok(())
        } else {
            Err(Error::SingularMatrix {
                min_eigenvalue: self.min(),
                floor: self.floor(rel),
            })
        }
    }

    /// `U diag(f(sigma)) U^T`, symmetrized.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |r, c| {
            self.vectors[(r, c)] * f(self.values[c])
        });
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map(|x| x)
    }

    pub fn sqrt(&self, rel: f64) -> Result<DMatrix<f64>> {
        self.check_pd(rel)?;
        Ok(self.map(f64::sqrt))
    }

    pub fn inv_sqrt(&self, rel: f64) -> Result<DMatrix<f64>> {
        self.check_pd(rel)?;
        Ok(self.map(|x| 1.0 / x.sqrt()))
    }

    pub fn inverse(&self, rel: f64) -> Result<DMatrix<f64>> {
        self.check_pd(rel)?;
        Ok(self.map(|x| 1.0 / x))
    }

    /// Sum of the logarithms of the eigenvalues.
    pub fn logdet(&self, rel: f64) -> Result<f64> {
        self.check_pd(rel)?;
        Ok(self.values.iter().map(|x| x.ln()).sum())
    }
}

/// Symmetric eigendecomposition; the single primitive of this module.
pub fn sym_eig(s: &DMatrix<f64>) -> Result<SymEigen> {
    if !s.is_square() {
        return Err(Error::WrongShape(format!(
            "expected a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("non-finite entry in symmetric eigenproblem"));
    }
    let n = s.nrows();
    if n == 0 {
        return Ok(SymEigen {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let asym = asymmetry(s);
    if asym > ASYMMETRY_TOL * s.norm() {
        return Err(Error::Asymmetric { asymmetry: asym });
    }
    let sym = symmetrize(s);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::numeric("symmetric eigensolver did not converge"))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        if let Some(first) = col.iter().copied().find(|x| x.abs() > 1e-14) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(dst, &col);
    }
    if values.iter().any(|x| !x.is_finite()) || vectors.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("non-finite eigendecomposition"));
    }
    Ok(SymEigen { values, vectors })
}

pub fn spd_sqrt(s: &DMatrix<f64>, rel_floor: f64) -> Result<DMatrix<f64>> {
    sym_eig(s)?.sqrt(rel_floor)
}

pub fn spd_inv_sqrt(s: &DMatrix<f64>, rel_floor: f64) -> Result<DMatrix<f64>> {
    sym_eig(s)?.inv_sqrt(rel_floor)
}

pub fn spd_inverse(s: &DMatrix<f64>, rel_floor: f64) -> Result<DMatrix<f64>> {
    sym_eig(s)?.inverse(rel_floor)
}

pub fn logdet(s: &DMatrix<f64>, rel_floor: f64) -> Result<f64> {
    sym_eig(s)?.logdet(rel_floor)
}

/// Matrix exponential of a symmetric matrix.
pub fn sym_exp(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(sym_eig(z)?.map(f64::exp))
}

/// Random symmetric matrix with i.i.d. `N(0, scale^2)` upper-triangular entries.
pub fn random_symmetric(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in r..n {
            let x: f64 = StandardNormal.sample(rng);
            z[(r, c)] = scale * x;
            z[(c, r)] = scale * x;
        }
    }
    z
}

/// One symmetric positive definite matrix per sink.
#[derive(Clone, Debug, PartialEq)]
pub struct PdTuple {
    mats: Vec<DMatrix<f64>>,
}

impl PdTuple {
    /// Checks squareness, finiteness, symmetry and positive definiteness of
    /// every entry; stores the symmetrized matrices.
    pub fn new(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::with_floor(mats, DEFAULT_REL_FLOOR)
    }

    pub fn with_floor(mats: Vec<DMatrix<f64>>, rel_floor: f64) -> Result<Self> {
        let mut out = Vec::with_capacity(mats.len());
        for (j, y) in mats.into_iter().enumerate() {
            if !y.is_square() {
                return Err(Error::WrongShape(format!(
                    "Y_{j} is {}x{}, expected square",
                    y.nrows(),
                    y.ncols()
                )));
            }
            if y.iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric(format!("Y_{j} has a non-finite entry")));
            }
            let asym = asymmetry(&y);
            if asym > PD_TUPLE_SYMMETRY_TOL * (1.0 + y.amax()) {
                return Err(Error::Asymmetric { asymmetry: asym });
            }
            let eig = sym_eig(&y)?;
            if !eig.is_positive_definite(rel_floor) {
                return Err(Error::NotPositiveDefinite {
                    sink: j,
                    min_eigenvalue: eig.min(),
                });
            }
            out.push(symmetrize(&y));
        }
        Ok(PdTuple { mats: out })
    }

    pub fn identity(dims: &[usize]) -> Self {
        PdTuple {
            mats: dims.iter().map(|&n| DMatrix::identity(n, n)).collect(),
        }
    }

    /// A tuple of `1 x 1` matrices.
    pub fn from_scalars(t: &[f64]) -> Result<Self> {
        Self::new(t.iter().map(|&x| DMatrix::from_element(1, 1, x)).collect())
    }

    /// `Y_j = exp(Z_j)` with `Z_j` a random symmetric matrix of entry scale `spread`.
    pub fn random(dims: &[usize], spread: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mats = dims
            .iter()
            .map(|&n| {
                let z = random_symmetric(n, spread, &mut rng);
                sym_exp(&z).expect("finite symmetric input")
            })
            .collect();
        PdTuple { mats }
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn get(&self, j: usize) -> &DMatrix<f64> {
        &self.mats[j]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    pub fn dims(&self) -> Vec<usize> {
        self.mats.iter().map(|m| m.nrows()).collect()
    }

    pub fn into_inner(self) -> Vec<DMatrix<f64>> {
        self.mats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        &l * l.transpose() + DMatrix::identity(n, n) * 0.1
    }

    /// Laplace expansion along the first row; exponential but exact enough for n <= 4.
    fn cofactor_det(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        if n == 1 {
            return m[(0, 0)];
        }
        (0..n)
            .map(|c| {
                let minor = m.clone().remove_row(0).remove_column(c);
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[(0, c)] * cofactor_det(&minor)
            })
            .sum()
    }

    #[test]
    fn identity_eigenvalues() {
        let e = sym_eig(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn diagonal_eigenpairs_sorted_descending() {
        let e = sym_eig(&diag(&[1.0, 3.0])).unwrap();
        assert_eq!(e.values.as_slice(), &[3.0, 1.0]);
        assert_relative_eq!(e.vectors, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 1 + (seed as usize % 5);
            let s = random_symmetric(n, 1.0, &mut rng);
            let e = sym_eig(&s).unwrap();
            let scale = s.norm().max(1.0);
            assert!((e.reconstruct() - &s).norm() < 1e-10 * scale);
            let gram = e.vectors.transpose() * &e.vectors;
            assert!((gram - DMatrix::identity(n, n)).norm() < 1e-10);
            for w in e.values.as_slice().windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn eigenvector_sign_convention() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let e = sym_eig(&s).unwrap();
        for c in 0..2 {
            let first = e.vectors.column(c).iter().copied().find(|x| x.abs() > 1e-14).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn non_finite_is_numeric_error() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(matches!(sym_eig(&s), Err(Error::NumericError { .. })));
    }

    #[test]
    fn small_asymmetry_repaired_large_rejected() {
        let mut s = DMatrix::identity(2, 2);
        s[(0, 1)] = 1e-12;
        assert!(sym_eig(&s).is_ok());
        s[(0, 1)] = 1e-3;
        assert!(matches!(sym_eig(&s), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn sqrt_of_diagonal_and_identity() {
        let r = spd_sqrt(&diag(&[4.0, 9.0]), DEFAULT_REL_FLOOR).unwrap();
        assert_relative_eq!(r, diag(&[2.0, 3.0]), epsilon = 1e-15);
        let i = spd_sqrt(&DMatrix::identity(3, 3), DEFAULT_REL_FLOOR).unwrap();
        assert_relative_eq!(i, DMatrix::identity(3, 3), epsilon = 1e-15);
    }

    #[test]
    fn sqrt_squares_back_and_inverts() {
        for seed in 0..20 {
            let s = random_spd(1 + seed as usize % 4, seed);
            let r = spd_sqrt(&s, DEFAULT_REL_FLOOR).unwrap();
            let ri = spd_inv_sqrt(&s, DEFAULT_REL_FLOOR).unwrap();
            assert!((&r * &r - &s).norm() <= 1e-9 * s.norm());
            let n = s.nrows();
            assert!((&r * &ri - DMatrix::identity(n, n)).norm() <= 1e-9);
            assert!(asymmetry(&r) <= 1e-12 * r.amax().max(1.0));
            let inv_r = r.clone().try_inverse().unwrap();
            assert!((&ri - inv_r).norm() <= 1e-9 * ri.norm());
        }
    }

    #[test]
    fn singular_matrix_reports_min_eigenvalue() {
        let err = spd_sqrt(&diag(&[1.0, 0.0]), DEFAULT_REL_FLOOR).unwrap_err();
        match err {
            Error::SingularMatrix { min_eigenvalue, .. } => assert_eq!(min_eigenvalue, 0.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(spd_inv_sqrt(&diag(&[1.0, -1.0]), DEFAULT_REL_FLOOR).is_err());
    }

    #[test]
    fn logdet_exact_cases() {
        assert_eq!(logdet(&DMatrix::identity(3, 3), DEFAULT_REL_FLOOR).unwrap(), 0.0);
        let l = logdet(&diag(&[2.0, 5.0]), DEFAULT_REL_FLOOR).unwrap();
        assert_relative_eq!(l, 10f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn logdet_matches_cofactor_determinant() {
        for seed in 0..30 {
            let s = random_spd(1 + seed as usize % 4, 100 + seed);
            let det = cofactor_det(&s);
            let l = logdet(&s, DEFAULT_REL_FLOOR).unwrap();
            assert!((l.exp() - det).abs() <= 1e-9 * det.abs());
        }
    }

    #[test]
    fn pd_tuple_rejects_non_pd_and_asymmetric() {
        assert!(matches!(
            PdTuple::new(vec![diag(&[1.0]), diag(&[-2.0])]),
            Err(Error::NotPositiveDefinite { sink: 1, .. })
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(PdTuple::new(vec![asym]), Err(Error::Asymmetric { .. })));
        let t = PdTuple::random(&[1, 2, 3], 0.7, 5);
        assert!(PdTuple::new(t.clone().into_inner()).is_ok());
        assert_eq!(t.dims(), vec![1, 2, 3]);
    }
}
