//! Dense complex matrices on the internal space and density operators.
//!
//! Superoperator matrices act on column-stacked operators: the stack of an
//! operator `A` is the vector `(A_00, A_10, .., A_{D-1,0}, A_01, ..)`, and
//! `stack(A X B) = (Bᵀ ⊗ A) stack(X)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{OqwError, Result};

/// Completeness tolerance for `Σ K†K = I`.
pub const TOL_COMPLETENESS: f64 = 1e-10;
/// Hermiticity tolerance for density operators.
pub const TOL_HERMITIAN: f64 = 1e-10;
/// Allowed negative eigenvalue for density operators.
pub const TOL_POSITIVE: f64 = 1e-9;
/// Allowed trace deviation from one.
pub const TOL_TRACE: f64 = 1e-9;

pub type C64 = Complex64;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// A square complex matrix of dimension `D ≥ 1` with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl ComplexMatrix {
    pub fn from_dmatrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(OqwError::InvalidMatrix(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(OqwError::InvalidMatrix("non-finite entry".into()));
        }
        Ok(Self(m))
    }

    /// Builds a matrix from row-major rows.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(OqwError::InvalidMatrix("rows of unequal length or non-square".into()));
        }
        Self::from_dmatrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| c64(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    /// `scale · |row⟩⟨col|`.
    pub fn unit(dim: usize, row: usize, col: usize, scale: C64) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        m[(row, col)] = scale;
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_dmatrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self(&self.0 * &other.0)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(&self.0 - &other.0)
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    /// `Tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        let n = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += self.0[(i, k)] * other.0[(k, i)];
            }
        }
        acc
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `max |M - M†|`.
    pub fn hermiticity_deviation(&self) -> f64 {
        let n = self.dim();
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                dev = dev.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        dev
    }

    /// `(M + M†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()) * c64(0.5, 0.0))
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let h = self.hermitian_part().0;
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// Column-stacked vector of length `D²`.
    pub fn stack(&self) -> DVector<C64> {
        DVector::from_column_slice(self.0.as_slice())
    }

    pub fn unstack(v: &DVector<C64>, dim: usize) -> Result<Self> {
        if v.len() != dim * dim {
            return Err(OqwError::DimensionMismatch {
                expected: dim * dim,
                found: v.len(),
                context: "unstack".into(),
            });
        }
        Self::from_dmatrix(DMatrix::from_column_slice(dim, dim, v.as_slice()))
    }

    /// Entries in column-major order.
    pub fn as_slice(&self) -> &[C64] {
        self.0.as_slice()
    }

    /// Row-major `[re, im]` rows.
    pub fn to_rows(&self) -> Vec<Vec<[f64; 2]>> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| [self.0[(i, j)].re, self.0[(i, j)].im]).collect())
            .collect()
    }
}

impl Serialize for ComplexMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        let rows: Vec<Vec<C64>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|[re, im]| c64(re, im)).collect())
            .collect();
        ComplexMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// A positive semidefinite, unit-trace operator on the internal space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator(ComplexMatrix);

impl DensityOperator {
    /// Validates `mat` against the density tolerances, then re-Hermitizes
    /// and renormalizes it.
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        let herm = mat.hermiticity_deviation();
        if herm > TOL_HERMITIAN {
            return Err(OqwError::InvalidDensity(format!(
                "not Hermitian (deviation {herm:e})"
            )));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > TOL_TRACE || tr.im.abs() > TOL_TRACE {
            return Err(OqwError::InvalidDensity(format!("trace {tr} is not 1")));
        }
        let min_ev = mat.hermitian_eigenvalues()[0];
        if min_ev < -TOL_POSITIVE {
            return Err(OqwError::InvalidDensity(format!(
                "negative eigenvalue {min_ev:e}"
            )));
        }
        Ok(Self::normalized(mat))
    }

    /// Hermitizes and divides by the real trace; no positivity check.
    /// Fails only on a vanishing trace.
    pub fn from_unnormalized(mat: ComplexMatrix) -> Result<Self> {
        let tr = mat.trace().re;
        if !(tr > 0.0) {
            return Err(OqwError::InvalidDensity(format!("trace {tr} is not positive")));
        }
        Ok(Self::normalized(mat))
    }

    fn normalized(mat: ComplexMatrix) -> Self {
        let h = mat.hermitian_part();
        let tr = h.trace().re;
        Self(h.scale(c64(1.0 / tr, 0.0)))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim).scale(c64(1.0 / dim as f64, 0.0)))
    }

    /// `|i⟩⟨i|`.
    pub fn basis(dim: usize, i: usize) -> Self {
        Self(ComplexMatrix::unit(dim, i, i, c64(1.0, 0.0)))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.hermitian_eigenvalues()[0]
    }
}

impl Serialize for DensityOperator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacking_is_column_major() {
        let m = ComplexMatrix::from_real_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let v = m.stack();
        let got: Vec<f64> = v.iter().map(|z| z.re).collect();
        assert_eq!(got, vec![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(ComplexMatrix::unstack(&v, 2).unwrap(), m);
    }

    #[test]
    fn kronecker_identity_for_stacking() {
        let a = ComplexMatrix::from_rows(&[
            vec![c64(1.0, 0.5), c64(0.0, -1.0)],
            vec![c64(2.0, 0.0), c64(0.3, 0.1)],
        ])
        .unwrap();
        let x = ComplexMatrix::from_rows(&[
            vec![c64(0.2, 0.0), c64(1.0, 1.0)],
            vec![c64(-1.0, 0.0), c64(0.0, 2.0)],
        ])
        .unwrap();
        let b = ComplexMatrix::from_rows(&[
            vec![c64(0.0, 1.0), c64(1.0, 0.0)],
            vec![c64(0.5, 0.0), c64(-0.4, 0.2)],
        ])
        .unwrap();
        let lhs = a.mul(&x).mul(&b).stack();
        let kron = b.as_dmatrix().transpose().kronecker(a.as_dmatrix());
        let rhs = kron * x.stack();
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn density_rejects_bad_inputs() {
        let not_unit = ComplexMatrix::identity(2);
        assert!(matches!(
            DensityOperator::new(not_unit),
            Err(OqwError::InvalidDensity(_))
        ));
        let negative = ComplexMatrix::from_real_rows(&[vec![1.5, 0.0], vec![0.0, -0.5]]).unwrap();
        assert!(DensityOperator::new(negative).is_err());
        let non_herm = ComplexMatrix::from_real_rows(&[vec![0.5, 0.1], vec![0.0, 0.5]]).unwrap();
        assert!(DensityOperator::new(non_herm).is_err());
        let ok = ComplexMatrix::from_rows(&[
            vec![c64(0.5, 0.0), c64(0.0, 0.5)],
            vec![c64(0.0, -0.5), c64(0.5, 0.0)],
        ])
        .unwrap();
        let rho = DensityOperator::new(ok).unwrap();
        assert!(rho.min_eigenvalue().abs() < 1e-12);
    }

    #[test]
    fn matrix_serde_is_row_major_pairs() {
        let m = ComplexMatrix::from_rows(&[
            vec![c64(1.0, 0.0), c64(0.0, 2.0)],
            vec![c64(3.0, 0.0), c64(4.0, -1.0)],
        ])
        .unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[[1.0,0.0],[0.0,2.0]],[[3.0,0.0],[4.0,-1.0]]]");
        let back: ComplexMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<ComplexMatrix>("[[[1,0],[0,0]]]").is_err());
    }
}
