//! The auxiliary channel of a vertex class, `Φ(ρ) = Σ_{j,k} K ρ K†`, its
//! conjugate `Φ†(B) = Σ K† B K`, and their superoperator matrices.

use nalgebra::{DMatrix, DVector};

use crate::class::VertexClass;
use crate::error::{OqwError, Result};
use crate::matrix::{ComplexMatrix, DensityOperator, C64, TOL_TRACE};

/// `Σ K A K†` on an arbitrary operator.
pub fn apply_kraus_map(class: &VertexClass, a: &ComplexMatrix) -> Result<ComplexMatrix> {
    class.check_dim(a.dim(), "operator")?;
    Ok(class
        .kraus_iter()
        .fold(ComplexMatrix::zeros(a.dim()), |acc, (_, k)| {
            acc.add(&k.mul(a).mul(&k.adjoint()))
        }))
}

/// Applies the class channel to a state. The output is re-Hermitized and
/// renormalized; a trace defect above the trace tolerance is an error.
pub fn apply_channel(class: &VertexClass, rho: &DensityOperator) -> Result<DensityOperator> {
    let out = apply_kraus_map(class, rho.matrix())?;
    let tr = out.trace();
    if (tr.re - 1.0).abs() > TOL_TRACE {
        return Err(OqwError::InvalidClass {
            label: class.label().to_string(),
            reason: format!("channel output has trace {}", tr.re),
        });
    }
    DensityOperator::from_unnormalized(out)
}

/// `Φ†(B) = Σ K† B K`.
pub fn apply_conjugate(class: &VertexClass, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    class.check_dim(b.dim(), "operator")?;
    Ok(class
        .kraus_iter()
        .fold(ComplexMatrix::zeros(b.dim()), |acc, (_, k)| {
            acc.add(&k.adjoint().mul(b).mul(k))
        }))
}

/// Matrix of a superoperator on column-stacked operators (`D² × D²`).
#[derive(Debug, Clone, PartialEq)]
pub struct SuperopMatrix {
    dim: usize,
    mat: DMatrix<C64>,
}

impl SuperopMatrix {
    pub fn new(dim: usize, mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != dim * dim || mat.ncols() != dim * dim {
            return Err(OqwError::DimensionMismatch {
                expected: dim * dim,
                found: mat.nrows(),
                context: "superoperator matrix".into(),
            });
        }
        Ok(Self { dim, mat })
    }

    /// Internal dimension `D` (the matrix is `D² × D²`).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn apply(&self, a: &ComplexMatrix) -> Result<ComplexMatrix> {
        if a.dim() != self.dim {
            return Err(OqwError::DimensionMismatch {
                expected: self.dim,
                found: a.dim(),
                context: "superoperator argument".into(),
            });
        }
        let v: DVector<C64> = &self.mat * a.stack();
        ComplexMatrix::unstack(&v, self.dim)
    }

    /// `I - S`.
    pub fn identity_minus(&self) -> Self {
        let n = self.dim * self.dim;
        Self {
            dim: self.dim,
            mat: DMatrix::identity(n, n) - &self.mat,
        }
    }

    /// Hilbert-Schmidt adjoint (`S^H`).
    pub fn adjoint(&self) -> Self {
        Self {
            dim: self.dim,
            mat: self.mat.adjoint(),
        }
    }
}

/// `S = Σ conj(K) ⊗ K`, or `Σ Kᵀ ⊗ K†` for the conjugate channel.
pub fn superop_matrix(class: &VertexClass, conjugate: bool) -> SuperopMatrix {
    let d = class.internal_dim();
    let n = d * d;
    let mut mat = DMatrix::<C64>::zeros(n, n);
    for (_, k) in class.kraus_iter() {
        let k = k.as_dmatrix();
        mat += if conjugate {
            k.transpose().kronecker(&k.adjoint())
        } else {
            k.map(|z| z.conj()).kronecker(k)
        };
    }
    SuperopMatrix { dim: d, mat }
}
