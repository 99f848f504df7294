//! Reference vertex classes.
//!
//! The two-dimensional classes `A` and `B` act on a four-level internal
//! space; each direction carries two Kraus operators of the form
//! `√w |a⟩⟨b|`. Directions map as right = `+e1`, up = `+e2`,
//! left = `-e1`, down = `-e2`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::class::{Direction, TransitionRule, VertexClass};
use crate::matrix::{c64, ComplexMatrix, DensityOperator, C64};

fn ket_bra(dim: usize, row: usize, col: usize, weight: f64) -> ComplexMatrix {
    ComplexMatrix::unit(dim, row, col, c64(weight.sqrt(), 0.0))
}

/// `(displacement, [(row, col, weight)])` with `K = √weight |row⟩⟨col|`.
type RuleSpec = (Vec<i64>, Vec<(usize, usize, f64)>);

fn from_specs(label: &str, dimension: usize, dim: usize, specs: Vec<RuleSpec>) -> VertexClass {
    let rules = specs
        .into_iter()
        .map(|(disp, ops)| {
            TransitionRule::new(
                disp,
                ops.into_iter().map(|(r, c, w)| ket_bra(dim, r, c, w)).collect(),
            )
        })
        .collect();
    VertexClass::new(label, dimension, rules, false).expect("preset classes are well formed")
}

/// One-dimensional classical symmetric walk: `K_{±1} = 1/√2` on a trivial
/// internal space.
pub fn coin_flip() -> VertexClass {
    from_specs(
        "coin",
        1,
        1,
        vec![(vec![1], vec![(0, 0, 0.5)]), (vec![-1], vec![(0, 0, 0.5)])],
    )
}

/// One-dimensional two-level class with `K_{+1} = |0⟩⟨0|` and
/// `K_{-1} = |0⟩⟨1|`: after the first step the walker always moves right.
pub fn damp_drift() -> VertexClass {
    from_specs(
        "drift",
        1,
        2,
        vec![(vec![1], vec![(0, 0, 1.0)]), (vec![-1], vec![(0, 1, 1.0)])],
    )
}

pub fn class_a(alpha: f64) -> VertexClass {
    from_specs(
        "A",
        2,
        4,
        vec![
            (vec![1, 0], vec![(1, 1, 0.5), (3, 1, 0.5)]),
            (vec![0, 1], vec![(0, 0, alpha), (1, 0, 1.0 - alpha)]),
            (vec![-1, 0], vec![(3, 3, 0.5), (0, 3, 0.5)]),
            (vec![0, -1], vec![(3, 2, alpha), (2, 2, 1.0 - alpha)]),
        ],
    )
}

pub fn class_b(alpha: f64) -> VertexClass {
    from_specs(
        "B",
        2,
        4,
        vec![
            (vec![1, 0], vec![(0, 1, 0.5), (2, 1, 0.5)]),
            (vec![0, 1], vec![(1, 0, alpha), (3, 0, 1.0 - alpha)]),
            (vec![-1, 0], vec![(0, 3, 0.5), (2, 3, 0.5)]),
            (vec![0, -1], vec![(1, 2, alpha), (3, 2, 1.0 - alpha)]),
        ],
    )
}

/// Mixing parameter of the reference two-class walk.
pub const DEFAULT_ALPHA: f64 = 0.81;

fn ginibre<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        c64(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// A random complete class: `per_direction` Kraus operators on each of the
/// `2d` directions, cut from a random isometry.
pub fn random_class<R: Rng + ?Sized>(
    rng: &mut R,
    label: &str,
    dimension: usize,
    internal_dim: usize,
    per_direction: usize,
) -> VertexClass {
    let count = 2 * dimension * per_direction;
    let q = ginibre(rng, count * internal_dim, internal_dim).qr().q();
    let mut blocks = (0..count).map(|i| {
        ComplexMatrix::from_dmatrix(q.rows(i * internal_dim, internal_dim).into_owned())
            .expect("isometry blocks are finite")
    });
    let rules = Direction::all(dimension)
        .map(|dir| TransitionRule::new(dir.to_vector(), blocks.by_ref().take(per_direction).collect()))
        .collect();
    VertexClass::new(label, dimension, rules, false).expect("random classes are well formed")
}

/// A random full-rank state `G G† / Tr(G G†)` with Gaussian `G`.
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DensityOperator {
    let g = ginibre(rng, dim, dim);
    let m = ComplexMatrix::from_dmatrix(&g * g.adjoint()).expect("finite");
    DensityOperator::from_unnormalized(m).expect("positive trace")
}

/// A random operator with Gaussian entries.
pub fn random_operator<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> ComplexMatrix {
    ComplexMatrix::from_dmatrix(ginibre(rng, dim, dim)).expect("finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::class::validate_class;
    use crate::rng::RngStream;

    #[test]
    fn random_classes_are_complete() {
        let mut rng = RngStream::new(7, 0).rng();
        for d in 1..=4 {
            let c = random_class(&mut rng, "R", 2, d, 2);
            assert_eq!(c.kraus_count(), 8);
            let r = validate_class(&c, 1e-12).unwrap();
            assert!(r.passed, "{r:?}");
        }
        let rho = random_density(&mut rng, 3);
        assert!(rho.min_eigenvalue() > 0.0);
    }
}
