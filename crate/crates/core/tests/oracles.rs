//! Cross-checks against independently computed values: hand-built dense
//! Kraus sums, classical Markov chains on the diagonal, and brute-force
//! path enumeration.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use oqw_core::analysis::{
    invariant_state, kernel_image_split, mean_vector, mixed_mean, poisson_identity_check,
    poisson_rhs, power_iteration_fixed_point, solve_poisson, FIXED_POINT_TOL,
};
use oqw_core::channel::{apply_channel, superop_matrix};
use oqw_core::class::{validate_class, ClassTable};
use oqw_core::evolution::{evolve_from, window_for};
use oqw_core::lattice::ClassField;
use oqw_core::matrix::{ComplexMatrix, DensityOperator};
use oqw_core::presets::{self, DEFAULT_ALPHA};
use oqw_core::reduction::{compose_paths, reduced_drift};
use oqw_core::rng::RngStream;
use oqw_core::walk::CompiledWalk;

type Op = (usize, usize, f64, [i64; 2]);

/// `(row, col, weight, displacement)` with `K = √w |row⟩⟨col|`.
fn ops_a(alpha: f64) -> Vec<Op> {
    vec![
        (1, 1, 0.5, [1, 0]),
        (3, 1, 0.5, [1, 0]),
        (0, 0, alpha, [0, 1]),
        (1, 0, 1.0 - alpha, [0, 1]),
        (3, 3, 0.5, [-1, 0]),
        (0, 3, 0.5, [-1, 0]),
        (3, 2, alpha, [0, -1]),
        (2, 2, 1.0 - alpha, [0, -1]),
    ]
}

fn ops_b(alpha: f64) -> Vec<Op> {
    vec![
        (0, 1, 0.5, [1, 0]),
        (2, 1, 0.5, [1, 0]),
        (1, 0, alpha, [0, 1]),
        (3, 0, 1.0 - alpha, [0, 1]),
        (0, 3, 0.5, [-1, 0]),
        (2, 3, 0.5, [-1, 0]),
        (1, 2, alpha, [0, -1]),
        (3, 2, 1.0 - alpha, [0, -1]),
    ]
}

fn dense(op: &Op) -> DMatrix<Complex64> {
    let mut k = DMatrix::zeros(4, 4);
    k[(op.0, op.1)] = Complex64::new(op.2.sqrt(), 0.0);
    k
}

fn checkerboard() -> CompiledWalk {
    let table = ClassTable::new([presets::class_a(DEFAULT_ALPHA), presets::class_b(DEFAULT_ALPHA)]).unwrap();
    let field = ClassField::periodic(2, vec![2, 2], ["A", "B", "B", "A"].map(String::from).to_vec()).unwrap();
    CompiledWalk::new(field, &table).unwrap()
}

/// Stationary law of the 4-state chain `col → row` with the given weights.
fn stationary(ops: &[Op]) -> [f64; 4] {
    let mut pi = [0.25; 4];
    for _ in 0..20_000 {
        let mut next = [0.0; 4];
        for &(r, c, w, _) in ops {
            next[r] += w * pi[c];
        }
        pi = next;
    }
    pi
}

#[test]
fn class_a_channel_on_maximally_mixed_state() {
    let class = presets::class_a(DEFAULT_ALPHA);
    let rho = DensityOperator::maximally_mixed(4);
    let got = apply_channel(&class, &rho).unwrap();
    let mut want = DMatrix::<Complex64>::zeros(4, 4);
    let rho_d = DMatrix::<Complex64>::identity(4, 4) * Complex64::new(0.25, 0.0);
    for op in ops_a(DEFAULT_ALPHA) {
        let k = dense(&op);
        want += &k * &rho_d * k.adjoint();
    }
    let want = ComplexMatrix::from_dmatrix(want).unwrap();
    assert!(got.matrix().max_abs_diff(&want) < 1e-15);
    // Row sums of the weights over four.
    let a = DEFAULT_ALPHA;
    let diag = [(a + 0.5) / 4.0, (1.5 - a) / 4.0, (1.0 - a) / 4.0, (1.0 + a) / 4.0];
    for (i, d) in diag.iter().enumerate() {
        assert!((got.matrix().get(i, i).re - d).abs() < 1e-15);
    }
}

#[test]
fn superop_matches_channel_on_random_states() {
    let class = presets::class_a(DEFAULT_ALPHA);
    let s = superop_matrix(&class, false);
    let mut rng = RngStream::new(2024, 1).rng();
    for _ in 0..100 {
        let rho = presets::random_density(&mut rng, 4);
        let a = s.apply(rho.matrix()).unwrap();
        let b = apply_channel(&class, &rho).unwrap();
        assert!(a.max_abs_diff(b.matrix()) <= 1e-12);
    }
}

#[test]
fn classes_complete_to_machine_precision() {
    for class in [presets::class_a(DEFAULT_ALPHA), presets::class_b(DEFAULT_ALPHA)] {
        let r = validate_class(&class, 1e-12).unwrap();
        assert!(r.passed);
        assert!(r.completeness_deviation <= 1e-15);
    }
}

#[test]
fn invariant_states_match_markov_chains() {
    for (class, ops) in [
        (presets::class_a(DEFAULT_ALPHA), ops_a(DEFAULT_ALPHA)),
        (presets::class_b(DEFAULT_ALPHA), ops_b(DEFAULT_ALPHA)),
    ] {
        let inv = invariant_state(&class, FIXED_POINT_TOL).unwrap();
        assert_eq!(inv.eigenvalue_one_multiplicity, 1);
        assert!(inv.fixed_point_residual <= 1e-10);
        let pi = stationary(&ops);
        let want = ComplexMatrix::from_real_rows(
            &(0..4)
                .map(|i| (0..4).map(|j| if i == j { pi[i] } else { 0.0 }).collect())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        assert!(inv.rho_inf.matrix().max_abs_diff(&want) < 1e-12);
        let (power, _) = power_iteration_fixed_point(&class, 100_000, 1e-14).unwrap();
        assert!(inv.rho_inf.matrix().max_abs_diff(power.matrix()) < 1e-12);
    }
}

#[test]
fn drift_vectors_closed_form() {
    let a = DEFAULT_ALPHA;
    let ca = presets::class_a(a);
    let cb = presets::class_b(a);
    let ma = mean_vector(&ca, &invariant_state(&ca, FIXED_POINT_TOL).unwrap().rho_inf).unwrap();
    let mb = mean_vector(&cb, &invariant_state(&cb, FIXED_POINT_TOL).unwrap().rho_inf).unwrap();
    assert!(ma.warning.is_none());
    assert!(ma.components[0].abs() < 1e-12);
    assert!((ma.components[1] - 1.0 / (5.0 - 4.0 * a)).abs() < 1e-12);
    assert!((mb.components[0] - (2.0 * a - 1.0) / 2.0).abs() < 1e-12);
    assert!(mb.components[1].abs() < 1e-12);
    let mixed = mixed_mean(&[(&ca, 0.5), (&cb, 0.5)]).unwrap();
    for i in 0..2 {
        assert!((mixed.components[i] - 0.5 * (ma.components[i] + mb.components[i])).abs() < 1e-15);
    }
}

#[test]
fn poisson_residuals_and_orthogonality() {
    let mut rng = RngStream::new(77, 0).rng();
    for class in [presets::class_a(DEFAULT_ALPHA), presets::class_b(DEFAULT_ALPHA)] {
        let rho_inf = invariant_state(&class, FIXED_POINT_TOL).unwrap().rho_inf;
        for l in [[1.0, 0.0], [0.0, 1.0]] {
            let p = solve_poisson(&class, &rho_inf, &l).unwrap();
            assert!(p.residual <= 1e-9);
            assert!(p.matrix.hermiticity_deviation() <= 1e-9);
            let (rhs, _) = poisson_rhs(&class, &rho_inf, &l).unwrap();
            assert!(rho_inf.matrix().trace_product(&rhs).norm() <= 1e-10);
        }
        for _ in 0..100 {
            let rho = presets::random_density(&mut rng, 4);
            let x: Vec<f64> = (0..2).map(|_| rand::Rng::random_range(&mut rng, -5.0..5.0)).collect();
            let l: Vec<f64> = (0..2).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let p = solve_poisson(&class, &rho_inf, &l).unwrap();
            assert!(poisson_identity_check(&class, &p, &rho, &x, &l).unwrap() <= 1e-9);
        }
    }
}

#[test]
fn damp_drift_kernel_and_image() {
    let s = superop_matrix(&presets::damp_drift(), false).identity_minus();
    let split = kernel_image_split(&s);
    assert_eq!((split.kernel_dim, split.image_dim), (1, 3));
    assert!(split.direct_sum_ok);
}

#[test]
fn checkerboard_reduction_matches_classical_chain() {
    let walk = checkerboard();
    let red = compose_paths(&walk, "A", 2).unwrap();
    assert_eq!(red.operators.len(), 64);
    assert_eq!(red.distinct_displacements().len(), 9);
    assert!(red.completeness_deviation() <= 1e-12);

    // Two steps from an A site: an A branch, then a B branch.
    let a = ops_a(DEFAULT_ALPHA);
    let b = ops_b(DEFAULT_ALPHA);
    let mut chain: Vec<Op> = Vec::new();
    for &(r1, c1, w1, d1) in &a {
        for &(r2, c2, w2, d2) in &b {
            if c2 == r1 {
                chain.push((r2, c1, w1 * w2, [d1[0] + d2[0], d1[1] + d2[1]]));
            }
        }
    }
    let pi = stationary(&chain);
    let mut m = [0.0; 2];
    for &(_, c, w, d) in &chain {
        m[0] += pi[c] * w * d[0] as f64;
        m[1] += pi[c] * w * d[1] as f64;
    }
    let drift = reduced_drift(&red).unwrap();
    assert_eq!(drift.eigenvalue_one_multiplicity, 1);
    for i in 0..2 {
        assert!((drift.per_reduced_step.components[i] - m[i]).abs() < 1e-12);
        assert!((drift.per_original_step.components[i] - m[i] / 2.0).abs() < 1e-12);
    }
    assert_eq!(chain.len(), red.nonzero_count());
}

/// Sums `Tr(K_n .. K_1 ρ K_1† .. K_n†)` over every branch sequence.
fn path_sum(walk: &CompiledWalk, rho0: &DMatrix<Complex64>, n: usize) -> BTreeMap<[i64; 2], f64> {
    fn go(
        walk: &CompiledWalk,
        site: [i64; 2],
        rho: DMatrix<Complex64>,
        left: usize,
        out: &mut BTreeMap<[i64; 2], f64>,
    ) {
        if left == 0 {
            *out.entry(site).or_insert(0.0) += rho.trace().re;
            return;
        }
        let class = walk.class(walk.class_index_at(&[site[0], site[1], 0]));
        for rule in class.rules() {
            for k in &rule.kraus_ops {
                let k = k.as_dmatrix();
                let next = k * &rho * k.adjoint();
                let to = [site[0] + rule.displacement[0], site[1] + rule.displacement[1]];
                go(walk, to, next, left - 1, out);
            }
        }
    }
    let mut out = BTreeMap::new();
    go(walk, [0, 0], rho0.clone(), n, &mut out);
    out
}

#[test]
fn evolution_equals_path_sums() {
    let walk = checkerboard();
    let mut rng = RngStream::new(5, 5).rng();
    let rho0 = presets::random_density(&mut rng, 4);
    for n in 1..=4 {
        let exact = path_sum(&walk, rho0.matrix().as_dmatrix(), n);
        let p = evolve_from(&walk, &rho0, &[0, 0], window_for(&walk, &[0, 0], n).unwrap(), n)
            .unwrap()
            .marginal();
        for (site, q) in &exact {
            assert!((p.get(site) - q).abs() <= 1e-12, "n={n} site={site:?}");
        }
        let covered: f64 = exact.values().sum();
        assert!((p.total() - covered).abs() <= 1e-12);
        assert!(p.nonzero().all(|(s, _)| exact.contains_key(&[s[0], s[1]])));
    }
}
