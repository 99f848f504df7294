//! Quantum-trajectory Monte Carlo: at every step one Kraus branch fires
//! with probability `Tr(K ρ K†)`, the internal state collapses to
//! `K ρ K† / Tr(K ρ K†)` and the walker moves by the branch displacement.

use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;

use crate::class::{BranchTable, Direction, VertexClass};
use crate::error::{OqwError, Result};
use crate::lattice::{site_add, site_from_slice, Site};
use crate::matrix::{c64, ComplexMatrix, DensityOperator, C64, TOL_TRACE};
use crate::rng::RngStream;
use crate::stats::{trajectory_statistics, TrajectoryStatistics};
use crate::walk::CompiledWalk;

/// Internal state, position and step count of one walker.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkerState {
    dim: usize,
    dimension: usize,
    /// Column-major `D×D`.
    rho: Vec<C64>,
    position: Site,
    step: usize,
}

impl WalkerState {
    pub fn new(rho0: &DensityOperator, x0: &[i64]) -> Self {
        Self {
            dim: rho0.dim(),
            dimension: x0.len(),
            rho: rho0.matrix().as_slice().to_vec(),
            position: site_from_slice(x0),
            step: 0,
        }
    }

    pub fn position(&self) -> &[i64] {
        &self.position[..self.dimension]
    }

    pub fn site(&self) -> &Site {
        &self.position
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn density(&self) -> Result<DensityOperator> {
        let m = nalgebra::DMatrix::from_column_slice(self.dim, self.dim, &self.rho);
        DensityOperator::new(ComplexMatrix::from_dmatrix(m)?)
    }
}

/// The branch that fired in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub branch: usize,
    pub rule: usize,
    pub kraus: usize,
    pub displacement: Vec<i64>,
    pub probability: f64,
}

impl StepOutcome {
    pub fn direction(&self) -> Option<Direction> {
        Direction::from_vector(&self.displacement)
    }
}

/// Reusable buffers for [`sample_with_table`].
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    probs: Vec<f64>,
    tmp: Vec<C64>,
    out: Vec<C64>,
}

impl Scratch {
    pub fn new(dim: usize) -> Self {
        Self {
            probs: Vec::new(),
            tmp: vec![c64(0.0, 0.0); dim * dim],
            out: vec![c64(0.0, 0.0); dim * dim],
        }
    }

    /// Branch probabilities of the last sampled step.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

/// One step of the walker under `table`.
///
/// Branches are scanned in rule order by inverting the cumulative sum; the
/// last branch with positive probability absorbs any rounding residue.
pub fn sample_with_table<R: Rng + ?Sized>(
    state: &mut WalkerState,
    table: &BranchTable,
    label: &str,
    rng: &mut R,
    scratch: &mut Scratch,
) -> Result<StepOutcome> {
    let d = state.dim;
    if table.dim() != d {
        return Err(OqwError::DimensionMismatch {
            expected: table.dim(),
            found: d,
            context: format!("walker state in class `{label}`"),
        });
    }
    if scratch.tmp.len() != d * d {
        *scratch = Scratch::new(d);
    }
    table.probabilities(&state.rho, &mut scratch.probs);
    scratch.probs.iter_mut().for_each(|p| *p = p.max(0.0));
    let sum: f64 = scratch.probs.iter().sum();
    if (sum - 1.0).abs() > TOL_TRACE || sum <= 0.0 {
        return Err(OqwError::BranchProbabilities {
            label: label.to_string(),
            sum,
        });
    }
    let target = rng.random::<f64>() * sum;
    let mut acc = 0.0;
    let mut chosen = None;
    for (b, &p) in scratch.probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        chosen = Some(b);
        if target < acc {
            break;
        }
    }
    let b = chosen.expect("positive total implies a positive branch");

    table.apply(b, &state.rho, &mut scratch.tmp, &mut scratch.out);
    let tr: f64 = (0..d).map(|i| scratch.out[i + i * d].re).sum();
    let half = 0.5 / tr;
    for j in 0..d {
        for i in 0..=j {
            let a = scratch.out[i + j * d];
            let bb = scratch.out[j + i * d];
            let h = (a + bb.conj()) * half;
            state.rho[i + j * d] = h;
            state.rho[j + i * d] = h.conj();
        }
    }
    let branch = &table.branches()[b];
    state.position = site_add(&state.position, &branch.displacement);
    state.step += 1;
    Ok(StepOutcome {
        branch: b,
        rule: branch.rule,
        kraus: branch.kraus,
        displacement: branch.displacement[..state.dimension].to_vec(),
        probability: scratch.probs[b],
    })
}

/// One step under a single class.
pub fn sample_step<R: Rng + ?Sized>(
    state: &mut WalkerState,
    class: &VertexClass,
    rng: &mut R,
) -> Result<StepOutcome> {
    let mut scratch = Scratch::new(class.internal_dim());
    sample_with_table(state, &class.branch_table(), class.label(), rng, &mut scratch)
}

/// `n` steps, looking up the class at the current site before each.
pub fn run_trajectory(
    walk: &CompiledWalk,
    rho0: &DensityOperator,
    x0: &[i64],
    n: usize,
    stream: RngStream,
) -> Result<WalkerState> {
    check_start(walk, rho0, x0)?;
    let mut state = WalkerState::new(rho0, x0);
    let mut rng = stream.rng();
    let mut scratch = Scratch::new(rho0.dim());
    advance(walk, &mut state, n, &mut rng, &mut scratch)?;
    Ok(state)
}

fn advance<R: Rng + ?Sized>(
    walk: &CompiledWalk,
    state: &mut WalkerState,
    n: usize,
    rng: &mut R,
    scratch: &mut Scratch,
) -> Result<()> {
    for _ in 0..n {
        let c = walk.class_index_at(&state.position);
        sample_with_table(state, walk.table(c), walk.class(c).label(), rng, scratch)?;
    }
    Ok(())
}

fn check_start(walk: &CompiledWalk, rho0: &DensityOperator, x0: &[i64]) -> Result<()> {
    if x0.len() != walk.dimension() {
        return Err(OqwError::DimensionMismatch {
            expected: walk.dimension(),
            found: x0.len(),
            context: "initial position".into(),
        });
    }
    if rho0.dim() != walk.internal_dim() {
        return Err(OqwError::DimensionMismatch {
            expected: walk.internal_dim(),
            found: rho0.dim(),
            context: "initial state".into(),
        });
    }
    Ok(())
}

/// Endpoints of trajectories `0..count`, in index order. Trajectory `i`
/// uses stream `i` of `seed`, so the result does not depend on the number
/// of worker threads.
pub fn run_ensemble(
    walk: &CompiledWalk,
    rho0: &DensityOperator,
    x0: &[i64],
    n: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<i64>>> {
    check_start(walk, rho0, x0)?;
    (0..count as u64)
        .into_par_iter()
        .map_init(
            || Scratch::new(rho0.dim()),
            |scratch, i| {
                let mut state = WalkerState::new(rho0, x0);
                let mut rng = RngStream::new(seed, i).rng();
                advance(walk, &mut state, n, &mut rng, scratch)?;
                Ok(state.position().to_vec())
            },
        )
        .collect()
}

/// Runs `count` trajectories of `n` steps and aggregates their endpoints.
pub fn monte_carlo(
    walk: &CompiledWalk,
    rho0: &DensityOperator,
    x0: &[i64],
    n: usize,
    count: usize,
    seed: u64,
) -> Result<TrajectoryStatistics> {
    if count < 2 {
        return Err(OqwError::InvalidArgument(format!(
            "need at least 2 trajectories, got {count}"
        )));
    }
    let endpoints = run_ensemble(walk, rho0, x0, n, count, seed)?;
    trajectory_statistics(&endpoints, n)
}

/// `index,x1,..,xd` per trajectory.
pub fn write_endpoints_csv<W: Write>(endpoints: &[Vec<i64>], mut w: W) -> io::Result<()> {
    let d = endpoints.first().map_or(0, Vec::len);
    let header: Vec<String> = (1..=d).map(|a| format!("x{a}")).collect();
    writeln!(w, "index,{}", header.join(","))?;
    for (i, x) in endpoints.iter().enumerate() {
        let coords: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{i},{}", coords.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn coin_flip_probabilities_are_half() {
        let class = presets::coin_flip();
        let mut state = WalkerState::new(&DensityOperator::maximally_mixed(1), &[0]);
        let mut scratch = Scratch::new(1);
        let mut rng = RngStream::new(1, 0).rng();
        let out = sample_with_table(&mut state, &class.branch_table(), "coin", &mut rng, &mut scratch).unwrap();
        assert!((scratch.probabilities()[0] - 0.5).abs() < 1e-15);
        assert!((scratch.probabilities()[1] - 0.5).abs() < 1e-15);
        assert_eq!(state.position(), out.displacement.as_slice());
    }

    #[test]
    fn damp_drift_collapses() {
        let class = presets::damp_drift();
        let rho = DensityOperator::new(ComplexMatrix::from_real_rows(&[vec![0.3, 0.2], vec![0.2, 0.7]]).unwrap()).unwrap();
        let table = class.branch_table();
        let mut scratch = Scratch::new(2);
        for seed in 0..20 {
            let mut state = WalkerState::new(&rho, &[0]);
            let mut rng = RngStream::new(seed, 0).rng();
            let out = sample_with_table(&mut state, &table, "drift", &mut rng, &mut scratch).unwrap();
            assert!((scratch.probabilities()[0] - 0.3).abs() < 1e-15);
            assert!((scratch.probabilities()[1] - 0.7).abs() < 1e-15);
            assert!(state
                .density()
                .unwrap()
                .matrix()
                .max_abs_diff(DensityOperator::basis(2, 0).matrix())
                < 1e-15);
            assert_eq!(out.direction().unwrap().to_vector(), out.displacement);
        }
    }

    #[test]
    fn class_a_branch_table_from_mixed_state() {
        let class = presets::class_a(presets::DEFAULT_ALPHA);
        let mut state = WalkerState::new(&DensityOperator::maximally_mixed(4), &[0, 0]);
        let mut scratch = Scratch::new(4);
        let mut rng = RngStream::new(3, 0).rng();
        sample_with_table(&mut state, &class.branch_table(), "A", &mut rng, &mut scratch).unwrap();
        assert_eq!(scratch.probabilities().len(), 8);
        assert!((scratch.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn incomplete_class_is_rejected_at_sampling() {
        let k = ComplexMatrix::identity(1);
        let class = VertexClass::new(
            "half",
            1,
            vec![crate::class::TransitionRule::new(vec![1], vec![k.scale(c64(0.5, 0.0))])],
            true,
        )
        .unwrap();
        let mut state = WalkerState::new(&DensityOperator::maximally_mixed(1), &[0]);
        let mut rng = RngStream::new(0, 0).rng();
        assert!(matches!(
            sample_step(&mut state, &class, &mut rng),
            Err(OqwError::BranchProbabilities { .. })
        ));
    }

    #[test]
    fn damp_drift_runs_straight() {
        let walk = CompiledWalk::homogeneous(presets::damp_drift()).unwrap();
        let end = run_trajectory(&walk, &DensityOperator::basis(2, 0), &[0], 100, RngStream::new(5, 9)).unwrap();
        assert_eq!(end.position(), &[100]);
    }

    #[test]
    fn trajectories_reproduce() {
        let walk = CompiledWalk::homogeneous(presets::coin_flip()).unwrap();
        let rho = DensityOperator::maximally_mixed(1);
        let a = run_trajectory(&walk, &rho, &[0], 500, RngStream::new(11, 4)).unwrap();
        let b = run_trajectory(&walk, &rho, &[0], 500, RngStream::new(11, 4)).unwrap();
        assert_eq!(a, b);
        let e = run_ensemble(&walk, &rho, &[0], 50, 64, 11).unwrap();
        assert_eq!(e[4][0], run_trajectory(&walk, &rho, &[0], 50, RngStream::new(11, 4)).unwrap().position()[0]);
    }

    #[test]
    fn endpoint_csv() {
        let mut buf = Vec::new();
        write_endpoints_csv(&[vec![1, -2], vec![0, 4]], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "index,x1,x2\n0,1,-2\n1,0,4\n");
    }
}
