//! Reduction of periodic walks: when every `l`-step path from a site of
//! class `A` ends on another `A` site, the `l`-step products of Kraus
//! operators form a homogeneous walk with general displacement vectors.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::analysis::{expected_displacement, invariant_state, DriftVector, FIXED_POINT_TOL};
use crate::class::{Direction, TransitionRule, VertexClass};
use crate::error::{OqwError, Result};
use crate::evolution::{evolve_from, window_for};
use crate::lattice::{site_add, ClassField, FieldKind, Site, SiteClassifier, MAX_DIM};
use crate::matrix::{ComplexMatrix, DensityOperator, TOL_COMPLETENESS};
use crate::walk::CompiledWalk;

/// Composed operators whose largest entry is below this are dropped on export.
pub const PRUNE_BELOW: f64 = 1e-300;

/// Tolerance of [`equivalence_check`].
pub const EQUIVALENCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathStep {
    pub displacement: Vec<i64>,
    pub rule: usize,
    pub kraus: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSpec {
    pub steps: Vec<PathStep>,
    pub net_displacement: Vec<i64>,
    /// Classes of the sites the steps leave from, then the final site.
    pub visited_classes: Vec<String>,
}

impl PathSpec {
    /// Directions of the steps; `None` for steps that are not unit moves.
    pub fn directions(&self) -> Vec<Option<Direction>> {
        self.steps
            .iter()
            .map(|s| Direction::from_vector(&s.displacement))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedOperator {
    pub matrix: ComplexMatrix,
    pub displacement: Vec<i64>,
    pub path: PathSpec,
}

/// All `l`-step path operators from the reference `A` site, grouped by
/// displacement and otherwise in path order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedWalk {
    pub operators: Vec<ReducedOperator>,
    pub path_length: usize,
    pub base_class: String,
    /// The reference site the paths start from.
    pub origin: Vec<i64>,
    pub dimension: usize,
}

impl ReducedWalk {
    pub fn internal_dim(&self) -> usize {
        self.operators[0].matrix.dim()
    }

    /// `max |Σ K†K - I|` over the composed set.
    pub fn completeness_deviation(&self) -> f64 {
        let d = self.internal_dim();
        let sum = self
            .operators
            .iter()
            .fold(ComplexMatrix::zeros(d), |acc, op| {
                acc.add(&op.matrix.adjoint().mul(&op.matrix))
            });
        sum.max_abs_diff(&ComplexMatrix::identity(d))
    }

    pub fn distinct_displacements(&self) -> Vec<Vec<i64>> {
        let set: BTreeSet<&Vec<i64>> = self.operators.iter().map(|o| &o.displacement).collect();
        set.into_iter().cloned().collect()
    }

    /// Operators that survive pruning.
    pub fn nonzero_count(&self) -> usize {
        self.operators
            .iter()
            .filter(|o| o.matrix.max_abs() >= PRUNE_BELOW)
            .count()
    }

    /// The reduced walk as a generalized class. Operators sharing a
    /// displacement stay separate Kraus terms; vanishing products are
    /// dropped.
    pub fn to_class(&self, label: impl Into<String>) -> Result<VertexClass> {
        let mut rules: Vec<TransitionRule> = Vec::new();
        let mut pruned = 0usize;
        for op in &self.operators {
            if op.matrix.max_abs() < PRUNE_BELOW {
                pruned += 1;
                continue;
            }
            match rules.last_mut() {
                Some(r) if r.displacement == op.displacement => r.kraus_ops.push(op.matrix.clone()),
                _ => rules.push(TransitionRule::new(
                    op.displacement.clone(),
                    vec![op.matrix.clone()],
                )),
            }
        }
        if pruned > 0 {
            log::info!(
                "pruned {pruned} of {} composed operators below {PRUNE_BELOW:e}",
                self.operators.len()
            );
        }
        VertexClass::new(label, self.dimension, rules, true)
    }

    /// One reduced step from `rho0`: total probability per displacement.
    pub fn one_step_distribution(&self, rho0: &DensityOperator) -> Result<BTreeMap<Vec<i64>, f64>> {
        if rho0.dim() != self.internal_dim() {
            return Err(OqwError::DimensionMismatch {
                expected: self.internal_dim(),
                found: rho0.dim(),
                context: "initial state of the reduced walk".into(),
            });
        }
        let mut out = BTreeMap::new();
        for op in &self.operators {
            let p = rho0.matrix().trace_product(&op.matrix.adjoint().mul(&op.matrix)).re;
            *out.entry(op.displacement.clone()).or_insert(0.0) += p;
        }
        Ok(out)
    }
}

fn periodic_parts(field: &ClassField) -> Result<(&[i64], &[usize])> {
    match field.kind() {
        FieldKind::Periodic { period, tile } => Ok((period, tile)),
        FieldKind::Random { .. } => Err(OqwError::InvalidField(
            "reducibility is only decided for periodic fields".into(),
        )),
    }
}

/// Sites of one period holding class `label`, in lexicographic order.
fn base_sites(field: &ClassField, label: &str) -> Result<Vec<Site>> {
    let (period, tile) = periodic_parts(field)?;
    let idx = field
        .labels()
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| OqwError::InvalidArgument(format!("class `{label}` does not occur in the field")))?;
    let mut sites = Vec::new();
    for (flat, &c) in tile.iter().enumerate() {
        if c != idx {
            continue;
        }
        let mut s = [0; MAX_DIM];
        let mut rest = flat as i64;
        for axis in (0..period.len()).rev() {
            s[axis] = rest % period[axis];
            rest /= period[axis];
        }
        sites.push(s);
    }
    Ok(sites)
}

/// Whether every `l`-step nearest-neighbour path from every `label` site
/// ends on a `label` site.
pub fn is_reducible(field: &ClassField, label: &str, l: usize) -> Result<bool> {
    if l == 0 {
        return Err(OqwError::InvalidArgument("path length must be at least 1".into()));
    }
    let d = field.dimension();
    let target = field.labels().iter().position(|x| x == label);
    let steps: Vec<Site> = Direction::all(d)
        .map(|dir| crate::lattice::site_from_slice(&dir.to_vector()))
        .collect();
    for start in base_sites(field, label)? {
        let mut frontier = BTreeSet::from([start]);
        for _ in 0..l {
            frontier = frontier
                .iter()
                .flat_map(|s| steps.iter().map(move |st| site_add(s, st)))
                .collect();
        }
        if frontier.iter().any(|s| Some(field.class_index_at(s)) != target) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Composes every `l`-step path operator from the lexicographically
/// smallest `label` site of the period. The first step is the rightmost
/// factor.
pub fn compose_paths(walk: &CompiledWalk, label: &str, l: usize) -> Result<ReducedWalk> {
    if !is_reducible(walk.field(), label, l)? {
        return Err(OqwError::NotReducible(format!(
            "some {l}-step path from a `{label}` site ends elsewhere"
        )));
    }
    let origin = base_sites(walk.field(), label)?[0];
    let d = walk.dimension();
    let mut operators = Vec::new();
    let mut steps = Vec::with_capacity(l);
    let mut classes = Vec::with_capacity(l + 1);
    let id = ComplexMatrix::identity(walk.internal_dim());
    descend(walk, origin, &id, l, &mut steps, &mut classes, &origin, &mut operators);
    operators.sort_by(|a: &ReducedOperator, b| a.displacement.cmp(&b.displacement));
    let reduced = ReducedWalk {
        operators,
        path_length: l,
        base_class: label.to_string(),
        origin: origin[..d].to_vec(),
        dimension: d,
    };
    let deviation = reduced.completeness_deviation();
    if deviation > TOL_COMPLETENESS {
        return Err(OqwError::CompletenessViolation { deviation });
    }
    Ok(reduced)
}

#[allow(clippy::too_many_arguments)]
fn descend(
    walk: &CompiledWalk,
    site: Site,
    acc: &ComplexMatrix,
    remaining: usize,
    steps: &mut Vec<PathStep>,
    classes: &mut Vec<String>,
    origin: &Site,
    out: &mut Vec<ReducedOperator>,
) {
    let d = walk.dimension();
    let c = walk.class_index_at(&site);
    let class = walk.class(c);
    classes.push(class.label().to_string());
    if remaining == 0 {
        let net: Vec<i64> = (0..d).map(|a| site[a] - origin[a]).collect();
        out.push(ReducedOperator {
            matrix: acc.clone(),
            displacement: net.clone(),
            path: PathSpec {
                steps: steps.clone(),
                net_displacement: net,
                visited_classes: classes.clone(),
            },
        });
    } else {
        for branch in walk.table(c).branches() {
            let k = &class.rules()[branch.rule].kraus_ops[branch.kraus];
            steps.push(PathStep {
                displacement: branch.displacement[..d].to_vec(),
                rule: branch.rule,
                kraus: branch.kraus,
            });
            let next = site_add(&site, &branch.displacement);
            descend(walk, next, &k.mul(acc), remaining - 1, steps, classes, origin, out);
            steps.pop();
        }
    }
    classes.pop();
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducedDrift {
    pub rho_inf: DensityOperator,
    pub eigenvalue_one_multiplicity: usize,
    pub fixed_point_residual: f64,
    /// `m_P`, displacement per reduced step.
    pub per_reduced_step: DriftVector,
    /// `m_P / l`, displacement per original step.
    pub per_original_step: DriftVector,
    pub path_length: usize,
}

/// Drift of the reduced walk under its unique invariant state.
pub fn reduced_drift(walk: &ReducedWalk) -> Result<ReducedDrift> {
    let class = walk.to_class(format!("{}^{}", walk.base_class, walk.path_length))?;
    let inv = invariant_state(&class, FIXED_POINT_TOL)?;
    if !inv.is_unique() {
        return Err(OqwError::NonUniqueInvariantState {
            label: class.label().to_string(),
            multiplicity: inv.eigenvalue_one_multiplicity,
        });
    }
    let m = DriftVector::new(expected_displacement(&class, &inv.rho_inf)?);
    Ok(ReducedDrift {
        per_original_step: m.scaled(1.0 / walk.path_length as f64),
        per_reduced_step: m,
        rho_inf: inv.rho_inf,
        eigenvalue_one_multiplicity: inv.eigenvalue_one_multiplicity,
        fixed_point_residual: inv.fixed_point_residual,
        path_length: walk.path_length,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceEntry {
    pub displacement: Vec<i64>,
    pub original: f64,
    pub reduced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub reduced_steps: usize,
    pub original_steps: usize,
    pub entries: Vec<EquivalenceEntry>,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the exact `n l`-step displacement distribution of the original
/// walk from the reference site with `n` steps of the reduced walk.
pub fn equivalence_check(
    walk: &CompiledWalk,
    reduced: &ReducedWalk,
    rho0: &DensityOperator,
    n: usize,
) -> Result<EquivalenceReport> {
    if n == 0 {
        return Err(OqwError::InvalidArgument("need at least one reduced step".into()));
    }
    let steps = n * reduced.path_length;
    let origin = &reduced.origin;
    let original = evolve_from(walk, rho0, origin, window_for(walk, origin, steps)?, steps)?.marginal();
    let mut table: BTreeMap<Vec<i64>, (f64, f64)> = BTreeMap::new();
    for (s, p) in original.nonzero() {
        let disp: Vec<i64> = (0..reduced.dimension).map(|a| s[a] - origin[a]).collect();
        table.entry(disp).or_default().0 += p;
    }
    let reduced_dist: Vec<(Vec<i64>, f64)> = if n == 1 {
        reduced.one_step_distribution(rho0)?.into_iter().collect()
    } else {
        let rwalk = CompiledWalk::homogeneous(reduced.to_class("reduced")?)?;
        let zero = vec![0; reduced.dimension];
        evolve_from(&rwalk, rho0, &zero, window_for(&rwalk, &zero, n)?, n)?
            .marginal()
            .nonzero()
            .map(|(s, p)| (s[..reduced.dimension].to_vec(), p))
            .collect()
    };
    for (disp, p) in reduced_dist {
        table.entry(disp).or_default().1 += p;
    }
    let entries: Vec<EquivalenceEntry> = table
        .into_iter()
        .filter(|(_, (a, b))| *a != 0.0 || *b != 0.0)
        .map(|(displacement, (original, reduced))| EquivalenceEntry {
            displacement,
            original,
            reduced,
        })
        .collect();
    let max_deviation = entries
        .iter()
        .map(|e| (e.original - e.reduced).abs())
        .fold(0.0, f64::max);
    Ok(EquivalenceReport {
        reduced_steps: n,
        original_steps: steps,
        entries,
        max_deviation,
        tolerance: EQUIVALENCE_TOL,
        passed: max_deviation <= EQUIVALENCE_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::class::ClassTable;
    use crate::presets;

    fn checkerboard_field() -> ClassField {
        ClassField::periodic(2, vec![2, 2], ["A", "B", "B", "A"].map(String::from).to_vec()).unwrap()
    }

    fn checkerboard() -> CompiledWalk {
        let table = ClassTable::new([
            presets::class_a(presets::DEFAULT_ALPHA),
            presets::class_b(presets::DEFAULT_ALPHA),
        ])
        .unwrap();
        CompiledWalk::new(checkerboard_field(), &table).unwrap()
    }

    #[test]
    fn checkerboard_reducibility() {
        let f = checkerboard_field();
        assert!(is_reducible(&f, "A", 2).unwrap());
        assert!(!is_reducible(&f, "A", 1).unwrap());
        assert!(!is_reducible(&f, "A", 3).unwrap());
        assert!(is_reducible(&f, "B", 4).unwrap());
        let h = ClassField::homogeneous(2, "A").unwrap();
        assert!((1..5).all(|l| is_reducible(&h, "A", l).unwrap()));
        let r = ClassField::random(2, vec![("A".into(), 1.0)], 1).unwrap();
        assert!(matches!(is_reducible(&r, "A", 2), Err(OqwError::InvalidField(_))));
    }

    #[test]
    fn checkerboard_composition() {
        let walk = checkerboard();
        let red = compose_paths(&walk, "A", 2).unwrap();
        assert_eq!(red.operators.len(), 64);
        assert_eq!(red.origin, vec![0, 0]);
        assert!(red.completeness_deviation() <= 1e-12);
        let class = red.to_class("P").unwrap();
        let disps: Vec<Vec<i64>> = class.rules().iter().map(|r| r.displacement.clone()).collect();
        assert!(disps.len() <= 9);
        for op in &red.operators {
            assert_eq!(op.path.visited_classes, vec!["A", "B", "A"]);
            let sum: Vec<i64> = (0..2)
                .map(|a| op.path.steps.iter().map(|s| s.displacement[a]).sum())
                .collect();
            assert_eq!(sum, op.displacement);
        }
        assert!(matches!(compose_paths(&walk, "A", 1), Err(OqwError::NotReducible(_))));
    }

    #[test]
    fn coin_flip_reduction() {
        let walk = CompiledWalk::homogeneous(presets::coin_flip()).unwrap();
        let red = compose_paths(&walk, "coin", 2).unwrap();
        let got: Vec<(Vec<i64>, f64)> = red
            .operators
            .iter()
            .map(|o| (o.displacement.clone(), o.matrix.get(0, 0).re))
            .collect();
        assert_eq!(got.len(), 4);
        let d: Vec<i64> = got.iter().map(|g| g.0[0]).collect();
        assert_eq!(d, vec![-2, 0, 0, 2]);
        assert!(got.iter().all(|g| (g.1 - 0.5).abs() < 1e-15));
        let drift = reduced_drift(&red).unwrap();
        assert!(drift.per_reduced_step.components[0].abs() < 1e-15);
        let rep = equivalence_check(&walk, &red, &DensityOperator::maximally_mixed(1), 1).unwrap();
        assert!(rep.passed);
        let probs: Vec<f64> = rep.entries.iter().map(|e| e.reduced).collect();
        assert!((probs[0] - 0.25).abs() < 1e-15 && (probs[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn damp_drift_reduction() {
        let walk = CompiledWalk::homogeneous(presets::damp_drift()).unwrap();
        let red = compose_paths(&walk, "drift", 2).unwrap();
        let drift = reduced_drift(&red).unwrap();
        assert!((drift.per_reduced_step.components[0] - 2.0).abs() < 1e-12);
        assert!((drift.per_original_step.components[0] - 1.0).abs() < 1e-12);
        let rho = DensityOperator::basis(2, 0);
        let rep = equivalence_check(&walk, &red, &rho, 1).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.entries.len(), 1);
        assert_eq!(rep.entries[0].displacement, vec![2]);
    }

    #[test]
    fn checkerboard_equivalence_over_several_reduced_steps() {
        let walk = checkerboard();
        let red = compose_paths(&walk, "A", 2).unwrap();
        let rho = DensityOperator::maximally_mixed(4);
        for n in 1..=3 {
            let rep = equivalence_check(&walk, &red, &rho, n).unwrap();
            assert!(rep.passed, "n = {n}: {:e}", rep.max_deviation);
        }
    }
}
