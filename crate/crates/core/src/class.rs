//! Vertex classes: labelled sets of transition rules, each a displacement
//! together with one or more Kraus operators acting on the internal space.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::error::{OqwError, Result};
use crate::lattice::{site_from_slice, Site, MAX_DIM};
use crate::matrix::{c64, ComplexMatrix, C64, TOL_COMPLETENESS};

/// One of the `2d` nearest-neighbour directions of Z^d, indexed `1..=2d`.
///
/// Index `j ≤ d` is `+e_j`, index `j > d` is `-e_{j-d}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Direction {
    index: usize,
    dim: usize,
}

impl Direction {
    pub fn new(index: usize, dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM || index == 0 || index > 2 * dim {
            return Err(OqwError::InvalidArgument(format!(
                "direction index {index} invalid for dimension {dim}"
            )));
        }
        Ok(Self { index, dim })
    }

    pub fn all(dim: usize) -> impl Iterator<Item = Direction> {
        (1..=2 * dim).map(move |index| Direction { index, dim })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn to_vector(&self) -> Vec<i64> {
        let mut v = vec![0; self.dim];
        if self.index <= self.dim {
            v[self.index - 1] = 1;
        } else {
            v[self.index - self.dim - 1] = -1;
        }
        v
    }

    /// The direction whose vector equals `v`, if `v` is a signed unit vector.
    pub fn from_vector(v: &[i64]) -> Option<Self> {
        let dim = v.len();
        let mut nonzero = v.iter().enumerate().filter(|(_, &x)| x != 0);
        let (axis, &value) = nonzero.next()?;
        if nonzero.next().is_some() {
            return None;
        }
        match value {
            1 => Some(Self { index: axis + 1, dim }),
            -1 => Some(Self { index: dim + axis + 1, dim }),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.index <= self.dim {
            write!(f, "+e{}", self.index)
        } else {
            write!(f, "-e{}", self.index - self.dim)
        }
    }
}

/// A displacement and the Kraus operators that realise it.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRule {
    pub displacement: Vec<i64>,
    pub kraus_ops: Vec<ComplexMatrix>,
}

impl TransitionRule {
    pub fn new(displacement: Vec<i64>, kraus_ops: Vec<ComplexMatrix>) -> Self {
        Self {
            displacement,
            kraus_ops,
        }
    }

    pub fn direction(&self) -> Option<Direction> {
        Direction::from_vector(&self.displacement)
    }
}

/// A vertex class: label, lattice dimension and its transition rules.
///
/// Ordinary classes move by nearest-neighbour steps and must declare every
/// one of the `2d` directions. Generalized classes (reduced walks) carry
/// arbitrary displacement vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexClass {
    label: String,
    dimension: usize,
    internal_dim: usize,
    generalized: bool,
    rules: Vec<TransitionRule>,
}

impl VertexClass {
    /// Structural checks only; completeness is checked by [`validate_class`].
    pub fn new(
        label: impl Into<String>,
        dimension: usize,
        rules: Vec<TransitionRule>,
        generalized: bool,
    ) -> Result<Self> {
        let label = label.into();
        let invalid = |reason: String| OqwError::InvalidClass {
            label: label.clone(),
            reason,
        };
        if dimension == 0 || dimension > MAX_DIM {
            return Err(invalid(format!(
                "lattice dimension {dimension} outside 1..={MAX_DIM}"
            )));
        }
        let first = rules
            .iter()
            .flat_map(|r| r.kraus_ops.first())
            .next()
            .ok_or_else(|| invalid("no Kraus operators".into()))?;
        let internal_dim = first.dim();
        let mut seen = BTreeSet::new();
        for rule in &rules {
            if rule.kraus_ops.is_empty() {
                return Err(invalid(format!(
                    "rule {:?} has no Kraus operators",
                    rule.displacement
                )));
            }
            if rule.displacement.len() != dimension {
                return Err(OqwError::DimensionMismatch {
                    expected: dimension,
                    found: rule.displacement.len(),
                    context: format!("displacement of class `{label}`"),
                });
            }
            if let Some(k) = rule.kraus_ops.iter().find(|k| k.dim() != internal_dim) {
                return Err(OqwError::DimensionMismatch {
                    expected: internal_dim,
                    found: k.dim(),
                    context: format!("Kraus operators of class `{label}`"),
                });
            }
            if !seen.insert(rule.displacement.clone()) {
                return Err(invalid(format!(
                    "duplicate displacement {:?}",
                    rule.displacement
                )));
            }
            if !generalized && rule.direction().is_none() {
                return Err(invalid(format!(
                    "displacement {:?} is not a nearest-neighbour step",
                    rule.displacement
                )));
            }
        }
        Ok(Self {
            label,
            dimension,
            internal_dim,
            generalized,
            rules,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn internal_dim(&self) -> usize {
        self.internal_dim
    }

    pub fn is_generalized(&self) -> bool {
        self.generalized
    }

    pub fn rules(&self) -> &[TransitionRule] {
        &self.rules
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// All `(displacement, K)` pairs in rule order.
    pub fn kraus_iter(&self) -> impl Iterator<Item = (&[i64], &ComplexMatrix)> {
        self.rules
            .iter()
            .flat_map(|r| r.kraus_ops.iter().map(move |k| (r.displacement.as_slice(), k)))
    }

    pub fn kraus_count(&self) -> usize {
        self.rules.iter().map(|r| r.kraus_ops.len()).sum()
    }

    /// `Σ K†K` over all rules and Kraus indices.
    pub fn completeness_sum(&self) -> ComplexMatrix {
        self.kraus_iter()
            .fold(ComplexMatrix::zeros(self.internal_dim), |acc, (_, k)| {
                acc.add(&k.adjoint().mul(k))
            })
    }

    pub(crate) fn check_dim(&self, dim: usize, context: &str) -> Result<()> {
        if dim != self.internal_dim {
            return Err(OqwError::DimensionMismatch {
                expected: self.internal_dim,
                found: dim,
                context: format!("{context} for class `{}`", self.label),
            });
        }
        Ok(())
    }

    /// Compiles the class into the flat form used on hot paths.
    pub fn branch_table(&self) -> BranchTable {
        BranchTable::new(self)
    }
}

/// Classes keyed by label, all on the same lattice and internal space.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    classes: BTreeMap<String, VertexClass>,
}

impl ClassTable {
    pub fn new(classes: impl IntoIterator<Item = VertexClass>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut shape: Option<(usize, usize)> = None;
        for class in classes {
            let this = (class.dimension, class.internal_dim);
            match shape {
                None => shape = Some(this),
                Some((d, _)) if d != this.0 => {
                    return Err(OqwError::DimensionMismatch {
                        expected: d,
                        found: this.0,
                        context: format!("lattice dimension of class `{}`", class.label),
                    })
                }
                Some((_, dd)) if dd != this.1 => {
                    return Err(OqwError::DimensionMismatch {
                        expected: dd,
                        found: this.1,
                        context: format!("internal dimension of class `{}`", class.label),
                    })
                }
                _ => {}
            }
            if map.contains_key(&class.label) {
                return Err(OqwError::InvalidClass {
                    label: class.label.clone(),
                    reason: "label defined twice".into(),
                });
            }
            map.insert(class.label.clone(), class);
        }
        if map.is_empty() {
            return Err(OqwError::InvalidArgument("empty class table".into()));
        }
        Ok(Self { classes: map })
    }

    pub fn get(&self, label: &str) -> Result<&VertexClass> {
        self.classes.get(label).ok_or_else(|| OqwError::InvalidClass {
            label: label.to_string(),
            reason: "not defined in the class table".into(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &VertexClass> {
        self.classes.values()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.iter().next().map_or(0, |c| c.dimension)
    }

    pub fn internal_dim(&self) -> usize {
        self.iter().next().map_or(0, |c| c.internal_dim)
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ValidationReport {
    pub label: String,
    /// `max |Σ K†K - I|`.
    pub completeness_deviation: f64,
    /// `max |S - S†|` for `S = Σ K†K`.
    pub hermiticity_deviation: f64,
    /// `Tr(Σ K†K) - D`; positive means surplus probability, negative missing.
    pub trace_excess: f64,
    /// Nearest-neighbour directions without a rule (ordinary classes only).
    pub missing_directions: Vec<String>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Completeness gate for a vertex class.
pub fn validate_class(class: &VertexClass, tol: f64) -> Result<ValidationReport> {
    let d = class.internal_dim;
    for (_, k) in class.kraus_iter() {
        class.check_dim(k.dim(), "Kraus operator")?;
    }
    let sum = class.completeness_sum();
    let deviation = sum.max_abs_diff(&ComplexMatrix::identity(d));
    let missing_directions = if class.generalized {
        Vec::new()
    } else {
        let present: BTreeSet<Direction> = class.rules.iter().filter_map(|r| r.direction()).collect();
        Direction::all(class.dimension)
            .filter(|dir| !present.contains(dir))
            .map(|dir| dir.to_string())
            .collect()
    };
    Ok(ValidationReport {
        label: class.label.clone(),
        completeness_deviation: deviation,
        hermiticity_deviation: sum.hermiticity_deviation(),
        trace_excess: sum.trace().re - d as f64,
        passed: deviation <= tol && missing_directions.is_empty(),
        missing_directions,
        tolerance: tol,
    })
}

/// Validates with the default tolerance and converts failure into an error.
pub fn require_valid(class: &VertexClass) -> Result<ValidationReport> {
    let report = validate_class(class, TOL_COMPLETENESS)?;
    if !report.passed {
        let reason = if report.missing_directions.is_empty() {
            format!(
                "completeness deviation {:e} exceeds {:e} (trace excess {:+e})",
                report.completeness_deviation, report.tolerance, report.trace_excess
            )
        } else {
            format!("missing directions {}", report.missing_directions.join(", "))
        };
        return Err(OqwError::InvalidClass {
            label: class.label.clone(),
            reason,
        });
    }
    Ok(report)
}

/// One measurement branch `(rule, kraus index)` in flat form.
#[derive(Debug, Clone)]
pub struct Branch {
    pub rule: usize,
    pub kraus: usize,
    pub displacement: Site,
    /// Nonzero entries `(row, col, value)` of `K`.
    entries: Vec<(usize, usize, C64)>,
    /// `K†K`, column-major.
    ktk: Vec<C64>,
}

/// Flat branch list of a class in fixed rule order, operating on
/// column-major `D×D` buffers.
#[derive(Debug, Clone)]
pub struct BranchTable {
    dim: usize,
    branches: Vec<Branch>,
}

impl BranchTable {
    fn new(class: &VertexClass) -> Self {
        let dim = class.internal_dim;
        let mut branches = Vec::with_capacity(class.kraus_count());
        for (ri, rule) in class.rules.iter().enumerate() {
            for (ki, k) in rule.kraus_ops.iter().enumerate() {
                let mut entries = Vec::new();
                for c in 0..dim {
                    for r in 0..dim {
                        let v = k.get(r, c);
                        if v != c64(0.0, 0.0) {
                            entries.push((r, c, v));
                        }
                    }
                }
                let ktk = k.adjoint().mul(k).as_slice().to_vec();
                branches.push(Branch {
                    rule: ri,
                    kraus: ki,
                    displacement: site_from_slice(&rule.displacement),
                    entries,
                    ktk,
                });
            }
        }
        Self { dim, branches }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// `Tr(K ρ K†) = Tr(ρ K†K)` for branch `b`.
    #[inline]
    pub fn probability(&self, b: usize, rho: &[C64]) -> f64 {
        let d = self.dim;
        let ktk = &self.branches[b].ktk;
        let mut acc = 0.0;
        for j in 0..d {
            for i in 0..d {
                // Re(ρ_ij (K†K)_ji)
                let x = rho[i + j * d] * ktk[j + i * d];
                acc += x.re;
            }
        }
        acc
    }

    pub fn probabilities(&self, rho: &[C64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.branches.len()).map(|b| self.probability(b, rho)));
    }

    /// `out += K ρ K†` for branch `b`; `tmp` is scratch of length `D²`.
    #[inline]
    pub fn accumulate(&self, b: usize, rho: &[C64], tmp: &mut [C64], out: &mut [C64]) {
        let d = self.dim;
        let entries = &self.branches[b].entries;
        tmp.iter_mut().for_each(|z| *z = c64(0.0, 0.0));
        for &(a, c, k) in entries {
            for j in 0..d {
                tmp[a + j * d] += k * rho[c + j * d];
            }
        }
        for &(bb, e, k) in entries {
            let kc = k.conj();
            for a in 0..d {
                out[a + bb * d] += tmp[a + e * d] * kc;
            }
        }
    }

    /// `out = K ρ K†` for branch `b`.
    pub fn apply(&self, b: usize, rho: &[C64], tmp: &mut [C64], out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = c64(0.0, 0.0));
        self.accumulate(b, rho, tmp, out);
    }
}
