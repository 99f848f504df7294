//! Assignment of vertex classes to the sites of Z^d.
//!
//! Random fields are not stored: the class of a site is a pure function of
//! the master seed and the coordinates, so arbitrarily large regions can be
//! visited without memory cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{OqwError, Result};
use crate::rng::site_uniform;

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 3;

/// A lattice site; coordinates beyond the lattice dimension are zero.
pub type Site = [i64; MAX_DIM];

pub fn site_from_slice(v: &[i64]) -> Site {
    let mut s = [0; MAX_DIM];
    s[..v.len()].copy_from_slice(v);
    s
}

#[inline]
pub fn site_add(a: &Site, b: &Site) -> Site {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Anything that labels lattice sites with class indices.
pub trait SiteClassifier {
    fn dimension(&self) -> usize;
    fn labels(&self) -> &[String];
    fn class_index_at(&self, site: &Site) -> usize;
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    /// Tile indices in row-major order (first coordinate slowest).
    Periodic { period: Vec<i64>, tile: Vec<usize> },
    Random {
        probabilities: Vec<f64>,
        cumulative: Vec<f64>,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassField {
    dimension: usize,
    labels: Vec<String>,
    kind: FieldKind,
}

impl ClassField {
    /// A periodic field from a full-period tile of labels in row-major
    /// order (first coordinate slowest).
    pub fn periodic(dimension: usize, period: Vec<i64>, tile: Vec<String>) -> Result<Self> {
        check_dimension(dimension)?;
        if period.len() != dimension || period.iter().any(|&p| p < 1) {
            return Err(OqwError::InvalidField(format!(
                "period {period:?} must have {dimension} positive entries"
            )));
        }
        let cells: i64 = period.iter().product();
        if tile.len() as i64 != cells {
            return Err(OqwError::InvalidField(format!(
                "tile has {} cells, one period has {cells}",
                tile.len()
            )));
        }
        let mut labels: Vec<String> = Vec::new();
        let tile = tile
            .into_iter()
            .map(|l| match labels.iter().position(|x| *x == l) {
                Some(i) => i,
                None => {
                    labels.push(l);
                    labels.len() - 1
                }
            })
            .collect();
        Ok(Self {
            dimension,
            labels,
            kind: FieldKind::Periodic { period, tile },
        })
    }

    /// A seeded i.i.d. field with the given class probabilities.
    pub fn random(dimension: usize, probabilities: Vec<(String, f64)>, seed: u64) -> Result<Self> {
        check_dimension(dimension)?;
        let (labels, probs): (Vec<String>, Vec<f64>) = probabilities.into_iter().unzip();
        check_probabilities(&probs)?;
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(OqwError::InvalidField(format!("duplicate label `{l}`")));
            }
        }
        let mut cumulative: Vec<f64> = probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(Self {
            dimension,
            labels,
            kind: FieldKind::Random {
                probabilities: probs,
                cumulative,
                seed,
            },
        })
    }

    /// A single-class field.
    pub fn homogeneous(dimension: usize, label: impl Into<String>) -> Result<Self> {
        Self::periodic(dimension, vec![1; dimension], vec![label.into()])
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.kind, FieldKind::Periodic { .. })
    }

    /// Label of the class at `x`.
    pub fn class_at(&self, x: &[i64]) -> Result<&str> {
        if x.len() != self.dimension {
            return Err(OqwError::DimensionMismatch {
                expected: self.dimension,
                found: x.len(),
                context: "site coordinates".into(),
            });
        }
        Ok(&self.labels[self.class_index_at(&site_from_slice(x))])
    }

    /// Exact class densities: tile frequencies or the sampling probabilities.
    pub fn densities(&self) -> ClassDensities {
        match &self.kind {
            FieldKind::Periodic { tile, .. } => {
                let mut counts = vec![0usize; self.labels.len()];
                tile.iter().for_each(|&i| counts[i] += 1);
                ClassDensities::from_counts(&self.labels, &counts)
            }
            FieldKind::Random { probabilities, .. } => ClassDensities {
                labels: self.labels.clone(),
                values: probabilities.clone(),
            },
        }
    }
}

impl SiteClassifier for ClassField {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    #[inline]
    fn class_index_at(&self, site: &Site) -> usize {
        match &self.kind {
            FieldKind::Periodic { period, tile } => {
                let mut flat = 0i64;
                for (axis, &p) in period.iter().enumerate() {
                    flat = flat * p + site[axis].rem_euclid(p);
                }
                tile[flat as usize]
            }
            FieldKind::Random {
                cumulative, seed, ..
            } => {
                let u = site_uniform(*seed, &site[..self.dimension]);
                cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(cumulative.len() - 1)
            }
        }
    }
}

fn check_dimension(d: usize) -> Result<()> {
    if d == 0 || d > MAX_DIM {
        return Err(OqwError::InvalidField(format!(
            "lattice dimension {d} outside 1..={MAX_DIM}"
        )));
    }
    Ok(())
}

pub(crate) fn check_probabilities(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(OqwError::InvalidProbabilities("no classes".into()));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(OqwError::InvalidProbabilities(format!(
            "negative or non-finite probability in {p:?}"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(OqwError::InvalidProbabilities(format!(
            "probabilities sum to {sum}"
        )));
    }
    Ok(())
}

/// Frequency of each class label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDensities {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl ClassDensities {
    fn from_counts(labels: &[String], counts: &[usize]) -> Self {
        let total: usize = counts.iter().sum();
        Self {
            labels: labels.to_vec(),
            values: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        }
    }

    pub fn get(&self, label: &str) -> f64 {
        self.labels
            .iter()
            .position(|l| l == label)
            .map_or(0.0, |i| self.values[i])
    }

    /// Total-variation distance `½ Σ |p - q|` over the union of labels.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let mut labels: Vec<&String> = self.labels.iter().chain(other.labels.iter()).collect();
        labels.sort();
        labels.dedup();
        0.5 * labels
            .iter()
            .map(|l| (self.get(l) - other.get(l)).abs())
            .sum::<f64>()
    }
}

fn window_counts<F: SiteClassifier + ?Sized>(field: &F, center: &Site, radius: i64) -> Vec<usize> {
    let d = field.dimension();
    let mut counts = vec![0usize; field.labels().len()];
    let side = 2 * radius + 1;
    let total = side.pow(d as u32);
    let mut site = *center;
    for flat in 0..total {
        let mut rest = flat;
        for axis in 0..d {
            site[axis] = center[axis] - radius + rest % side;
            rest /= side;
        }
        counts[field.class_index_at(&site)] += 1;
    }
    counts
}

/// Class frequencies over the L∞ ball of `radius` around `center`.
pub fn estimate_densities<F: SiteClassifier + ?Sized>(
    field: &F,
    center: &[i64],
    radius: i64,
) -> Result<ClassDensities> {
    if radius < 1 {
        return Err(OqwError::InvalidArgument(format!("radius {radius} < 1")));
    }
    if center.len() != field.dimension() {
        return Err(OqwError::DimensionMismatch {
            expected: field.dimension(),
            found: center.len(),
            context: "window center".into(),
        });
    }
    let counts = window_counts(field, &site_from_slice(center), radius);
    Ok(ClassDensities::from_counts(field.labels(), &counts))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityQuery {
    pub epsilon: f64,
    pub radius: i64,
    pub sample_windows: usize,
    pub seed: u64,
    /// Window centres are drawn uniformly from `[-extent, extent]^d`.
    pub extent: i64,
}

impl RegularityQuery {
    pub fn new(epsilon: f64, radius: i64, sample_windows: usize, seed: u64) -> Self {
        Self {
            epsilon,
            radius,
            sample_windows,
            seed,
            extent: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub epsilon: f64,
    pub radius: i64,
    pub windows: usize,
    pub max_total_variation: f64,
    pub passed: bool,
}

/// Samples windows (plus every centre of one period for periodic fields)
/// and reports the largest total-variation distance between any two.
pub fn regularity_report(field: &ClassField, query: &RegularityQuery) -> Result<RegularityReport> {
    let mut centers = Vec::new();
    if let FieldKind::Periodic { period, .. } = &field.kind {
        let cells: i64 = period.iter().product();
        for flat in 0..cells {
            let mut rest = flat;
            let mut s = [0; MAX_DIM];
            for axis in (0..field.dimension).rev() {
                s[axis] = rest % period[axis];
                rest /= period[axis];
            }
            centers.push(s);
        }
    }
    regularity_from_centers(field, query, centers)
}

/// Same as [`regularity_report`] for any classifier, sampling only.
pub fn regularity_report_sampled<F: SiteClassifier + ?Sized>(
    field: &F,
    query: &RegularityQuery,
) -> Result<RegularityReport> {
    regularity_from_centers(field, query, Vec::new())
}

fn regularity_from_centers<F: SiteClassifier + ?Sized>(
    field: &F,
    query: &RegularityQuery,
    mut centers: Vec<Site>,
) -> Result<RegularityReport> {
    if !(query.epsilon > 0.0) {
        return Err(OqwError::InvalidArgument(format!(
            "epsilon {} must be positive",
            query.epsilon
        )));
    }
    if query.radius < 1 {
        return Err(OqwError::InvalidArgument(format!("radius {} < 1", query.radius)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(query.seed);
    for _ in 0..query.sample_windows {
        let mut s = [0; MAX_DIM];
        for c in s.iter_mut().take(field.dimension()) {
            *c = rng.random_range(-query.extent..=query.extent);
        }
        centers.push(s);
    }
    let densities: Vec<ClassDensities> = centers
        .iter()
        .map(|c| ClassDensities::from_counts(field.labels(), &window_counts(field, c, query.radius)))
        .collect();
    let mut max_tv: f64 = 0.0;
    for i in 0..densities.len() {
        for j in i + 1..densities.len() {
            max_tv = max_tv.max(densities[i].total_variation(&densities[j]));
        }
    }
    Ok(RegularityReport {
        epsilon: query.epsilon,
        radius: query.radius,
        windows: densities.len(),
        max_total_variation: max_tv,
        passed: max_tv <= query.epsilon,
    })
}
