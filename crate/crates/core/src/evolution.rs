//! Exact evolution of the walk distribution on a finite window of Z^d.
//!
//! Each site holds an unnormalized positive operator `ρ_X`; one step maps
//! `ρ'_Y = Σ K ρ_X K†` over all sites `X` and branches with
//! `X + δ = Y`. Mass touching the window edge is an error, never absorbed.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{OqwError, Result};
use crate::lattice::{site_from_slice, Site, MAX_DIM};
use crate::matrix::{c64, ComplexMatrix, DensityOperator, C64};
use crate::walk::CompiledWalk;

/// Largest mass allowed within one step of the window edge.
pub const BOUNDARY_EPS: f64 = 1e-12;
/// Sites whose trace falls below this are reset to zero.
pub const UNDERFLOW: f64 = 1e-300;

/// An inclusive axis-aligned box. Axes beyond the lattice dimension are
/// pinned to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Window {
    dimension: usize,
    lower: Site,
    upper: Site,
}

impl Window {
    pub fn new(dimension: usize, lower: &[i64], upper: &[i64]) -> Result<Self> {
        if dimension == 0 || dimension > MAX_DIM {
            return Err(OqwError::InvalidArgument(format!(
                "window dimension {dimension} outside 1..={MAX_DIM}"
            )));
        }
        for v in [lower, upper] {
            if v.len() != dimension {
                return Err(OqwError::DimensionMismatch {
                    expected: dimension,
                    found: v.len(),
                    context: "window corner".into(),
                });
            }
        }
        if lower.iter().zip(upper).any(|(l, u)| l > u) {
            return Err(OqwError::InvalidArgument(format!(
                "empty window {lower:?}..={upper:?}"
            )));
        }
        Ok(Self {
            dimension,
            lower: site_from_slice(lower),
            upper: site_from_slice(upper),
        })
    }

    /// The box `center ± radius` along every axis.
    pub fn centered(center: &[i64], radius: i64) -> Result<Self> {
        if radius < 0 {
            return Err(OqwError::InvalidArgument(format!("negative radius {radius}")));
        }
        let lower: Vec<i64> = center.iter().map(|c| c - radius).collect();
        let upper: Vec<i64> = center.iter().map(|c| c + radius).collect();
        Self::new(center.len(), &lower, &upper)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn lower(&self) -> &[i64] {
        &self.lower[..self.dimension]
    }

    pub fn upper(&self) -> &[i64] {
        &self.upper[..self.dimension]
    }

    #[inline]
    fn extent(&self, axis: usize) -> usize {
        (self.upper[axis] - self.lower[axis] + 1) as usize
    }

    pub fn len(&self) -> usize {
        (0..MAX_DIM).map(|a| self.extent(a)).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn contains(&self, s: &Site) -> bool {
        (0..MAX_DIM).all(|a| s[a] >= self.lower[a] && s[a] <= self.upper[a])
    }

    /// Row-major index, first coordinate slowest.
    #[inline]
    pub fn index(&self, s: &Site) -> Option<usize> {
        if !self.contains(s) {
            return None;
        }
        let mut idx = 0usize;
        for a in 0..MAX_DIM {
            idx = idx * self.extent(a) + (s[a] - self.lower[a]) as usize;
        }
        Some(idx)
    }

    pub fn site(&self, mut idx: usize) -> Site {
        let mut s = [0; MAX_DIM];
        for a in (0..MAX_DIM).rev() {
            let e = self.extent(a);
            s[a] = self.lower[a] + (idx % e) as i64;
            idx /= e;
        }
        s
    }
}

/// Inclusive bounding box of a set of sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Bounds {
    lo: Site,
    hi: Site,
}

impl Bounds {
    fn point(s: Site) -> Self {
        Self { lo: s, hi: s }
    }

    fn union(self, other: Self) -> Self {
        let mut out = self;
        for a in 0..MAX_DIM {
            out.lo[a] = out.lo[a].min(other.lo[a]);
            out.hi[a] = out.hi[a].max(other.hi[a]);
        }
        out
    }

    fn grow_within(self, by: i64, window: &Window) -> Self {
        let mut out = self;
        for a in 0..window.dimension {
            out.lo[a] = (out.lo[a] - by).max(window.lower[a]);
            out.hi[a] = (out.hi[a] + by).min(window.upper[a]);
        }
        out
    }

    #[inline]
    fn contains(&self, s: &Site) -> bool {
        (0..MAX_DIM).all(|a| s[a] >= self.lo[a] && s[a] <= self.hi[a])
    }
}

fn union_opt(a: Option<Bounds>, b: Option<Bounds>) -> Option<Bounds> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.union(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Per-site unnormalized operators on a window.
#[derive(Debug, Clone)]
pub struct LatticeState {
    window: Window,
    dim: usize,
    step: usize,
    /// Column-major `D×D` blocks, one per window site.
    rho: Vec<C64>,
    traces: Vec<f64>,
    /// Bounding box of sites with nonzero trace.
    support: Option<Bounds>,
    /// Box outside which every block is known to be zero.
    dirty: Option<Bounds>,
}

/// `ρ_{X0} = rho0` and zero elsewhere.
pub fn init_delta(rho0: &DensityOperator, x0: &[i64], window: Window) -> Result<LatticeState> {
    if x0.len() != window.dimension {
        return Err(OqwError::DimensionMismatch {
            expected: window.dimension,
            found: x0.len(),
            context: "initial position".into(),
        });
    }
    let site = site_from_slice(x0);
    let idx = window
        .index(&site)
        .ok_or_else(|| OqwError::OutsideWindow { site: x0.to_vec() })?;
    let d = rho0.dim();
    let d2 = d * d;
    let mut rho = vec![c64(0.0, 0.0); window.len() * d2];
    rho[idx * d2..(idx + 1) * d2].copy_from_slice(rho0.matrix().as_slice());
    let mut traces = vec![0.0; window.len()];
    traces[idx] = rho0.matrix().trace().re;
    Ok(LatticeState {
        window,
        dim: d,
        step: 0,
        rho,
        traces,
        support: Some(Bounds::point(site)),
        dirty: Some(Bounds::point(site)),
    })
}

impl LatticeState {
    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn internal_dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn total_trace(&self) -> f64 {
        self.traces.iter().sum()
    }

    /// The operator at `site`, if inside the window.
    pub fn operator_at(&self, site: &[i64]) -> Option<ComplexMatrix> {
        let idx = self.window.index(&site_from_slice(site))?;
        let d2 = self.dim * self.dim;
        let v = nalgebra::DMatrix::from_column_slice(self.dim, self.dim, &self.rho[idx * d2..(idx + 1) * d2]);
        ComplexMatrix::from_dmatrix(v).ok()
    }

    /// Smallest eigenvalue over all sites with nonzero trace.
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim;
        let d2 = d * d;
        self.rho
            .par_chunks(d2)
            .zip(self.traces.par_iter())
            .filter(|(_, &t)| t > 0.0)
            .map(|(block, _)| {
                let m = nalgebra::DMatrix::from_column_slice(d, d, block);
                ComplexMatrix::from_dmatrix(m)
                    .map(|m| m.hermitian_eigenvalues()[0])
                    .unwrap_or(f64::NAN)
            })
            .reduce(|| f64::INFINITY, f64::min)
    }

    /// Largest L1 distance from `center` of a site with nonzero trace.
    pub fn support_l1_radius(&self, center: &[i64]) -> i64 {
        let c = site_from_slice(center);
        self.traces
            .iter()
            .enumerate()
            .filter(|(_, &t)| t > 0.0)
            .map(|(i, _)| {
                let s = self.window.site(i);
                (0..MAX_DIM).map(|a| (s[a] - c[a]).abs()).sum::<i64>()
            })
            .max()
            .unwrap_or(0)
    }

    pub fn marginal(&self) -> ProbabilityField {
        marginal(self)
    }
}

/// Stepper owning the state, a spare buffer and the class of every
/// window site.
#[derive(Debug)]
pub struct Evolution<'a> {
    walk: &'a CompiledWalk,
    state: LatticeState,
    spare_rho: Vec<C64>,
    spare_traces: Vec<f64>,
    spare_dirty: Option<Bounds>,
    classes: Vec<u32>,
    initial_trace: f64,
    max_step_drift: f64,
}

impl<'a> Evolution<'a> {
    pub fn new(walk: &'a CompiledWalk, state: LatticeState) -> Result<Self> {
        if walk.dimension() != state.window.dimension {
            return Err(OqwError::DimensionMismatch {
                expected: walk.dimension(),
                found: state.window.dimension,
                context: "walk vs window".into(),
            });
        }
        if walk.internal_dim() != state.dim {
            return Err(OqwError::DimensionMismatch {
                expected: walk.internal_dim(),
                found: state.dim,
                context: "walk vs lattice state".into(),
            });
        }
        let window = state.window;
        let classes = (0..window.len())
            .into_par_iter()
            .map(|i| walk.class_index_at(&window.site(i)) as u32)
            .collect();
        let initial_trace = state.total_trace();
        Ok(Self {
            walk,
            spare_rho: vec![c64(0.0, 0.0); state.rho.len()],
            spare_traces: vec![0.0; state.traces.len()],
            spare_dirty: None,
            classes,
            initial_trace,
            max_step_drift: 0.0,
            state,
        })
    }

    pub fn state(&self) -> &LatticeState {
        &self.state
    }

    pub fn into_state(self) -> LatticeState {
        self.state
    }

    /// `|Tr_total(now) - Tr_total(start)|`.
    pub fn cumulative_drift(&self) -> f64 {
        (self.state.total_trace() - self.initial_trace).abs()
    }

    /// Largest change of the total trace over a single step so far.
    pub fn max_step_drift(&self) -> f64 {
        self.max_step_drift
    }

    /// Mass on sites from which a step could leave the window.
    pub fn boundary_mass(&self) -> f64 {
        let Some(support) = self.state.support else {
            return 0.0;
        };
        let w = &self.state.window;
        let band = self.walk.max_step();
        let dim = w.dimension;
        let mut mass = 0.0;
        for_each_site(&support, |s| {
            let near = (0..dim).any(|a| s[a] - w.lower[a] < band || w.upper[a] - s[a] < band);
            if near {
                mass += self.state.traces[w.index(&s).unwrap()];
            }
        });
        mass
    }

    pub fn step(&mut self) -> Result<()> {
        let mass = self.boundary_mass();
        if mass > BOUNDARY_EPS {
            return Err(OqwError::WindowTooSmall {
                mass,
                step: self.state.step,
            });
        }
        let before = self.state.total_trace();
        let window = self.state.window;
        let target = self
            .state
            .support
            .map(|s| s.grow_within(self.walk.max_step(), &window));
        let region = union_opt(target, self.spare_dirty);
        if let Some(region) = region {
            self.fill(region, target);
        }
        std::mem::swap(&mut self.state.rho, &mut self.spare_rho);
        std::mem::swap(&mut self.state.traces, &mut self.spare_traces);
        self.spare_dirty = self.state.dirty;
        self.state.dirty = target;
        self.state.support = target.and_then(|t| tight_support(&window, &self.state.traces, &t));
        self.state.step += 1;
        let drift = (self.state.total_trace() - before).abs();
        self.max_step_drift = self.max_step_drift.max(drift);
        Ok(())
    }

    pub fn run(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    /// Writes step `k+1` into the spare buffers over `region`, computing
    /// sites inside `target` and zeroing the rest.
    fn fill(&mut self, region: Bounds, target: Option<Bounds>) {
        let window = self.state.window;
        let d = self.state.dim;
        let d2 = d * d;
        let row_len = window.extent(1) * window.extent(2);
        let walk = self.walk;
        let src_rho = &self.state.rho;
        let src_traces = &self.state.traces;
        let classes = &self.classes;
        let first = (region.lo[0] - window.lower[0]) as usize;
        let last = (region.hi[0] - window.lower[0]) as usize;
        self.spare_rho
            .par_chunks_mut(row_len * d2)
            .zip(self.spare_traces.par_chunks_mut(row_len))
            .enumerate()
            .skip(first)
            .take(last + 1 - first)
            .for_each(|(row, (rho_row, tr_row))| {
                let mut tmp = vec![c64(0.0, 0.0); d2];
                let x0 = window.lower[0] + row as i64;
                for x1 in region.lo[1]..=region.hi[1] {
                    for x2 in region.lo[2]..=region.hi[2] {
                        let y = [x0, x1, x2];
                        let local = ((x1 - window.lower[1]) as usize) * window.extent(2)
                            + (x2 - window.lower[2]) as usize;
                        let out = &mut rho_row[local * d2..(local + 1) * d2];
                        out.iter_mut().for_each(|z| *z = c64(0.0, 0.0));
                        tr_row[local] = 0.0;
                        if !target.is_some_and(|t| t.contains(&y)) {
                            continue;
                        }
                        for (di, disp) in walk.displacements().iter().enumerate() {
                            let x = [y[0] - disp[0], y[1] - disp[1], y[2] - disp[2]];
                            let Some(src) = window.index(&x) else {
                                continue;
                            };
                            if src_traces[src] == 0.0 {
                                continue;
                            }
                            let c = classes[src] as usize;
                            let table = walk.table(c);
                            let block = &src_rho[src * d2..(src + 1) * d2];
                            for &b in walk.branches_with(c, di) {
                                table.accumulate(b, block, &mut tmp, out);
                            }
                        }
                        let tr: f64 = (0..d).map(|i| out[i + i * d].re).sum();
                        if tr >= UNDERFLOW {
                            tr_row[local] = tr;
                        } else {
                            out.iter_mut().for_each(|z| *z = c64(0.0, 0.0));
                        }
                    }
                }
            });
    }
}

fn for_each_site(b: &Bounds, mut f: impl FnMut(Site)) {
    for x0 in b.lo[0]..=b.hi[0] {
        for x1 in b.lo[1]..=b.hi[1] {
            for x2 in b.lo[2]..=b.hi[2] {
                f([x0, x1, x2]);
            }
        }
    }
}

fn tight_support(window: &Window, traces: &[f64], within: &Bounds) -> Option<Bounds> {
    let mut out: Option<Bounds> = None;
    for_each_site(within, |s| {
        if traces[window.index(&s).unwrap()] > 0.0 {
            out = union_opt(out, Some(Bounds::point(s)));
        }
    });
    out
}

/// One step on a copy of `state`.
pub fn evolve_step(state: &LatticeState, walk: &CompiledWalk) -> Result<LatticeState> {
    let mut ev = Evolution::new(walk, state.clone())?;
    ev.step()?;
    Ok(ev.into_state())
}

/// Site probabilities `p(X) = Tr ρ_X` on a window.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField {
    window: Window,
    step: usize,
    values: Vec<f64>,
}

pub fn marginal(state: &LatticeState) -> ProbabilityField {
    ProbabilityField {
        window: state.window,
        step: state.step,
        values: state.traces.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldMoments {
    pub total: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl ProbabilityField {
    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn get(&self, site: &[i64]) -> f64 {
        self.window
            .index(&site_from_slice(site))
            .map_or(0.0, |i| self.values[i])
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Sites with nonzero probability, in window order.
    pub fn nonzero(&self) -> impl Iterator<Item = (Site, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != 0.0)
            .map(|(i, &p)| (self.window.site(i), p))
    }

    fn support(&self) -> Option<Bounds> {
        self.nonzero()
            .fold(None, |acc, (s, _)| union_opt(acc, Some(Bounds::point(s))))
    }

    /// Writes `x1,..,xd,p` over the bounding box of the support.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.window.dimension;
        let header: Vec<String> = (1..=d).map(|a| format!("x{a}")).collect();
        writeln!(w, "{},p", header.join(","))?;
        if let Some(b) = self.support() {
            let mut result = Ok(());
            for_each_site(&b, |s| {
                if result.is_err() {
                    return;
                }
                let coords: Vec<String> = s[..d].iter().map(|x| x.to_string()).collect();
                result = writeln!(w, "{},{:e}", coords.join(","), self.get(&s[..d]));
            });
            result?;
        }
        Ok(())
    }
}

/// Exact mean and covariance of the site distribution.
pub fn field_moments(p: &ProbabilityField) -> FieldMoments {
    let d = p.window.dimension;
    let total = p.total();
    let mut mean = vec![0.0; d];
    for (s, w) in p.nonzero() {
        for a in 0..d {
            mean[a] += w * s[a] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut covariance = vec![vec![0.0; d]; d];
    for (s, w) in p.nonzero() {
        for a in 0..d {
            for b in 0..d {
                covariance[a][b] += w * (s[a] as f64 - mean[a]) * (s[b] as f64 - mean[b]);
            }
        }
    }
    covariance
        .iter_mut()
        .flatten()
        .for_each(|c| *c /= total);
    FieldMoments {
        total,
        mean,
        covariance,
    }
}

/// The line along `axis` whose other coordinates all equal `index`.
pub fn cross_section(p: &ProbabilityField, axis: usize, index: i64) -> Result<Vec<(i64, f64)>> {
    let w = &p.window;
    if axis >= w.dimension {
        return Err(OqwError::InvalidArgument(format!(
            "axis {axis} outside lattice dimension {}",
            w.dimension
        )));
    }
    let mut site = [0; MAX_DIM];
    for a in (0..w.dimension).filter(|&a| a != axis) {
        if index < w.lower[a] || index > w.upper[a] {
            let mut s = vec![index; w.dimension];
            s[axis] = w.lower[axis];
            return Err(OqwError::OutsideWindow { site: s });
        }
        site[a] = index;
    }
    Ok((w.lower[axis]..=w.upper[axis])
        .map(|x| {
            site[axis] = x;
            (x, p.get(&site[..w.dimension]))
        })
        .collect())
}

/// Two-column CSV of a cross-section.
pub fn write_cross_section_csv<W: Write>(series: &[(i64, f64)], mut w: W) -> io::Result<()> {
    writeln!(w, "x,p")?;
    for (x, p) in series {
        writeln!(w, "{x},{p:e}")?;
    }
    Ok(())
}

/// Runs `steps` steps from a point mass and returns the final state.
pub fn evolve_from(
    walk: &CompiledWalk,
    rho0: &DensityOperator,
    x0: &[i64],
    window: Window,
    steps: usize,
) -> Result<LatticeState> {
    let mut ev = Evolution::new(walk, init_delta(rho0, x0, window)?)?;
    ev.run(steps)?;
    Ok(ev.into_state())
}

/// A window around `x0` large enough for `steps` steps of `walk`.
pub fn window_for(walk: &CompiledWalk, x0: &[i64], steps: usize) -> Result<Window> {
    Window::centered(x0, walk.max_step() * (steps as i64 + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::class::ClassTable;
    use crate::lattice::ClassField;
    use crate::presets;

    fn checkerboard() -> CompiledWalk {
        let table = ClassTable::new([
            presets::class_a(presets::DEFAULT_ALPHA),
            presets::class_b(presets::DEFAULT_ALPHA),
        ])
        .unwrap();
        let field =
            ClassField::periodic(2, vec![2, 2], ["A", "B", "B", "A"].map(String::from).to_vec())
                .unwrap();
        CompiledWalk::new(field, &table).unwrap()
    }

    #[test]
    fn window_indexing_round_trips() {
        let w = Window::new(2, &[-2, 3], &[1, 5]).unwrap();
        assert_eq!(w.len(), 12);
        for i in 0..w.len() {
            assert_eq!(w.index(&w.site(i)), Some(i));
        }
        assert_eq!(w.index(&[2, 3, 0]), None);
    }

    #[test]
    fn delta_outside_window_fails() {
        let w = Window::centered(&[0], 3).unwrap();
        let rho = DensityOperator::maximally_mixed(1);
        assert!(matches!(
            init_delta(&rho, &[4], w),
            Err(OqwError::OutsideWindow { .. })
        ));
        let s = init_delta(&rho, &[-3], w).unwrap();
        assert_eq!(s.total_trace(), 1.0);
        assert_eq!(s.marginal().get(&[-3]), 1.0);
    }

    #[test]
    fn coin_flip_one_step() {
        let walk = CompiledWalk::homogeneous(presets::coin_flip()).unwrap();
        let rho = DensityOperator::maximally_mixed(1);
        let s = init_delta(&rho, &[0], Window::centered(&[0], 5).unwrap()).unwrap();
        let p = evolve_step(&s, &walk).unwrap().marginal();
        assert!((p.get(&[1]) - 0.5).abs() < 1e-15);
        assert!((p.get(&[-1]) - 0.5).abs() < 1e-15);
        assert_eq!(p.get(&[0]), 0.0);
    }

    #[test]
    fn coin_flip_binomial_moments() {
        let walk = CompiledWalk::homogeneous(presets::coin_flip()).unwrap();
        let rho = DensityOperator::maximally_mixed(1);
        let n = 40;
        let s = evolve_from(&walk, &rho, &[3], window_for(&walk, &[3], n).unwrap(), n).unwrap();
        let m = field_moments(&s.marginal());
        assert!((m.mean[0] - 3.0).abs() < 1e-12);
        assert!((m.covariance[0][0] - n as f64).abs() < 1e-10);
    }

    #[test]
    fn damp_drift_moves_deterministically() {
        let walk = CompiledWalk::homogeneous(presets::damp_drift()).unwrap();
        let rho = DensityOperator::maximally_mixed(2);
        let n = 25;
        let s = evolve_from(&walk, &rho, &[0], window_for(&walk, &[0], n).unwrap(), n).unwrap();
        let p = s.marginal();
        // Step one sends the |1⟩ half left; it then drifts right with the rest.
        assert!((p.get(&[n as i64 - 2]) - 0.5).abs() < 1e-15);
        assert!((p.get(&[n as i64]) - 0.5).abs() < 1e-15);
        let s = evolve_from(
            &walk,
            &DensityOperator::basis(2, 0),
            &[0],
            window_for(&walk, &[0], n).unwrap(),
            n,
        )
        .unwrap();
        let m = field_moments(&s.marginal());
        assert_eq!(s.marginal().get(&[n as i64]), 1.0);
        assert_eq!(m.covariance[0][0], 0.0);
    }

    #[test]
    fn window_too_small_is_an_error() {
        let walk = CompiledWalk::homogeneous(presets::coin_flip()).unwrap();
        let rho = DensityOperator::maximally_mixed(1);
        let mut ev = Evolution::new(&walk, init_delta(&rho, &[0], Window::centered(&[0], 3).unwrap()).unwrap()).unwrap();
        ev.run(3).unwrap();
        assert!(matches!(ev.step(), Err(OqwError::WindowTooSmall { step: 3, .. })));
    }

    #[test]
    fn checkerboard_conserves_and_stays_in_light_cone() {
        let walk = checkerboard();
        let rho = DensityOperator::maximally_mixed(4);
        let n = 30;
        let mut ev = Evolution::new(&walk, init_delta(&rho, &[0, 0], window_for(&walk, &[0, 0], n).unwrap()).unwrap()).unwrap();
        for k in 1..=n {
            ev.step().unwrap();
            assert!(ev.state().support_l1_radius(&[0, 0]) <= k as i64);
        }
        assert!(ev.max_step_drift() <= 1e-12);
        assert!(ev.cumulative_drift() <= 1e-9);
        assert!(ev.state().min_eigenvalue() >= -1e-9);
    }

    #[test]
    fn cross_sections() {
        let rho = DensityOperator::maximally_mixed(4);
        let s = init_delta(&rho, &[1, 1], Window::centered(&[0, 0], 2).unwrap()).unwrap();
        let p = s.marginal();
        let through = cross_section(&p, 0, 1).unwrap();
        assert_eq!(through.len(), 5);
        assert_eq!(through.iter().filter(|(_, v)| *v > 0.0).count(), 1);
        assert_eq!(through[3], (1, 1.0));
        assert!(cross_section(&p, 0, 0).unwrap().iter().all(|(_, v)| *v == 0.0));
        assert!(cross_section(&p, 1, 7).is_err());
    }

    #[test]
    fn csv_output() {
        let walk = CompiledWalk::homogeneous(presets::coin_flip()).unwrap();
        let rho = DensityOperator::maximally_mixed(1);
        let s = evolve_from(&walk, &rho, &[0], Window::centered(&[0], 4).unwrap(), 1).unwrap();
        let mut buf = Vec::new();
        s.marginal().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<(i64, f64)> = text
            .lines()
            .skip(1)
            .map(|l| {
                let (x, p) = l.split_once(',').unwrap();
                (x.parse().unwrap(), p.parse().unwrap())
            })
            .collect();
        assert!(text.starts_with("x1,p\n"));
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1], (0, 0.0));
        assert!((rows[0].1 - 0.5).abs() < 1e-15 && rows[0].0 == -1);
    }
}
