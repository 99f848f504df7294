//! Spectral analysis of the per-class auxiliary channel.
//!
//! * invariant states from the null space of `S - I`,
//! * drift vectors `m_C = Σ Tr(K ρ_∞ K†) · displacement`,
//! * the Poisson corrector `L_l` solving
//!   `(I - Φ†)(L) = Σ K†K ⟨δ|l⟩ - ⟨m|l⟩ I` in its minimal-norm gauge,
//! * the martingale identity `(1 - P) f = ⟨x|l⟩ - ⟨m|l⟩` for
//!   `f(ρ, x) = Tr(ρ L) + ⟨x|l⟩`,
//! * the kernel/image decomposition `Ker(Φ) ⊕ Im(Φ†)`,
//! * the asymptotic variance `σ_l² = Tr(ρ Ξ)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::channel::{apply_conjugate, apply_kraus_map, superop_matrix, SuperopMatrix};
use crate::class::VertexClass;
use crate::error::{OqwError, Result};
use crate::lattice::check_probabilities;
use crate::matrix::{c64, ComplexMatrix, DensityOperator, C64};

/// Relative singular-value cutoff for rank decisions.
pub const RANK_TOL: f64 = 1e-9;
/// Fixed-point residual accepted for invariant states.
pub const FIXED_POINT_TOL: f64 = 1e-10;
/// Residual accepted for the Poisson equation.
pub const POISSON_TOL: f64 = 1e-9;
/// Branches with probability at or below this are skipped.
pub const ZERO_BRANCH: f64 = 1e-15;

/// Singular value decomposition of a complex matrix through its real
/// embedding `[[Re, -Im], [Im, Re]]`. The complex SVD in nalgebra loses
/// accuracy on some non-normal superoperators; the real one does not.
/// Every complex singular value appears twice in the embedding.
struct Spectrum {
    n: usize,
    /// Real singular values, descending.
    real_values: Vec<f64>,
    /// Columns are right singular vectors of the embedding.
    right: DMatrix<f64>,
    /// Columns are left singular vectors of the embedding.
    left: DMatrix<f64>,
    cutoff: f64,
}

impl Spectrum {
    fn of(m: &DMatrix<C64>) -> Self {
        let n = m.nrows();
        let mut r = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for j in 0..n {
            for i in 0..n {
                let z = m[(i, j)];
                r[(i, j)] = z.re;
                r[(i, j + n)] = -z.im;
                r[(i + n, j)] = z.im;
                r[(i + n, j + n)] = z.re;
            }
        }
        let svd = r.svd(true, true);
        let u = svd.u.expect("requested");
        let v = svd.v_t.expect("requested").transpose();
        let mut order: Vec<usize> = (0..2 * n).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let real_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let left = DMatrix::from_fn(2 * n, 2 * n, |i, j| u[(i, order[j])]);
        let right = DMatrix::from_fn(2 * n, 2 * n, |i, j| v[(i, order[j])]);
        let smax = real_values.first().copied().unwrap_or(0.0);
        Self {
            n,
            real_values,
            right,
            left,
            cutoff: RANK_TOL * smax.max(1.0),
        }
    }

    fn smallest(&self) -> f64 {
        self.real_values.last().copied().unwrap_or(0.0)
    }

    /// Orthonormal complex basis spanned by the chosen real columns.
    fn complex_basis(&self, m: &DMatrix<f64>, keep: impl Fn(f64) -> bool) -> Vec<DVector<C64>> {
        let n = self.n;
        let mut basis: Vec<DVector<C64>> = Vec::new();
        for (j, &s) in self.real_values.iter().enumerate() {
            if !keep(s) {
                continue;
            }
            let mut w = DVector::from_fn(n, |i, _| c64(m[(i, j)], m[(i + n, j)]));
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dotc(&w);
                    w -= b * c;
                }
            }
            let norm = w.norm();
            if norm > 0.5 {
                basis.push(w / c64(norm, 0.0));
            }
        }
        basis
    }

    /// Right null space.
    fn null_basis(&self) -> Vec<DVector<C64>> {
        let cut = self.cutoff;
        self.complex_basis(&self.right, |s| s <= cut)
    }

    /// Column space.
    fn range_basis(&self) -> Vec<DVector<C64>> {
        let cut = self.cutoff;
        self.complex_basis(&self.left, |s| s > cut)
    }

    /// Minimal-norm least-squares solution `x = M⁺ b`.
    fn pseudo_solve(&self, b: &DVector<C64>) -> DVector<C64> {
        let n = self.n;
        let br = DVector::from_fn(2 * n, |i, _| if i < n { b[i].re } else { b[i - n].im });
        let mut x = DVector::<f64>::zeros(2 * n);
        for (j, &s) in self.real_values.iter().enumerate() {
            if s > self.cutoff {
                x += self.right.column(j) * (self.left.column(j).dot(&br) / s);
            }
        }
        DVector::from_fn(n, |i, _| c64(x[i], x[i + n]))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantReport {
    pub rho_inf: DensityOperator,
    /// `max |Φ(ρ_∞) - ρ_∞|`.
    pub fixed_point_residual: f64,
    pub eigenvalue_one_multiplicity: usize,
}

impl InvariantReport {
    pub fn is_unique(&self) -> bool {
        self.eigenvalue_one_multiplicity == 1
    }
}

/// Invariant state of the class channel from the null space of `S - I`.
///
/// With a degenerate eigenvalue 1 the returned state is the limit of the
/// lazy iteration started from the maximally mixed state.
pub fn invariant_state(class: &VertexClass, tol: f64) -> Result<InvariantReport> {
    let d = class.internal_dim();
    let s = superop_matrix(class, false);
    let spectrum = Spectrum::of(s.identity_minus().matrix());
    let null = spectrum.null_basis();
    let rho = match null.len() {
        0 => {
            return Err(OqwError::NoFixedPoint { residual: spectrum.smallest() });
        }
        1 => {
            let m = ComplexMatrix::unstack(&null[0], d)?;
            let tr = m.trace();
            if tr.norm() < 1e-12 {
                return Err(OqwError::NoFixedPoint { residual: f64::NAN });
            }
            DensityOperator::new(DensityOperator::from_unnormalized(m.scale(tr.inv()))?.into_matrix())?
        }
        _ => power_iteration_fixed_point(class, 1_000_000, tol)?.0,
    };
    let residual = apply_kraus_map(class, rho.matrix())?.max_abs_diff(rho.matrix());
    if residual > tol {
        return Err(OqwError::NoFixedPoint { residual });
    }
    Ok(InvariantReport {
        rho_inf: rho,
        fixed_point_residual: residual,
        eigenvalue_one_multiplicity: null.len(),
    })
}

/// Iterates the lazy channel `ρ ↦ (ρ + Φ(ρ))/2` from the maximally mixed
/// state until the fixed-point residual drops below `tol`.
pub fn power_iteration_fixed_point(
    class: &VertexClass,
    max_iter: usize,
    tol: f64,
) -> Result<(DensityOperator, usize)> {
    let half = c64(0.5, 0.0);
    let mut rho = DensityOperator::maximally_mixed(class.internal_dim()).into_matrix();
    for it in 0..max_iter {
        let next = apply_kraus_map(class, &rho)?;
        let residual = next.max_abs_diff(&rho);
        if residual <= tol {
            return Ok((DensityOperator::from_unnormalized(rho)?, it));
        }
        rho = rho.add(&next).scale(half);
    }
    let residual = apply_kraus_map(class, &rho)?.max_abs_diff(&rho);
    Err(OqwError::NoFixedPoint { residual })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftVector {
    pub components: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl DriftVector {
    pub fn new(components: Vec<f64>) -> Self {
        Self {
            components,
            warning: None,
        }
    }

    pub fn dot(&self, l: &[f64]) -> f64 {
        self.components.iter().zip(l).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            components: self.components.iter().map(|x| x * s).collect(),
            warning: self.warning.clone(),
        }
    }
}

/// Expected one-step displacement `Σ_b Tr(K_b ρ K_b†) δ_b` with the branch
/// probabilities of the trajectory sampler.
pub fn expected_displacement(class: &VertexClass, rho: &DensityOperator) -> Result<Vec<f64>> {
    class.check_dim(rho.dim(), "state")?;
    let table = class.branch_table();
    let mut m = vec![0.0; class.dimension()];
    for (b, branch) in table.branches().iter().enumerate() {
        let p = table.probability(b, rho.matrix().as_slice());
        for (mi, &x) in m.iter_mut().zip(&branch.displacement) {
            *mi += p * x as f64;
        }
    }
    Ok(m)
}

/// Drift vector `m_C`; a warning is attached when `rho_inf` is not a fixed
/// point of the class channel.
pub fn mean_vector(class: &VertexClass, rho_inf: &DensityOperator) -> Result<DriftVector> {
    let components = expected_displacement(class, rho_inf)?;
    let residual = apply_kraus_map(class, rho_inf.matrix())?.max_abs_diff(rho_inf.matrix());
    let warning = (residual > FIXED_POINT_TOL)
        .then(|| format!("state is not invariant (residual {residual:e})"));
    Ok(DriftVector {
        components,
        warning,
    })
}

/// `Σ p_C m_C` over classes with their own invariant states.
pub fn mixed_mean(classes: &[(&VertexClass, f64)]) -> Result<DriftVector> {
    let drifts = classes
        .iter()
        .map(|(c, p)| {
            let inv = invariant_state(c, FIXED_POINT_TOL)?;
            Ok((mean_vector(c, &inv.rho_inf)?, *p))
        })
        .collect::<Result<Vec<_>>>()?;
    mix_drifts(&drifts)
}

/// `Σ p_i m_i` for precomputed drifts.
pub fn mix_drifts(drifts: &[(DriftVector, f64)]) -> Result<DriftVector> {
    let probs: Vec<f64> = drifts.iter().map(|(_, p)| *p).collect();
    check_probabilities(&probs)?;
    let d = drifts[0].0.components.len();
    let mut m = vec![0.0; d];
    for (drift, p) in drifts {
        if drift.components.len() != d {
            return Err(OqwError::DimensionMismatch {
                expected: d,
                found: drift.components.len(),
                context: "drift vectors".into(),
            });
        }
        for (mi, x) in m.iter_mut().zip(&drift.components) {
            *mi += p * x;
        }
    }
    Ok(DriftVector::new(m))
}

/// A solution `L_l` of the Poisson equation for one class and direction.
#[derive(Debug, Clone, Serialize)]
pub struct PoissonOperator {
    pub matrix: ComplexMatrix,
    pub direction: Vec<f64>,
    /// `⟨m_C|l⟩`.
    pub drift_projection: f64,
    /// `max |(I - Φ†)(L) - RHS|`.
    pub residual: f64,
    /// Always `"minimal-norm"`.
    pub gauge: &'static str,
}

/// Right-hand side `Σ K†K ⟨δ|l⟩ - ⟨m|l⟩ I` and `⟨m|l⟩`.
pub fn poisson_rhs(
    class: &VertexClass,
    rho_inf: &DensityOperator,
    l: &[f64],
) -> Result<(ComplexMatrix, f64)> {
    check_direction(class, l)?;
    let m = mean_vector(class, rho_inf)?;
    let ml = m.dot(l);
    let d = class.internal_dim();
    let mut rhs = ComplexMatrix::identity(d).scale(c64(-ml, 0.0));
    for (disp, k) in class.kraus_iter() {
        let dl = dot_int(disp, l);
        rhs = rhs.add(&k.adjoint().mul(k).scale(c64(dl, 0.0)));
    }
    Ok((rhs, ml))
}

/// Minimal-Frobenius-norm solution of `(I - Φ†)(L) = RHS`.
pub fn solve_poisson(
    class: &VertexClass,
    rho_inf: &DensityOperator,
    l: &[f64],
) -> Result<PoissonOperator> {
    let d = class.internal_dim();
    class.check_dim(rho_inf.dim(), "invariant state")?;
    let (rhs, ml) = poisson_rhs(class, rho_inf, l)?;
    let system = superop_matrix(class, true).identity_minus();
    let spectrum = Spectrum::of(system.matrix());
    let multiplicity = spectrum.null_basis().len();
    if multiplicity != 1 {
        return Err(OqwError::NonUniqueInvariantState {
            label: class.label().to_string(),
            multiplicity,
        });
    }
    let x = spectrum.pseudo_solve(&rhs.stack());
    let l_mat = ComplexMatrix::unstack(&x, d)?;
    let lhs = l_mat.sub(&apply_conjugate(class, &l_mat)?);
    let residual = lhs.max_abs_diff(&rhs);
    if residual > POISSON_TOL {
        return Err(OqwError::PoissonNotSolvable { residual });
    }
    Ok(PoissonOperator {
        matrix: l_mat,
        direction: l.to_vec(),
        drift_projection: ml,
        residual,
        gauge: "minimal-norm",
    })
}

/// Deviation `|(f - P f)(ρ, x) - (⟨x|l⟩ - ⟨m|l⟩)|` of the martingale
/// identity, with `f(ρ, x) = Tr(ρ L) + ⟨x|l⟩` and
/// `(P f)(ρ, x) = Σ_b p_b [Tr(ρ_b L) + ⟨δ_b|l⟩]`, `ρ_b = K ρ K† / p_b`.
pub fn poisson_identity_check(
    class: &VertexClass,
    poisson: &PoissonOperator,
    rho: &DensityOperator,
    x: &[f64],
    l: &[f64],
) -> Result<f64> {
    class.check_dim(rho.dim(), "state")?;
    check_direction(class, l)?;
    if x.len() != l.len() {
        return Err(OqwError::DimensionMismatch {
            expected: l.len(),
            found: x.len(),
            context: "position".into(),
        });
    }
    if poisson.direction.iter().zip(l).any(|(a, b)| a != b) {
        return Err(OqwError::InvalidArgument(format!(
            "Poisson operator was solved for l = {:?}, not {l:?}",
            poisson.direction
        )));
    }
    let lmat = &poisson.matrix;
    let xl: f64 = x.iter().zip(l).map(|(a, b)| a * b).sum();
    let f = rho.matrix().trace_product(lmat).re + xl;
    let mut pf = 0.0;
    for (disp, k) in class.kraus_iter() {
        let out = k.mul(rho.matrix()).mul(&k.adjoint());
        let p = out.trace().re;
        if p <= ZERO_BRANCH {
            continue;
        }
        pf += p * (out.trace_product(lmat).re / p + dot_int(disp, l));
    }
    Ok(((f - pf) - (xl - poisson.drift_projection)).abs())
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelImageSplit {
    pub kernel_dim: usize,
    pub image_dim: usize,
    /// Largest overlap `|⟨k, v⟩|` between unit vectors of `Ker(S)` and `Im(S^H)`.
    pub max_overlap: f64,
    pub direct_sum_ok: bool,
}

/// Decomposes operator space as `Ker(Φ) ⊕ Im(Φ†)` for the superoperator
/// matrix `S`, taking `Φ†` as the Hilbert-Schmidt adjoint `S^H`. The two
/// subspaces come from separate decompositions of `S` and `S^H`.
pub fn kernel_image_split(s: &SuperopMatrix) -> KernelImageSplit {
    let n = s.dim() * s.dim();
    let forward = Spectrum::of(s.matrix());
    let kernel = forward.null_basis();
    let image = Spectrum::of(s.adjoint().matrix()).range_basis();
    let mut max_overlap: f64 = 0.0;
    for k in &kernel {
        for v in &image {
            let overlap = k.dotc(v).norm();
            max_overlap = max_overlap.max(overlap);
        }
    }
    KernelImageSplit {
        kernel_dim: kernel.len(),
        image_dim: image.len(),
        max_overlap,
        direct_sum_ok: kernel.len() + image.len() == n && max_overlap <= 1e-8,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMethod {
    Analytic,
    Empirical,
}

/// How the cross-class variance terms are combined when more than one
/// class is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaReading {
    /// The two Poisson terms add: `Ξ` is linear and `σ² = Tr(ρ Ξ)`.
    Additive,
    /// The two Poisson terms multiply; evaluated directly at the reference
    /// state since no linear `Ξ` exists.
    Multiplicative,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaEstimate {
    pub value: f64,
    pub method: SigmaMethod,
    /// Set for multi-class analytic values.
    pub experimental: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reading: Option<SigmaReading>,
}

impl SigmaEstimate {
    pub fn empirical(value: f64) -> Self {
        Self {
            value: value.max(0.0),
            method: SigmaMethod::Empirical,
            experimental: false,
            reading: None,
        }
    }
}

/// Per-class input of [`analytic_sigma`].
#[derive(Debug, Clone, Copy)]
pub struct SigmaInput<'a> {
    pub class: &'a VertexClass,
    pub probability: f64,
    pub poisson: &'a PoissonOperator,
    pub rho_inf: &'a DensityOperator,
}

/// Homogeneous variance operator
/// `Ξ = Σ_b [a_b² K†K + 2 a_b K† L K]`, `a_b = ⟨δ_b|l⟩ - ⟨m|l⟩`.
pub fn variance_operator(class: &VertexClass, poisson: &PoissonOperator, l: &[f64]) -> Result<ComplexMatrix> {
    cross_variance_operator(class, poisson, poisson, l)
}

/// `Σ_b [a_bC a_bC' K†K + a_bC K† L^{C'} K + a_bC' K† L^C K]` with the
/// Kraus operators of `site_class`.
fn cross_variance_operator(
    site_class: &VertexClass,
    lc: &PoissonOperator,
    lc2: &PoissonOperator,
    l: &[f64],
) -> Result<ComplexMatrix> {
    site_class.check_dim(lc.matrix.dim(), "Poisson operator")?;
    site_class.check_dim(lc2.matrix.dim(), "Poisson operator")?;
    let mut xi = ComplexMatrix::zeros(site_class.internal_dim());
    for (disp, k) in site_class.kraus_iter() {
        let dl = dot_int(disp, l);
        let a1 = dl - lc.drift_projection;
        let a2 = dl - lc2.drift_projection;
        let kd = k.adjoint();
        xi = xi
            .add(&kd.mul(k).scale(c64(a1 * a2, 0.0)))
            .add(&kd.mul(&lc2.matrix).mul(k).scale(c64(a1, 0.0)))
            .add(&kd.mul(&lc.matrix).mul(k).scale(c64(a2, 0.0)));
    }
    Ok(xi)
}

/// Asymptotic variance along `l`.
///
/// For a single class this is the homogeneous result
/// `σ² = Tr(ρ_ref Ξ)`. For several classes the value depends on `reading`
/// and is flagged experimental.
pub fn analytic_sigma(
    inputs: &[SigmaInput<'_>],
    l: &[f64],
    rho_ref: &DensityOperator,
    reading: SigmaReading,
) -> Result<SigmaEstimate> {
    if inputs.is_empty() {
        return Err(OqwError::InvalidArgument("no classes".into()));
    }
    let probs: Vec<f64> = inputs.iter().map(|i| i.probability).collect();
    check_probabilities(&probs)?;
    for input in inputs {
        if input.poisson.direction.iter().zip(l).any(|(a, b)| a != b) {
            return Err(OqwError::InvalidArgument(format!(
                "Poisson operator of `{}` solved for another direction",
                input.class.label()
            )));
        }
    }
    let rho = rho_ref.matrix();
    let (value, experimental, reading) = if inputs.len() == 1 {
        let xi = variance_operator(inputs[0].class, inputs[0].poisson, l)?;
        (rho.trace_product(&xi).re, false, None)
    } else {
        let value = match reading {
            SigmaReading::Additive => {
                let mut xi = ComplexMatrix::zeros(rho.dim());
                for site in inputs {
                    for c1 in inputs {
                        for c2 in inputs {
                            let w = site.probability * c1.probability * c2.probability;
                            let term = cross_variance_operator(site.class, c1.poisson, c2.poisson, l)?;
                            xi = xi.add(&term.scale(c64(w, 0.0)));
                        }
                    }
                }
                rho.trace_product(&xi).re
            }
            SigmaReading::Multiplicative => {
                let mut total = 0.0;
                for site in inputs {
                    for (disp, k) in site.class.kraus_iter() {
                        let out = k.mul(rho).mul(&k.adjoint());
                        let p = out.trace().re;
                        if p <= ZERO_BRANCH {
                            continue;
                        }
                        let dl = dot_int(disp, l);
                        for c1 in inputs {
                            for c2 in inputs {
                                let w = site.probability * c1.probability * c2.probability;
                                let a1 = dl - c1.poisson.drift_projection;
                                let a2 = dl - c2.poisson.drift_projection;
                                let t1 = out.trace_product(&c2.poisson.matrix).re / p;
                                let t2 = out.trace_product(&c1.poisson.matrix).re / p;
                                total += w * p * (a1 * a2 + (t1 * a1) * (t2 * a2));
                            }
                        }
                    }
                }
                total
            }
        };
        (value, true, Some(reading))
    };
    if value < -1e-9 {
        log::warn!("analytic variance {value:e} is negative; clamped to 0");
    }
    Ok(SigmaEstimate {
        value: value.max(0.0),
        method: SigmaMethod::Analytic,
        experimental,
        reading,
    })
}

fn dot_int(disp: &[i64], l: &[f64]) -> f64 {
    disp.iter().zip(l).map(|(&a, b)| a as f64 * b).sum()
}

fn check_direction(class: &VertexClass, l: &[f64]) -> Result<()> {
    if l.len() != class.dimension() {
        return Err(OqwError::DimensionMismatch {
            expected: class.dimension(),
            found: l.len(),
            context: "direction l".into(),
        });
    }
    Ok(())
}
