//! Endpoint statistics of trajectory ensembles and the normality checks
//! applied to the centred, rescaled position `(X_n - n m)/√n`.
//!
//! Endpoints live on a lattice, so the empirical distribution function is
//! a step function with atoms of size `O(1/√n)`. The gating KS distance
//! compares it with the fitted Gaussian at the lattice points using a
//! half-spacing continuity correction; the uncorrected distance is kept
//! alongside for reference.

use serde::Serialize;

use crate::analysis::DriftVector;
use crate::error::{OqwError, Result};

/// Variance of `X_n/√n` below which the limit law is treated as a point mass.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStatistics {
    pub trajectories: usize,
    pub steps: usize,
    pub mean: Vec<f64>,
    /// Sample covariance of `X_n` (denominator `N - 1`).
    pub covariance: Vec<Vec<f64>>,
    /// `mean / n`.
    pub mean_per_step: Vec<f64>,
    /// Diagonal of the covariance divided by `n`.
    pub normalized_variance: Vec<f64>,
    pub skewness: Vec<Option<f64>>,
    pub excess_kurtosis: Vec<Option<f64>>,
    /// Continuity-corrected KS distance to the fitted Gaussian.
    pub ks_distance: Vec<Option<f64>>,
    /// Plain KS distance to the fitted Gaussian.
    pub ks_raw: Vec<Option<f64>>,
    /// Common spacing of the endpoint values per component.
    pub lattice_spacing: Vec<Option<i64>>,
    pub degenerate: Vec<bool>,
}

impl TrajectoryStatistics {
    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    /// `lᵀ Cov l / n`.
    pub fn normalized_variance_along(&self, l: &[f64]) -> f64 {
        let d = self.dimension();
        let mut v = 0.0;
        for a in 0..d {
            for b in 0..d {
                v += l[a] * self.covariance[a][b] * l[b];
            }
        }
        v / self.steps as f64
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

/// Continuity-corrected and plain KS distances of sorted integer samples
/// against `N(mu, sigma²)`, plus the lattice spacing.
fn lattice_ks(sorted: &[i64], mu: f64, sigma: f64) -> (f64, f64, i64) {
    let n = sorted.len() as f64;
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let h = sorted.iter().fold(0, |g, &v| gcd(g, v - lo));
    let mut corrected: f64 = 0.0;
    let mut raw: f64 = 0.0;
    let mut below = 0usize;
    let mut g = lo - h;
    while g <= hi {
        let prev = below;
        while below < sorted.len() && sorted[below] <= g {
            below += 1;
        }
        let f = below as f64 / n;
        corrected = corrected.max((f - normal_cdf((g as f64 + 0.5 * h as f64 - mu) / sigma)).abs());
        if below > prev {
            let model = normal_cdf((g as f64 - mu) / sigma);
            raw = raw.max((f - model).abs()).max((prev as f64 / n - model).abs());
        }
        g += h;
    }
    (corrected, raw, h)
}

/// Moments, normality diagnostics and degeneracy flags of the endpoints of
/// `n`-step trajectories.
pub fn trajectory_statistics(endpoints: &[Vec<i64>], n: usize) -> Result<TrajectoryStatistics> {
    let count = endpoints.len();
    if count < 2 {
        return Err(OqwError::InvalidArgument(format!(
            "need at least 2 endpoints, got {count}"
        )));
    }
    if n == 0 {
        return Err(OqwError::InvalidArgument("zero steps".into()));
    }
    let d = endpoints[0].len();
    if let Some(bad) = endpoints.iter().find(|e| e.len() != d) {
        return Err(OqwError::DimensionMismatch {
            expected: d,
            found: bad.len(),
            context: "endpoint".into(),
        });
    }
    let nf = count as f64;
    // Integer sums are exact and order independent.
    let mean: Vec<f64> = (0..d)
        .map(|a| endpoints.iter().map(|e| e[a] as i128).sum::<i128>() as f64 / nf)
        .collect();
    let mut covariance = vec![vec![0.0; d]; d];
    for e in endpoints {
        for a in 0..d {
            for b in 0..=a {
                covariance[a][b] += (e[a] as f64 - mean[a]) * (e[b] as f64 - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            covariance[a][b] /= nf - 1.0;
            covariance[b][a] = covariance[a][b];
        }
    }
    let steps = n as f64;
    let mut stats = TrajectoryStatistics {
        trajectories: count,
        steps: n,
        mean_per_step: mean.iter().map(|m| m / steps).collect(),
        normalized_variance: (0..d).map(|a| covariance[a][a] / steps).collect(),
        mean,
        covariance,
        skewness: vec![None; d],
        excess_kurtosis: vec![None; d],
        ks_distance: vec![None; d],
        ks_raw: vec![None; d],
        lattice_spacing: vec![None; d],
        degenerate: vec![false; d],
    };
    for a in 0..d {
        if stats.normalized_variance[a] < DEGENERATE_VARIANCE {
            stats.degenerate[a] = true;
            continue;
        }
        let mu = stats.mean[a];
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for e in endpoints {
            let x = e[a] as f64 - mu;
            let x2 = x * x;
            m2 += x2;
            m3 += x2 * x;
            m4 += x2 * x2;
        }
        m2 /= nf;
        m3 /= nf;
        m4 /= nf;
        stats.skewness[a] = Some(m3 / m2.powf(1.5));
        stats.excess_kurtosis[a] = Some(m4 / (m2 * m2) - 3.0);
        let mut sorted: Vec<i64> = endpoints.iter().map(|e| e[a]).collect();
        sorted.sort_unstable();
        let (ks, raw, h) = lattice_ks(&sorted, mu, stats.covariance[a][a].sqrt());
        stats.ks_distance[a] = Some(ks);
        stats.ks_raw[a] = Some(raw);
        stats.lattice_spacing[a] = Some(h);
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CltThresholds {
    /// Drift tolerance in standard errors.
    pub z: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks: f64,
}

impl Default for CltThresholds {
    fn default() -> Self {
        Self {
            z: 4.0,
            skewness: 0.1,
            excess_kurtosis: 0.2,
            ks: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Zero limiting variance: drift checked exactly, normality skipped.
    DegenerateGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentCheck {
    pub component: usize,
    pub drift_estimate: f64,
    pub drift_target: f64,
    pub drift_error: f64,
    /// `σ̂ / √(N n)` with `σ̂² = Var(X_n)/n`.
    pub standard_error: f64,
    pub drift_pass: bool,
    pub skewness_pass: Option<bool>,
    pub kurtosis_pass: Option<bool>,
    pub ks_pass: Option<bool>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltReport {
    pub thresholds: CltThresholds,
    pub components: Vec<ComponentCheck>,
    pub passed: bool,
}

/// Drift and normality gates per component against drift `m` (per step).
pub fn clt_report(
    stats: &TrajectoryStatistics,
    m: &DriftVector,
    thresholds: &CltThresholds,
) -> Result<CltReport> {
    let d = stats.dimension();
    if m.components.len() != d {
        return Err(OqwError::DimensionMismatch {
            expected: d,
            found: m.components.len(),
            context: "drift vector".into(),
        });
    }
    let scale = (stats.trajectories as f64 * stats.steps as f64).sqrt();
    let components: Vec<ComponentCheck> = (0..d)
        .map(|a| {
            let estimate = stats.mean_per_step[a];
            let target = m.components[a];
            let error = (estimate - target).abs();
            let se = stats.normalized_variance[a].sqrt() / scale;
            if stats.degenerate[a] {
                let drift_pass = error <= 1e-12;
                return ComponentCheck {
                    component: a,
                    drift_estimate: estimate,
                    drift_target: target,
                    drift_error: error,
                    standard_error: se,
                    drift_pass,
                    skewness_pass: None,
                    kurtosis_pass: None,
                    ks_pass: None,
                    verdict: if drift_pass {
                        Verdict::DegenerateGaussian
                    } else {
                        Verdict::Fail
                    },
                };
            }
            let drift_pass = error <= thresholds.z * se;
            let within = |v: Option<f64>, t: f64| v.map(|x| x.abs() <= t);
            let skewness_pass = within(stats.skewness[a], thresholds.skewness);
            let kurtosis_pass = within(stats.excess_kurtosis[a], thresholds.excess_kurtosis);
            let ks_pass = within(stats.ks_distance[a], thresholds.ks);
            let all = drift_pass
                && [skewness_pass, kurtosis_pass, ks_pass]
                    .iter()
                    .all(|p| *p == Some(true));
            ComponentCheck {
                component: a,
                drift_estimate: estimate,
                drift_target: target,
                drift_error: error,
                standard_error: se,
                drift_pass,
                skewness_pass,
                kurtosis_pass,
                ks_pass,
                verdict: if all { Verdict::Pass } else { Verdict::Fail },
            }
        })
        .collect();
    let passed = components.iter().all(|c| c.verdict != Verdict::Fail);
    Ok(CltReport {
        thresholds: *thresholds,
        components,
        passed,
    })
}
