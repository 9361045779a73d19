//! Diagnostics tied to the convergence theory of the recursive estimators:
//! admissible schedules, the plug-in asymptotic covariance of the averaged
//! estimator, and rate fitting.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{check_dims, Kernel, Point, Schedule};
use crate::simulation::{ConditionalSampler, SimRng};

/// Slack for comparisons that hold with equality on the boundary.
const BOUNDARY_EPS: f64 = 1e-12;
/// Fraction of degenerate Monte Carlo draws that is still tolerated.
const MAX_DEGENERATE_FRACTION: f64 = 0.01;
/// Fixed shard count so results do not depend on the thread pool size.
const MC_SHARDS: u64 = 16;
const SINGULAR_EPS: f64 = 1e-10;

/// Which convergence results a power-law schedule `(gamma, h)` is covered by.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleVerdict {
    /// Almost sure convergence of the Robbins–Monro iterate.
    pub as_convergence: bool,
    /// Quadratic-mean rate `ln(n) / n^(gamma - h)`.
    pub rate_bound: bool,
    /// Asymptotic normality of the averaged estimator.
    pub clt: bool,
    /// Every condition that failed, by name; strict inequalities that hold
    /// with equality are tagged `(boundary)`.
    pub violated: Vec<String>,
}

impl fmt::Display for ScheduleVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "as:{} rate:{} clt:{}",
            self.as_convergence, self.rate_bound, self.clt
        )
    }
}

enum Check {
    Holds,
    Fails,
    Boundary,
}

fn strict(lhs: f64, rhs: f64) -> Check {
    let diff = lhs - rhs;
    if diff > BOUNDARY_EPS {
        Check::Holds
    } else if diff.abs() <= BOUNDARY_EPS {
        Check::Boundary
    } else {
        Check::Fails
    }
}

fn loose(lhs: f64, rhs: f64) -> Check {
    if lhs - rhs >= -BOUNDARY_EPS {
        Check::Holds
    } else {
        Check::Fails
    }
}

/// Checks the step exponent `gamma`, bandwidth exponent `h` and regularity
/// `beta` against the conditions of the convergence results.
pub fn validate_schedule(gamma: f64, h: f64, beta: f64) -> Result<ScheduleVerdict> {
    for (name, v) in [("gamma", gamma), ("h", h)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(invalid(format!("{name} must lie in (0, 1], got {v}")));
        }
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(invalid(format!("beta must be positive, got {beta}")));
    }

    let mut violated = Vec::new();
    let mut record = |name: &str, check: Check| -> bool {
        match check {
            Check::Holds => true,
            Check::Fails => {
                violated.push(name.to_string());
                false
            }
            Check::Boundary => {
                violated.push(format!("{name} (boundary)"));
                false
            }
        }
    };

    let gamma_le_1 = record("gamma <= 1", loose(1.0, gamma));
    let step_noise = record("2*gamma - h > 1", strict(2.0 * gamma - h, 1.0));
    let step_bias = record("gamma + beta*h > 1", strict(gamma + beta * h, 1.0));
    let as_convergence = gamma_le_1 && step_noise && step_bias;

    let bandwidth_rate = record("h*(1 + 2*beta) >= gamma", loose(h * (1.0 + 2.0 * beta), gamma));
    let rate_bound = as_convergence && bandwidth_rate;

    let gamma_lt_1 = record("gamma < 1", strict(1.0, gamma));
    let undersmooth = record("h > 1/(2*beta + 1)", strict(h, 1.0 / (2.0 * beta + 1.0)));
    let clt = gamma_lt_1 && step_noise && step_bias && undersmooth;

    Ok(ScheduleVerdict {
        as_convergence,
        rate_bound,
        clt,
        violated,
    })
}

/// Plug-in estimates of the noise covariance `Sigma` and of `Gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    pub sigma: DMatrix<f64>,
    /// `E[ (I - u u^T) / ||Y - m|| ]` with `u` the unit direction of `Y - m`.
    pub gamma_op: DMatrix<f64>,
    /// Factor turning `gamma_op` into the Hessian of the localised objective
    /// at the median, i.e. the covariate density `p(x)`.
    pub hessian_scale: f64,
    pub mc_samples: usize,
    /// Draws with `Y = m`, left out of both means.
    pub skipped: usize,
}

impl CovariancePair {
    /// Pair with a unit Hessian scale.
    pub fn new(sigma: DMatrix<f64>, gamma_op: DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() || sigma.shape() != gamma_op.shape() {
            return Err(invalid("sigma and gamma must be square matrices of equal size"));
        }
        Ok(CovariancePair {
            sigma,
            gamma_op,
            hessian_scale: 1.0,
            mc_samples: 0,
            skipped: 0,
        })
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        &self.gamma_op * self.hessian_scale
    }
}

/// Monte Carlo estimates of `Sigma` and `Gamma` at the conditional median `m`.
///
/// ```text
/// Sigma = p(x) (int K^2) E[ u u^T ]
/// Gamma = E[ (I - u u^T) / ||Y - m|| ],     u = (Y - m) / ||Y - m||
/// ```
///
/// Draws are split over a fixed number of seeded shards and merged in shard
/// order, so the result only depends on `seed`.
pub fn estimate_sigma_gamma<S: ConditionalSampler + ?Sized>(
    sampler: &S,
    m: &Point,
    p_x: f64,
    kernel: Kernel,
    mc_samples: usize,
    seed: u64,
) -> Result<CovariancePair> {
    if mc_samples < 100 {
        return Err(invalid(format!("need at least 100 Monte Carlo draws, got {mc_samples}")));
    }
    check_dims(sampler.dim(), m.dim())?;
    let d = m.dim();
    if d < 2 {
        return Err(invalid("covariance diagnostics need a response of dimension >= 2"));
    }
    if !(p_x.is_finite() && p_x > 0.0) {
        return Err(invalid(format!("density must be positive, got {p_x}")));
    }

    let per_shard = mc_samples as u64 / MC_SHARDS;
    let extra = mc_samples as u64 % MC_SHARDS;
    let shards: Vec<(DMatrix<f64>, DMatrix<f64>, usize, usize)> = (0..MC_SHARDS)
        .into_par_iter()
        .map(|s| {
            let mut rng = SimRng::seed_from_u64(seed);
            rng.set_stream(s);
            let count = per_shard + u64::from(s < extra);
            let mut outer = DMatrix::zeros(d, d);
            let mut inv = DMatrix::zeros(d, d);
            let mut used = 0usize;
            let mut skipped = 0usize;
            let mut u = vec![0.0; d];
            for _ in 0..count {
                let y = sampler.sample(&mut rng);
                for ((ui, yi), mi) in u.iter_mut().zip(y.iter()).zip(m.iter()) {
                    *ui = yi - mi;
                }
                let r = crate::geometry::norm(&u);
                if r == 0.0 {
                    skipped += 1;
                    continue;
                }
                used += 1;
                for i in 0..d {
                    for j in 0..d {
                        let uu = u[i] * u[j] / (r * r);
                        outer[(i, j)] += uu;
                        let id = if i == j { 1.0 } else { 0.0 };
                        inv[(i, j)] += (id - uu) / r;
                    }
                }
            }
            (outer, inv, used, skipped)
        })
        .collect();

    let mut outer = DMatrix::zeros(d, d);
    let mut inv = DMatrix::zeros(d, d);
    let mut used = 0;
    let mut skipped = 0;
    for (o, g, u, s) in shards {
        outer += o;
        inv += g;
        used += u;
        skipped += s;
    }
    if used == 0 || skipped as f64 > MAX_DEGENERATE_FRACTION * mc_samples as f64 {
        return Err(Error::DegenerateSamples {
            skipped,
            total: mc_samples,
        });
    }
    let scale = 1.0 / used as f64;
    Ok(CovariancePair {
        sigma: symmetrize(outer * (scale * p_x * kernel.square_integral())),
        gamma_op: symmetrize(inv * scale),
        hessian_scale: p_x,
        mc_samples,
        skipped,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Inverse of a symmetric matrix through its eigendecomposition, refusing
/// nearly singular input.
fn symmetric_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let min_eigenvalue = eig.eigenvalues.min();
    if min_eigenvalue <= SINGULAR_EPS {
        return Err(Error::SingularGamma { min_eigenvalue });
    }
    let inv_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    Ok(&eig.eigenvectors * inv_vals * eig.eigenvectors.transpose())
}

/// Limiting covariance `(1/(1+h)) H^{-1} Sigma H^{-1}` of
/// `sqrt(n h_n) (Zbar_n - m)`, with `H = hessian_scale * Gamma`.
pub fn sandwich_covariance(pair: &CovariancePair, h: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&h) {
        return Err(invalid(format!("bandwidth exponent must lie in [0, 1], got {h}")));
    }
    let h_inv = symmetric_inverse(&pair.hessian())?;
    let core = &h_inv * &pair.sigma * &h_inv;
    Ok(symmetrize(core / (1.0 + h)))
}

/// Least-squares fit of `log(mse) = intercept + slope * log(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn rate_slope(errors: &[(u64, f64)]) -> Result<RateFit> {
    if errors.len() < 4 {
        return Err(invalid("rate fitting needs at least 4 points"));
    }
    let mut ns: Vec<u64> = errors.iter().map(|e| e.0).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() != errors.len() {
        return Err(invalid("sample sizes must be distinct"));
    }
    if let Some((n, mse)) = errors.iter().find(|(n, mse)| *n == 0 || *mse <= 0.0 || !mse.is_finite()) {
        return Err(invalid(format!("invalid point (n = {n}, mse = {mse})")));
    }
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .map(|(n, mse)| ((*n as f64).ln(), mse.ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit { slope, intercept, r2 })
}

/// `(1/n) sum_k sqrt(h_k) (Z_k - m)`; its `sqrt(n)`-scaled covariance has
/// no `1/(1+h)` factor.
pub fn weighted_average_diag(iterates: &[Point], m: &Point, bandwidths: &[f64]) -> Result<Point> {
    if iterates.is_empty() {
        return Err(invalid("no iterates"));
    }
    if iterates.len() != bandwidths.len() {
        return Err(invalid(format!(
            "{} iterates but {} bandwidths",
            iterates.len(),
            bandwidths.len()
        )));
    }
    let mut acc = vec![0.0; m.dim()];
    for (z, h) in iterates.iter().zip(bandwidths) {
        check_dims(m.dim(), z.dim())?;
        let s = h.sqrt();
        for ((a, zi), mi) in acc.iter_mut().zip(z.iter()).zip(m.iter()) {
            *a += s * (zi - mi);
        }
    }
    let n = iterates.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Point::new(acc)
}

/// `sum_{k<=n} 1/h_k`
pub fn inverse_bandwidth_sum(bandwidth: &Schedule, n: u64) -> f64 {
    (1..=n).map(|k| 1.0 / bandwidth.at(k)).sum()
}

/// Relative gap between `sum_{k<=n} 1/h_k` and its approximation
/// `(n/h_n)/(1+h)` for `h_n = c_h n^{-h}`.
pub fn clt_normalization_deviation(c_h: f64, h: f64, n: u64) -> Result<f64> {
    let schedule = Schedule::decaying(c_h, h)?;
    let scale = n as f64 / schedule.eval(n)?;
    Ok((inverse_bandwidth_sum(&schedule, n) - scale / (1.0 + h)).abs() / scale)
}
