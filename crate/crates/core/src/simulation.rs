//! Brownian ground-truth model.
//!
//! `Y` is a standard Brownian motion observed at `t_j = j/d`, `j = 1..=d`,
//! and the covariate is its mean value `X = int_0^1 Y(t) dt`. The pair is
//! jointly Gaussian with
//!
//! ```text
//! Cov(Y(s), Y(t)) = min(s, t),  Var(X) = 1/3,  Cov(X, Y(t)) = t (1 - t/2)
//! ```
//!
//! so `Y | X = x` is Gaussian with mean `(3/2) t (2 - t) x`, which is also its
//! geometric median, and a covariance that does not depend on `x`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::geometry::{check_dims, Point, Record};

/// Random stream used by every sampler in the crate.
pub type SimRng = ChaCha8Rng;

/// Generator seeded from a single integer.
pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Covariate value used by the simulation tables (third quartile of `X`).
pub const DEFAULT_TARGET: f64 = 0.39;

/// Negative eigenvalues of the conditional covariance down to this value are
/// rounding noise and are clipped to zero.
const PSD_CLIP: f64 = 1e-8;

/// Something that draws responses from a fixed conditional law.
pub trait ConditionalSampler: Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut SimRng) -> Point;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianModel {
    d: usize,
    x_star: f64,
}

impl BrownianModel {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(invalid("the grid needs at least one point"));
        }
        Ok(BrownianModel {
            d,
            x_star: DEFAULT_TARGET,
        })
    }

    pub fn with_target(mut self, x: f64) -> Self {
        self.x_star = x;
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn x_star(&self) -> f64 {
        self.x_star
    }

    pub fn grid(&self) -> Vec<f64> {
        (1..=self.d).map(|j| j as f64 / self.d as f64).collect()
    }

    /// One draw of `(X, Y)`.
    ///
    /// The path is built from independent increments; `X` integrates the
    /// exact piecewise path, i.e. the trapezoid rule on the grid plus the
    /// independent integral of the Brownian bridge on every cell (variance
    /// `dt^3 / 12`), so the covariances above hold for every `d`.
    pub fn sample_pair(&self, rng: &mut SimRng) -> (f64, Point) {
        let dt = 1.0 / self.d as f64;
        let step_sd = dt.sqrt();
        let bridge_sd = (dt * dt * dt / 12.0).sqrt();
        let mut y = Vec::with_capacity(self.d);
        let mut w = 0.0;
        let mut x = 0.0;
        for _ in 0..self.d {
            let prev = w;
            w += step_sd * rng.sample::<f64, _>(StandardNormal);
            let bridge: f64 = rng.sample(StandardNormal);
            x += 0.5 * dt * (prev + w) + bridge_sd * bridge;
            y.push(w);
        }
        (x, Point::from_raw(y))
    }

    pub fn sample_records(&self, n: usize, rng: &mut SimRng) -> Vec<Record> {
        (0..n)
            .map(|_| {
                let (x, y) = self.sample_pair(rng);
                Record::new(x, y)
            })
            .collect()
    }

    /// `m(t, x) = (3/2) t (2 - t) x` at a grid time.
    pub fn true_median(&self, t: f64, x: f64) -> Result<f64> {
        let j = (t * self.d as f64).round();
        if !(t.is_finite() && (t * self.d as f64 - j).abs() < 1e-9 && j >= 1.0 && j <= self.d as f64) {
            return Err(invalid(format!("t = {t} is not on the grid j/{}", self.d)));
        }
        Ok(median_at(t, x))
    }

    /// The conditional median over the whole grid.
    pub fn median_curve(&self, x: f64) -> Point {
        Point::from_raw(self.grid().into_iter().map(|t| median_at(t, x)).collect())
    }

    /// `(1/d) sum_j (m(t_j) - estimate_j)^2`
    pub fn mse(&self, estimate: &Point, x: f64) -> Result<f64> {
        check_dims(self.d, estimate.dim())?;
        let sq: f64 = self
            .grid()
            .iter()
            .zip(estimate.iter())
            .map(|(t, e)| (median_at(*t, x) - e).powi(2))
            .sum();
        Ok(sq / self.d as f64)
    }

    /// Unconditional covariance `C_{jl} = min(t_j, t_l)`.
    pub fn path_covariance(&self) -> DMatrix<f64> {
        let g = self.grid();
        DMatrix::from_fn(self.d, self.d, |i, j| g[i].min(g[j]))
    }

    /// `Cov(X, Y(t_j)) = t_j (1 - t_j / 2)`
    pub fn cross_covariance(&self) -> DVector<f64> {
        DVector::from_iterator(self.d, self.grid().into_iter().map(|t| t * (1.0 - t / 2.0)))
    }

    /// Conditional covariance `C - 3 c c^T` of `Y` given `X`.
    pub fn conditional_covariance(&self) -> DMatrix<f64> {
        let c = self.cross_covariance();
        self.path_covariance() - 3.0 * &c * c.transpose()
    }

    /// Law of `Y` given `X = x`, ready for sampling.
    pub fn conditional_law(&self, x: f64) -> Result<ConditionalLaw> {
        let cov = self.conditional_covariance();
        let eig = SymmetricEigen::new(cov.clone());
        let min_eigenvalue = eig.eigenvalues.min();
        if min_eigenvalue < -PSD_CLIP {
            return Err(invalid(format!(
                "conditional covariance is indefinite (eigenvalue {min_eigenvalue:e})"
            )));
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(ConditionalLaw {
            mean: self.median_curve(x),
            covariance: cov,
            factor,
            min_eigenvalue,
        })
    }
}

fn median_at(t: f64, x: f64) -> f64 {
    1.5 * t * (2.0 - t) * x
}

/// Gaussian law `N(mean, covariance)` sampled through a symmetric square root.
#[derive(Debug, Clone)]
pub struct ConditionalLaw {
    mean: Point,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
    min_eigenvalue: f64,
}

impl ConditionalLaw {
    pub fn mean(&self) -> &Point {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Smallest eigenvalue before clipping.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }
}

impl ConditionalSampler for ConditionalLaw {
    fn dim(&self) -> usize {
        self.mean.dim()
    }

    fn sample(&self, rng: &mut SimRng) -> Point {
        let d = self.dim();
        let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let mut y = self.mean.clone().into_vec();
        for (i, yi) in y.iter_mut().enumerate() {
            let row = self.factor.row(i);
            *yi += row.iter().zip(&xi).map(|(a, b)| a * b).sum::<f64>();
        }
        Point::from_raw(y)
    }
}

/// Density of `X ~ N(0, 1/3)`.
pub fn marginal_density(x: f64) -> f64 {
    (3.0 / (2.0 * PI)).sqrt() * (-1.5 * x * x).exp()
}

/// `W_2` distance between two Gaussian laws sharing a covariance matrix,
/// which reduces to the distance between their means.
pub fn gaussian_wasserstein(m1: &Point, m2: &Point) -> Result<f64> {
    m1.distance(m2)
}
