//! Elementary geometry of the response space.
//!
//! Responses are finite-dimensional vectors (a curve sampled on a grid, or a
//! small test vector) with the Euclidean norm. This module also holds the
//! kernels and the power-law schedules that drive every estimator.
//!
//! The Gaussian kernel does not have compact support, so strictly speaking it
//! sits outside the hypotheses under which the recursive estimator is proven
//! to converge. It is what the simulation studies use, so it is offered next
//! to the compact Epanechnikov and uniform kernels.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// A point of the response space.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(Vec<f64>);

impl Point {
    /// Builds a point, rejecting empty or non-finite coordinate lists.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(invalid("a point needs at least one coordinate"));
        }
        if let Some(j) = coords.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("coordinate {j} is not finite")));
        }
        Ok(Point(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        Point(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn distance(&self, other: &Point) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(distance(&self.0, &other.0))
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    /// Wraps coordinates that are already known to be valid.
    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        debug_assert!(!coords.is_empty());
        Point(coords)
    }
}

impl Deref for Point {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Point {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Unit vector pointing from `a` towards `b`.
///
/// Returns the zero vector when `a == b`, which turns the corresponding
/// stochastic-gradient step into a no-op.
pub fn direction(a: &Point, b: &Point) -> Result<Point> {
    check_dims(a.dim(), b.dim())?;
    let dist = distance(a, b);
    if dist == 0.0 {
        return Ok(Point::zeros(a.dim()));
    }
    Ok(Point(
        a.iter().zip(b.iter()).map(|(x, y)| (y - x) / dist).collect(),
    ))
}

/// Norm used by the recursive estimators to normalise their steps.
///
/// `Grid` is the root mean square of the coordinates, the discretised
/// `L^2[0, 1]` norm of a curve observed on an equispaced grid. Both norms
/// define the same geometric median; they differ only in how far one step
/// moves the iterate (by a factor `sqrt(dim)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Norm {
    #[default]
    Euclidean,
    Grid,
}

impl Norm {
    #[inline]
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Norm::Euclidean => distance(a, b),
            Norm::Grid => distance(a, b) / (a.len() as f64).sqrt(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Norm::Euclidean => "euclidean",
            Norm::Grid => "grid",
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Norm::Euclidean),
            "grid" | "l2" => Ok(Norm::Grid),
            other => Err(invalid(format!("unknown norm `{other}`"))),
        }
    }
}

/// One observation: a real covariate and a response vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub x: f64,
    pub y: Point,
}

impl Record {
    pub fn new(x: f64, y: Point) -> Self {
        Record { x, y }
    }
}

/// Kernel family used to localise around the target covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Kernel {
    #[default]
    Gaussian,
    Epanechnikov,
    Uniform,
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Kernel {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => FRAC_1_SQRT_2PI * (-0.5 * u * u).exp(),
            Kernel::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            Kernel::Uniform => {
                if u.abs() <= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Maximum of the kernel, reached at zero.
    pub fn sup(self) -> f64 {
        self.eval(0.0)
    }

    /// Closed-form value of the integral of K².
    pub fn square_integral(self) -> f64 {
        match self {
            Kernel::Gaussian => 1.0 / (2.0 * PI.sqrt()),
            Kernel::Epanechnikov => 0.6,
            Kernel::Uniform => 1.0,
        }
    }

    /// Interval outside which the kernel is zero (or negligible, for the Gaussian).
    pub fn effective_support(self) -> (f64, f64) {
        match self {
            Kernel::Gaussian => (-10.0, 10.0),
            Kernel::Epanechnikov => (-1.0, 1.0),
            Kernel::Uniform => (-0.5, 0.5),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Gaussian => "gaussian",
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Kernel::Gaussian),
            "epanechnikov" | "epa" => Ok(Kernel::Epanechnikov),
            "uniform" | "box" => Ok(Kernel::Uniform),
            other => Err(invalid(format!("unknown kernel `{other}`"))),
        }
    }
}

/// Deterministic positive sequence indexed by the iteration counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// `c * n^(-exponent)`
    Decaying { c: f64, exponent: f64 },
    Fixed(f64),
}

impl Schedule {
    pub fn decaying(c: f64, exponent: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(invalid(format!("schedule prefactor must be positive, got {c}")));
        }
        if !(0.0..=1.0).contains(&exponent) {
            return Err(invalid(format!(
                "schedule exponent must lie in [0, 1], got {exponent}"
            )));
        }
        Ok(Schedule::Decaying { c, exponent })
    }

    pub fn fixed(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(invalid(format!("fixed schedule value must be positive, got {value}")));
        }
        Ok(Schedule::Fixed(value))
    }

    pub fn eval(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(invalid("schedules are indexed from n = 1"));
        }
        Ok(self.at(n))
    }

    /// Unchecked evaluation for hot loops; `n` must be at least 1.
    #[inline]
    pub(crate) fn at(&self, n: u64) -> f64 {
        match *self {
            Schedule::Decaying { c, exponent } => c * (n as f64).powf(-exponent),
            Schedule::Fixed(v) => v,
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Schedule::Fixed(_))
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Decaying { c, exponent } => write!(f, "{c}*n^-{exponent}"),
            Schedule::Fixed(v) => write!(f, "{v}"),
        }
    }
}
