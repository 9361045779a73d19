//! Static kernel estimator: the weighted empirical risk and its minimisation
//! by the Weiszfeld fixed-point iteration.

use crate::error::{invalid, Error, Result};
use crate::geometry::{check_dims, distance, norm, Kernel, Point};

/// Default relative tolerance on the iterate move.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 500;

/// Distance under which an iterate is considered to sit on a data point.
const ANCHOR_EPS: f64 = 1e-12;

/// Normalised kernel weights `K((X_i - x)/h) / sum_l K((X_l - x)/h)`.
///
/// Gaussian weights are computed relative to the closest covariate so that
/// they do not underflow for very small bandwidths; the normalisation makes
/// the shift irrelevant.
pub fn kernel_weights(x: f64, xs: &[f64], h: f64, kernel: Kernel) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(invalid("no covariates to weight"));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(invalid(format!("bandwidth must be positive, got {h}")));
    }
    let raw: Vec<f64> = match kernel {
        Kernel::Gaussian => {
            let u2: Vec<f64> = xs.iter().map(|xi| ((xi - x) / h).powi(2)).collect();
            let min = u2.iter().copied().fold(f64::INFINITY, f64::min);
            u2.iter().map(|v| (-0.5 * (v - min)).exp()).collect()
        }
        k => xs.iter().map(|xi| k.eval((xi - x) / h)).collect(),
    };
    let total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::EmptyEffectiveSample { x });
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Points with nonnegative weights; the weights need not sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl WeightedSample {
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("weighted sample is empty"));
        }
        if points.len() != weights.len() {
            return Err(invalid(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points[0].dim();
        for p in &points {
            check_dims(dim, p.dim())?;
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(invalid("weights sum to zero"));
        }
        Ok(WeightedSample { points, weights })
    }

    /// Localises `(xs, points)` around `x` with normalised kernel weights.
    pub fn localized(
        x: f64,
        xs: &[f64],
        points: Vec<Point>,
        h: f64,
        kernel: Kernel,
    ) -> Result<Self> {
        let weights = kernel_weights(x, xs, h, kernel)?;
        WeightedSample::new(points, weights)
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `sum_i w_i ||Y_i - alpha||`
pub fn empirical_risk(alpha: &Point, sample: &WeightedSample) -> Result<f64> {
    check_dims(sample.dim(), alpha.dim())?;
    Ok(risk(alpha, sample))
}

fn risk(alpha: &[f64], sample: &WeightedSample) -> f64 {
    sample
        .points
        .iter()
        .zip(&sample.weights)
        .map(|(p, w)| w * distance(p, alpha))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeiszfeldResult {
    pub median: Point,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the starting point followed by its value after each iteration.
    pub objective_trace: Vec<f64>,
}

impl WeiszfeldResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// Weighted geometric median by the Weiszfeld iteration with the
/// Vardi–Zhang modification at data points.
///
/// Starts from the weighted coordinate-wise mean and stops once the iterate
/// moves by less than `tol * (1 + ||alpha||)`. Hitting `max_iter` is not an
/// error: the last iterate is returned with `converged = false`.
pub fn weiszfeld(sample: &WeightedSample, tol: f64, max_iter: usize) -> Result<WeiszfeldResult> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    let dim = sample.dim();
    // zero-weight points play no role and must never act as anchors
    let active: Vec<(&[f64], f64)> = sample
        .points
        .iter()
        .zip(&sample.weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(p, w)| (p.coords(), *w))
        .collect();
    let total: f64 = active.iter().map(|(_, w)| w).sum();

    let mut alpha = vec![0.0; dim];
    for (p, w) in &active {
        for (a, v) in alpha.iter_mut().zip(p.iter()) {
            *a += w * v;
        }
    }
    alpha.iter_mut().for_each(|a| *a /= total);

    let mut trace = vec![risk(&alpha, sample)];
    let mut converged = false;
    let mut iterations = 0;
    let mut next = vec![0.0; dim];
    let mut dists = vec![0.0; active.len()];

    while iterations < max_iter {
        iterations += 1;
        for (d, (p, _)) in dists.iter_mut().zip(&active) {
            *d = distance(p, &alpha);
        }
        let nearest = (0..active.len())
            .min_by(|&i, &j| dists[i].total_cmp(&dists[j]))
            .expect("sample is non-empty");

        if dists[nearest] < ANCHOR_EPS {
            let anchor = active[nearest].0.to_vec();
            match vardi_zhang_step(&active, &anchor) {
                None => {
                    alpha = anchor;
                    trace.push(risk(&alpha, sample));
                    converged = true;
                    break;
                }
                Some(step) => next = step,
            }
        } else {
            next.iter_mut().for_each(|v| *v = 0.0);
            let mut denom = 0.0;
            for ((p, w), d) in active.iter().zip(&dists) {
                let c = w / d;
                denom += c;
                for (n, v) in next.iter_mut().zip(p.iter()) {
                    *n += c * v;
                }
            }
            next.iter_mut().for_each(|v| *v /= denom);
        }

        let moved = distance(&next, &alpha);
        std::mem::swap(&mut alpha, &mut next);
        trace.push(risk(&alpha, sample));
        if moved <= tol * (1.0 + norm(&alpha)) {
            converged = true;
            break;
        }
    }

    // Weiszfeld only creeps towards a median located on a data point; check
    // the closest one explicitly.
    let nearest = active
        .iter()
        .min_by(|a, b| distance(a.0, &alpha).total_cmp(&distance(b.0, &alpha)))
        .map(|(p, _)| p.to_vec())
        .expect("sample is non-empty");
    if nearest != alpha && vardi_zhang_step(&active, &nearest).is_none() {
        let r = risk(&nearest, sample);
        if r <= *trace.last().unwrap() {
            alpha = nearest;
            trace.push(r);
        }
    }

    Ok(WeiszfeldResult {
        median: Point::from_raw(alpha),
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Optimality test at a data point. Returns `None` when the point is a
/// median, otherwise the point obtained by stepping off it along the pull
/// of the remaining data.
fn vardi_zhang_step(active: &[(&[f64], f64)], anchor: &[f64]) -> Option<Vec<f64>> {
    let dim = anchor.len();
    let mut pull = vec![0.0; dim];
    let mut anchor_weight = 0.0;
    let mut inverse_sum = 0.0;
    for (p, w) in active {
        let d = distance(p, anchor);
        if d < ANCHOR_EPS {
            anchor_weight += w;
            continue;
        }
        inverse_sum += w / d;
        for ((r, v), a) in pull.iter_mut().zip(p.iter()).zip(anchor) {
            *r += w * (v - a) / d;
        }
    }
    let strength = norm(&pull);
    if strength <= anchor_weight || inverse_sum == 0.0 {
        return None;
    }
    let length = (strength - anchor_weight) / inverse_sum;
    Some(
        anchor
            .iter()
            .zip(&pull)
            .map(|(a, r)| a + length * r / strength)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pts(v: &[[f64; 2]]) -> Vec<Point> {
        v.iter().map(|c| Point::new(c.to_vec()).unwrap()).collect()
    }

    #[test]
    fn symmetric_covariates_get_equal_weights() {
        let w = kernel_weights(0.0, &[-0.3, 0.3], 0.2, Kernel::Gaussian).unwrap();
        assert_relative_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(w[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn compact_kernel_without_neighbours_is_an_error() {
        let err = kernel_weights(0.0, &[5.0, 6.0], 0.1, Kernel::Epanechnikov).unwrap_err();
        assert!(matches!(err, Error::EmptyEffectiveSample { .. }));
    }

    #[test]
    fn weights_reject_bad_bandwidth() {
        assert!(kernel_weights(0.0, &[1.0], 0.0, Kernel::Gaussian).is_err());
        assert!(kernel_weights(0.0, &[], 1.0, Kernel::Gaussian).is_err());
    }

    #[test]
    fn tiny_gaussian_bandwidth_does_not_underflow() {
        let w = kernel_weights(0.0, &[0.9, 0.5, -0.7], 1e-4, Kernel::Gaussian).unwrap();
        assert_relative_eq!(w[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equilateral_triangle_median_is_centroid() {
        let s3 = 3f64.sqrt();
        let sample = WeightedSample::new(
            pts(&[[0.0, 0.0], [1.0, 0.0], [0.5, s3 / 2.0]]),
            vec![1.0; 3],
        )
        .unwrap();
        let res = weiszfeld(&sample, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.median[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(res.median[1], s3 / 6.0, epsilon = 1e-9);
    }

    #[test]
    fn square_corners_median_is_center() {
        let sample = WeightedSample::new(
            pts(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
            vec![0.25; 4],
        )
        .unwrap();
        let res = weiszfeld(&sample, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_relative_eq!(res.median[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(res.median[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn majority_weight_pins_the_median() {
        let sample = WeightedSample::new(
            pts(&[[2.0, 1.0], [0.0, 0.0], [5.0, -3.0], [1.0, 4.0]]),
            vec![0.6, 0.1, 0.2, 0.1],
        )
        .unwrap();
        let res = weiszfeld(&sample, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(res.median.coords(), &[2.0, 1.0]);
    }

    #[test]
    fn start_on_a_data_point_uses_anchor_rule() {
        // weighted mean equals the middle point, which is not the median
        let sample = WeightedSample::new(
            pts(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [1.0, 5.0], [1.0, -5.0]]),
            vec![0.1, 0.1, 0.1, 0.35, 0.35],
        )
        .unwrap();
        let res = weiszfeld(&sample, 1e-12, 5000).unwrap();
        // collinear in y with heavy symmetric ends: (1, 0) is optimal here
        assert_relative_eq!(res.median[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(res.median[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn single_point_sample() {
        let sample = WeightedSample::new(pts(&[[3.0, -1.0]]), vec![1.0]).unwrap();
        let res = weiszfeld(&sample, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(res.median.coords(), &[3.0, -1.0]);
        assert_eq!(res.objective(), 0.0);
    }

    #[test]
    fn max_iter_reports_non_convergence() {
        let sample = WeightedSample::new(
            pts(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [3.0, 3.0]]),
            vec![1.0; 4],
        )
        .unwrap();
        let res = weiszfeld(&sample, 1e-15, 1).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 1);
    }

    #[test]
    fn risk_examples() {
        let one = WeightedSample::new(pts(&[[1.0, 2.0]]), vec![1.0]).unwrap();
        assert_eq!(empirical_risk(&one.points()[0], &one).unwrap(), 0.0);
        let two = WeightedSample::new(pts(&[[0.0, 0.0], [2.0, 0.0]]), vec![1.0, 1.0]).unwrap();
        let mid = Point::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(empirical_risk(&mid, &two).unwrap(), 2.0);
        assert!(empirical_risk(&Point::zeros(3), &two).is_err());
    }

    #[test]
    fn sample_validation() {
        assert!(WeightedSample::new(vec![], vec![]).is_err());
        assert!(WeightedSample::new(pts(&[[0.0, 0.0]]), vec![1.0, 2.0]).is_err());
        assert!(WeightedSample::new(pts(&[[0.0, 0.0]]), vec![-1.0]).is_err());
        assert!(WeightedSample::new(pts(&[[0.0, 0.0]]), vec![0.0]).is_err());
    }
}
