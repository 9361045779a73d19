use geomed::asymptotics::{clt_normalization_deviation, inverse_bandwidth_sum};
use geomed::bench::clt_experiment;
use geomed::simulation::SimRng;
use geomed::{
    estimate_sigma_gamma, sandwich_covariance, validate_schedule, ConditionalSampler,
    CovariancePair, Kernel, Point, Schedule,
};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;

/// `m + u` with `u` uniform on the unit circle.
struct Circle {
    m: [f64; 2],
}

impl ConditionalSampler for Circle {
    fn dim(&self) -> usize {
        2
    }

    fn sample(&self, rng: &mut SimRng) -> Point {
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        Point::new(vec![self.m[0] + a.cos(), self.m[1] + a.sin()]).unwrap()
    }
}

fn circle_pair(mc: usize, seed: u64) -> CovariancePair {
    let k = Kernel::Gaussian;
    let p_x = 1.0 / k.square_integral();
    let sampler = Circle { m: [1.0, -2.0] };
    estimate_sigma_gamma(&sampler, &Point::new(vec![1.0, -2.0]).unwrap(), p_x, k, mc, seed).unwrap()
}

#[test]
fn clt_conditions_imply_almost_sure_conditions() {
    for i in 1..=50 {
        for j in 1..=50 {
            for beta in [0.5, 1.0, 2.0] {
                let gamma = i as f64 / 50.0;
                let h = j as f64 / 50.0;
                let v = validate_schedule(gamma, h, beta).unwrap();
                assert!(!v.clt || v.as_convergence, "gamma {gamma} h {h} beta {beta}");
                assert!(!v.rate_bound || v.as_convergence);
            }
        }
    }
}

#[test]
fn inverse_bandwidth_sum_matches_its_asymptotic_form() {
    let n = 10_000u64;
    let dev = clt_normalization_deviation(1.0, 0.3, n).unwrap();
    assert!(dev <= 0.01, "relative deviation {dev}");
    let direct: f64 = (1..=n).map(|k| (k as f64).powf(0.3)).sum();
    let ours = inverse_bandwidth_sum(&Schedule::decaying(1.0, 0.3).unwrap(), n);
    assert!((direct - ours).abs() <= 1e-9 * direct);
    let asymptotic = (n as f64 / (n as f64).powf(-0.3)) / 1.3;
    assert!(((direct - asymptotic) / (n as f64).powf(1.3)).abs() <= 0.01);
}

#[test]
fn uniform_circle_gives_half_identity() {
    let mc = 200_000;
    let pair = circle_pair(mc, 4);
    let tol = 3.0 / (mc as f64).sqrt();
    let half = DMatrix::<f64>::identity(2, 2) * 0.5;
    assert!((&pair.sigma - &half).amax() <= tol, "{}", pair.sigma);
    assert!((&pair.gamma_op - &half).amax() <= tol, "{}", pair.gamma_op);
    assert!((pair.sigma.trace() - 1.0).abs() <= 1e-12);
}

#[test]
fn monte_carlo_error_shrinks_like_inverse_root() {
    let rms = |mc: usize| -> f64 {
        let errs: Vec<f64> = (0..40u64)
            .map(|s| {
                let p = circle_pair(mc, 1000 + s);
                (p.gamma_op[(0, 0)] - 0.5).powi(2) + p.gamma_op[(0, 1)].powi(2)
            })
            .collect();
        (errs.iter().sum::<f64>() / errs.len() as f64).sqrt()
    };
    let ratio = rms(2_000) / rms(8_000);
    // four times the draws should halve the error
    assert!((2.0 / 1.5..=2.0 * 1.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn weighted_average_covariance_has_no_bandwidth_factor() {
    let r = clt_experiment(2, 20_000, 200, 0.8, 0.4, 31).unwrap();
    let ratio = r.weighted_trace_ratio();
    assert!((0.7..=1.3).contains(&ratio), "weighted trace ratio {ratio}");
    let scaled = r.unscaled_theoretical_cov.trace() / r.theoretical_cov.trace();
    assert!((scaled - 1.4).abs() < 1e-12);
}

fn psd(entries: &[f64], d: usize, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_row_slice(d, d, &entries[..d * d]);
    &a * a.transpose() + DMatrix::identity(d, d) * ridge
}

proptest! {
    #[test]
    fn sandwich_is_symmetric_psd(
        d in 2usize..5,
        s in prop::collection::vec(-2.0f64..2.0, 16),
        g in prop::collection::vec(-2.0f64..2.0, 16),
        h in 0.0f64..1.0,
    ) {
        let pair = CovariancePair::new(psd(&s, d, 0.0), psd(&g, d, 0.1)).unwrap();
        let c = sandwich_covariance(&pair, h).unwrap();
        prop_assert!((&c - c.transpose()).amax() <= 1e-10 * (1.0 + c.amax()));
        let min = SymmetricEigen::new(c.clone()).eigenvalues.min();
        prop_assert!(min >= -1e-9 * (1.0 + c.amax()), "min eigenvalue {min}");
    }
}
