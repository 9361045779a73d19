//! Online estimators of the (conditional) geometric median.
//!
//! The kernel-weighted Robbins–Monro recursion moves the current iterate a
//! step of length `gamma_n * K((X - x)/h_n) / h_n` towards every new response,
//!
//! ```text
//! Z_{n+1} = Z_n + gamma_n * (1/h_n) K((X_{n+1} - x)/h_n) * (Y_{n+1} - Z_n) / ||Y_{n+1} - Z_n||
//! ```
//!
//! and the averaged estimator is the running mean of the iterates. Both use
//! each record exactly once and keep `O(dim)` numbers per target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baseline::{empirical_risk, WeightedSample};
use crate::error::{invalid, Error, Result};
use crate::geometry::{check_dims, Kernel, Norm, Point, Schedule};

/// Number of leading records among which random starting points are drawn.
pub const START_POOL: usize = 100;
/// Capacity of the reservoir used to compare restarts.
pub const RISK_RESERVOIR: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Conditional,
    /// Ignore the covariate; every record gets weight one.
    Unconditional,
}

/// How the first iterate `Z_1` is chosen.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    /// `Z_1 = Y_1`; the first record is consumed by the initialisation.
    #[default]
    FirstRecord,
    /// Start from a given point; every record drives an update.
    Given(Point),
    /// Start from a record drawn uniformly among the first [`START_POOL`];
    /// every record drives an update.
    RandomRecord { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub x: f64,
    pub step: Schedule,
    pub bandwidth: Schedule,
    pub kernel: Kernel,
    pub mode: Mode,
    /// Iterates `Z_1..=Z_burn_in` are left out of the running average.
    pub burn_in: u64,
    pub init: Init,
    /// Norm that sets the length of a step.
    pub norm: Norm,
}

impl EstimatorConfig {
    pub fn conditional(x: f64, step: Schedule, bandwidth: Schedule) -> Self {
        EstimatorConfig {
            x,
            step,
            bandwidth,
            kernel: Kernel::Gaussian,
            mode: Mode::Conditional,
            burn_in: 0,
            init: Init::FirstRecord,
            norm: Norm::Euclidean,
        }
    }

    pub fn unconditional(step: Schedule) -> Self {
        EstimatorConfig {
            x: 0.0,
            step,
            bandwidth: Schedule::Fixed(1.0),
            kernel: Kernel::Gaussian,
            mode: Mode::Unconditional,
            burn_in: 0,
            init: Init::FirstRecord,
            norm: Norm::Euclidean,
        }
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_norm(mut self, norm: Norm) -> Self {
        self.norm = norm;
        self
    }

    pub fn with_target(mut self, x: f64) -> Self {
        self.x = x;
        self
    }

    /// Kernel weight `(1/h_n) K((x_new - x)/h_n)` given to a record at step `n`.
    #[inline]
    pub fn weight(&self, n: u64, x_new: f64) -> f64 {
        match self.mode {
            Mode::Unconditional => 1.0,
            Mode::Conditional => {
                let h = self.bandwidth.at(n);
                self.kernel.eval((x_new - self.x) / h) / h
            }
        }
    }
}

/// Outcome of a single update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Update {
    Applied,
    /// The record had a non-finite coordinate and was ignored.
    Skipped,
}

/// Current iterate, running average and counters of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    z: Point,
    z_bar: Point,
    n: u64,
    n_avg: u64,
    skipped: u64,
    config: EstimatorConfig,
}

impl EstimatorState {
    /// State holding `Z_1 = start` (and, without burn-in, `Zbar = Z_1`).
    pub fn new(config: EstimatorConfig, start: Point) -> Self {
        let mut state = EstimatorState {
            z_bar: start.clone(),
            z: start,
            n: 1,
            n_avg: 0,
            skipped: 0,
            config,
        };
        state.averaged_update();
        state
    }

    pub fn z(&self) -> &Point {
        &self.z
    }

    pub fn z_bar(&self) -> &Point {
        &self.z_bar
    }

    /// Index of the current iterate `Z_n`.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn n_avg(&self) -> u64 {
        self.n_avg
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.z.dim()
    }

    /// One Robbins–Monro step with the record `(x_new, y)`.
    ///
    /// Records with a non-finite value are counted and ignored. When `y`
    /// coincides with the iterate, or the kernel weight vanishes, the iterate
    /// is left unchanged but the counter still advances.
    pub fn rm_update(&mut self, x_new: f64, y: &[f64]) -> Result<Update> {
        check_dims(self.z.dim(), y.len())?;
        if !x_new.is_finite() || y.iter().any(|v| !v.is_finite()) {
            self.skipped += 1;
            return Ok(Update::Skipped);
        }
        let w = self.config.weight(self.n, x_new);
        if w > 0.0 {
            let dist = self.config.norm.distance(&self.z, y);
            if dist > 0.0 {
                let scale = self.config.step.at(self.n) * w / dist;
                for (z, v) in self.z.as_mut_slice().iter_mut().zip(y) {
                    *z += scale * (v - *z);
                }
            }
        }
        self.n += 1;
        Ok(Update::Applied)
    }

    /// Folds the current iterate into the running average; a no-op while the
    /// burn-in period has not elapsed.
    pub fn averaged_update(&mut self) {
        if self.n <= self.config.burn_in {
            return;
        }
        self.n_avg += 1;
        let inv = 1.0 / self.n_avg as f64;
        for (m, z) in self.z_bar.as_mut_slice().iter_mut().zip(self.z.iter()) {
            *m += (z - *m) * inv;
        }
    }

    /// `rm_update` followed by `averaged_update`.
    pub fn step(&mut self, x_new: f64, y: &[f64]) -> Result<Update> {
        let outcome = self.rm_update(x_new, y)?;
        if outcome == Update::Applied {
            self.averaged_update();
        }
        Ok(outcome)
    }
}

/// Result of a single pass over a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEstimate {
    pub z: Point,
    pub z_bar: Point,
    pub n: u64,
    pub skipped: u64,
}

impl From<EstimatorState> for StreamEstimate {
    fn from(s: EstimatorState) -> Self {
        StreamEstimate {
            n: s.n,
            skipped: s.skipped,
            z: s.z,
            z_bar: s.z_bar,
        }
    }
}

/// Runs the estimator over `records` in a single pass.
pub fn run_stream<I, Y>(records: I, config: EstimatorConfig) -> Result<StreamEstimate>
where
    I: IntoIterator<Item = (f64, Y)>,
    Y: AsRef<[f64]>,
{
    let mut states = drive(records, std::slice::from_ref(&config))?;
    Ok(states.pop().expect("one state per config").into())
}

/// Estimates for one target covariate of a multi-target run.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEstimate {
    pub x: f64,
    pub z: Point,
    pub z_bar: Point,
    pub n: u64,
}

/// Advances one estimator per target from a single pass over `records`.
/// Every state shares the initialisation rule and step counter of `base`.
pub fn multi_target_run<I, Y>(
    records: I,
    base: &EstimatorConfig,
    targets: &[f64],
) -> Result<Vec<TargetEstimate>>
where
    I: IntoIterator<Item = (f64, Y)>,
    Y: AsRef<[f64]>,
{
    if targets.is_empty() {
        return Err(invalid("at least one target covariate is required"));
    }
    if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
        return Err(invalid(format!("target covariate {t} is not finite")));
    }
    let configs: Vec<EstimatorConfig> = targets
        .iter()
        .map(|&x| base.clone().with_target(x))
        .collect();
    let states = drive(records, &configs)?;
    Ok(states
        .into_iter()
        .map(|s| TargetEstimate {
            x: s.config.x,
            n: s.n,
            z: s.z,
            z_bar: s.z_bar,
        })
        .collect())
}

fn start_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn reservoir_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn finite_point(y: &[f64]) -> Option<Point> {
    y.iter()
        .all(|v| v.is_finite())
        .then(|| Point::from_raw(y.to_vec()))
}

/// Shared single-pass driver. All configs must use the same `init`.
fn drive<I, Y>(records: I, configs: &[EstimatorConfig]) -> Result<Vec<EstimatorState>>
where
    I: IntoIterator<Item = (f64, Y)>,
    Y: AsRef<[f64]>,
{
    let init = configs[0].init.clone();
    let mut dim: Option<usize> = None;
    let mut states: Vec<EstimatorState> = Vec::new();
    let mut skipped_before_start = 0u64;
    let mut pool: Vec<(f64, Point)> = Vec::new();

    let start_all = |start: &Point| -> Vec<EstimatorState> {
        configs
            .iter()
            .map(|c| EstimatorState::new(c.clone(), start.clone()))
            .collect()
    };

    if let Init::Given(p) = &init {
        dim = Some(p.dim());
        states = start_all(p);
    }

    for (index, (x_new, y)) in records.into_iter().enumerate() {
        let y = y.as_ref();
        match dim {
            None => dim = Some(y.len()),
            Some(d) if d != y.len() => {
                return Err(Error::MixedDimensions {
                    index: index as u64,
                    expected: d,
                    found: y.len(),
                })
            }
            Some(_) => {}
        }
        if y.is_empty() {
            return Err(invalid("records must have at least one response coordinate"));
        }

        if !states.is_empty() {
            for s in states.iter_mut() {
                s.step(x_new, y)?;
            }
            continue;
        }

        match &init {
            Init::FirstRecord => match finite_point(y).filter(|_| x_new.is_finite()) {
                Some(p) => states = start_all(&p),
                None => skipped_before_start += 1,
            },
            Init::RandomRecord { seed } => {
                match finite_point(y).filter(|_| x_new.is_finite()) {
                    Some(p) => pool.push((x_new, p)),
                    None => skipped_before_start += 1,
                }
                if pool.len() == START_POOL {
                    states = start_from_pool(&pool, *seed, &start_all);
                    replay_pool(&mut states, &pool)?;
                    pool = Vec::new();
                }
            }
            Init::Given(_) => unreachable!("states exist from the start"),
        }
    }

    if states.is_empty() {
        if pool.is_empty() {
            return Err(Error::EmptySource);
        }
        let Init::RandomRecord { seed } = init else {
            unreachable!("only random starts buffer records")
        };
        states = start_from_pool(&pool, seed, &start_all);
        replay_pool(&mut states, &pool)?;
    }
    for s in states.iter_mut() {
        s.skipped += skipped_before_start;
    }
    Ok(states)
}

fn start_from_pool(
    pool: &[(f64, Point)],
    seed: u64,
    start_all: &dyn Fn(&Point) -> Vec<EstimatorState>,
) -> Vec<EstimatorState> {
    let idx = start_rng(seed).random_range(0..pool.len());
    start_all(&pool[idx].1)
}

fn replay_pool(states: &mut [EstimatorState], pool: &[(f64, Point)]) -> Result<()> {
    for (x, y) in pool {
        for s in states.iter_mut() {
            s.step(*x, y)?;
        }
    }
    Ok(())
}

/// Restarts and the risks that decided between them.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStartOutcome {
    /// Averaged estimate with the smallest empirical risk.
    pub averaged: Point,
    /// Robbins–Monro iterate with the smallest empirical risk.
    pub robbins_monro: Point,
    pub averaged_risks: Vec<f64>,
    pub robbins_monro_risks: Vec<f64>,
    pub selected_averaged: usize,
    pub selected_robbins_monro: usize,
    /// Number of records in the source.
    pub records: u64,
}

/// Runs the estimator from `restarts` starting points and keeps the one with
/// the smallest kernel-weighted empirical risk.
///
/// `open` must replay the same records every time it is called. Starting
/// points are drawn (with replacement) among the first [`START_POOL`]
/// records; with `restarts = 1` the result matches [`run_stream`] with
/// `Init::RandomRecord { seed }`. The risk is evaluated on a seeded reservoir
/// of at most [`RISK_RESERVOIR`] records, weighted with the bandwidth of the
/// final iteration.
pub fn multi_start_select<F, I, Y>(
    mut open: F,
    config: &EstimatorConfig,
    restarts: usize,
    seed: u64,
) -> Result<MultiStartOutcome>
where
    F: FnMut() -> I,
    I: IntoIterator<Item = (f64, Y)>,
    Y: AsRef<[f64]>,
{
    if restarts < 1 {
        return Err(invalid("restarts must be at least 1"));
    }

    let mut pool: Vec<Point> = Vec::new();
    let mut reservoir: Vec<(f64, Point)> = Vec::new();
    let mut res_rng = reservoir_rng(seed);
    let mut seen = 0u64;
    let mut records = 0u64;
    for (x, y) in open() {
        records += 1;
        let Some(p) = finite_point(y.as_ref()).filter(|_| x.is_finite()) else {
            continue;
        };
        if let Some(first) = pool.first().or(reservoir.first().map(|r| &r.1)) {
            if first.dim() != p.dim() {
                return Err(Error::MixedDimensions {
                    index: records - 1,
                    expected: first.dim(),
                    found: p.dim(),
                });
            }
        }
        seen += 1;
        if pool.len() < START_POOL {
            pool.push(p.clone());
        }
        if reservoir.len() < RISK_RESERVOIR {
            reservoir.push((x, p));
        } else {
            let j = res_rng.random_range(0..seen);
            if (j as usize) < RISK_RESERVOIR {
                reservoir[j as usize] = (x, p);
            }
        }
    }
    if pool.is_empty() {
        return Err(Error::EmptySource);
    }

    let mut rng = start_rng(seed);
    let mut runs = Vec::with_capacity(restarts);
    for _ in 0..restarts {
        let start = pool[rng.random_range(0..pool.len())].clone();
        let cfg = config.clone().with_init(Init::Given(start));
        runs.push(run_stream(open(), cfg)?);
    }

    let final_n = runs[0].n;
    let sample = risk_sample(config, final_n, reservoir)?;
    let averaged_risks = runs
        .iter()
        .map(|r| empirical_risk(&r.z_bar, &sample))
        .collect::<Result<Vec<_>>>()?;
    let robbins_monro_risks = runs
        .iter()
        .map(|r| empirical_risk(&r.z, &sample))
        .collect::<Result<Vec<_>>>()?;
    let selected_averaged = argmin(&averaged_risks);
    let selected_robbins_monro = argmin(&robbins_monro_risks);

    Ok(MultiStartOutcome {
        averaged: runs[selected_averaged].z_bar.clone(),
        robbins_monro: runs[selected_robbins_monro].z.clone(),
        averaged_risks,
        robbins_monro_risks,
        selected_averaged,
        selected_robbins_monro,
        records,
    })
}

fn risk_sample(
    config: &EstimatorConfig,
    final_n: u64,
    reservoir: Vec<(f64, Point)>,
) -> Result<WeightedSample> {
    let (xs, points): (Vec<f64>, Vec<Point>) = reservoir.into_iter().unzip();
    match config.mode {
        Mode::Unconditional => {
            let w = vec![1.0 / points.len() as f64; points.len()];
            WeightedSample::new(points, w)
        }
        Mode::Conditional => {
            let h = config.bandwidth.at(final_n.max(1));
            WeightedSample::localized(config.x, &xs, points, h, config.kernel)
        }
    }
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fixed(v: f64) -> Schedule {
        Schedule::fixed(v).unwrap()
    }

    fn pt(v: &[f64]) -> Point {
        Point::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kernel_weighted_step() {
        let cfg = EstimatorConfig::conditional(0.39, fixed(0.5), fixed(1.0));
        let mut s = EstimatorState::new(cfg, Point::zeros(2));
        s.rm_update(0.39, &[3.0, 4.0]).unwrap();
        let k0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(s.z()[0], 0.5 * k0 * 0.6, epsilon = 1e-15);
        assert_relative_eq!(s.z()[1], 0.5 * k0 * 0.8, epsilon = 1e-15);
        // the reference values carry K(0) rounded to 0.398942
        assert_relative_eq!(s.z()[0], 0.1196826, epsilon = 2e-7);
        assert_relative_eq!(s.z()[1], 0.1595768, epsilon = 2e-7);
        assert_eq!(s.n(), 2);
    }

    #[test]
    fn unconditional_step() {
        let cfg = EstimatorConfig::unconditional(fixed(1.0));
        let mut s = EstimatorState::new(cfg, Point::zeros(2));
        s.rm_update(123.0, &[3.0, 4.0]).unwrap();
        assert_relative_eq!(s.z()[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(s.z()[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn coincident_record_is_a_no_op() {
        let cfg = EstimatorConfig::conditional(0.0, fixed(0.5), fixed(1.0));
        let mut s = EstimatorState::new(cfg, pt(&[1.0, -2.0]));
        s.rm_update(0.0, &[1.0, -2.0]).unwrap();
        assert_eq!(s.z().coords(), &[1.0, -2.0]);
        assert_eq!(s.n(), 2);
    }

    #[test]
    fn zero_kernel_weight_leaves_iterate_unchanged() {
        let cfg = EstimatorConfig::conditional(0.0, fixed(0.5), fixed(0.1))
            .with_kernel(Kernel::Epanechnikov);
        let mut s = EstimatorState::new(cfg, pt(&[1.0, 1.0]));
        s.rm_update(5.0, &[10.0, -3.0]).unwrap();
        assert_eq!(s.z().coords(), &[1.0, 1.0]);
    }

    #[test]
    fn non_finite_record_is_skipped_and_counted() {
        let cfg = EstimatorConfig::conditional(0.0, fixed(0.5), fixed(1.0));
        let mut s = EstimatorState::new(cfg, pt(&[0.0, 0.0]));
        assert_eq!(s.step(0.0, &[f64::NAN, 1.0]).unwrap(), Update::Skipped);
        assert_eq!(s.step(f64::INFINITY, &[1.0, 1.0]).unwrap(), Update::Skipped);
        assert_eq!(s.skipped(), 2);
        assert_eq!(s.n(), 1);
        assert_eq!(s.z().coords(), &[0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let cfg = EstimatorConfig::conditional(0.0, fixed(0.5), fixed(1.0));
        let mut s = EstimatorState::new(cfg, pt(&[0.0, 0.0]));
        assert!(matches!(
            s.rm_update(0.0, &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn running_average_of_two_iterates() {
        let cfg = EstimatorConfig::unconditional(fixed(1.0));
        let mut s = EstimatorState::new(cfg, pt(&[1.0, 0.0]));
        assert_eq!(s.z_bar().coords(), &[1.0, 0.0]);
        // unit step from (1,0) towards (1,2) lands on (1,1); force (0,1) instead
        s.rm_update(0.0, &[0.0, 1.0]).unwrap();
        let z = s.z().clone();
        s.averaged_update();
        assert_relative_eq!(s.z_bar()[0], (1.0 + z[0]) / 2.0, epsilon = 1e-15);
        assert_relative_eq!(s.z_bar()[1], (0.0 + z[1]) / 2.0, epsilon = 1e-15);
        assert_eq!(s.n_avg(), 2);
    }

    #[test]
    fn burn_in_delays_averaging() {
        let cfg = EstimatorConfig::unconditional(fixed(0.1)).with_burn_in(3);
        let mut s = EstimatorState::new(cfg, pt(&[0.0]));
        assert_eq!(s.n_avg(), 0);
        for _ in 0..2 {
            s.step(0.0, &[1.0]).unwrap();
        }
        assert_eq!(s.n(), 3);
        assert_eq!(s.n_avg(), 0);
        s.step(0.0, &[1.0]).unwrap();
        assert_eq!(s.n_avg(), 1);
        assert_eq!(s.z_bar().coords(), s.z().coords());
    }

    #[test]
    fn empty_stream_is_an_error() {
        let cfg = EstimatorConfig::conditional(0.0, fixed(0.5), fixed(1.0));
        let empty: Vec<(f64, Vec<f64>)> = vec![];
        assert_eq!(run_stream(empty, cfg).unwrap_err(), Error::EmptySource);
    }

    #[test]
    fn mixed_dimensions_report_the_record() {
        let cfg = EstimatorConfig::conditional(0.0, fixed(0.5), fixed(1.0));
        let data = vec![(0.0, vec![1.0, 2.0]), (0.0, vec![1.0, 2.0]), (0.0, vec![1.0])];
        assert_eq!(
            run_stream(data, cfg).unwrap_err(),
            Error::MixedDimensions { index: 2, expected: 2, found: 1 }
        );
    }

    #[test]
    fn first_record_initialisation() {
        let cfg = EstimatorConfig::conditional(0.0, fixed(0.5), fixed(1.0));
        let out = run_stream(vec![(0.0, vec![2.0, 2.0])], cfg).unwrap();
        assert_eq!(out.z.coords(), &[2.0, 2.0]);
        assert_eq!(out.n, 1);
    }

    #[test]
    fn random_start_with_short_stream() {
        let data: Vec<(f64, Vec<f64>)> = (0..7).map(|i| (0.0, vec![i as f64, 1.0])).collect();
        let cfg = EstimatorConfig::unconditional(fixed(0.1))
            .with_init(Init::RandomRecord { seed: 3 });
        let out = run_stream(data.clone(), cfg).unwrap();
        assert_eq!(out.n, 8);
        let ms = multi_start_select(
            || data.clone(),
            &EstimatorConfig::unconditional(fixed(0.1)),
            1,
            3,
        )
        .unwrap();
        assert_eq!(ms.averaged, out.z_bar);
        assert_eq!(ms.robbins_monro, out.z);
    }

    #[test]
    fn restarts_must_be_positive() {
        let data = vec![(0.0, vec![1.0, 2.0])];
        let cfg = EstimatorConfig::conditional(0.0, fixed(0.5), fixed(1.0));
        assert!(multi_start_select(|| data.clone(), &cfg, 0, 1).is_err());
    }

    #[test]
    fn multi_target_needs_targets() {
        let data = vec![(0.0, vec![1.0, 2.0])];
        let cfg = EstimatorConfig::conditional(0.0, fixed(0.5), fixed(1.0));
        assert!(multi_target_run(data, &cfg, &[]).is_err());
    }
}
