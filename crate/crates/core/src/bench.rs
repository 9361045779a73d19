//! Monte Carlo replication engine for the Brownian benchmark.
//!
//! Every replication owns a random stream derived from the master seed and
//! its index, replications run in parallel, and aggregation walks them in
//! index order, so reports are bit-identical whatever the worker count.

use std::fmt::{self, Write as _};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rayon::prelude::*;

use crate::asymptotics::{estimate_sigma_gamma, sandwich_covariance, validate_schedule};
use crate::baseline::{weiszfeld, WeightedSample, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Kernel, Norm, Point, Record, Schedule};
use crate::recursive::{multi_start_select, EstimatorConfig, EstimatorState, Init};
use crate::simulation::{marginal_density, BrownianModel, SimRng, DEFAULT_TARGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Static,
    RobbinsMonro,
    Averaged,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Static => "static",
            Estimator::RobbinsMonro => "robbins_monro",
            Estimator::Averaged => "averaged",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "static" => Ok(Estimator::Static),
            "robbins_monro" | "rm" => Ok(Estimator::RobbinsMonro),
            "averaged" | "avg" => Ok(Estimator::Averaged),
            other => Err(invalid(format!("unknown estimator `{other}`"))),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A bandwidth column of the table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthSpec {
    Fixed(f64),
    /// `c_h * n^(-exponent)`
    Decaying { c_h: f64, exponent: f64 },
}

impl BandwidthSpec {
    pub fn schedule(&self) -> Result<Schedule> {
        match *self {
            BandwidthSpec::Fixed(h) => Schedule::fixed(h),
            BandwidthSpec::Decaying { c_h, exponent } => Schedule::decaying(c_h, exponent),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            BandwidthSpec::Fixed(h) => format!("{h}"),
            BandwidthSpec::Decaying { c_h: 1.0, exponent } => format!("n^-{exponent}"),
            BandwidthSpec::Decaying { c_h, exponent } => format!("{c_h}*n^-{exponent}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableExperimentConfig {
    pub n: usize,
    pub d: usize,
    pub replications: usize,
    pub bandwidths: Vec<BandwidthSpec>,
    pub c_gamma_values: Vec<f64>,
    pub estimators: Vec<Estimator>,
    /// Step exponent for fixed-bandwidth columns.
    pub gamma_exponent: f64,
    /// Step exponent for decaying-bandwidth columns.
    pub decaying_gamma_exponent: f64,
    pub restarts: usize,
    pub master_seed: u64,
    pub x: f64,
    pub kernel: Kernel,
    /// Step norm of the recursive estimators; responses are curves, so the
    /// grid norm is the default.
    pub norm: Norm,
}

impl TableExperimentConfig {
    /// The full grid of the published simulation tables for sample size `n`.
    pub fn published_grid(n: usize) -> Self {
        TableExperimentConfig {
            n,
            d: 100,
            replications: 100,
            bandwidths: vec![
                BandwidthSpec::Fixed(0.05),
                BandwidthSpec::Fixed(0.10),
                BandwidthSpec::Fixed(0.15),
                BandwidthSpec::Fixed(0.20),
                BandwidthSpec::Fixed(0.25),
                BandwidthSpec::Decaying { c_h: 1.0, exponent: 0.3 },
            ],
            c_gamma_values: vec![0.1, 0.3, 1.0, 3.0],
            estimators: vec![Estimator::Static, Estimator::RobbinsMonro, Estimator::Averaged],
            gamma_exponent: 2.0 / 3.0,
            decaying_gamma_exponent: 0.9,
            restarts: 10,
            master_seed: 20_120_101,
            x: DEFAULT_TARGET,
            kernel: Kernel::Gaussian,
            norm: Norm::Grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(invalid("replications must be at least 1"));
        }
        if self.n == 0 || self.d == 0 || self.restarts == 0 {
            return Err(invalid("n, d and restarts must be positive"));
        }
        if self.bandwidths.is_empty() || self.estimators.is_empty() {
            return Err(invalid("at least one bandwidth and one estimator are required"));
        }
        for bw in &self.bandwidths {
            bw.schedule()?;
        }
        let recursive = self.estimators.iter().any(|e| *e != Estimator::Static);
        if recursive && self.c_gamma_values.is_empty() {
            return Err(invalid("recursive estimators need at least one c_gamma value"));
        }
        for &c in &self.c_gamma_values {
            Schedule::decaying(c, self.gamma_exponent)?;
            Schedule::decaying(c, self.decaying_gamma_exponent)?;
        }
        Ok(())
    }

    fn step_schedule(&self, c_gamma: f64, bw: &BandwidthSpec) -> Result<Schedule> {
        match bw {
            BandwidthSpec::Fixed(_) => Schedule::decaying(c_gamma, self.gamma_exponent),
            BandwidthSpec::Decaying { .. } => Schedule::decaying(c_gamma, self.decaying_gamma_exponent),
        }
    }

    /// Cells in report order: static row first, then one row per `c_gamma`
    /// for each recursive estimator.
    fn cell_keys(&self) -> Vec<CellKey> {
        let mut keys = Vec::new();
        for est in [Estimator::Static, Estimator::RobbinsMonro, Estimator::Averaged] {
            if !self.estimators.contains(&est) {
                continue;
            }
            let c_values: Vec<Option<f64>> = if est == Estimator::Static {
                vec![None]
            } else {
                self.c_gamma_values.iter().copied().map(Some).collect()
            };
            for c in c_values {
                for bw in &self.bandwidths {
                    keys.push(CellKey {
                        estimator: est,
                        c_gamma: c,
                        bandwidth: *bw,
                    });
                }
            }
        }
        keys
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub estimator: Estimator,
    /// `None` for the static estimator.
    pub c_gamma: Option<f64>,
    pub bandwidth: BandwidthSpec,
}

impl CellKey {
    /// The static estimator has no decaying-bandwidth variant.
    fn is_feasible(&self) -> bool {
        !(self.estimator == Estimator::Static
            && matches!(self.bandwidth, BandwidthSpec::Decaying { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    /// Mean over replications of `100 * R`.
    pub mean_error_x100: f64,
    pub mc_stderr: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub key: CellKey,
    /// `None` for infeasible cells.
    pub stats: Option<CellStats>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: TableExperimentConfig,
    pub cells: Vec<Cell>,
    /// Informational only; not part of equality.
    pub wall_time: Duration,
}

impl PartialEq for ExperimentReport {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.cells == other.cells
    }
}

impl ExperimentReport {
    pub fn cell(&self, estimator: Estimator, c_gamma: Option<f64>, bandwidth: BandwidthSpec) -> Option<&Cell> {
        self.cells.iter().find(|c| {
            c.key.estimator == estimator && c.key.c_gamma == c_gamma && c.key.bandwidth == bandwidth
        })
    }

    /// Mean error of a feasible cell, if it was requested.
    pub fn mean_error(&self, estimator: Estimator, c_gamma: Option<f64>, bandwidth: BandwidthSpec) -> Option<f64> {
        self.cell(estimator, c_gamma, bandwidth)
            .and_then(|c| c.stats)
            .map(|s| s.mean_error_x100)
    }

    /// One row per cell: `estimator,c_gamma,bandwidth,mean_error_x100,stderr,reps`.
    /// Infeasible cells keep their row with empty numeric fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("estimator,c_gamma,bandwidth,mean_error_x100,stderr,reps\n");
        for cell in &self.cells {
            let c = cell.key.c_gamma.map(|v| v.to_string()).unwrap_or_default();
            let _ = match cell.stats {
                Some(s) => writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    cell.key.estimator,
                    c,
                    cell.key.bandwidth.label(),
                    format_sig(s.mean_error_x100),
                    format_sig(s.mc_stderr),
                    s.replications
                ),
                None => writeln!(out, "{},{},{},,,0", cell.key.estimator, c, cell.key.bandwidth.label()),
            };
        }
        out
    }

    /// Aligned text table in the layout of the published tables.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Mean estimation errors (x100), n = {}, d = {}, {} replications, x = {}",
            self.config.n, self.config.d, self.config.replications, self.config.x
        );
        let _ = write!(out, "{:<22}", "");
        for bw in &self.config.bandwidths {
            let _ = write!(out, "{:>10}", bw.label());
        }
        out.push('\n');
        let mut row_label = String::new();
        for (i, cell) in self.cells.iter().enumerate() {
            if i % self.config.bandwidths.len() == 0 {
                if i > 0 {
                    out.push('\n');
                }
                row_label = match cell.key.c_gamma {
                    None => cell.key.estimator.to_string(),
                    Some(c) => format!("{} c={}", cell.key.estimator, c),
                };
                let _ = write!(out, "{row_label:<22}");
            }
            match cell.stats {
                Some(s) => {
                    let _ = write!(out, "{:>10.3}", s.mean_error_x100);
                }
                None => {
                    let _ = write!(out, "{:>10}", "");
                }
            }
        }
        let _ = row_label;
        let _ = writeln!(out, "\nwall time: {:.1}s", self.wall_time.as_secs_f64());
        out
    }
}

/// Nine significant digits, the precision of every numeric CSV output.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}

/// Seed of replication `index` derived from the master seed.
pub fn replicate_rng(master_seed: u64, index: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Reproduces the simulation tables: for every replication, draws `n` pairs
/// from the Brownian model and records `100 * R` of every requested
/// estimator at every `(c_gamma, bandwidth)` cell.
pub fn run_table_experiment(cfg: &TableExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let model = BrownianModel::new(cfg.d)?.with_target(cfg.x);
    let keys = cfg.cell_keys();

    let per_rep: Vec<Vec<Option<f64>>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| replicate_cells(cfg, &model, &keys, r))
        .collect::<Result<_>>()?;

    let cells = keys
        .iter()
        .enumerate()
        .map(|(i, key)| {
            let stats = key.is_feasible().then(|| {
                let errs: Vec<f64> = per_rep.iter().map(|rep| rep[i].expect("feasible")).collect();
                summarize(&errs)
            });
            Cell { key: *key, stats }
        })
        .collect();

    Ok(ExperimentReport {
        config: cfg.clone(),
        cells,
        wall_time: start.elapsed(),
    })
}

fn summarize(errs: &[f64]) -> CellStats {
    let k = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / k;
    let stderr = if errs.len() > 1 {
        (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        0.0
    };
    CellStats {
        mean_error_x100: mean,
        mc_stderr: stderr,
        replications: errs.len(),
    }
}

fn replicate_cells(
    cfg: &TableExperimentConfig,
    model: &BrownianModel,
    keys: &[CellKey],
    r: u64,
) -> Result<Vec<Option<f64>>> {
    let mut rng = replicate_rng(cfg.master_seed, r);
    let data = model.sample_records(cfg.n, &mut rng);
    // all cells of a replication share their starting points
    let restart_seed = rng.next_u64();
    let mut out = vec![None; keys.len()];

    let xs: Vec<f64> = data.iter().map(|r| r.x).collect();
    let ys: Vec<Point> = data.iter().map(|r| r.y.clone()).collect();

    for (i, key) in keys.iter().enumerate() {
        if key.estimator != Estimator::Static || !key.is_feasible() {
            continue;
        }
        let BandwidthSpec::Fixed(h) = key.bandwidth else { unreachable!() };
        let sample = WeightedSample::localized(cfg.x, &xs, ys.clone(), h, cfg.kernel)?;
        let fit = weiszfeld(&sample, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        out[i] = Some(100.0 * model.mse(&fit.median, cfg.x)?);
    }

    let wants_rm = cfg.estimators.contains(&Estimator::RobbinsMonro);
    let wants_avg = cfg.estimators.contains(&Estimator::Averaged);
    if !(wants_rm || wants_avg) {
        return Ok(out);
    }
    for &c in &cfg.c_gamma_values {
        for bw in &cfg.bandwidths {
            let est_cfg = EstimatorConfig::conditional(cfg.x, cfg.step_schedule(c, bw)?, bw.schedule()?)
                .with_kernel(cfg.kernel)
                .with_norm(cfg.norm);
            let outcome = multi_start_select(
                || data.iter().map(|rec| (rec.x, &rec.y)),
                &est_cfg,
                cfg.restarts,
                restart_seed,
            )?;
            let find = |est: Estimator| {
                keys.iter().position(|k| {
                    k.estimator == est && k.c_gamma == Some(c) && k.bandwidth == *bw
                })
            };
            if let Some(i) = find(Estimator::RobbinsMonro) {
                out[i] = Some(100.0 * model.mse(&outcome.robbins_monro, cfg.x)?);
            }
            if let Some(i) = find(Estimator::Averaged) {
                out[i] = Some(100.0 * model.mse(&outcome.averaged, cfg.x)?);
            }
        }
    }
    Ok(out)
}

/// Knobs of the CLT experiment beyond its required arguments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CltSettings {
    pub c_gamma: f64,
    pub c_h: f64,
    pub x: f64,
    pub kernel: Kernel,
    pub mc_samples: usize,
}

impl Default for CltSettings {
    fn default() -> Self {
        CltSettings {
            c_gamma: 1.0,
            c_h: 1.0,
            x: DEFAULT_TARGET,
            kernel: Kernel::Gaussian,
            mc_samples: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltReport {
    /// Sample covariance of `sqrt(n h_n) (Zbar_n - m)` over replications.
    pub empirical_cov: DMatrix<f64>,
    /// Plug-in `(1/(1+h)) H^{-1} Sigma H^{-1}`.
    pub theoretical_cov: DMatrix<f64>,
    pub trace_ratio: f64,
    /// Sample covariance of `sqrt(n) * (1/n) sum_k sqrt(h_k) (Z_k - m)`.
    pub weighted_cov: DMatrix<f64>,
    /// Plug-in `H^{-1} Sigma H^{-1}`, the limit of `weighted_cov`.
    pub unscaled_theoretical_cov: DMatrix<f64>,
    pub n: u64,
}

impl CltReport {
    pub fn weighted_trace_ratio(&self) -> f64 {
        self.weighted_cov.trace() / self.unscaled_theoretical_cov.trace()
    }
}

/// Compares the spread of the averaged estimator over replications with its
/// plug-in asymptotic covariance, on the Brownian model at `x = 0.39`.
pub fn clt_experiment(d: usize, n: u64, replications: usize, gamma: f64, h: f64, seed: u64) -> Result<CltReport> {
    clt_experiment_with(d, n, replications, gamma, h, seed, CltSettings::default())
}

pub fn clt_experiment_with(
    d: usize,
    n: u64,
    replications: usize,
    gamma: f64,
    h: f64,
    seed: u64,
    settings: CltSettings,
) -> Result<CltReport> {
    if replications < 2 {
        return Err(invalid("the CLT experiment needs at least 2 replications"));
    }
    if d < 2 {
        return Err(invalid("the CLT experiment needs d >= 2"));
    }
    if n < 2 {
        return Err(invalid("the CLT experiment needs n >= 2"));
    }
    let verdict = validate_schedule(gamma, h, 1.0)?;
    if !verdict.clt {
        return Err(Error::Refused {
            violated: verdict.violated,
        });
    }

    let model = BrownianModel::new(d)?.with_target(settings.x);
    let m = model.median_curve(settings.x);
    let step = Schedule::decaying(settings.c_gamma, gamma)?;
    let bandwidth = Schedule::decaying(settings.c_h, h)?;
    let config = EstimatorConfig::conditional(settings.x, step, bandwidth)
        .with_kernel(settings.kernel)
        .with_init(Init::FirstRecord);

    let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let (x1, y1) = model.sample_pair(&mut rng);
            let _ = x1;
            let mut state = EstimatorState::new(config.clone(), y1);
            let mut weighted = vec![0.0; d];
            let mut accumulate = |s: &EstimatorState| {
                let root_h = bandwidth.at(s.n()).sqrt();
                for ((w, z), mi) in weighted.iter_mut().zip(s.z().iter()).zip(m.iter()) {
                    *w += root_h * (z - mi);
                }
            };
            accumulate(&state);
            while state.n() < n {
                let (x, y) = model.sample_pair(&mut rng);
                state.step(x, &y)?;
                accumulate(&state);
            }
            let scale = (n as f64 * bandwidth.at(n)).sqrt();
            let avg: Vec<f64> = state
                .z_bar()
                .iter()
                .zip(m.iter())
                .map(|(z, mi)| scale * (z - mi))
                .collect();
            let root_n = (n as f64).sqrt();
            let weighted = weighted.into_iter().map(|w| w / n as f64 * root_n).collect();
            Ok((avg, weighted))
        })
        .collect::<Result<_>>()?;

    let (avg, weighted): (Vec<Vec<f64>>, Vec<Vec<f64>>) = draws.into_iter().unzip();
    let empirical_cov = sample_covariance(&avg);
    let weighted_cov = sample_covariance(&weighted);

    let law = model.conditional_law(settings.x)?;
    let pair = estimate_sigma_gamma(
        &law,
        &m,
        marginal_density(settings.x),
        settings.kernel,
        settings.mc_samples,
        seed ^ 0x5eed_c0de,
    )?;
    let theoretical_cov = sandwich_covariance(&pair, h)?;
    let unscaled_theoretical_cov = sandwich_covariance(&pair, 0.0)?;
    Ok(CltReport {
        trace_ratio: empirical_cov.trace() / theoretical_cov.trace(),
        empirical_cov,
        theoretical_cov,
        weighted_cov,
        unscaled_theoretical_cov,
        n,
    })
}

/// Unbiased sample covariance of equally sized vectors.
pub fn sample_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let k = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / k as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    cov / (k as f64 - 1.0)
}

/// Median over replications of `R(Z_n)` for the Robbins–Monro iterate at
/// each sample size in `ns`, on the Brownian model.
///
/// Each replication streams a single path of `max(ns)` records and reads
/// the error off at every requested `n`.
pub fn rate_experiment(
    model: &BrownianModel,
    config: &EstimatorConfig,
    ns: &[u64],
    replications: usize,
    seed: u64,
) -> Result<Vec<(u64, f64)>> {
    if ns.is_empty() || replications == 0 {
        return Err(invalid("need sample sizes and at least one replication"));
    }
    let mut sorted = ns.to_vec();
    sorted.sort_unstable();
    let n_max = *sorted.last().expect("non-empty");
    let x = config.x;

    let per_rep: Vec<Vec<f64>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let (_, y1) = model.sample_pair(&mut rng);
            let mut state = EstimatorState::new(config.clone().with_init(Init::FirstRecord), y1);
            let mut errs = Vec::with_capacity(sorted.len());
            let mut next = 0;
            while next < sorted.len() {
                if state.n() == sorted[next] {
                    errs.push(model.mse(state.z(), x)?);
                    next += 1;
                    continue;
                }
                let (xn, yn) = model.sample_pair(&mut rng);
                state.step(xn, &yn)?;
            }
            let _ = n_max;
            Ok(errs)
        })
        .collect::<Result<_>>()?;

    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut col: Vec<f64> = per_rep.iter().map(|r| r[i]).collect();
            (n, median(&mut col))
        })
        .collect())
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Records of one replication, for callers that want to run their own
/// estimators on the benchmark data.
pub fn replicate_data(model: &BrownianModel, n: usize, master_seed: u64, index: u64) -> Vec<Record> {
    let mut rng = replicate_rng(master_seed, index);
    model.sample_records(n, &mut rng)
}
