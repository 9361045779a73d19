//! Command-line front end: simulation, estimation from CSV streams,
//! conditional profiles, and the replication benchmarks.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 when an
//! experiment refuses to run because its preconditions do not hold.

pub mod config;
pub mod ingest;

use std::cell::RefCell;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geomed::bench::{clt_experiment_with, format_sig, run_table_experiment, CltSettings};
use geomed::simulation::seeded_rng;
use geomed::{
    multi_start_select, multi_target_run, run_stream, validate_schedule, weiszfeld, BrownianModel,
    EstimatorConfig, Init, Kernel, Norm, Point, Schedule, WeightedSample,
};

use crate::ingest::{IngestSummary, RecordReader};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] geomed::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(geomed::Error::Refused { .. }) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "geomed", version, about = "Online estimation of conditional geometric medians")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from the Brownian model.
    Simulate(SimulateArgs),
    /// Recursive estimate at one covariate value.
    Estimate(EstimateArgs),
    /// Weighted Weiszfeld estimate at one covariate value.
    Baseline(BaselineArgs),
    /// Recursive estimates at several covariate values in one pass.
    Profile(ProfileArgs),
    /// Replicated error table from a config file.
    Benchmark(BenchmarkArgs),
    /// Compare the spread of the averaged estimator with its limit covariance.
    CltCheck(CltArgs),
    /// Check a pair of schedule exponents against the convergence conditions.
    ValidateSchedule(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Averaged,
    RobbinsMonro,
}

#[derive(Debug, Args, Clone)]
pub struct ScheduleArgs {
    /// Step exponent: gamma_n = c_gamma * n^-gamma.
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long = "c-gamma", default_value_t = 1.0)]
    pub c_gamma: f64,
    /// Bandwidth exponent: h_n = c_h * n^-h.
    #[arg(long, default_value_t = 0.3)]
    pub h: f64,
    #[arg(long = "c-h", default_value_t = 1.0)]
    pub c_h: f64,
    /// Constant bandwidth; overrides --h and --c-h.
    #[arg(long = "fixed-h")]
    pub fixed_h: Option<f64>,
    #[arg(long, default_value = "gaussian")]
    pub kernel: String,
    #[arg(long = "burn-in", default_value_t = 0)]
    pub burn_in: u64,
    /// `euclidean`, or `grid` for curves (root mean square of coordinates).
    #[arg(long, default_value = "euclidean")]
    pub norm: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Which::Averaged)]
    pub estimator: Which,
}

impl ScheduleArgs {
    fn config(&self, x: Option<f64>) -> Result<EstimatorConfig, CliError> {
        let step = Schedule::decaying(self.c_gamma, self.gamma)?;
        let kernel: Kernel = self.kernel.parse()?;
        let norm: Norm = self.norm.parse()?;
        let cfg = match x {
            Some(x) => {
                if !x.is_finite() {
                    return Err(CliError::Input(format!("--x must be finite, got {x}")));
                }
                let bandwidth = match self.fixed_h {
                    Some(h) => Schedule::fixed(h)?,
                    None => Schedule::decaying(self.c_h, self.h)?,
                };
                EstimatorConfig::conditional(x, step, bandwidth)
            }
            None => EstimatorConfig::unconditional(step),
        };
        Ok(cfg.with_kernel(kernel).with_norm(norm).with_burn_in(self.burn_in))
    }

    fn metadata(&self, meta: &mut Vec<(String, String)>) {
        let mut put = |k: &str, v: String| meta.push((k.to_string(), v));
        put("gamma", self.gamma.to_string());
        put("c_gamma", self.c_gamma.to_string());
        match self.fixed_h {
            Some(h) => put("h", format!("fixed {h}")),
            None => {
                put("h", self.h.to_string());
                put("c_h", self.c_h.to_string());
            }
        }
        put("kernel", self.kernel.clone());
        put("norm", self.norm.clone());
        put("burn_in", self.burn_in.to_string());
        put("seed", self.seed.to_string());
        put(
            "estimator",
            match self.estimator {
                Which::Averaged => "averaged",
                Which::RobbinsMonro => "robbins_monro",
            }
            .to_string(),
        );
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// CSV file with header `x,y1,...,yd`; `-` reads standard input.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Target covariate value; required unless --unconditional.
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<f64>,
    /// Ignore the covariate and estimate the plain geometric median.
    #[arg(long)]
    pub unconditional: bool,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Random starting points compared by empirical risk; more than one
    /// needs a file input.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Metadata sidecar; defaults to `<output>.meta`, or standard error.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub x: f64,
    #[arg(long)]
    pub h: f64,
    #[arg(long, default_value = "gaussian")]
    pub kernel: String,
    #[arg(long, default_value_t = geomed::baseline::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long = "max-iter", default_value_t = geomed::baseline::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Covariate quantile levels, computed exactly from a first pass.
    #[arg(long, value_delimiter = ',', conflicts_with = "x_values", allow_hyphen_values = true)]
    pub quantiles: Option<Vec<f64>>,
    /// Explicit covariate values.
    #[arg(long = "x-values", value_delimiter = ',', allow_hyphen_values = true)]
    pub x_values: Option<Vec<f64>>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// `key = value` experiment description.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Report CSV; the aligned table always goes to standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CltArgs {
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 20_000)]
    pub n: u64,
    #[arg(long, default_value_t = 200)]
    pub replications: usize,
    #[arg(long, default_value_t = 0.8)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.4)]
    pub h: f64,
    #[arg(long = "c-gamma", default_value_t = 1.0)]
    pub c_gamma: f64,
    #[arg(long = "mc-samples", default_value_t = 200_000)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub h: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Simulate(a) => simulate(&a, out),
        Command::Estimate(a) => {
            let est = estimate(&a)?;
            write_row(a.output.as_deref(), out, &est.values)?;
            write_meta(a.meta.as_deref(), a.output.as_deref(), err, &est.metadata)
        }
        Command::Baseline(a) => {
            let est = baseline(&a)?;
            write_row(a.output.as_deref(), out, &est.values)?;
            write_meta(a.meta.as_deref(), a.output.as_deref(), err, &est.metadata)
        }
        Command::Profile(a) => {
            let prof = profile(&a)?;
            let mut text = String::from("quantile,x");
            for j in 1..=prof.dim {
                text.push_str(&format!(",t{j}"));
            }
            text.push('\n');
            for row in &prof.rows {
                let q = row.quantile.map(format_sig).unwrap_or_default();
                text.push_str(&format!("{q},{}", format_sig(row.x)));
                for v in &row.values {
                    text.push(',');
                    text.push_str(&format_sig(*v));
                }
                text.push('\n');
            }
            emit(a.output.as_deref(), out, &text)?;
            writeln!(err, "passes={} records={} skipped_records={}", prof.passes, prof.records, prof.skipped)?;
            Ok(())
        }
        Command::Benchmark(a) => {
            let text = fs::read_to_string(&a.config)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", a.config.display())))?;
            let cfg = config::parse_config(&text)?;
            let report = run_table_experiment(&cfg)?;
            out.write_all(report.to_table().as_bytes())?;
            writeln!(out, "master_seed: {}", cfg.master_seed)?;
            if let Some(path) = &a.output {
                fs::write(path, report.to_csv())?;
            }
            Ok(())
        }
        Command::CltCheck(a) => {
            let settings = CltSettings {
                c_gamma: a.c_gamma,
                mc_samples: a.mc_samples,
                ..CltSettings::default()
            };
            let r = clt_experiment_with(a.d, a.n, a.replications, a.gamma, a.h, a.seed, settings)?;
            writeln!(out, "trace_ratio={}", format_sig(r.trace_ratio))?;
            writeln!(out, "weighted_trace_ratio={}", format_sig(r.weighted_trace_ratio()))?;
            writeln!(out, "empirical_trace={}", format_sig(r.empirical_cov.trace()))?;
            writeln!(out, "theoretical_trace={}", format_sig(r.theoretical_cov.trace()))?;
            writeln!(out, "empirical_cov={}", matrix_text(&r.empirical_cov, a.d))?;
            writeln!(out, "theoretical_cov={}", matrix_text(&r.theoretical_cov, a.d))?;
            Ok(())
        }
        Command::ValidateSchedule(a) => {
            let v = validate_schedule(a.gamma, a.h, a.beta)?;
            writeln!(out, "{v}")?;
            if !v.violated.is_empty() {
                writeln!(out, "violated: {}", v.violated.join("; "))?;
            }
            Ok(())
        }
    }
}

fn matrix_text<M>(m: &M, dim: usize) -> String
where
    M: std::ops::Index<(usize, usize), Output = f64>,
{
    let rows: Vec<String> = (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| format_sig(m[(i, j)]))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    rows.join("; ")
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(CliError::Input("--n must be positive".into()));
    }
    let model = BrownianModel::new(a.d)?;
    let mut rng = seeded_rng(a.seed);
    let mut sink: Box<dyn Write + '_> = match &a.output {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(out)),
    };
    let mut line = String::from("x");
    for j in 1..=a.d {
        line.push_str(&format!(",y{j}"));
    }
    writeln!(sink, "{line}")?;
    for _ in 0..a.n {
        let (x, y) = model.sample_pair(&mut rng);
        line.clear();
        line.push_str(&format_sig(x));
        for v in y.iter() {
            line.push(',');
            line.push_str(&format_sig(*v));
        }
        writeln!(sink, "{line}")?;
    }
    sink.flush()?;
    Ok(())
}

/// A point estimate and the key=value lines describing how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct PointOutput {
    pub values: Vec<f64>,
    pub metadata: Vec<(String, String)>,
}

/// One pass over a file whose end-of-pass summary is recorded in `sink`.
struct TrackedPass<R: Read> {
    reader: Option<RecordReader<R>>,
    sink: Rc<RefCell<Vec<Result<IngestSummary, CliError>>>>,
}

impl<R: Read> Iterator for TrackedPass<R> {
    type Item = (f64, Vec<f64>);

    fn next(&mut self) -> Option<Self::Item> {
        let reader = self.reader.as_mut()?;
        match reader.next() {
            Some(rec) => Some(rec),
            None => {
                let done = self.reader.take().expect("reader present");
                self.sink.borrow_mut().push(done.finish());
                None
            }
        }
    }
}

type Passes = Rc<RefCell<Vec<Result<IngestSummary, CliError>>>>;

/// Re-opens `path` for every pass, logging each pass summary.
fn pass_opener(path: &Path, passes: &Passes) -> impl FnMut() -> TrackedPass<Box<dyn Read>> {
    let path = path.to_path_buf();
    let passes = Rc::clone(passes);
    move || match ingest::open(&path) {
        Ok(reader) => TrackedPass {
            reader: Some(reader),
            sink: Rc::clone(&passes),
        },
        Err(e) => {
            passes.borrow_mut().push(Err(e));
            TrackedPass {
                reader: None,
                sink: Rc::clone(&passes),
            }
        }
    }
}

/// Checks every logged pass and returns the last summary.
fn settle(passes: &Passes) -> Result<(IngestSummary, usize), CliError> {
    let log = passes.take();
    let count = log.len();
    let mut last = None;
    for p in log {
        last = Some(p?);
    }
    last.map(|s| (s, count))
        .ok_or_else(|| CliError::Input("no data pass completed".into()))
}

pub fn estimate(a: &EstimateArgs) -> Result<PointOutput, CliError> {
    let x = match (a.x, a.unconditional) {
        (Some(_), true) => return Err(CliError::Input("--x and --unconditional exclude each other".into())),
        (None, false) => {
            return Err(CliError::Input(
                "--x is required for a conditional estimate (or pass --unconditional)".into(),
            ))
        }
        (x, _) => x,
    };
    if a.restarts == 0 {
        return Err(CliError::Input("--restarts must be at least 1".into()));
    }
    if a.restarts > 1 && a.input.as_os_str() == "-" {
        return Err(CliError::Input("--restarts above 1 needs a file input, not standard input".into()));
    }
    let cfg = a.schedule.config(x)?;

    let passes: Passes = Rc::default();
    let mut open = pass_opener(&a.input, &passes);
    let (point, summary) = if a.restarts == 1 {
        // a single random start needs only one pass, so stdin works too
        let cfg = cfg.with_init(Init::RandomRecord { seed: a.schedule.seed });
        let run = run_stream(open(), cfg);
        let (summary, _) = settle(&passes)?;
        let run = run?;
        let point = match a.schedule.estimator {
            Which::Averaged => run.z_bar,
            Which::RobbinsMonro => run.z,
        };
        (point, summary)
    } else {
        let outcome = multi_start_select(open, &cfg, a.restarts, a.schedule.seed);
        let (summary, _) = settle(&passes)?;
        let outcome = outcome?;
        let point = match a.schedule.estimator {
            Which::Averaged => outcome.averaged,
            Which::RobbinsMonro => outcome.robbins_monro,
        };
        (point, summary)
    };

    let mut metadata = vec![
        ("n".to_string(), summary.records.to_string()),
        ("x".to_string(), x.map(|v| v.to_string()).unwrap_or_else(|| "none".into())),
    ];
    a.schedule.metadata(&mut metadata);
    metadata.push(("restarts".into(), a.restarts.to_string()));
    metadata.push(("skipped_records".into(), summary.malformed.to_string()));
    Ok(PointOutput {
        values: point.into_vec(),
        metadata,
    })
}

pub fn baseline(a: &BaselineArgs) -> Result<PointOutput, CliError> {
    let kernel: Kernel = a.kernel.parse()?;
    let mut reader = ingest::open(&a.input)?;
    let mut xs = Vec::new();
    let mut points = Vec::new();
    for (x, y) in reader.by_ref() {
        xs.push(x);
        points.push(Point::new(y)?);
    }
    let summary = reader.finish()?;
    let sample = WeightedSample::localized(a.x, &xs, points, a.h, kernel)?;
    let fit = weiszfeld(&sample, a.tol, a.max_iter)?;
    let metadata = vec![
        ("n".to_string(), summary.records.to_string()),
        ("x".to_string(), a.x.to_string()),
        ("h".to_string(), a.h.to_string()),
        ("kernel".to_string(), kernel.to_string()),
        ("iterations".to_string(), fit.iterations.to_string()),
        ("converged".to_string(), fit.converged.to_string()),
        ("objective".to_string(), format_sig(fit.objective())),
        ("skipped_records".to_string(), summary.malformed.to_string()),
    ];
    Ok(PointOutput {
        values: fit.median.into_vec(),
        metadata,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub quantile: Option<f64>,
    pub x: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOutput {
    pub rows: Vec<ProfileRow>,
    pub dim: usize,
    /// Passes over the input, the quantile pass included.
    pub passes: usize,
    pub records: u64,
    pub skipped: u64,
}

pub fn profile(a: &ProfileArgs) -> Result<ProfileOutput, CliError> {
    let mut passes = 0;
    let (levels, targets): (Vec<Option<f64>>, Vec<f64>) = match (&a.quantiles, &a.x_values) {
        (Some(q), None) => {
            if a.input.as_os_str() == "-" {
                return Err(CliError::Input("--quantiles needs a file input; use --x-values with standard input".into()));
            }
            let mut reader = ingest::open(&a.input)?;
            let mut xs: Vec<f64> = reader.by_ref().map(|(x, _)| x).collect();
            reader.finish()?;
            passes += 1;
            let t = quantiles(&mut xs, q)?;
            (q.iter().copied().map(Some).collect(), t)
        }
        (None, Some(xv)) => (vec![None; xv.len()], xv.clone()),
        _ => return Err(CliError::Input("give exactly one of --quantiles and --x-values".into())),
    };
    let cfg = a
        .schedule
        .config(Some(targets.first().copied().unwrap_or(0.0)))?
        .with_init(Init::RandomRecord { seed: a.schedule.seed });

    let pass_log: Passes = Rc::default();
    let mut open = pass_opener(&a.input, &pass_log);
    let estimates = multi_target_run(open(), &cfg, &targets);
    let (summary, n) = settle(&pass_log)?;
    passes += n;
    let estimates = estimates?;
    let dim = estimates.first().map(|e| e.z.dim()).unwrap_or(0);
    let rows = estimates
        .into_iter()
        .zip(levels)
        .map(|(e, q)| ProfileRow {
            quantile: q,
            x: e.x,
            values: match a.schedule.estimator {
                Which::Averaged => e.z_bar.into_vec(),
                Which::RobbinsMonro => e.z.into_vec(),
            },
        })
        .collect();
    Ok(ProfileOutput {
        rows,
        dim,
        passes,
        records: summary.records,
        skipped: summary.malformed,
    })
}

/// Sample quantiles with linear interpolation between order statistics.
pub fn quantiles(xs: &mut [f64], levels: &[f64]) -> Result<Vec<f64>, CliError> {
    if xs.is_empty() {
        return Err(CliError::Input("no covariate values to take quantiles of".into()));
    }
    xs.sort_by(f64::total_cmp);
    levels
        .iter()
        .map(|&q| {
            if !(0.0..=1.0).contains(&q) {
                return Err(CliError::Input(format!("quantile level {q} is outside [0, 1]")));
            }
            let pos = q * (xs.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            Ok(xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo]))
        })
        .collect()
}

fn emit(path: Option<&Path>, out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn write_row(path: Option<&Path>, out: &mut dyn Write, values: &[f64]) -> Result<(), CliError> {
    let header: Vec<String> = (1..=values.len()).map(|j| format!("t{j}")).collect();
    let row: Vec<String> = values.iter().map(|v| format_sig(*v)).collect();
    emit(path, out, &format!("{}\n{}\n", header.join(","), row.join(",")))
}

fn write_meta(
    meta: Option<&Path>,
    output: Option<&Path>,
    err: &mut dyn Write,
    lines: &[(String, String)],
) -> Result<(), CliError> {
    let text: String = lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    let target = meta.map(Path::to_path_buf).or_else(|| {
        output.map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".meta");
            PathBuf::from(s)
        })
    });
    match target {
        Some(p) => fs::write(p, text)?,
        None => err.write_all(text.as_bytes())?,
    }
    Ok(())
}
