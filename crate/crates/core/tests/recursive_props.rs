use std::cell::Cell;
use std::rc::Rc;

use geomed::simulation::{marginal_density, seeded_rng, SimRng};
use geomed::{
    multi_start_select, multi_target_run, run_stream, BrownianModel, EstimatorConfig,
    EstimatorState, Init, Kernel, Norm, Point, Schedule,
};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn decaying(c: f64, e: f64) -> Schedule {
    Schedule::decaying(c, e).unwrap()
}

fn pt(v: Vec<f64>) -> Point {
    Point::new(v).unwrap()
}

proptest! {
    #[test]
    fn running_average_equals_batch_average(
        ys in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..80),
        xs in prop::collection::vec(-1.0f64..1.0, 80),
        burn_in in 0u64..10,
    ) {
        let cfg = EstimatorConfig::conditional(0.1, decaying(2.0, 0.75), decaying(1.0, 0.2))
            .with_burn_in(burn_in);
        let mut state = EstimatorState::new(cfg, pt(ys[0].clone()));
        let mut iterates = vec![state.z().clone()];
        for (y, x) in ys[1..].iter().zip(&xs) {
            state.step(*x, y).unwrap();
            iterates.push(state.z().clone());
        }
        let kept: Vec<&Point> = iterates.iter().skip(burn_in as usize).collect();
        prop_assume!(!kept.is_empty());
        for j in 0..3 {
            let batch = kept.iter().map(|p| p[j]).sum::<f64>() / kept.len() as f64;
            let online = state.z_bar()[j];
            prop_assert!((online - batch).abs() <= 1e-10 * batch.abs().max(1.0), "{online} vs {batch}");
        }
        prop_assert_eq!(state.n_avg(), kept.len() as u64);
    }

    #[test]
    fn step_length_is_bounded(
        z in prop::collection::vec(-5.0f64..5.0, 4),
        y in prop::collection::vec(-5.0f64..5.0, 4),
        x_new in -2.0f64..2.0,
        n in 1u64..1000,
        kernel in prop_oneof![Just(Kernel::Gaussian), Just(Kernel::Epanechnikov), Just(Kernel::Uniform)],
    ) {
        let step = decaying(1.5, 0.7);
        let bw = decaying(0.8, 0.3);
        let cfg = EstimatorConfig::conditional(0.2, step, bw).with_kernel(kernel);
        let mut s = EstimatorState::new(cfg, pt(z.clone()));
        // walk the counter up to n with no-op records
        for _ in 1..n {
            s.rm_update(0.2, &z).unwrap();
        }
        let before = s.z().clone();
        s.rm_update(x_new, &y).unwrap();
        let moved = before.distance(s.z()).unwrap();
        let bound = step.eval(n).unwrap() * kernel.sup() / bw.eval(n).unwrap();
        prop_assert!(moved <= bound * (1.0 + 1e-12), "{moved} > {bound}");

        let mut u = EstimatorState::new(EstimatorConfig::unconditional(step), pt(z.clone()));
        u.rm_update(0.0, &y).unwrap();
        prop_assert!(pt(z).distance(u.z()).unwrap() <= step.eval(1).unwrap() * (1.0 + 1e-12));
    }
}

#[test]
fn zero_kernel_weight_leaves_iterate_untouched() {
    let cfg = EstimatorConfig::conditional(0.0, decaying(1.0, 0.5), Schedule::fixed(0.1).unwrap())
        .with_kernel(Kernel::Epanechnikov);
    let mut s = EstimatorState::new(cfg, pt(vec![0.25, -0.5]));
    s.rm_update(3.0, &[10.0, 10.0]).unwrap();
    assert_eq!(s.z().coords(), &[0.25, -0.5]);
    assert_eq!(s.n(), 2);
}

#[test]
fn single_target_run_matches_run_stream() {
    let model = BrownianModel::new(8).unwrap();
    let data = model.sample_records(500, &mut seeded_rng(1));
    let cfg = EstimatorConfig::conditional(0.39, decaying(1.0, 0.9), decaying(1.0, 0.3));
    let stream = run_stream(data.iter().map(|r| (r.x, &r.y)), cfg.clone()).unwrap();
    let multi = multi_target_run(data.iter().map(|r| (r.x, &r.y)), &cfg, &[0.39]).unwrap();
    assert_eq!(multi[0].z, stream.z);
    assert_eq!(multi[0].z_bar, stream.z_bar);
}

#[test]
fn opposite_targets_give_mirror_images() {
    let model = BrownianModel::new(20).unwrap();
    let data = model.sample_records(40_000, &mut seeded_rng(11));
    let cfg = EstimatorConfig::conditional(0.0, decaying(1.0, 0.75), decaying(1.0, 0.3)).with_norm(Norm::Grid);
    let out = multi_target_run(data.iter().map(|r| (r.x, &r.y)), &cfg, &[0.39, -0.39]).unwrap();
    let plus = &out[0].z_bar;
    let minus = &out[1].z_bar;
    let truth = model.median_curve(0.39);
    let gap: f64 = plus.iter().zip(minus.iter()).map(|(a, b)| (a + b).powi(2)).sum::<f64>();
    let size: f64 = truth.iter().map(|v| v * v).sum::<f64>();
    assert!(gap.sqrt() < 0.25 * size.sqrt(), "gap {} size {}", gap.sqrt(), size.sqrt());
}

#[test]
fn error_shrinks_along_the_stream() {
    let model = BrownianModel::new(20).unwrap();
    let m = model.median_curve(0.39);
    let cfg = EstimatorConfig::conditional(0.39, decaying(1.0, 1.0), decaying(1.0, 0.3)).with_norm(Norm::Grid);
    let mut early = Vec::new();
    let mut late = Vec::new();
    for r in 0..20u64 {
        let mut rng = geomed::bench::replicate_rng(77, r);
        let (_, y1) = model.sample_pair(&mut rng);
        let mut s = EstimatorState::new(cfg.clone(), y1);
        while s.n() < 100_000 {
            let (x, y) = model.sample_pair(&mut rng);
            s.step(x, &y).unwrap();
            if s.n() == 1000 {
                early.push(s.z().distance(&m).unwrap());
            }
        }
        late.push(s.z().distance(&m).unwrap());
    }
    let med = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        0.5 * (v[9] + v[10])
    };
    let (e, l) = (med(&mut early), med(&mut late));
    assert!(l < e, "median error {l} at 1e5 vs {e} at 1e3");
}

#[test]
fn expected_step_is_bounded_by_peak_density() {
    let model = BrownianModel::new(10).unwrap();
    let p_max = marginal_density(0.0);
    let mut rng: SimRng = seeded_rng(3);
    let n = 100_000;
    let draws: Vec<(f64, Point)> = (0..n).map(|_| model.sample_pair(&mut rng)).collect();
    let alphas = [
        Point::zeros(10),
        model.median_curve(0.39),
        pt((0..10).map(|j| j as f64 * 0.3).collect()),
    ];
    for h in [0.05, 0.15, 0.5] {
        for alpha in &alphas {
            let mut sum = [0.0; 10];
            let mut sq = [0.0; 10];
            for (x, y) in &draws {
                let w = Kernel::Gaussian.eval((x - 0.39) / h) / h;
                let u = geomed::direction(alpha, y).unwrap();
                for j in 0..10 {
                    sum[j] += w * u[j];
                    sq[j] += (w * u[j]).powi(2);
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
            let var: f64 = (0..10).map(|j| sq[j] / n as f64 - mean[j].powi(2)).sum();
            let se = (var / n as f64).sqrt();
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= p_max + 3.0 * se, "h {h}: |Phi_h| = {norm}, bound {}", p_max + 3.0 * se);
        }
    }
}

#[test]
fn symmetric_law_has_median_at_centre() {
    let mut rng = seeded_rng(8);
    let data: Vec<Vec<f64>> = (0..100_000)
        .map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let cfg = EstimatorConfig::unconditional(decaying(1.0, 0.75));
    let est = run_stream(data.iter().map(|y| (0.0, y)), cfg).unwrap();
    assert!(est.z_bar.norm() <= 0.05, "{:?}", est.z_bar);
}

/// Response wrapper that tracks how many records are alive at once.
struct Tracked {
    y: Vec<f64>,
    live: Rc<Cell<usize>>,
}

impl AsRef<[f64]> for Tracked {
    fn as_ref(&self) -> &[f64] {
        &self.y
    }
}

impl Drop for Tracked {
    fn drop(&mut self) {
        self.live.set(self.live.get() - 1);
    }
}

fn tracked_stream(
    n: usize,
    seed: u64,
    live: Rc<Cell<usize>>,
    peak: Rc<Cell<usize>>,
) -> impl Iterator<Item = (f64, Tracked)> {
    let model = BrownianModel::new(5).unwrap();
    let mut rng = seeded_rng(seed);
    (0..n).map(move |_| {
        let (x, y) = model.sample_pair(&mut rng);
        live.set(live.get() + 1);
        peak.set(peak.get().max(live.get()));
        (x, Tracked { y: y.into_vec(), live: Rc::clone(&live) })
    })
}

#[test]
fn streaming_runs_hold_one_record_at_a_time() {
    let live = Rc::new(Cell::new(0));
    let peak = Rc::new(Cell::new(0));
    let cfg = EstimatorConfig::conditional(0.0, decaying(1.0, 0.75), decaying(1.0, 0.3));
    let targets = [-0.5, 0.0, 0.5, 0.9];
    multi_target_run(tracked_stream(20_000, 1, live.clone(), peak.clone()), &cfg, &targets).unwrap();
    assert_eq!(peak.get(), 1);
    assert_eq!(live.get(), 0);

    let random = cfg.clone().with_init(Init::RandomRecord { seed: 4 });
    run_stream(tracked_stream(20_000, 1, live.clone(), peak.clone()), random).unwrap();
    assert_eq!(peak.get(), 1);

    let out = multi_start_select(
        || tracked_stream(5_000, 1, live.clone(), peak.clone()),
        &cfg,
        3,
        9,
    )
    .unwrap();
    assert_eq!(out.records, 5_000);
    assert_eq!(peak.get(), 1);
}
