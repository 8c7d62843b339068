mod common;

use common::{state, ClosedForm};
use divcontagion::model::{identity, IntensityTable, ModelParams};
use divcontagion::recursion::solve_all;
use divcontagion::simulate::{simulate_policy, BarrierPolicy, SimConfig};
use divcontagion::vi_solver::Tolerances;
use rayon::ThreadPoolBuilder;

/// A single line with a negligible default intensity.
fn single_line() -> (ModelParams, ClosedForm) {
    let p = ModelParams {
        n: 1,
        drift: vec![0.1],
        vol: vec![0.07],
        corr: identity(1),
        discount: 0.2,
        weights: vec![1.0],
        intensity: IntensityTable::from_fn(1, |_, _| 1e-8),
    };
    let cf = ClosedForm::new(p.discount + 1e-8, 0.1, 0.07, 1.0);
    (p, cf)
}

#[test]
fn single_line_estimate_matches_classical_value() {
    let (p, cf) = single_line();
    let policy = BarrierPolicy::from_fn(1, |_, _| cf.m);
    let x0 = 0.5 * cf.m;
    let cfg = SimConfig::for_params(&p, 2000, 17);
    let r = simulate_policy(&p, &policy, &[x0], state("0"), &cfg).unwrap();
    let exact = cf.value(x0);
    assert!((r.estimate - exact).abs() <= 3.0 * r.std_error);
}

#[test]
fn antithetic_pairs_halve_the_variance() {
    let (p, cf) = single_line();
    let policy = BarrierPolicy::from_fn(1, |_, _| cf.m);
    let x0 = [0.5 * cf.m];
    let mut cfg = SimConfig::for_params(&p, 1000, 23);
    cfg.dt = 1e-2;
    let anti = simulate_policy(&p, &policy, &x0, state("0"), &cfg).unwrap();
    cfg.antithetic = false;
    cfg.paths = 2000;
    let plain = simulate_policy(&p, &policy, &x0, state("0"), &cfg).unwrap();
    assert_eq!(anti.paths_used, plain.paths_used);
    assert!(anti.std_error.powi(2) <= 0.5 * plain.std_error.powi(2));
}

fn fig1_quick(paths: usize, seed: u64) -> SimConfig {
    let mut cfg = SimConfig::for_params(&ModelParams::fig1(), paths, seed);
    cfg.dt = 1e-2;
    cfg
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let p = ModelParams::fig1();
    let sol = solve_all(&p, &Tolerances::default()).unwrap();
    let policy = BarrierPolicy::optimal(&sol);
    let cfg = fig1_quick(200, 99);
    let run = |threads: usize| {
        let pool = ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate_policy(&p, &policy, &[0.1, 0.05], state("00"), &cfg).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(1));
    let other = simulate_policy(&p, &policy, &[0.1, 0.05], state("00"), &fig1_quick(200, 100)).unwrap();
    assert_ne!(one.estimate, other.estimate);
}

#[test]
fn compensated_default_indicators_average_to_zero() {
    let mut p = ModelParams::fig1();
    p.intensity = IntensityTable::from_rule(&[0.05, 0.03], 3.0);
    let sol = solve_all(&p, &Tolerances::default()).unwrap();
    let r = simulate_policy(
        &p,
        &BarrierPolicy::optimal(&sol),
        &[0.1, 0.06],
        state("00"),
        &fig1_quick(2000, 5),
    )
    .unwrap();
    for stat in &r.martingale {
        assert!(stat.std_error > 0.0);
        assert!(stat.mean.abs() <= 3.0 * stat.std_error, "{stat:?}");
    }
}

#[test]
fn breakdown_adds_up_and_errors_are_positive() {
    let p = ModelParams::fig1();
    let sol = solve_all(&p, &Tolerances::default()).unwrap();
    let r = simulate_policy(
        &p,
        &BarrierPolicy::optimal(&sol),
        &[0.15, 0.1],
        state("00"),
        &fig1_quick(500, 3),
    )
    .unwrap();
    let sum: f64 = r.breakdown.iter().sum();
    assert!((sum - r.estimate).abs() <= 1e-12 * r.estimate);
    assert!(r.std_error > 0.0);
    assert_eq!(r.paths_used, 1000);
    assert!(r.breakdown.iter().all(|&b| b >= 0.0));
    assert!(r.tail_bound < 1e-8);
}

#[test]
fn defaulted_start_pays_only_survivors() {
    let p = ModelParams::fig1();
    let sol = solve_all(&p, &Tolerances::default()).unwrap();
    let r = simulate_policy(
        &p,
        &BarrierPolicy::optimal(&sol),
        &[0.15, 0.1],
        state("10"),
        &fig1_quick(200, 3),
    )
    .unwrap();
    assert_eq!(r.breakdown[0], 0.0);
    assert!(r.breakdown[1] > 0.0);
    let all = simulate_policy(
        &p,
        &BarrierPolicy::optimal(&sol),
        &[0.15, 0.1],
        state("11"),
        &fig1_quick(10, 3),
    )
    .unwrap();
    assert_eq!(all.estimate, 0.0);
}

#[test]
fn invalid_inputs_are_rejected() {
    let p = ModelParams::fig1();
    let sol = solve_all(&p, &Tolerances::default()).unwrap();
    let policy = BarrierPolicy::optimal(&sol);
    let z = state("00");
    let mut cfg = fig1_quick(10, 1);
    assert!(simulate_policy(&p, &policy, &[-0.1, 0.1], z, &cfg).is_err());
    assert!(simulate_policy(&p, &policy, &[0.1], z, &cfg).is_err());
    assert!(simulate_policy(&p, &policy.scaled(f64::NAN), &[0.1, 0.1], z, &cfg).is_err());
    cfg.dt = cfg.horizon;
    assert!(simulate_policy(&p, &policy, &[0.1, 0.1], z, &cfg).is_err());
    let bad = p.with_corr(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
    assert!(simulate_policy(&bad, &policy, &[0.1, 0.1], z, &fig1_quick(10, 1)).is_err());
}
