//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::{convolution_gap, random_pair, random_piece, state, ClosedForm};
use divcontagion::expfun::{ExpPolyPiece, ExpPolyPiecewise};
use divcontagion::explicit2::solve_explicit2;
use divcontagion::model::{identity, IntensityTable, ModelParams};
use divcontagion::recursion::{solve_all, PolicySolution};
use divcontagion::simulate::{compare_policies, pooled_se, simulate_policy, BarrierPolicy, SimConfig, SimResult};
use divcontagion::verify::{verify_all, GridSpec};
use divcontagion::vi_solver::{solve, OperatorCoeffs, Tolerances};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MC_PAIRS: usize = 50_000;
const MC_PAIRS_COMPARE: usize = 5_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn tol() -> Tolerances {
    Tolerances::default()
}

fn config(name: &str) -> ModelParams {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    ModelParams::from_json_file(&path).unwrap()
}

fn half_barriers(sol: &PolicySolution) -> Vec<f64> {
    let z = state("00");
    (0..2).map(|i| sol.barrier(i, z).unwrap() / 2.0).collect()
}

fn within(elapsed: Duration, limit: f64) -> bool {
    elapsed.as_secs_f64() < limit
}

fn single_survivor() -> Outcome {
    let t = Instant::now();
    let (mu, nu, sigma, alpha) = (0.05 + 0.04, 0.1, 0.07, 0.4);
    let sol = solve(&OperatorCoeffs::new(mu, nu, sigma, alpha).unwrap(), &ExpPolyPiecewise::zero(), &tol()).unwrap();
    let elapsed = t.elapsed();
    let cf = ClosedForm::new(mu, nu, sigma, alpha);
    let unit = ClosedForm::new(mu, nu, sigma, 1.0);
    let dm = (sol.m - cf.m).abs();
    let dc = (sol.c - alpha * unit.c).abs();
    let df = (0..100)
        .map(|k| {
            let x = 2.0 * cf.m * k as f64 / 99.0;
            (sol.value(x) - cf.value(x)).abs()
        })
        .fold(0.0, f64::max);
    let lattice = solve_all(&ModelParams::fig1(), &tol()).unwrap();
    let dl = (lattice.barrier(0, state("01")).unwrap() - cf.m).abs();
    outcome(
        dm <= 1e-10 && dc <= 1e-10 && df <= 1e-10 && dl <= 1e-10 && (cf.m - 0.18118).abs() < 5e-6 && within(elapsed, 1.0),
        format!("m={:.12} closed={:.12} |dm|={dm:.1e} |dC|={dc:.1e} max|df|={df:.1e} lattice |dm|={dl:.1e} in {elapsed:.2?}", sol.m, cf.m),
    )
}

fn explicit_pair_gap(p: &ModelParams) -> f64 {
    let sol = solve_all(p, &tol()).unwrap();
    let ex = solve_explicit2(p).unwrap();
    let z = state("00");
    let mut worst: f64 = 0.0;
    for (i, part) in ex.parts.iter().enumerate() {
        let upper = 2.0 * sol.barrier(i, z).unwrap().max(part.m);
        for k in 0..200 {
            let x = upper * k as f64 / 199.0;
            worst = worst.max((sol.component(i, x, z) - part.value(x, 0)).abs());
        }
    }
    worst
}

fn explicit_pair() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = explicit_pair_gap(&ModelParams::fig1());
    let fig1 = worst;
    for _ in 0..20 {
        worst = worst.max(explicit_pair_gap(&random_pair(&mut rng)));
    }
    let elapsed = t.elapsed();
    outcome(
        worst <= 1e-6 && within(elapsed, 5.0),
        format!("fig1 max|diff|={fig1:.1e}, over 21 configs {worst:.1e} in {elapsed:.2?}"),
    )
}

fn orderings() -> Outcome {
    let t = Instant::now();
    let sol = solve_all(&ModelParams::fig1(), &tol()).unwrap();
    let b = |i, z| sol.barrier(i, state(z)).unwrap();
    let strict = b(0, "00") > b(0, "01") && b(1, "00") > b(1, "10");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut broken = 0;
    for _ in 0..100 {
        let s = solve_all(&random_pair(&mut rng), &tol()).unwrap();
        let b = |i, z| s.barrier(i, state(z)).unwrap();
        if !(b(0, "00") >= b(0, "01") && b(1, "00") >= b(1, "10")) {
            broken += 1;
        }
    }
    let elapsed = t.elapsed();
    outcome(
        strict && broken == 0 && within(elapsed, 30.0),
        format!(
            "fig1 m1: {:.6} > {:.6}, m2: {:.6} > {:.6}; {broken}/100 random configs out of order, in {elapsed:.2?}",
            b(0, "00"),
            b(0, "01"),
            b(1, "00"),
            b(1, "10")
        ),
    )
}

fn single_line() -> ModelParams {
    ModelParams {
        n: 1,
        drift: vec![0.1],
        vol: vec![0.07],
        corr: identity(1),
        discount: 0.05,
        weights: vec![1.0],
        intensity: IntensityTable::from_fn(1, |_, _| 0.02),
    }
}

fn residual_suite() -> Outcome {
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, p) in [("N=1", single_line()), ("N=2", ModelParams::fig1()), ("N=3", config("chain3.json"))] {
        let sol = solve_all(&p, &tol()).unwrap();
        let report = verify_all(&sol, &GridSpec::default(), &tol());
        let v = |name: &str| report.get(name).unwrap().max_violation;
        let residual = v("vi_terms_nonpositive")
            .max(v("vi_max_attained"))
            .max(v("generator_vanishes_in_continuation"))
            .max(v("gradient_vanishes_in_payout"));
        let (fit1, fit2, conc) = (v("smooth_fit_first"), v("smooth_fit_second"), v("concavity"));
        ok &= residual <= 1e-6 && fit1 <= 1e-8 && fit2 <= 1e-6 && conc <= 1e-10 && report.all_hard_passed();
        parts.push(format!("{label}: residual {residual:.1e} fit {fit1:.1e}/{fit2:.1e} concavity {conc:.1e}"));
    }
    let elapsed = t.elapsed();
    outcome(ok && within(elapsed, 60.0), format!("{} in {elapsed:.2?}", parts.join("; ")))
}

fn mc_config(p: &ModelParams, pairs: usize, seed: u64) -> SimConfig {
    let cfg = SimConfig::for_params(p, pairs, seed);
    assert!(p.discount * cfg.horizon >= 20.0 && cfg.dt == 1e-3 && cfg.antithetic);
    cfg
}

fn monte_carlo() -> (Outcome, SimResult) {
    let t = Instant::now();
    let p = ModelParams::fig1();
    let sol = solve_all(&p, &tol()).unwrap();
    let x0 = half_barriers(&sol);
    let z = state("00");
    let r = simulate_policy(&p, &BarrierPolicy::optimal(&sol), &x0, z, &mc_config(&p, MC_PAIRS, 1)).unwrap();
    let exact = sol.value(&x0, z);
    let gap = (r.estimate - exact).abs();
    let allowed = (3.0 * r.std_error).max(0.01 * exact);
    let o = outcome(
        gap <= allowed && r.paths_used == 2 * MC_PAIRS,
        format!(
            "estimate {:.6} ± {:.1e} vs analytic {exact:.6}: |gap| {gap:.1e} <= {allowed:.1e}, {} paths, {} bound violations, in {:.1?}",
            r.estimate,
            r.std_error,
            r.paths_used,
            r.bound_violations,
            t.elapsed()
        ),
    );
    (o, r)
}

fn correlation_free() -> Outcome {
    let t = Instant::now();
    let base = ModelParams::fig1();
    let mut records = Vec::new();
    let mut runs = Vec::new();
    for rho in [-0.5, 0.0, 0.5] {
        let p = base.with_corr(vec![vec![1.0, rho], vec![rho, 1.0]]);
        let sol = solve_all(&p, &tol()).unwrap();
        records.push(sol.to_record());
        let x0 = half_barriers(&sol);
        let cfg = mc_config(&p, MC_PAIRS_COMPARE, 6);
        runs.push(simulate_policy(&p, &BarrierPolicy::optimal(&sol), &x0, state("00"), &cfg).unwrap());
    }
    let identical = records.windows(2).all(|w| w[0] == w[1]);
    let mut worst: f64 = 0.0;
    for a in 0..3 {
        for b in a + 1..3 {
            worst = worst.max((runs[a].estimate - runs[b].estimate).abs() / pooled_se(&runs[a], &runs[b]));
        }
    }
    outcome(
        identical && worst <= 3.0,
        format!(
            "solver records identical: {identical}; estimates {:.5} {:.5} {:.5}, worst gap {worst:.2} pooled se, in {:.1?}",
            runs[0].estimate,
            runs[1].estimate,
            runs[2].estimate,
            t.elapsed()
        ),
    )
}

fn dominance() -> Outcome {
    let t = Instant::now();
    let p = ModelParams::fig1();
    let sol = solve_all(&p, &tol()).unwrap();
    let x0 = half_barriers(&sol);
    let cfg = mc_config(&p, MC_PAIRS_COMPARE, 7);
    let rows = compare_policies(&p, &sol, &[1.0, 0.6, 0.8, 1.2, 1.4], &x0, state("00"), &cfg).unwrap();
    let best = &rows[0].result;
    let mut ok = true;
    let mut parts = vec![format!("1.0: {:.5}", best.estimate)];
    for row in &rows[1..] {
        let margin = (best.estimate - row.result.estimate) / pooled_se(best, &row.result);
        ok &= margin >= -3.0;
        parts.push(format!("{}: {:.5} ({margin:+.1} se)", row.scale, row.result.estimate));
    }
    outcome(ok, format!("{} in {:.1?}", parts.join(", "), t.elapsed()))
}

/// Five-point central difference. The three-point rule has truncation error
/// `h²f‴/6`, which swamps `f′ = 3cx²` for a lone cubic term near 0.
fn central_difference(p: &ExpPolyPiece, x: f64, h: f64) -> f64 {
    let f = |t: f64| p.eval(t).unwrap();
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

fn properties(mc: &SimResult) -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut notes = Vec::new();
    let mut ok = true;

    // derivative against central differences
    let mut worst_fd: f64 = 0.0;
    for _ in 0..1000 {
        let terms = (0..rng.random_range(1..5))
            .map(|_| {
                divcontagion::expfun::ExpPolyTerm::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0..=3),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect();
        let p = ExpPolyPiece::new(terms);
        let x = rng.random_range(0.0..10.0);
        let d = p.deriv();
        let exact = d.eval(x).unwrap();
        let fd = central_difference(&p, x, 1e-5);
        let scale = exact.abs().max(d.abs_sum(x));
        if scale > 0.0 {
            worst_fd = worst_fd.max((fd - exact).abs() / scale);
        }
    }
    ok &= worst_fd <= 1e-6;
    notes.push(format!("fd rel {worst_fd:.1e}"));

    let conv = convolution_gap(&mut rng, 50);
    ok &= conv <= 1e-9;
    notes.push(format!("convolution {conv:.1e}"));

    let mut trips = true;
    for _ in 0..200 {
        let cut = rng.random_range(0.1..3.0);
        let f = ExpPolyPiecewise::new(vec![0.0, cut], vec![random_piece(&mut rng, 3.0), random_piece(&mut rng, 3.0)]).unwrap();
        trips &= ExpPolyPiecewise::from_record(&f.to_record()).unwrap() == f;
        let g = f.antideriv().unwrap().deriv(1);
        for k in 0..10 {
            let x = 0.35 * k as f64 + 0.01;
            let scale = f.piece_at(x).abs_sum(x).max(1.0);
            trips &= (g.eval(x).unwrap() - f.eval(x).unwrap()).abs() <= 1e-9 * scale;
        }
    }
    let sol = solve_all(&ModelParams::fig1(), &tol()).unwrap();
    let policy = divcontagion::recursion::parse_policy_record(&sol.to_record()).unwrap();
    trips &= policy.iter().all(|r| sol.get(r.subsidiary, r.state).unwrap().f == r.f);
    ok &= trips;
    notes.push(format!("round trips {}", if trips { "exact" } else { "broken" }));

    let mut marts = mc.martingale.clone();
    let mut p = ModelParams::fig1();
    p.intensity = IntensityTable::from_rule(&[0.05, 0.03], 3.0);
    let s = solve_all(&p, &tol()).unwrap();
    let mut cfg = SimConfig::for_params(&p, 5000, 9);
    cfg.dt = 1e-2;
    let r = simulate_policy(&p, &BarrierPolicy::optimal(&s), &half_barriers(&s), state("00"), &cfg).unwrap();
    marts.extend(r.martingale);
    let worst_z = marts.iter().map(|m| m.mean.abs() / m.std_error).fold(0.0, f64::max);
    ok &= worst_z <= 3.0;
    notes.push(format!("martingale worst {worst_z:.2} se"));

    outcome(ok, format!("{} in {:.1?}", notes.join(", "), t.elapsed()))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("{tag} [{id}] {name}: {}", o.detail);
    };
    report(1, "single-survivor closed form", single_survivor());
    report(2, "two-line explicit formulas", explicit_pair());
    report(3, "barrier orderings", orderings());
    report(4, "variational inequality residuals", residual_suite());
    let (o, mc) = monte_carlo();
    report(5, "Monte Carlo agreement", o);
    report(6, "correlation independence", correlation_free());
    report(7, "optimal barriers dominate", dominance());
    report(8, "property suites", properties(&mc));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
