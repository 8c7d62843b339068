//! Executable checks of a solved group: the full variational inequality on
//! grids, smooth fit, concavity, barrier orderings and finite-difference
//! cross-checks of the analytic derivatives.
//!
//! Each registered check appears exactly once in a [`VerificationReport`],
//! carrying the worst violation over all states and subsidiaries.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::DefaultState;
use crate::recursion::PolicySolution;
use crate::vi_solver::{Tolerances, VISolution};

/// Survivor counts above this are checked on random points instead of a
/// tensor grid.
pub const TENSOR_MAX_SURVIVORS: usize = 3;

/// Where the checks are evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    /// Points per axis on `[0, max barrier + 1]`.
    pub points: usize,
    /// Random points per state when a tensor grid is too large.
    pub samples: usize,
    /// Central finite-difference step.
    pub fd_step: f64,
    /// Finite differences skip points this close to a breakpoint.
    pub fd_exclusion: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: 500,
            samples: 10_000,
            fd_step: 1e-5,
            fd_exclusion: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckEntry {
    pub name: &'static str,
    /// Hard checks fail the run; soft ones are informational.
    pub hard: bool,
    pub max_violation: f64,
    pub tolerance: f64,
    pub location: String,
}

impl CheckEntry {
    pub fn passed(&self) -> bool {
        self.max_violation <= self.tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerificationReport {
    pub entries: Vec<CheckEntry>,
}

impl VerificationReport {
    pub fn get(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn hard_failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.iter().filter(|e| e.hard && !e.passed())
    }

    pub fn all_hard_passed(&self) -> bool {
        self.hard_failures().next().is_none()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,hard,passed,max_violation,tolerance,location\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{},{},{:.16e},{:.16e},{}",
                e.name,
                e.hard,
                e.passed(),
                e.max_violation,
                e.tolerance,
                e.location
            );
        }
        s
    }
}

/// Running maximum of a violation and where it happened; the first of
/// equal maxima wins.
#[derive(Clone, Debug)]
struct Worst {
    value: f64,
    location: String,
}

impl Worst {
    fn none() -> Self {
        Worst {
            value: 0.0,
            location: "-".into(),
        }
    }

    fn update(&mut self, v: f64, location: impl FnOnce() -> String) {
        // NaN must register as a failure
        if v > self.value || (v.is_nan() && !self.value.is_nan()) {
            self.value = v;
            self.location = location();
        }
    }

    fn merge(mut self, other: Worst) -> Worst {
        self.update(other.value, || other.location);
        self
    }

    fn entry(self, name: &'static str, hard: bool, tolerance: f64) -> CheckEntry {
        CheckEntry {
            name,
            hard,
            max_violation: self.value,
            tolerance,
            location: self.location,
        }
    }
}

fn fold(items: Vec<Worst>) -> Worst {
    items.into_iter().fold(Worst::none(), Worst::merge)
}

fn axis(grid: &GridSpec, upper: f64) -> Vec<f64> {
    let k = grid.points.max(2);
    (0..k).map(|j| upper * j as f64 / (k - 1) as f64).collect()
}

/// Upper end of the grid in state `z`.
fn grid_upper(sol: &PolicySolution, z: DefaultState) -> f64 {
    sol.max_barrier(z) + 1.0
}

/// `A_i f_i(x, z) + Σ_{l≠i} λ_l(z) f_i(x, z^l)`, with the source rebuilt from
/// the lower-level solutions rather than read back from the solver.
fn axis_generator(sol: &PolicySolution, i: usize, z: DefaultState, x: f64) -> f64 {
    let p = sol.params();
    let v = sol.get(i, z).expect("survivor solved");
    let mut g = -v.coeffs.mu * v.value(x) + p.drift[i] * v.deriv1(x) + 0.5 * p.vol[i] * p.vol[i] * v.deriv2(x);
    for l in z.surviving() {
        if l != i {
            g += p.intensity.get(l, z) * sol.component(i, x, z.with_default(l).unwrap());
        }
    }
    g
}

struct AxisData {
    g: Vec<f64>,
    grad: Vec<f64>,
    below: Vec<bool>,
    above: Vec<bool>,
}

fn fmt_point(z: DefaultState, xs: &[f64]) -> String {
    let coords: Vec<String> = xs.iter().map(|x| format!("{x:.6}")).collect();
    format!("state {z} x=({})", coords.join(" "))
}

/// Full-system variational inequality checks (a)–(d) plus the symbolic
/// mixed-partial entry.
pub fn check_hjbvi(sol: &PolicySolution, grid: &GridSpec, tol: &Tolerances) -> Vec<CheckEntry> {
    let n = sol.n();
    let states: Vec<DefaultState> = (0..1u32 << n).map(|m| DefaultState::new(n, m)).collect();
    let per_state: Vec<[Worst; 4]> = states
        .par_iter()
        .map(|&z| check_state(sol, z, grid))
        .collect();
    let mut cols: [Vec<Worst>; 4] = Default::default();
    for w in per_state {
        for (c, v) in cols.iter_mut().zip(w) {
            c.push(v);
        }
    }
    let [a, b, c, d] = cols.map(fold);
    vec![
        a.entry("vi_terms_nonpositive", true, tol.residual),
        b.entry("vi_max_attained", true, tol.residual),
        c.entry("generator_vanishes_in_continuation", true, tol.residual),
        d.entry("gradient_vanishes_in_payout", true, tol.residual),
        // f is a sum of one-dimensional functions, so ∂²f/∂x_i∂x_j ≡ 0 for i ≠ j
        Worst::none().entry("mixed_partials_zero", true, 0.0),
    ]
}

fn check_state(sol: &PolicySolution, z: DefaultState, grid: &GridSpec) -> [Worst; 4] {
    let alive = z.surviving();
    let mut w: [Worst; 4] = [Worst::none(), Worst::none(), Worst::none(), Worst::none()];
    if alive.is_empty() {
        return w;
    }
    let p = sol.params();
    let upper = grid_upper(sol, z);
    let xs = axis(grid, upper);
    let eval_point = |i: usize, x: f64| {
        let v = sol.get(i, z).unwrap();
        (axis_generator(sol, i, z, x), p.weights[i] - v.deriv1(x), x <= v.m, x >= v.m)
    };

    let mut visit = |pt: &[f64], vals: &[(f64, f64, bool, bool)]| {
        let gen: f64 = vals.iter().map(|v| v.0).sum();
        let grad_max = vals.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
        let loc = || fmt_point(z, pt);
        w[0].update(gen.max(grad_max), loc);
        w[1].update(-gen.max(grad_max), loc);
        if vals.iter().all(|v| v.2) {
            w[2].update(gen.abs(), loc);
        }
        for v in vals {
            if v.3 {
                w[3].update(v.1.abs(), loc);
            }
        }
    };

    if alive.len() <= TENSOR_MAX_SURVIVORS {
        let data: Vec<AxisData> = alive
            .iter()
            .map(|&i| {
                let vals: Vec<_> = xs.iter().map(|&x| eval_point(i, x)).collect();
                AxisData {
                    g: vals.iter().map(|v| v.0).collect(),
                    grad: vals.iter().map(|v| v.1).collect(),
                    below: vals.iter().map(|v| v.2).collect(),
                    above: vals.iter().map(|v| v.3).collect(),
                }
            })
            .collect();
        let k = xs.len();
        let s = alive.len();
        let mut idx = vec![0usize; s];
        let mut pt = vec![0.0; s];
        let mut vals = vec![(0.0, 0.0, false, false); s];
        loop {
            for a in 0..s {
                let j = idx[a];
                pt[a] = xs[j];
                let d = &data[a];
                vals[a] = (d.g[j], d.grad[j], d.below[j], d.above[j]);
            }
            visit(&pt, &vals);
            let mut a = 0;
            while a < s {
                idx[a] += 1;
                if idx[a] < k {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
            if a == s {
                break;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(z.mask() as u64);
        let mut pt = vec![0.0; alive.len()];
        let mut vals = vec![(0.0, 0.0, false, false); alive.len()];
        for _ in 0..grid.samples {
            for (a, &i) in alive.iter().enumerate() {
                pt[a] = rng.random::<f64>() * upper;
                vals[a] = eval_point(i, pt[a]);
            }
            visit(&pt, &vals);
        }
    }
    w
}

fn left_piece_derivs(v: &VISolution) -> (f64, f64) {
    let pieces = v.f.all_pieces();
    let below = &pieces[pieces.len() - 2];
    let d1 = below.deriv();
    let d2 = d1.deriv();
    (
        d1.eval(v.m).unwrap_or(f64::NAN),
        d2.eval(v.m).unwrap_or(f64::NAN),
    )
}

fn tasks(sol: &PolicySolution) -> Vec<(usize, DefaultState)> {
    let n = sol.n();
    (0..1u32 << n)
        .map(|m| DefaultState::new(n, m))
        .flat_map(|z| z.surviving().into_iter().map(move |i| (i, z)))
        .collect()
}

fn at(i: usize, z: DefaultState, x: f64) -> String {
    format!("state {z} subsidiary {} x={x:.6}", i + 1)
}

/// Boundary value, smooth fit, concavity and monotonicity of every `f_i`.
pub fn check_shape(sol: &PolicySolution, grid: &GridSpec, tol: &Tolerances) -> Vec<CheckEntry> {
    let per: Vec<[Worst; 4]> = tasks(sol)
        .par_iter()
        .map(|&(i, z)| {
            let v = sol.get(i, z).unwrap();
            let alpha = sol.params().weights[i];
            let mut w = [Worst::none(), Worst::none(), Worst::none(), Worst::none()];
            w[0].update(v.value(0.0).abs(), || at(i, z, 0.0));
            let (d1, d2) = left_piece_derivs(v);
            w[1].update((d1 - alpha).abs(), || at(i, z, v.m));
            w[2].update(d2.abs(), || at(i, z, v.m));
            for x in axis(grid, grid_upper(sol, z)) {
                w[3].update(v.deriv2(x), || at(i, z, x));
            }
            w
        })
        .collect();
    let mut cols: [Vec<Worst>; 4] = Default::default();
    for w in per {
        for (c, v) in cols.iter_mut().zip(w) {
            c.push(v);
        }
    }
    let [a, b, c, d] = cols.map(fold);
    vec![
        a.entry("boundary_value", true, 1e-12),
        b.entry("smooth_fit_first", true, tol.smooth_fit),
        c.entry("smooth_fit_second", true, tol.smooth_fit_second),
        d.entry("concavity", true, tol.concavity),
    ]
}

/// `m_i(z) ≥ m_i(z^l)` for every single-default step; hard for pairs,
/// informational for larger groups.
pub fn check_orderings(sol: &PolicySolution) -> Vec<CheckEntry> {
    let mut w = Worst::none();
    for (i, z) in tasks(sol) {
        for l in z.surviving() {
            if l == i {
                continue;
            }
            let lower = z.with_default(l).unwrap();
            let (hi, lo) = (sol.barrier(i, z).unwrap(), sol.barrier(i, lower).unwrap());
            w.update(lo - hi, || {
                format!("subsidiary {} states {z} -> {lower}", i + 1)
            });
        }
    }
    vec![w.entry("barrier_ordering", sol.n() == 2, 1e-12)]
}

/// Whether `x` is at least `gap` away from all breakpoints.
fn clear_of(breaks: &[f64], gap: f64, x: f64) -> bool {
    breaks.iter().all(|b| (x - b).abs() >= gap)
}

/// Analytic derivatives against central differences, C² continuity at the
/// barrier and the exactly affine tail.
pub fn check_derivatives(sol: &PolicySolution, grid: &GridSpec) -> Vec<CheckEntry> {
    let h = grid.fd_step;
    let per: Vec<[Worst; 4]> = tasks(sol)
        .par_iter()
        .map(|&(i, z)| {
            let v = sol.get(i, z).unwrap();
            let f = |x: f64| v.value(x);
            let d1 = v.f.deriv(1);
            let d2 = v.f.deriv(2);
            let mut w = [Worst::none(), Worst::none(), Worst::none(), Worst::none()];
            for x in axis(grid, grid_upper(sol, z)) {
                if x > v.m + grid.fd_exclusion {
                    w[3].update(v.deriv2(x).abs(), || at(i, z, x));
                }
                // the affine tail is covered exactly above
                if x - h <= 0.0 || x >= v.m || !clear_of(v.f.breakpoints(), grid.fd_exclusion, x) {
                    continue;
                }
                let fd1 = (f(x + h) - f(x - h)) / (2.0 * h);
                // each derivative is differenced from the level below it; a
                // second difference of f at this step drowns in rounding
                let fd2 = (v.deriv1(x + h) - v.deriv1(x - h)) / (2.0 * h);
                // relative to the magnitude of the terms being summed
                let s1 = d1.piece_at(x).abs_sum(x).max(v.deriv1(x).abs()).max(f64::MIN_POSITIVE);
                let s2 = d2.piece_at(x).abs_sum(x).max(v.deriv2(x).abs()).max(f64::MIN_POSITIVE);
                w[0].update((fd1 - v.deriv1(x)).abs() / s1, || at(i, z, x));
                w[1].update((fd2 - v.deriv2(x)).abs() / s2, || at(i, z, x));
            }
            // one-sided differences extrapolated to the barrier
            let (d, e) = (1e-4, 2e-4);
            let fd2 = |x: f64| (v.deriv1(x + h) - v.deriv1(x - h)) / (2.0 * h);
            if v.m > 3.0 * e {
                let left = 2.0 * fd2(v.m - d) - fd2(v.m - e);
                let right = 2.0 * fd2(v.m + d) - fd2(v.m + e);
                w[2].update((left - right).abs(), || at(i, z, v.m));
            }
            w
        })
        .collect();
    let mut cols: [Vec<Worst>; 4] = Default::default();
    for w in per {
        for (c, v) in cols.iter_mut().zip(w) {
            c.push(v);
        }
    }
    let [a, b, c, d] = cols.map(fold);
    vec![
        a.entry("first_derivative_vs_fd", true, 1e-6),
        b.entry("second_derivative_vs_fd", true, 1e-6),
        c.entry("second_derivative_continuous_at_barrier", true, 1e-4),
        d.entry("affine_tail", true, 0.0),
    ]
}

/// Every registered check, in a fixed order.
pub fn verify_all(sol: &PolicySolution, grid: &GridSpec, tol: &Tolerances) -> VerificationReport {
    let mut entries = check_hjbvi(sol, grid, tol);
    entries.extend(check_shape(sol, grid, tol));
    entries.extend(check_orderings(sol));
    entries.extend(check_derivatives(sol, grid));
    VerificationReport { entries }
}
