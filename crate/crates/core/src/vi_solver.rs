//! Smooth-fit solution of the one-dimensional variational inequality
//!
//! ```text
//! max{ A f + h, γ − f' } = 0,   f(0) = 0,   A f = −μ f + ν f' + ½σ² f''
//! ```
//!
//! for a concave, increasing source `h` with `h(0) = 0`. The solution is
//! `φ₁ + Cφ₂` below the free boundary `m` and affine with slope `γ` above it.

use crate::error::{Error, Result};
use crate::expfun::{convolve_green, ExpPolyPiece, ExpPolyPiecewise, ExpPolyTerm};

/// Numerical settings shared by the solver and its post-construction checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Bisection stops once the bracket is this narrow.
    pub root: f64,
    /// `|f'(m) − γ|` bound.
    pub smooth_fit: f64,
    /// `|f''(m)|` bound.
    pub smooth_fit_second: f64,
    /// Points in the post-assembly residual grid.
    pub residual_points: usize,
    /// Pointwise bound on `max{A f + h, γ − f'}` and on `A f + h` below `m`.
    pub residual: f64,
    /// `f'' ≤ concavity` everywhere.
    pub concavity: f64,
    /// Points in the source admissibility grid.
    pub admissibility_points: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            root: 1e-12,
            smooth_fit: 1e-8,
            smooth_fit_second: 1e-6,
            residual_points: 500,
            residual: 1e-7,
            concavity: 1e-10,
            admissibility_points: 200,
        }
    }
}

/// Coefficients of `A f = −μ f + ν f' + ½σ² f''` and the gradient floor `γ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorCoeffs {
    pub mu: f64,
    pub nu: f64,
    pub sigma: f64,
    pub gamma: f64,
}

impl OperatorCoeffs {
    pub fn new(mu: f64, nu: f64, sigma: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("mu", mu), ("nu", nu), ("sigma", sigma), ("gamma", gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Contract(format!("operator coefficient {name} = {v} must be > 0")));
            }
        }
        Ok(OperatorCoeffs { mu, nu, sigma, gamma })
    }

    /// `(θ₁, θ₂)` with `θ₁ > 0` and `−θ₂ < 0` the roots of
    /// `½σ²θ² + νθ − μ = 0`.
    pub fn roots(&self) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        let disc = (self.nu * self.nu + 2.0 * s2 * self.mu).sqrt();
        // θ₁ = (−ν + √D)/σ², written without cancellation
        let theta1 = 2.0 * self.mu / (self.nu + disc);
        let theta2 = (self.nu + disc) / s2;
        (theta1, theta2)
    }

    /// `A f(x)` from value and derivatives.
    #[inline]
    pub fn apply(&self, f: f64, d1: f64, d2: f64) -> f64 {
        -self.mu * f + self.nu * d1 + 0.5 * self.sigma * self.sigma * d2
    }
}

/// Solution of one auxiliary variational inequality.
#[derive(Clone, Debug, PartialEq)]
pub struct VISolution {
    pub coeffs: OperatorCoeffs,
    pub theta1: f64,
    pub theta2: f64,
    /// Free boundary (dividend barrier).
    pub m: f64,
    pub c: f64,
    pub phi1: ExpPolyPiecewise,
    pub phi2: ExpPolyPiecewise,
    pub f: ExpPolyPiecewise,
    /// Source term, kept for residual checks.
    pub h: ExpPolyPiecewise,
    d1: ExpPolyPiecewise,
    d2: ExpPolyPiecewise,
}

impl VISolution {
    pub fn value(&self, x: f64) -> f64 {
        self.f.eval(x).expect("value function has an affine tail")
    }

    pub fn deriv1(&self, x: f64) -> f64 {
        self.d1.eval(x).expect("value function has an affine tail")
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        self.d2.eval(x).expect("value function has an affine tail")
    }

    /// `A f(x) + h(x)`.
    pub fn generator_residual(&self, x: f64) -> Result<f64> {
        Ok(self.coeffs.apply(self.f.eval(x)?, self.d1.eval(x)?, self.d2.eval(x)?) + self.h.eval(x)?)
    }

    /// `γ − f'(x)`.
    pub fn gradient_residual(&self, x: f64) -> f64 {
        self.coeffs.gamma - self.deriv1(x)
    }
}

/// `e^{θ₁x} − e^{−θ₂x}`.
pub fn homogeneous(theta1: f64, theta2: f64) -> ExpPolyPiecewise {
    ExpPolyPiecewise::from_piece(ExpPolyPiece::new(vec![
        ExpPolyTerm::new(1.0, 0, theta1),
        ExpPolyTerm::new(-1.0, 0, -theta2),
    ]))
}

/// Checks `h(0) = 0`, `h ≥ 0`, `h' > 0` (unless `h ≡ 0`) and `h'' ≤ 0` on a
/// grid reaching past the last breakpoint.
fn check_source(h: &ExpPolyPiecewise, theta1: f64, points: usize) -> Result<()> {
    let contract = |msg: String| Err(Error::Contract(msg));
    if h.is_zero() {
        return Ok(());
    }
    let h0 = h.eval(0.0)?;
    if h0.abs() > 1e-9 {
        return contract(format!("source must vanish at 0, h(0) = {h0}"));
    }
    let d1 = h.deriv(1);
    let d2 = h.deriv(2);
    let upper = h.last_breakpoint() + 10.0 / theta1;
    let mut scale: f64 = 0.0;
    let mut samples = Vec::with_capacity(points);
    for k in 0..points {
        let x = upper * k as f64 / (points - 1) as f64;
        let (v, s, c) = (h.eval(x)?, d1.eval(x)?, d2.eval(x)?);
        scale = scale.max(v.abs()).max(s.abs());
        samples.push((x, v, s, c));
    }
    let tol = 1e-9 * scale.max(1e-300);
    for (x, v, s, c) in samples {
        if v < -tol {
            return contract(format!("source must be nonnegative, h({x}) = {v}"));
        }
        if !(s > 0.0) {
            return contract(format!("source must be increasing, h'({x}) = {s}"));
        }
        if c > tol {
            return contract(format!("source must be concave, h''({x}) = {c}"));
        }
    }
    Ok(())
}

/// `(φ₁, φ₂)`: the particular solution driven by `h` and the homogeneous
/// solution vanishing at 0.
pub fn build_phi(
    coeffs: &OperatorCoeffs,
    h: &ExpPolyPiecewise,
    tol: &Tolerances,
) -> Result<(ExpPolyPiecewise, ExpPolyPiecewise)> {
    let (theta1, theta2) = coeffs.roots();
    check_source(h, theta1, tol.admissibility_points)?;
    let phi1 = if h.is_zero() {
        ExpPolyPiecewise::zero()
    } else {
        convolve_green(h, theta1, theta2, coeffs.sigma)?
    };
    Ok((phi1, homogeneous(theta1, theta2)))
}

struct BoundaryFunction {
    gamma: f64,
    p1d1: ExpPolyPiecewise,
    p1d2: ExpPolyPiecewise,
    p2d1: ExpPolyPiecewise,
    p2d2: ExpPolyPiecewise,
}

impl BoundaryFunction {
    /// `q(x) = φ₁''(x) + (γ − φ₁'(x)) φ₂''(x) / φ₂'(x)`.
    fn q(&self, x: f64) -> Result<f64> {
        let (a1, a2) = (self.p1d1.eval(x)?, self.p1d2.eval(x)?);
        let (b1, b2) = (self.p2d1.eval(x)?, self.p2d2.eval(x)?);
        Ok(a2 + (self.gamma - a1) / b1 * b2)
    }
}

/// Smallest positive root `m` of `q` and the constant
/// `C = (γ − φ₁'(m)) / φ₂'(m)`.
pub fn find_boundary(
    coeffs: &OperatorCoeffs,
    phi1: &ExpPolyPiecewise,
    phi2: &ExpPolyPiecewise,
    tol: &Tolerances,
) -> Result<(f64, f64)> {
    let (theta1, theta2) = coeffs.roots();
    let qf = BoundaryFunction {
        gamma: coeffs.gamma,
        p1d1: phi1.deriv(1),
        p1d2: phi1.deriv(2),
        p2d1: phi2.deriv(1),
        p2d2: phi2.deriv(2),
    };
    let x_max = 200.0 / theta1;
    let no_boundary = || Error::NoBoundary { x_max };
    let q = |x: f64| qf.q(x).map_err(|_| no_boundary());

    let q0 = q(0.0)?;
    if !(q0 < 0.0) {
        return Err(Error::Contract(format!("q(0) = {q0} must be negative")));
    }
    let touch_tol = 1e-9 * q0.abs();

    // Scan from the short length scale 1/(θ₁+θ₂) and let the step grow to
    // 0.1/θ₁; the first sign change brackets the infimum root.
    let max_step = 0.1 / theta1;
    let mut step = (0.1 / (theta1 + theta2)).min(max_step);
    let mut lo = 0.0;
    let mut q_lo = q0;
    let (mut a, mut b) = loop {
        if lo >= x_max {
            return Err(no_boundary());
        }
        let hi = (lo + step).min(x_max);
        let q_hi = q(hi)?;
        if q_hi >= 0.0 {
            break (lo, hi);
        }
        if q_lo.abs().min(q_hi.abs()) < touch_tol {
            if let Some(bracket) = refine_touch(&q, lo, hi, touch_tol)? {
                break bracket;
            }
        }
        lo = hi;
        q_lo = q_hi;
        step = (step * 1.25).min(max_step);
    };

    while b - a > tol.root {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if q(mid)? >= 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    let m = 0.5 * (a + b);
    let c = (coeffs.gamma - qf.p1d1.eval(m)?) / qf.p2d1.eval(m)?;
    if !(c > 0.0) {
        return Err(Error::Construction {
            check: "positive constant",
            detail: format!("C = {c} at m = {m}"),
        });
    }
    Ok((m, c))
}

/// Looks for a hidden sign change or a tangential zero of `q` inside
/// `[lo, hi]` by maximising `q` with up to 20 interval halvings.
fn refine_touch(
    q: &impl Fn(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    touch_tol: f64,
) -> Result<Option<(f64, f64)>> {
    let (mut a, mut b) = (lo, hi);
    for _ in 0..20 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        let (q1, q2) = (q(m1)?, q(m2)?);
        if q1 >= 0.0 {
            return Ok(Some((lo, m1)));
        }
        if q2 >= 0.0 {
            return Ok(Some((lo, m2)));
        }
        if q1 < q2 {
            a = m1;
        } else {
            b = m2;
        }
    }
    let x = 0.5 * (a + b);
    if q(x)?.abs() < touch_tol {
        Ok(Some((x, x)))
    } else {
        Ok(None)
    }
}

/// Assembles `f = φ₁ + Cφ₂` on `[0, m]` with an affine tail of slope `γ`
/// and verifies every solution invariant.
pub fn assemble(
    coeffs: &OperatorCoeffs,
    h: &ExpPolyPiecewise,
    phi1: ExpPolyPiecewise,
    phi2: ExpPolyPiecewise,
    m: f64,
    c: f64,
    tol: &Tolerances,
) -> Result<VISolution> {
    let (theta1, theta2) = coeffs.roots();
    let f = phi1.add(&phi2.scale(c)).truncate(m, Some(coeffs.gamma))?;
    let d1 = f.deriv(1);
    let d2 = f.deriv(2);
    let sol = VISolution {
        coeffs: *coeffs,
        theta1,
        theta2,
        m,
        c,
        phi1,
        phi2,
        f,
        h: h.clone(),
        d1,
        d2,
    };
    check_solution(&sol, tol)?;
    Ok(sol)
}

fn check_solution(sol: &VISolution, tol: &Tolerances) -> Result<()> {
    let fail = |check: &'static str, detail: String| Err(Error::Construction { check, detail });
    let gamma = sol.coeffs.gamma;
    let m = sol.m;

    let f0 = sol.f.eval(0.0)?;
    if f0.abs() > 1e-12 {
        return fail("boundary value", format!("f(0) = {f0}"));
    }
    // left limits at m: the piece just below the tail
    let below = &sol.f.all_pieces()[sol.f.all_pieces().len() - 2];
    let slope_gap = below.deriv().eval(m)? - gamma;
    if slope_gap.abs() > tol.smooth_fit {
        return fail("smooth fit f'(m) = gamma", format!("f'(m) - gamma = {slope_gap:e}"));
    }
    let curvature = below.deriv().deriv().eval(m)?;
    if curvature.abs() > tol.smooth_fit_second {
        return fail("smooth fit f''(m) = 0", format!("f''(m) = {curvature:e}"));
    }

    let upper = m.max(sol.h.last_breakpoint()) + 1.0;
    let n = tol.residual_points.max(2);
    for k in 0..n {
        let x = upper * k as f64 / (n - 1) as f64;
        let d1 = sol.deriv1(x);
        let d2 = sol.deriv2(x);
        if d2 > tol.concavity {
            return fail("concavity", format!("f''({x}) = {d2:e}"));
        }
        if !(d1 > 0.0) {
            return fail("monotonicity", format!("f'({x}) = {d1:e}"));
        }
        let gen = sol.generator_residual(x)?;
        let grad = gamma - d1;
        if x <= m {
            if gen.abs() > tol.residual {
                return fail("generator vanishes below m", format!("A f + h = {gen:e} at x = {x}"));
            }
            if grad > tol.residual {
                return fail("gradient floor", format!("gamma - f' = {grad:e} at x = {x}"));
            }
        } else if gen > tol.residual {
            return fail("generator nonpositive above m", format!("A f + h = {gen:e} at x = {x}"));
        }
    }
    Ok(())
}

/// `build_phi`, `find_boundary` and `assemble` in sequence.
pub fn solve(coeffs: &OperatorCoeffs, h: &ExpPolyPiecewise, tol: &Tolerances) -> Result<VISolution> {
    let (phi1, phi2) = build_phi(coeffs, h, tol)?;
    let (m, c) = find_boundary(coeffs, &phi1, &phi2, tol)?;
    assemble(coeffs, h, phi1, phi2, m, c, tol)
}
