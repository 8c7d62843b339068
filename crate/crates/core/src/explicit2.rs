//! Fully explicit formulas for a group of two subsidiaries.
//!
//! This module deliberately shares no code with [`crate::vi_solver`] or
//! [`crate::expfun`]: it evaluates the closed-form branches directly and
//! locates the barrier with its own scan, so that agreement between the two
//! is a meaningful check.

use crate::error::{Error, Result};
use crate::model::{DefaultState, ModelParams};

/// Below this gap between a single-survivor root and a two-survivor root
/// the closed-form denominators degenerate.
pub const COLLISION_TOL: f64 = 1e-9;

const BISECT_TOL: f64 = 1e-13;

/// `Σ c·e^{ρ(x−x₀)} + a₀ + a₁x`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpSum {
    exps: Vec<(f64, f64, f64)>,
    a0: f64,
    a1: f64,
}

impl ExpSum {
    fn exp(mut self, c: f64, rate: f64, anchor: f64) -> Self {
        self.exps.push((c, rate, anchor));
        self
    }

    fn linear(mut self, a0: f64, a1: f64) -> Self {
        self.a0 += a0;
        self.a1 += a1;
        self
    }

    fn scaled(mut self, k: f64) -> Self {
        for t in &mut self.exps {
            t.0 *= k;
        }
        self.a0 *= k;
        self.a1 *= k;
        self
    }

    fn plus(mut self, other: ExpSum) -> Self {
        self.exps.extend(other.exps);
        self.a0 += other.a0;
        self.a1 += other.a1;
        self
    }

    /// Derivative of the given order (0, 1 or 2) at `x`.
    pub fn eval(&self, x: f64, order: u32) -> f64 {
        let mut s: f64 = self
            .exps
            .iter()
            .map(|&(c, rate, anchor)| c * rate.powi(order as i32) * (rate * (x - anchor)).exp())
            .sum();
        match order {
            0 => s += self.a0 + self.a1 * x,
            1 => s += self.a1,
            _ => {}
        }
        s
    }
}

/// Explicit solution for one subsidiary of the pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Explicit2Part {
    pub alpha: f64,
    /// Roots for the single-survivor state.
    pub hat_theta1: f64,
    pub hat_theta2: f64,
    /// Barrier after the other subsidiary has defaulted.
    pub m_single: f64,
    /// Constant of the single-survivor solution, without the weight.
    pub c_single: f64,
    pub k: f64,
    /// Roots for the state with both alive.
    pub theta1: f64,
    pub theta2: f64,
    /// Barrier with both alive.
    pub m: f64,
    pub c: f64,
    pub f11: ExpSum,
    pub f12: ExpSum,
    pub f2: ExpSum,
}

impl Explicit2Part {
    /// Value after the other subsidiary has defaulted.
    pub fn single(&self, x: f64) -> f64 {
        let (t1, t2, m) = (self.hat_theta1, self.hat_theta2, self.m_single);
        let k = self.alpha * self.c_single;
        if x <= m {
            k * ((t1 * x).exp() - (-t2 * x).exp())
        } else {
            k * ((t1 * m).exp() - (-t2 * m).exp()) + self.alpha * (x - m)
        }
    }

    /// Particular part `f_{i1}`, switching branch at the single-survivor barrier.
    pub fn f1(&self, x: f64, order: u32) -> f64 {
        if x < self.m_single {
            self.f11.eval(x, order)
        } else {
            self.f12.eval(x, order)
        }
    }

    /// Value with both alive, derivative of the given order.
    pub fn value(&self, x: f64, order: u32) -> f64 {
        if x <= self.m {
            self.f1(x, order) + self.c * self.f2.eval(x, order)
        } else {
            match order {
                0 => self.f1(self.m, 0) + self.c * self.f2.eval(self.m, 0) + self.alpha * (x - self.m),
                1 => self.alpha,
                _ => 0.0,
            }
        }
    }

    fn q(&self, x: f64) -> f64 {
        let d1 = self.f1(x, 1);
        self.f1(x, 2) + (self.alpha - d1) / self.f2.eval(x, 1) * self.f2.eval(x, 2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Explicit2Solution {
    pub parts: [Explicit2Part; 2],
}

impl Explicit2Solution {
    /// `f(x, (0,0)) = f₁(x₁) + f₂(x₂)`.
    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.parts[0].value(x[0], 0) + self.parts[1].value(x[1], 0)
    }
}

/// Positive root `t₁` and the magnitude `t₂` of the negative root of
/// `½b²t² + at − μ = 0`.
fn roots(a: f64, b: f64, mu: f64) -> (f64, f64) {
    let sq = (a * a + 2.0 * b * b * mu).sqrt();
    (2.0 * mu / (a + sq), (a + sq) / (b * b))
}

pub fn solve_explicit2(params: &ModelParams) -> Result<Explicit2Solution> {
    if params.n != 2 {
        return Err(Error::Contract(format!(
            "explicit formulas need two subsidiaries, got {}",
            params.n
        )));
    }
    params.ensure_valid()?;
    let p0 = part(params, 0)?;
    let p1 = part(params, 1)?;
    Ok(Explicit2Solution { parts: [p0, p1] })
}

fn part(params: &ModelParams, i: usize) -> Result<Explicit2Part> {
    let j = 1 - i;
    let both = DefaultState::all_alive(2);
    let single = both.with_default(j).expect("both alive");
    let (a, b, alpha, r) = (params.drift[i], params.vol[i], params.weights[i], params.discount);
    let lam = &params.intensity;

    let mu_hat = r + lam.get(i, single);
    let sq_hat = (a * a + 2.0 * b * b * mu_hat).sqrt();
    let (ht1, ht2) = roots(a, b, mu_hat);
    // ln((√D + a)/(√D − a)) with √D − a = 2b²μ/(√D + a)
    let m_hat = b * b / sq_hat * ((sq_hat + a) * (sq_hat + a) / (2.0 * b * b * mu_hat)).ln();
    let c_hat = 1.0 / (ht1 * (ht1 * m_hat).exp() + ht2 * (-ht2 * m_hat).exp());
    let k = alpha * c_hat * ((ht1 * m_hat).exp() - (-ht2 * m_hat).exp()) - alpha * m_hat;

    let (t1, t2) = roots(a, b, r + lam.get(0, both) + lam.get(1, both));
    if (ht1 - t1).abs() <= COLLISION_TOL || (ht2 - t2).abs() <= COLLISION_TOL {
        return Err(Error::OracleUnavailable(format!(
            "subsidiary {}: single-survivor roots ({ht1}, {ht2}) collide with ({t1}, {t2})",
            i + 1
        )));
    }

    // λ₁(0,0)λ₂(0,0)/λ_i(0,0) is the other subsidiary's rate
    let pre = -2.0 / (b * b) * lam.get(j, both) / (t1 + t2);
    let s = t1 + t2;
    let hs = ht1 + ht2;

    let f11 = ExpSum::default()
        .exp(s / ((ht1 - t1) * (ht1 + t2)), ht1, 0.0)
        .exp(s / ((ht2 + t1) * (t2 - ht2)), -ht2, 0.0)
        .exp(-hs / ((ht1 - t1) * (ht2 + t1)), t1, 0.0)
        .exp(-hs / ((ht1 + t2) * (t2 - ht2)), -t2, 0.0)
        .scaled(pre * alpha * c_hat);

    // every factor e^{ρx}·e^{κm̂} is re-anchored at m̂ to keep exponents small
    let mh = m_hat;
    let inner = ExpSum::default()
        .exp(((ht1 * mh).exp() - (t1 * mh).exp()) / (ht1 - t1), t1, mh)
        .exp(((-t2 * mh).exp() - (ht1 * mh).exp()) / (ht1 + t2), -t2, mh)
        .exp(((-ht2 * mh).exp() - (t1 * mh).exp()) / (ht2 + t1), t1, mh)
        .exp(((-ht2 * mh).exp() - (-t2 * mh).exp()) / (t2 - ht2), -t2, mh)
        .scaled(pre * alpha * c_hat);
    let constant = ExpSum::default()
        .exp(1.0 / t1, t1, mh)
        .exp(1.0 / t2, -t2, mh)
        .linear(-1.0 / t1 - 1.0 / t2, 0.0)
        .scaled(pre * k);
    let ramp = ExpSum::default()
        .exp((t1 * mh + 1.0) / (t1 * t1), t1, mh)
        .exp((t2 * mh - 1.0) / (t2 * t2), -t2, mh)
        .linear(-1.0 / (t1 * t1) + 1.0 / (t2 * t2), -1.0 / t1 - 1.0 / t2)
        .scaled(pre * alpha);
    let f12 = inner.plus(constant).plus(ramp);

    let f2 = ExpSum::default().exp(1.0, t1, 0.0).exp(-1.0, -t2, 0.0);

    let mut p = Explicit2Part {
        alpha,
        hat_theta1: ht1,
        hat_theta2: ht2,
        m_single: m_hat,
        c_single: c_hat,
        k,
        theta1: t1,
        theta2: t2,
        m: f64::NAN,
        c: f64::NAN,
        f11,
        f12,
        f2,
    };
    p.m = first_root(&p, 400.0 / t1)?;
    p.c = (alpha - p.f1(p.m, 1)) / p.f2.eval(p.m, 1);
    Ok(p)
}

/// Smallest positive zero of `q`: march with a step tied to the fastest
/// decay scale, then bisect the first sign change.
fn first_root(p: &Explicit2Part, x_max: f64) -> Result<f64> {
    let q0 = p.q(0.0);
    if !(q0 < 0.0) {
        return Err(Error::Contract(format!("explicit q(0) = {q0} is not negative")));
    }
    let fine = 0.02 / (p.theta1 + p.theta2);
    let coarse = 0.02 / p.theta1;
    let (mut lo, mut x) = (0.0, 0.0);
    loop {
        let step = fine + (coarse - fine) * (x * p.theta1).min(1.0);
        x += step;
        if x > x_max {
            return Err(Error::NoBoundary { x_max });
        }
        if p.q(x) >= 0.0 {
            break;
        }
        lo = x;
    }
    let mut hi = x;
    while hi - lo > BISECT_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if p.q(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
