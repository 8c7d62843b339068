#![allow(dead_code)]

use divcontagion::expfun::{convolve_green, ExpPolyPiece, ExpPolyPiecewise, ExpPolyTerm};
use divcontagion::model::{identity, DefaultState, IntensityTable, ModelParams};
use rand::Rng;

pub fn state(bits: &str) -> DefaultState {
    DefaultState::parse_bits(bits).unwrap()
}

/// A random valid two-line group. Post-contagion intensities are the
/// pre-contagion ones times a factor in `[1, 5]`.
pub fn random_pair(rng: &mut impl Rng) -> ModelParams {
    let n = 2;
    let a1 = rng.random_range(0.1..0.9);
    let base = [rng.random_range(0.005..0.1), rng.random_range(0.005..0.1)];
    let bump = [rng.random_range(1.0..5.0), rng.random_range(1.0..5.0)];
    let intensity = IntensityTable::from_fn(n, |i, z| {
        if z.defaulted_count() == 0 {
            base[i]
        } else {
            base[i] * bump[i]
        }
    });
    let rho = rng.random_range(-0.9..0.9);
    let mut corr = identity(n);
    corr[0][1] = rho;
    corr[1][0] = rho;
    ModelParams {
        n,
        drift: (0..n).map(|_| rng.random_range(0.05..0.3)).collect(),
        vol: (0..n).map(|_| rng.random_range(0.03..0.3)).collect(),
        corr,
        discount: rng.random_range(0.01..0.1),
        weights: vec![a1, 1.0 - a1],
        intensity,
    }
}

/// Characteristic roots `(θ₁, θ₂)` of `½σ²θ² + νθ − μ = 0`, as `θ₁` and `−θ₂`.
pub fn roots(mu: f64, nu: f64, sigma: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let disc = (nu * nu + 2.0 * s2 * mu).sqrt();
    ((-nu + disc) / s2, (nu + disc) / s2)
}

/// Barrier, constant and value of the source-free problem.
pub struct ClosedForm {
    pub t1: f64,
    pub t2: f64,
    pub m: f64,
    pub c: f64,
    pub gamma: f64,
}

impl ClosedForm {
    pub fn new(mu: f64, nu: f64, sigma: f64, gamma: f64) -> Self {
        let (t1, t2) = roots(mu, nu, sigma);
        let m = (t2 * t2 / (t1 * t1)).ln() / (t1 + t2);
        let c = gamma / (t1 * (t1 * m).exp() + t2 * (-t2 * m).exp());
        ClosedForm { t1, t2, m, c, gamma }
    }

    pub fn value(&self, x: f64) -> f64 {
        let phi = |x: f64| (self.t1 * x).exp() - (-self.t2 * x).exp();
        if x <= self.m {
            self.c * phi(x)
        } else {
            self.c * phi(self.m) + self.gamma * (x - self.m)
        }
    }
}

/// A random piece with 1 to 3 terms, powers up to 2 and rates in
/// `(-max_rate, max_rate)`.
pub fn random_piece(rng: &mut impl Rng, max_rate: f64) -> ExpPolyPiece {
    let terms = (0..rng.random_range(1..4))
        .map(|_| {
            ExpPolyTerm::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(0..3),
                rng.random_range(-max_rate..max_rate),
            )
        })
        .collect();
    ExpPolyPiece::new(terms)
}

/// `−2/(σ²(θ₁+θ₂)) ∫₀ˣ h(u)(e^{θ₁(x−u)} − e^{−θ₂(x−u)}) du` by adaptive
/// quadrature, split at the breakpoints of `h`.
pub fn green_quadrature(h: &ExpPolyPiecewise, t1: f64, t2: f64, sigma: f64, x: f64) -> f64 {
    let kappa = -2.0 / (sigma * sigma * (t1 + t2));
    let mut cuts: Vec<f64> = h.breakpoints().iter().copied().filter(|&b| b < x).collect();
    cuts.push(x);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let piece = h.piece_at(0.5 * (w[0] + w[1])).clone();
        let g = |u: f64| piece.eval(u).unwrap() * ((t1 * (x - u)).exp() - (-t2 * (x - u)).exp());
        total += quadrature::integrate(g, w[0], w[1], 1e-14).integral;
    }
    kappa * total
}

/// Worst absolute gap between `convolve_green` and quadrature over
/// `instances` random sources vanishing at 0, some truncated to an affine tail.
pub fn convolution_gap(rng: &mut impl Rng, instances: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let p = random_piece(rng, 2.0);
        let p0 = p.eval(0.0).unwrap();
        let mut h = ExpPolyPiecewise::from_piece(p.add(&ExpPolyPiece::affine(-p0, 0.0)));
        if rng.random_bool(0.5) {
            let a = rng.random_range(0.3..2.0);
            let slope = rng.random_bool(0.5).then(|| rng.random_range(-1.0..1.0));
            h = h.truncate(a, slope).unwrap();
        }
        let t1 = rng.random_range(0.2..2.0);
        let t2 = rng.random_range(0.2..2.0);
        let sigma = rng.random_range(0.5..1.5);
        let phi = convolve_green(&h, t1, t2, sigma).unwrap();
        for k in 1..=5 {
            let x = 0.6 * k as f64;
            worst = worst.max((phi.eval(x).unwrap() - green_quadrature(&h, t1, t2, sigma, x)).abs());
        }
    }
    worst
}
