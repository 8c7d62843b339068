//! Exact calculus on piecewise exponential-polynomials.
//!
//! A piece is a finite sum of terms `c·x^k·e^{θx}` written in the absolute
//! coordinate `x`. The family is closed under differentiation,
//! antidifferentiation, products with `e^{ρx}` and the Green-kernel
//! convolution that produces the particular solution of
//! `½σ²g'' + νg' − μg = −h`, which is everything the value-function
//! construction needs.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Terms with `|c|` below this are dropped during canonicalisation.
pub const COEFF_FLOOR: f64 = 1e-300;
/// `θx` beyond this is reported as out of range instead of overflowing.
pub const MAX_EXPONENT: f64 = 700.0;
/// Rate gap below which a kernel rate is treated as resonant with a source rate.
pub const RESONANCE_TOL: f64 = 1e-9;

/// `coeff · x^power · e^{rate·x}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpPolyTerm {
    pub coeff: f64,
    pub power: u32,
    pub rate: f64,
}

impl ExpPolyTerm {
    pub fn new(coeff: f64, power: u32, rate: f64) -> Self {
        // normalise -0.0 so that merging by exact rate works
        let rate = if rate == 0.0 { 0.0 } else { rate };
        ExpPolyTerm { coeff, power, rate }
    }

    #[inline]
    fn value(&self, x: f64) -> f64 {
        let poly = if self.power == 0 { 1.0 } else { x.powi(self.power as i32) };
        let e = if self.rate == 0.0 { 1.0 } else { (self.rate * x).exp() };
        self.coeff * poly * e
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.rate
            .total_cmp(&other.rate)
            .then(self.power.cmp(&other.power))
    }
}

/// Antiderivative `P(u)` of `c·u^k·e^{δu}` (no integration constant).
fn primitive(coeff: f64, power: u32, delta: f64, u: f64) -> f64 {
    if delta == 0.0 {
        return coeff * u.powi(power as i32 + 1) / (power as f64 + 1.0);
    }
    // e^{δu} Σ_j (−1)^j k!/(k−j)! u^{k−j} / δ^{j+1}
    let mut sum = 0.0;
    let mut falling = 1.0;
    let mut inv = 1.0 / delta;
    for j in 0..=power {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * falling * u.powi((power - j) as i32) * inv;
        falling *= (power - j) as f64;
        inv /= delta;
    }
    coeff * (delta * u).exp() * sum
}

/// Terms of `P(x)` for `c·x^k·e^{δx}` with `δ ≠ 0`, all at rate `δ`.
fn primitive_terms(coeff: f64, power: u32, delta: f64, out: &mut Vec<ExpPolyTerm>) {
    let mut falling = 1.0;
    let mut inv = 1.0 / delta;
    for j in 0..=power {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        out.push(ExpPolyTerm::new(coeff * sign * falling * inv, power - j, delta));
        falling *= (power - j) as f64;
        inv /= delta;
    }
}

/// A sum of exp-poly terms in canonical form: sorted by `(rate, power)`,
/// duplicates merged, negligible coefficients dropped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpPolyPiece {
    terms: Vec<ExpPolyTerm>,
}

impl ExpPolyPiece {
    pub fn new(mut terms: Vec<ExpPolyTerm>) -> Self {
        terms.sort_by(ExpPolyTerm::key_cmp);
        let mut merged: Vec<ExpPolyTerm> = Vec::with_capacity(terms.len());
        for t in terms {
            match merged.last_mut() {
                Some(last) if last.power == t.power && last.rate == t.rate => last.coeff += t.coeff,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.coeff.abs() >= COEFF_FLOOR);
        ExpPolyPiece { terms: merged }
    }

    pub fn zero() -> Self {
        ExpPolyPiece::default()
    }

    /// `c0 + c1·x`.
    pub fn affine(c0: f64, c1: f64) -> Self {
        Self::new(vec![ExpPolyTerm::new(c0, 0, 0.0), ExpPolyTerm::new(c1, 1, 0.0)])
    }

    pub fn exp(coeff: f64, rate: f64) -> Self {
        Self::new(vec![ExpPolyTerm::new(coeff, 0, rate)])
    }

    pub fn terms(&self) -> &[ExpPolyTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// `Some((c0, c1))` when the piece is `c0 + c1·x`.
    pub fn as_affine(&self) -> Option<(f64, f64)> {
        let mut c = (0.0, 0.0);
        for t in &self.terms {
            match (t.rate == 0.0, t.power) {
                (true, 0) => c.0 = t.coeff,
                (true, 1) => c.1 = t.coeff,
                _ => return None,
            }
        }
        Some(c)
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let mut sum = 0.0;
        for t in &self.terms {
            if t.rate * x > MAX_EXPONENT {
                return Err(Error::OutOfRange { x, rate: t.rate });
            }
            sum += t.value(x);
        }
        Ok(sum)
    }

    /// `Σ |term(x)|`, the natural scale for rounding error in `eval(x)`.
    pub fn abs_sum(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.value(x).abs()).sum()
    }

    pub fn deriv(&self) -> Self {
        let mut out = Vec::with_capacity(2 * self.terms.len());
        for t in &self.terms {
            if t.power > 0 {
                out.push(ExpPolyTerm::new(t.coeff * t.power as f64, t.power - 1, t.rate));
            }
            if t.rate != 0.0 {
                out.push(ExpPolyTerm::new(t.coeff * t.rate, t.power, t.rate));
            }
        }
        Self::new(out)
    }

    /// An antiderivative with no constant term added.
    pub fn antideriv(&self) -> Self {
        let mut out = Vec::new();
        for t in &self.terms {
            if t.rate == 0.0 {
                out.push(ExpPolyTerm::new(
                    t.coeff / (t.power as f64 + 1.0),
                    t.power + 1,
                    0.0,
                ));
            } else {
                primitive_terms(t.coeff, t.power, t.rate, &mut out);
            }
        }
        Self::new(out)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::new(
            self.terms
                .iter()
                .map(|t| ExpPolyTerm::new(t.coeff * c, t.power, t.rate))
                .collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(self.terms.iter().chain(&other.terms).copied().collect())
    }

    /// `x ↦ self(x + a)`.
    pub fn shift(&self, a: f64) -> Self {
        let mut out = Vec::new();
        for t in &self.terms {
            let base = t.coeff * (t.rate * a).exp();
            // (x + a)^k = Σ_j C(k, j) a^{k−j} x^j
            let mut binom = 1.0;
            for j in 0..=t.power {
                out.push(ExpPolyTerm::new(
                    base * binom * a.powi((t.power - j) as i32),
                    j,
                    t.rate,
                ));
                binom = binom * (t.power - j) as f64 / (j + 1) as f64;
            }
        }
        Self::new(out)
    }
}

/// A function on `[0, ∞)` made of exp-poly pieces.
///
/// `breaks = [0 = x_0 < x_1 < … < x_K]`; piece `j < K` covers
/// `[x_j, x_{j+1})` and the last piece (the tail) covers `[x_K, ∞)`.
/// Value functions always carry an affine tail; intermediate objects such
/// as the convolution `φ₁` may not.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpPolyPiecewise {
    breaks: Vec<f64>,
    pieces: Vec<ExpPolyPiece>,
}

impl ExpPolyPiecewise {
    pub fn new(breaks: Vec<f64>, pieces: Vec<ExpPolyPiece>) -> Result<Self> {
        if breaks.is_empty() || breaks[0] != 0.0 {
            return Err(Error::Contract("breakpoints must start at 0".into()));
        }
        if breaks.len() != pieces.len() {
            return Err(Error::Contract(format!(
                "{} breakpoints need {} pieces (including the tail), got {}",
                breaks.len(),
                breaks.len(),
                pieces.len()
            )));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) || breaks.iter().any(|b| !b.is_finite()) {
            return Err(Error::Contract("breakpoints must be finite and strictly ascending".into()));
        }
        Ok(ExpPolyPiecewise { breaks, pieces })
    }

    /// A single piece on all of `[0, ∞)`.
    pub fn from_piece(piece: ExpPolyPiece) -> Self {
        ExpPolyPiecewise {
            breaks: vec![0.0],
            pieces: vec![piece],
        }
    }

    pub fn zero() -> Self {
        Self::from_piece(ExpPolyPiece::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.iter().all(ExpPolyPiece::is_zero)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn last_breakpoint(&self) -> f64 {
        *self.breaks.last().expect("non-empty")
    }

    /// The bounded pieces (excluding the tail).
    pub fn pieces(&self) -> &[ExpPolyPiece] {
        &self.pieces[..self.pieces.len() - 1]
    }

    pub fn all_pieces(&self) -> &[ExpPolyPiece] {
        &self.pieces
    }

    pub fn tail(&self) -> &ExpPolyPiece {
        self.pieces.last().expect("non-empty")
    }

    /// Slope of the tail when it is affine.
    pub fn tail_slope(&self) -> Option<f64> {
        self.tail().as_affine().map(|(_, c1)| c1)
    }

    pub fn term_count(&self) -> usize {
        self.pieces.iter().map(|p| p.terms.len()).sum()
    }

    /// Index of the piece used at `x` (right-continuous).
    pub fn segment_index(&self, x: f64) -> usize {
        self.breaks.partition_point(|&b| b <= x).saturating_sub(1)
    }

    pub fn piece_at(&self, x: f64) -> &ExpPolyPiece {
        &self.pieces[self.segment_index(x)]
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Contract(format!("evaluation at x = {x} < 0")));
        }
        self.piece_at(x).eval(x)
    }

    pub fn deriv(&self, order: usize) -> Self {
        let mut f = self.clone();
        for _ in 0..order {
            f.pieces = f.pieces.iter().map(ExpPolyPiece::deriv).collect();
        }
        f
    }

    /// The continuous antiderivative vanishing at 0.
    pub fn antideriv(&self) -> Result<Self> {
        let mut pieces = Vec::with_capacity(self.pieces.len());
        let mut carry = 0.0;
        for (j, p) in self.pieces.iter().enumerate() {
            let prim = p.antideriv();
            let start = self.breaks[j];
            let offset = carry - prim.eval(start)?;
            let piece = prim.add(&ExpPolyPiece::affine(offset, 0.0));
            if j + 1 < self.breaks.len() {
                carry = piece.eval(self.breaks[j + 1])?;
            }
            pieces.push(piece);
        }
        Ok(ExpPolyPiecewise {
            breaks: self.breaks.clone(),
            pieces,
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        ExpPolyPiecewise {
            breaks: self.breaks.clone(),
            pieces: self.pieces.iter().map(|p| p.scale(c)).collect(),
        }
    }

    /// Pointwise sum; the breakpoints are the sorted union of both inputs.
    pub fn add(&self, other: &Self) -> Self {
        let mut breaks: Vec<f64> = self.breaks.iter().chain(&other.breaks).copied().collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let pieces = breaks
            .iter()
            .map(|&b| self.piece_at(b).add(other.piece_at(b)))
            .collect();
        ExpPolyPiecewise { breaks, pieces }
    }

    /// Keeps `self` on `[0, a]` and continues affinely from `a` with the
    /// given slope (the left derivative at `a` when `slope` is `None`).
    pub fn truncate(&self, a: f64, slope: Option<f64>) -> Result<Self> {
        if !(a >= 0.0) || !a.is_finite() {
            return Err(Error::Contract(format!("truncation point {a} must be >= 0")));
        }
        let left = self.pieces[self.segment_index_left(a)].clone();
        let value = left.eval(a)?;
        let slope = match slope {
            Some(s) => s,
            None => left.deriv().eval(a)?,
        };
        let mut breaks: Vec<f64> = self.breaks.iter().copied().filter(|&b| b < a).collect();
        let mut pieces: Vec<ExpPolyPiece> = self.pieces[..breaks.len()].to_vec();
        if a > 0.0 {
            breaks.push(a);
        } else {
            pieces.clear();
            breaks = vec![0.0];
        }
        pieces.push(ExpPolyPiece::affine(value - slope * a, slope));
        Ok(ExpPolyPiecewise { breaks, pieces })
    }

    /// `x ↦ self(x + a)` on `[0, ∞)`.
    pub fn shift(&self, a: f64) -> Result<Self> {
        if !(a >= 0.0) || !a.is_finite() {
            return Err(Error::Contract(format!("shift {a} must be >= 0")));
        }
        let first = self.segment_index(a);
        let mut breaks = vec![0.0];
        breaks.extend(self.breaks[first + 1..].iter().map(|b| b - a));
        let pieces = self.pieces[first..].iter().map(|p| p.shift(a)).collect();
        ExpPolyPiecewise::new(breaks, pieces)
    }

    /// Largest relative value jump and absolute slope jump over the interior
    /// breakpoints.
    pub fn continuity_defect(&self) -> Result<(f64, f64)> {
        let mut value_jump: f64 = 0.0;
        let mut slope_jump: f64 = 0.0;
        for j in 1..self.breaks.len() {
            let b = self.breaks[j];
            let (l, r) = (&self.pieces[j - 1], &self.pieces[j]);
            let (lv, rv) = (l.eval(b)?, r.eval(b)?);
            let scale = lv.abs().max(rv.abs()).max(1.0);
            value_jump = value_jump.max((lv - rv).abs() / scale);
            slope_jump = slope_jump.max((l.deriv().eval(b)? - r.deriv().eval(b)?).abs());
        }
        Ok((value_jump, slope_jump))
    }

    fn segment_index_left(&self, x: f64) -> usize {
        self.breaks.partition_point(|&b| b < x).saturating_sub(1)
    }

    /// Structured text form, see [`ExpPolyPiecewise::from_record`].
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let k = self.breaks.len() - 1;
        let _ = writeln!(s, "exppoly {k}");
        s.push_str("breaks");
        for b in &self.breaks {
            let _ = write!(s, " {b:e}");
        }
        s.push('\n');
        for (j, p) in self.pieces.iter().enumerate() {
            s.push_str(if j < k { "piece" } else { "tail" });
            for t in &p.terms {
                let _ = write!(s, " {:e}:{}:{:e}", t.coeff, t.power, t.rate);
            }
            s.push('\n');
        }
        s.push_str("end\n");
        s
    }

    /// Parses the record written by [`ExpPolyPiecewise::to_record`]:
    ///
    /// ```text
    /// exppoly K
    /// breaks x0 x1 ... xK
    /// piece c:k:θ c:k:θ ...     (K lines)
    /// tail c:k:θ ...
    /// end
    /// ```
    pub fn from_record(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let f = parse_record_lines(&mut lines)?;
        if let Some((line, rest)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(Error::parse(line, format!("trailing content `{rest}`")));
        }
        Ok(f)
    }
}

const MAX_RECORD_POWER: u32 = 64;

pub(crate) fn parse_record_lines<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
) -> Result<ExpPolyPiecewise> {
    let mut next = |what: &str| -> Result<(usize, &'a str)> {
        lines
            .by_ref()
            .find(|(_, l)| !l.is_empty())
            .ok_or_else(|| Error::parse(0, format!("unexpected end of input, expected {what}")))
    };

    let (line, header) = next("`exppoly K`")?;
    let k: usize = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["exppoly", k] => k
            .parse()
            .map_err(|_| Error::parse(line, format!("bad piece count `{k}`")))?,
        _ => return Err(Error::parse(line, "expected `exppoly K`")),
    };

    let (line, breaks_line) = next("`breaks`")?;
    let mut tokens = breaks_line.split_whitespace();
    if tokens.next() != Some("breaks") {
        return Err(Error::parse(line, "expected `breaks`"));
    }
    let breaks = tokens
        .map(|t| parse_finite(line, t))
        .collect::<Result<Vec<f64>>>()?;
    if breaks.len() != k + 1 {
        return Err(Error::parse(
            line,
            format!("expected {} breakpoints, got {}", k + 1, breaks.len()),
        ));
    }

    let mut pieces = Vec::new();
    for j in 0..=k {
        let keyword = if j < k { "piece" } else { "tail" };
        let (line, piece_line) = next(keyword)?;
        let mut tokens = piece_line.split_whitespace();
        if tokens.next() != Some(keyword) {
            return Err(Error::parse(line, format!("expected `{keyword}`")));
        }
        let terms = tokens
            .map(|t| parse_term(line, t))
            .collect::<Result<Vec<_>>>()?;
        pieces.push(ExpPolyPiece::new(terms));
    }

    let (line, end) = next("`end`")?;
    if end != "end" {
        return Err(Error::parse(line, "expected `end`"));
    }
    ExpPolyPiecewise::new(breaks, pieces).map_err(|e| Error::parse(line, e.to_string()))
}

fn parse_finite(line: usize, token: &str) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::parse(line, format!("bad number `{token}`"))),
    }
}

fn parse_term(line: usize, token: &str) -> Result<ExpPolyTerm> {
    let parts: Vec<&str> = token.split(':').collect();
    let [c, k, rate] = parts.as_slice() else {
        return Err(Error::parse(line, format!("term `{token}` is not c:k:rate")));
    };
    let power: u32 = k
        .parse()
        .ok()
        .filter(|&p| p <= MAX_RECORD_POWER)
        .ok_or_else(|| Error::parse(line, format!("bad power `{k}`")))?;
    Ok(ExpPolyTerm::new(
        parse_finite(line, c)?,
        power,
        parse_finite(line, rate)?,
    ))
}

/// `e^{-s x} ∫_b^x t(u) e^{s u} du` for one source term `t`, as exp-poly
/// terms. Rates in the result are exactly `t.rate` or `-s`.
fn kernel_term_integral(t: &ExpPolyTerm, s: f64, b: f64, out: &mut Vec<ExpPolyTerm>) {
    let mut delta = t.rate + s;
    if delta.abs() < RESONANCE_TOL {
        delta = 0.0;
    }
    if delta == 0.0 {
        // resonant: ∫ c u^k du = c u^{k+1}/(k+1), carried at rate −s
        out.push(ExpPolyTerm::new(
            t.coeff / (t.power as f64 + 1.0),
            t.power + 1,
            -s,
        ));
    } else {
        let mut tmp = Vec::new();
        primitive_terms(t.coeff, t.power, delta, &mut tmp);
        out.extend(tmp.into_iter().map(|p| ExpPolyTerm::new(p.coeff, p.power, t.rate)));
    }
    out.push(ExpPolyTerm::new(-primitive(t.coeff, t.power, delta, b), 0, -s));
}

fn definite_kernel_integral(piece: &ExpPolyPiece, s: f64, lo: f64, hi: f64) -> f64 {
    piece
        .terms
        .iter()
        .map(|t| {
            let mut delta = t.rate + s;
            if delta.abs() < RESONANCE_TOL {
                delta = 0.0;
            }
            primitive(t.coeff, t.power, delta, hi) - primitive(t.coeff, t.power, delta, lo)
        })
        .sum()
}

/// Particular solution
/// `φ₁(x) = −2/(σ²(θ₁+θ₂)) ∫₀ˣ h(u) (e^{θ₁(x−u)} − e^{−θ₂(x−u)}) du`
/// computed in closed form segment by segment. The result has the same
/// breakpoints as `h`.
pub fn convolve_green(
    h: &ExpPolyPiecewise,
    theta1: f64,
    theta2: f64,
    sigma: f64,
) -> Result<ExpPolyPiecewise> {
    if !(theta1 > 0.0 && theta2 > 0.0 && sigma > 0.0) {
        return Err(Error::Contract(format!(
            "convolution needs θ₁, θ₂, σ > 0 (got {theta1}, {theta2}, {sigma})"
        )));
    }
    let h0 = h.eval(0.0)?;
    if h0.abs() > 1e-9 {
        return Err(Error::Contract(format!("source must vanish at 0, h(0) = {h0}")));
    }
    let kappa = -2.0 / (sigma * sigma * (theta1 + theta2));

    // running ∫₀^{x_j} h(u) e^{−θ₁u} du and ∫₀^{x_j} h(u) e^{θ₂u} du
    let mut acc_up = 0.0;
    let mut acc_down = 0.0;
    let mut pieces = Vec::with_capacity(h.pieces.len());
    for (j, p) in h.pieces.iter().enumerate() {
        let lo = h.breaks[j];
        let mut terms = vec![
            ExpPolyTerm::new(acc_up, 0, theta1),
            ExpPolyTerm::new(-acc_down, 0, -theta2),
        ];
        let mut up = Vec::new();
        let mut down = Vec::new();
        for t in &p.terms {
            kernel_term_integral(t, -theta1, lo, &mut up);
            kernel_term_integral(t, theta2, lo, &mut down);
        }
        terms.extend(up);
        terms.extend(down.into_iter().map(|t| ExpPolyTerm::new(-t.coeff, t.power, t.rate)));
        pieces.push(ExpPolyPiece::new(terms).scale(kappa));

        if let Some(&hi) = h.breaks.get(j + 1) {
            acc_up += definite_kernel_integral(p, -theta1, lo, hi);
            acc_down += definite_kernel_integral(p, theta2, lo, hi);
        }
    }
    Ok(ExpPolyPiecewise {
        breaks: h.breaks.clone(),
        pieces,
    })
}
