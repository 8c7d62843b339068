//! Problem inputs: market parameters, contagion intensities and the
//! default-state lattice `{0,1}^N`.

use std::collections::BTreeMap;
use std::fmt;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Largest group size the dense intensity table supports.
pub const MAX_SUBSIDIARIES: usize = 16;
/// Group sizes above this trigger a size warning (the lattice has `2^N` states).
pub const WARN_SUBSIDIARIES: usize = 10;

const WEIGHT_SUM_TOL: f64 = 1e-12;
const PSD_JITTER: f64 = 1e-10;

/// Which subsidiaries have defaulted. Bit `i` set means subsidiary `i`
/// (zero-based) has defaulted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DefaultState {
    mask: u32,
    n: u8,
}

impl DefaultState {
    pub fn new(n: usize, mask: u32) -> Self {
        assert!(n >= 1 && n <= MAX_SUBSIDIARIES, "group size {n} out of range");
        assert!(mask >> n == 0, "mask {mask:#b} has bits beyond {n} subsidiaries");
        DefaultState { mask, n: n as u8 }
    }

    pub fn all_alive(n: usize) -> Self {
        Self::new(n, 0)
    }

    pub fn all_defaulted(n: usize) -> Self {
        Self::new(n, (1u32 << n) - 1)
    }

    pub fn n(&self) -> usize {
        self.n as usize
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn is_defaulted(&self, i: usize) -> bool {
        self.mask & (1 << i) != 0
    }

    pub fn is_alive(&self, i: usize) -> bool {
        !self.is_defaulted(i)
    }

    pub fn defaulted_count(&self) -> usize {
        self.mask.count_ones() as usize
    }

    /// Neighbour state `z^l` in which subsidiary `l` has also defaulted.
    /// Returns `None` when `l` has already defaulted.
    pub fn with_default(&self, l: usize) -> Option<Self> {
        if l >= self.n() || self.is_defaulted(l) {
            None
        } else {
            Some(DefaultState {
                mask: self.mask | (1 << l),
                n: self.n,
            })
        }
    }

    /// Surviving subsidiaries in ascending order.
    pub fn surviving(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.is_alive(i)).collect()
    }

    /// Bitstring with the leftmost character for subsidiary 1.
    pub fn bitstring(&self) -> String {
        (0..self.n())
            .map(|i| if self.is_defaulted(i) { '1' } else { '0' })
            .collect()
    }

    pub fn parse_bits(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s.len() > MAX_SUBSIDIARIES {
            return Err(Error::Config(format!(
                "default state `{s}` must have 1..={MAX_SUBSIDIARIES} digits"
            )));
        }
        let mut mask = 0u32;
        for (i, c) in s.chars().enumerate() {
            match c {
                '0' => {}
                '1' => mask |= 1 << i,
                _ => {
                    return Err(Error::Config(format!(
                        "default state `{s}` may only contain 0 and 1"
                    )))
                }
            }
        }
        Ok(Self::new(s.len(), mask))
    }
}

impl fmt::Display for DefaultState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bitstring())
    }
}

/// All `2^n` states grouped by number of defaults, all-defaulted first.
/// Within a group states are in ascending mask order.
pub fn states_by_defaults(n: usize) -> Vec<Vec<DefaultState>> {
    let mut groups = vec![Vec::new(); n + 1];
    for mask in 0..(1u32 << n) {
        let z = DefaultState::new(n, mask);
        groups[n - z.defaulted_count()].push(z);
    }
    groups
}

/// Dense default-intensity table `λ_i(z)`, indexed by state mask.
/// Entries for defaulted subsidiaries hold `NaN` and are never read.
#[derive(Clone, Debug)]
pub struct IntensityTable {
    n: usize,
    rates: Vec<f64>,
}

impl PartialEq for IntensityTable {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self
                .rates
                .iter()
                .zip(&other.rates)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

impl IntensityTable {
    pub fn from_fn(n: usize, mut rate: impl FnMut(usize, DefaultState) -> f64) -> Self {
        let mut rates = vec![f64::NAN; n << n];
        for mask in 0..(1u32 << n) {
            let z = DefaultState::new(n, mask);
            for i in z.surviving() {
                rates[(mask as usize) * n + i] = rate(i, z);
            }
        }
        IntensityTable { n, rates }
    }

    /// `λ_i(z) = base_i · factor^{#defaults(z)}`.
    pub fn from_rule(base: &[f64], factor: f64) -> Self {
        Self::from_fn(base.len(), |i, z| {
            base[i] * factor.powi(z.defaulted_count() as i32)
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, z: DefaultState) -> f64 {
        self.rates[(z.mask() as usize) * self.n + i]
    }

    pub fn set(&mut self, i: usize, z: DefaultState, value: f64) {
        self.rates[(z.mask() as usize) * self.n + i] = value;
    }

    /// Total default rate `Σ_{l surviving} λ_l(z)`.
    pub fn total(&self, z: DefaultState) -> f64 {
        z.surviving().into_iter().map(|l| self.get(l, z)).sum()
    }
}

/// Market and contagion parameters of the insurance group.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub n: usize,
    /// Premium drifts `a_i`.
    pub drift: Vec<f64>,
    /// Surplus volatilities `b_i`.
    pub vol: Vec<f64>,
    /// Brownian correlation matrix.
    pub corr: Vec<Vec<f64>>,
    pub discount: f64,
    /// Ownership weights `α_i`, summing to one.
    pub weights: Vec<f64>,
    pub intensity: IntensityTable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn violation(out: &mut Vec<Violation>, field: &'static str, message: String) {
    out.push(Violation { field, message });
}

impl ModelParams {
    /// Every violated invariant; an empty list means the parameters are valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let n = self.n;
        if n == 0 || n > MAX_SUBSIDIARIES {
            violation(&mut v, "n", format!("must be in 1..={MAX_SUBSIDIARIES}, got {n}"));
            return v;
        }
        for (field, vec) in [
            ("drift", &self.drift),
            ("vol", &self.vol),
            ("weights", &self.weights),
        ] {
            if vec.len() != n {
                violation(&mut v, field, format!("expected {n} entries, got {}", vec.len()));
            }
        }
        if self.intensity.n() != n {
            violation(
                &mut v,
                "intensity",
                format!("table is for {} subsidiaries, expected {n}", self.intensity.n()),
            );
        }
        if !v.is_empty() {
            return v;
        }

        for i in 0..n {
            if !(self.drift[i] > 0.0 && self.drift[i].is_finite()) {
                violation(&mut v, "drift", format!("a_{} = {} must be > 0", i + 1, self.drift[i]));
            }
            if !(self.vol[i] > 0.0 && self.vol[i].is_finite()) {
                violation(&mut v, "vol", format!("b_{} = {} must be > 0", i + 1, self.vol[i]));
            }
            if !(self.weights[i] > 0.0 && self.weights[i].is_finite()) {
                violation(
                    &mut v,
                    "weights",
                    format!("alpha_{} = {} must be > 0", i + 1, self.weights[i]),
                );
            }
        }
        if !(self.discount > 0.0 && self.discount.is_finite()) {
            violation(&mut v, "discount", format!("r = {} must be > 0", self.discount));
        }
        let wsum: f64 = self.weights.iter().sum();
        if (wsum - 1.0).abs() > WEIGHT_SUM_TOL {
            violation(&mut v, "weights", format!("weights sum to {wsum}, expected 1"));
        }

        self.validate_corr(&mut v);
        self.validate_intensity(&mut v);
        v
    }

    fn validate_corr(&self, v: &mut Vec<Violation>) {
        let n = self.n;
        if self.corr.len() != n || self.corr.iter().any(|row| row.len() != n) {
            violation(v, "corr", format!("must be a {n}x{n} matrix"));
            return;
        }
        let mut shape_ok = true;
        for i in 0..n {
            if self.corr[i][i] != 1.0 {
                violation(v, "corr", format!("diagonal entry ({0},{0}) must be 1", i + 1));
                shape_ok = false;
            }
            for j in 0..n {
                let rho = self.corr[i][j];
                if !(-1.0..=1.0).contains(&rho) {
                    violation(v, "corr", format!("entry ({},{}) = {rho} outside [-1,1]", i + 1, j + 1));
                    shape_ok = false;
                }
                if j > i && rho != self.corr[j][i] {
                    violation(v, "corr", format!("not symmetric at ({},{})", i + 1, j + 1));
                    shape_ok = false;
                }
            }
        }
        if shape_ok && cholesky(&self.corr).is_none() {
            violation(v, "corr", "matrix is not positive semi-definite".to_string());
        }
    }

    fn validate_intensity(&self, v: &mut Vec<Violation>) {
        let n = self.n;
        for mask in 0..(1u32 << n) {
            let z = DefaultState::new(n, mask);
            for i in z.surviving() {
                let rate = self.intensity.get(i, z);
                if !(rate > 0.0 && rate.is_finite()) {
                    violation(
                        v,
                        "intensity",
                        format!("lambda_{}({z}) = {rate} must be > 0", i + 1),
                    );
                    continue;
                }
                for l in z.surviving() {
                    if l == i {
                        continue;
                    }
                    let next = z.with_default(l).expect("l survives in z");
                    let after = self.intensity.get(i, next);
                    if after.is_finite() && after < rate {
                        violation(
                            v,
                            "intensity",
                            format!(
                                "contagion monotonicity: lambda_{}({next}) = {after} < lambda_{}({z}) = {rate}",
                                i + 1,
                                i + 1
                            ),
                        );
                    }
                }
            }
        }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(v.iter().map(|x| x.to_string()).collect()))
        }
    }

    /// Lower Cholesky factor of the correlation matrix.
    pub fn corr_cholesky(&self) -> Result<Vec<Vec<f64>>> {
        cholesky(&self.corr)
            .ok_or_else(|| Error::InvalidParams(vec!["corr: matrix is not positive semi-definite".into()]))
    }

    pub fn with_corr(&self, corr: Vec<Vec<f64>>) -> Self {
        ModelParams {
            corr,
            ..self.clone()
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: ConfigDoc = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        doc.into_params()
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// The two-subsidiary parameter set used throughout the documentation
    /// and the acceptance suite.
    pub fn fig1() -> Self {
        let n = 2;
        let mut intensity = IntensityTable::from_fn(n, |_, _| f64::NAN);
        let s = |bits: &str| DefaultState::parse_bits(bits).unwrap();
        intensity.set(0, s("00"), 0.02);
        intensity.set(0, s("01"), 0.04);
        intensity.set(1, s("00"), 0.01);
        intensity.set(1, s("10"), 0.04);
        ModelParams {
            n,
            drift: vec![0.1, 0.15],
            vol: vec![0.07, 0.06],
            corr: identity(n),
            discount: 0.05,
            weights: vec![0.4, 0.6],
            intensity,
        }
    }
}

pub fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Lower-triangular Cholesky factor of a symmetric PSD matrix, tolerating
/// pivots down to `-1e-10`. Returns `None` when the matrix is not PSD.
pub fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let d = a[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if !(d >= -PSD_JITTER) {
            return None;
        }
        let ljj = d.max(0.0).sqrt();
        l[j][j] = ljj;
        for i in j + 1..n {
            let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if ljj > PSD_JITTER.sqrt() {
                l[i][j] = s / ljj;
            } else if s.abs() > 1e-8 {
                // zero pivot with a nonzero coupling: not PSD
                return None;
            }
        }
    }
    Some(l)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    n: usize,
    drift: Vec<f64>,
    vol: Vec<f64>,
    corr: Vec<Vec<f64>>,
    discount: f64,
    weights: Vec<f64>,
    intensity: IntensitySpec,
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum IntensitySpec {
    Table(BTreeMap<String, Vec<Option<f64>>>),
    Rule { base: Vec<f64>, factor: f64 },
}

impl ConfigDoc {
    fn into_params(self) -> Result<ModelParams> {
        let n = self.n;
        if n == 0 || n > MAX_SUBSIDIARIES {
            return Err(Error::Config(format!("n must be in 1..={MAX_SUBSIDIARIES}, got {n}")));
        }
        let intensity = match self.intensity {
            IntensitySpec::Rule { base, factor } => {
                if base.len() != n {
                    return Err(Error::Config(format!(
                        "intensity.rule.base: expected {n} entries, got {}",
                        base.len()
                    )));
                }
                if !(factor >= 1.0 && factor.is_finite()) {
                    return Err(Error::Config(format!(
                        "intensity.rule.factor must be >= 1, got {factor}"
                    )));
                }
                IntensityTable::from_rule(&base, factor)
            }
            IntensitySpec::Table(entries) => {
                let mut table = IntensityTable::from_fn(n, |_, _| f64::NAN);
                for (key, rates) in entries {
                    let z = DefaultState::parse_bits(&key)
                        .map_err(|e| Error::Config(format!("intensity.table.\"{key}\": {e}")))?;
                    if z.n() != n {
                        return Err(Error::Config(format!(
                            "intensity.table.\"{key}\": expected {n} digits"
                        )));
                    }
                    if rates.len() != n {
                        return Err(Error::Config(format!(
                            "intensity.table.\"{key}\": expected {n} rates, got {}",
                            rates.len()
                        )));
                    }
                    for i in z.surviving() {
                        table.set(i, z, rates[i].unwrap_or(f64::NAN));
                    }
                }
                table
            }
        };
        Ok(ModelParams {
            n,
            drift: self.drift,
            vol: self.vol,
            corr: self.corr,
            discount: self.discount,
            weights: self.weights,
            intensity,
        })
    }
}
