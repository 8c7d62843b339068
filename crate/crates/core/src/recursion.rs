//! Backward induction over the default-state lattice.
//!
//! States are solved from the all-defaulted state upward. For a state `z`
//! and a surviving subsidiary `i`, the source term is
//! `h_i = Σ_{l surviving, l≠i} λ_l(z) f_i(·, z^l)`, built exactly from the
//! already-computed solutions one default further down.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expfun::{parse_record_lines, ExpPolyPiecewise};
use crate::model::{states_by_defaults, DefaultState, ModelParams};
use crate::vi_solver::{self, OperatorCoeffs, Tolerances, VISolution};

/// Every `f_i(·, z)` of the group, indexed by `(state mask, subsidiary)`.
#[derive(Clone, Debug)]
pub struct PolicySolution {
    params: ModelParams,
    solutions: Vec<Option<VISolution>>,
}

/// One row of the barrier table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierRow {
    pub state: DefaultState,
    /// Zero-based subsidiary index.
    pub subsidiary: usize,
    pub m: f64,
    pub c: f64,
}

impl PolicySolution {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    fn index(&self, i: usize, z: DefaultState) -> usize {
        z.mask() as usize * self.params.n + i
    }

    /// Solution for surviving subsidiary `i` in state `z`.
    pub fn get(&self, i: usize, z: DefaultState) -> Option<&VISolution> {
        self.solutions.get(self.index(i, z)).and_then(Option::as_ref)
    }

    pub fn barrier(&self, i: usize, z: DefaultState) -> Option<f64> {
        self.get(i, z).map(|s| s.m)
    }

    /// `f_i(x, z)`; zero when `i` has defaulted in `z`.
    pub fn component(&self, i: usize, x: f64, z: DefaultState) -> f64 {
        self.get(i, z).map_or(0.0, |s| s.value(x))
    }

    /// Group value `f(x, z) = Σ_{i surviving} f_i(x_i, z)`; entries of `x`
    /// for defaulted subsidiaries are ignored.
    pub fn value(&self, x: &[f64], z: DefaultState) -> f64 {
        z.surviving()
            .into_iter()
            .map(|i| self.component(i, x[i], z))
            .sum()
    }

    /// Largest barrier over the survivors of `z` (0 when none survive).
    pub fn max_barrier(&self, z: DefaultState) -> f64 {
        z.surviving()
            .into_iter()
            .filter_map(|i| self.barrier(i, z))
            .fold(0.0, f64::max)
    }

    /// One row per surviving `(i, z)`, by ascending state mask then `i`.
    pub fn barriers_table(&self) -> Vec<BarrierRow> {
        let n = self.params.n;
        let mut rows = Vec::new();
        for mask in 0..(1u32 << n) {
            let z = DefaultState::new(n, mask);
            for i in z.surviving() {
                let s = self.get(i, z).expect("every survivor is solved");
                rows.push(BarrierRow {
                    state: z,
                    subsidiary: i,
                    m: s.m,
                    c: s.c,
                });
            }
        }
        rows
    }

    /// Text form: a header line followed by one value-function record per
    /// row of [`PolicySolution::barriers_table`].
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "policy {}", self.params.n);
        for row in self.barriers_table() {
            let _ = writeln!(
                s,
                "solution {} {} {:e} {:e}",
                row.state,
                row.subsidiary + 1,
                row.m,
                row.c
            );
            s.push_str(&self.get(row.subsidiary, row.state).unwrap().f.to_record());
        }
        s
    }
}

/// A value function read back from [`PolicySolution::to_record`].
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyRecord {
    pub state: DefaultState,
    pub subsidiary: usize,
    pub m: f64,
    pub c: f64,
    pub f: ExpPolyPiecewise,
}

/// Parses the text written by [`PolicySolution::to_record`].
pub fn parse_policy_record(text: &str) -> Result<Vec<PolicyRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (line, header) = lines
        .next()
        .ok_or_else(|| Error::parse(0, "empty policy record"))?;
    let n: usize = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["policy", n] => n
            .parse()
            .ok()
            .filter(|n| (1..=crate::model::MAX_SUBSIDIARIES).contains(n))
            .ok_or_else(|| Error::parse(line, format!("bad group size `{n}`")))?,
        _ => return Err(Error::parse(line, "expected `policy N`")),
    };
    let mut out = Vec::new();
    while let Some((line, head)) = lines.next() {
        let fields: Vec<&str> = head.split_whitespace().collect();
        let ["solution", bits, i, m, c] = fields.as_slice() else {
            return Err(Error::parse(line, "expected `solution STATE I M C`"));
        };
        let state = DefaultState::parse_bits(bits).map_err(|e| Error::parse(line, e.to_string()))?;
        if state.n() != n {
            return Err(Error::parse(line, format!("state `{bits}` is not {n} digits")));
        }
        let subsidiary: usize = i
            .parse()
            .ok()
            .filter(|&i| i >= 1 && i <= n)
            .ok_or_else(|| Error::parse(line, format!("bad subsidiary `{i}`")))?;
        let num = |t: &str| -> Result<f64> {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line, format!("bad number `{t}`")))
        };
        let (m, c) = (num(m)?, num(c)?);
        let f = parse_record_lines(&mut lines)?;
        out.push(PolicyRecord {
            state,
            subsidiary: subsidiary - 1,
            m,
            c,
            f,
        });
    }
    Ok(out)
}

/// Operator coefficients for subsidiary `i` in state `z`.
pub fn coeffs_for(params: &ModelParams, i: usize, z: DefaultState) -> Result<OperatorCoeffs> {
    OperatorCoeffs::new(
        params.discount + params.intensity.total(z),
        params.drift[i],
        params.vol[i],
        params.weights[i],
    )
}

/// Solves every `(i, z)` pair of the lattice.
pub fn solve_all(params: &ModelParams, tol: &Tolerances) -> Result<PolicySolution> {
    params.ensure_valid()?;
    let n = params.n;
    let mut sol = PolicySolution {
        params: params.clone(),
        solutions: vec![None; n << n],
    };
    for group in states_by_defaults(n) {
        let tasks: Vec<(usize, DefaultState)> = group
            .iter()
            .flat_map(|&z| z.surviving().into_iter().map(move |i| (i, z)))
            .collect();
        let solved: Vec<Result<(usize, VISolution)>> = tasks
            .par_iter()
            .map(|&(i, z)| {
                solve_one(&sol, i, z, tol)
                    .map(|s| (sol.index(i, z), s))
                    .map_err(|e| Error::AtState {
                        subsidiary: i + 1,
                        state: z.bitstring(),
                        source: Box::new(e),
                    })
            })
            .collect();
        for r in solved {
            let (idx, s) = r?;
            sol.solutions[idx] = Some(s);
        }
    }
    Ok(sol)
}

/// Source term `Σ_{l surviving, l≠i} λ_l(z) f_i(·, z^l)` from the lower level.
pub fn source_term(sol: &PolicySolution, i: usize, z: DefaultState) -> ExpPolyPiecewise {
    let params = &sol.params;
    let mut h = ExpPolyPiecewise::zero();
    for l in z.surviving() {
        if l == i {
            continue;
        }
        let lower = z.with_default(l).expect("l survives in z");
        let f = &sol
            .get(i, lower)
            .expect("lower level solved before this one")
            .f;
        h = h.add(&f.scale(params.intensity.get(l, z)));
    }
    h
}

fn solve_one(sol: &PolicySolution, i: usize, z: DefaultState, tol: &Tolerances) -> Result<VISolution> {
    let coeffs = coeffs_for(&sol.params, i, z)?;
    let h = source_term(sol, i, z);
    vi_solver::solve(&coeffs, &h, tol)
}
