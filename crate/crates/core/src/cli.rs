//! Command-line front end.
//!
//! Every command loads a JSON config, solves the group and writes CSV files
//! into the output directory. Floats are written with 17 significant digits
//! so reruns produce byte-identical files.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::explicit2::solve_explicit2;
use crate::model::{DefaultState, ModelParams, WARN_SUBSIDIARIES};
use crate::recursion::{solve_all, PolicySolution};
use crate::simulate::{compare_policies, SimConfig};
use crate::verify::{verify_all, GridSpec};
use crate::vi_solver::Tolerances;

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

const SOLVE_GRID_POINTS: usize = 21;
const COMPARE_POINTS: usize = 200;
const DEFAULT_PATHS: usize = 10_000;

#[derive(Parser, Debug, Clone, PartialEq)]
#[command(name = "divcontagion", version, about = "Dividend barriers for an insurance group under contagious default")]
pub struct RunSpec {
    #[command(subcommand)]
    pub command: Command,

    /// Model config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// Residual tolerance for `verify`.
    #[arg(long, global = true)]
    pub tol: Option<f64>,

    /// Points per axis of the value or verification grid.
    #[arg(long = "grid-points", global = true)]
    pub grid_points: Option<usize>,

    /// Monte Carlo paths (antithetic pairs).
    #[arg(long, global = true)]
    pub paths: Option<usize>,

    /// Euler step.
    #[arg(long, global = true)]
    pub dt: Option<f64>,

    /// Simulation horizon; defaults to 20 / discount.
    #[arg(long, global = true)]
    pub horizon: Option<f64>,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Barrier scale factors, comma separated.
    // the full path keeps clap from treating the list as repeated values
    #[arg(long, global = true, value_parser = parse_list)]
    pub perturb: Option<std::vec::Vec<f64>>,

    /// Start surpluses, comma separated; defaults to half the barriers.
    #[arg(long, global = true, value_parser = parse_list)]
    pub x0: Option<std::vec::Vec<f64>>,

    /// Start default state as a bitstring, subsidiary 1 first.
    #[arg(long, global = true, value_parser = parse_state)]
    pub z0: Option<DefaultState>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Solve every state and write barriers.csv, value_grid.csv and solution.txt.
    Solve,
    /// Check the solution and write report.csv.
    Verify,
    /// Simulate the optimal (and scaled) barrier policies into sim.csv.
    Simulate,
    /// Compare the generic solver with the explicit two-subsidiary formulas.
    Explicit2,
    /// Print the barrier table.
    Barriers,
}

/// Comma-separated finite numbers.
pub fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty list".into());
    }
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{t}` is not a finite number"))
        })
        .collect()
}

fn parse_state(s: &str) -> std::result::Result<DefaultState, String> {
    DefaultState::parse_bits(s).map_err(|e| e.to_string())
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: e.to_string(),
    }
}

fn solver_err(e: Error) -> Failure {
    Failure {
        code: EXIT_SOLVER,
        message: e.to_string(),
    }
}

fn load(spec: &RunSpec) -> std::result::Result<ModelParams, Failure> {
    let path = spec
        .config
        .as_deref()
        .ok_or_else(|| config_err("--config is required"))?;
    let params = ModelParams::from_json_file(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    params
        .ensure_valid()
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if params.n > WARN_SUBSIDIARIES {
        eprintln!(
            "warning: {} subsidiaries give {} default states; solving may be slow",
            params.n,
            1u64 << params.n
        );
    }
    Ok(params)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> std::result::Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(config_err)?;
    std::fs::write(dir.join(name), contents).map_err(|e| config_err(format!("{name}: {e}")))
}

/// Runs one command; informational output goes to `stdout`.
pub fn run(spec: &RunSpec, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    let params = load(spec)?;
    let tol = Tolerances::default();
    let sol = solve_all(&params, &tol).map_err(solver_err)?;
    match spec.command {
        Command::Solve => {
            let k = spec.grid_points.unwrap_or(SOLVE_GRID_POINTS);
            write_file(&spec.out, "barriers.csv", &barriers_csv(&sol))?;
            write_file(&spec.out, "value_grid.csv", &value_grid_csv(&sol, k))?;
            write_file(&spec.out, "solution.txt", &sol.to_record())?;
        }
        Command::Barriers => {
            stdout
                .write_all(barriers_csv(&sol).as_bytes())
                .map_err(config_err)?;
        }
        Command::Verify => {
            let grid = GridSpec {
                points: spec.grid_points.unwrap_or(GridSpec::default().points),
                ..GridSpec::default()
            };
            let tol = Tolerances {
                residual: spec.tol.unwrap_or(tol.residual),
                ..tol
            };
            let report = verify_all(&sol, &grid, &tol);
            write_file(&spec.out, "report.csv", &report.to_csv())?;
            let failed: Vec<&str> = report.hard_failures().map(|e| e.name).collect();
            if !failed.is_empty() {
                return Err(Failure {
                    code: EXIT_VERIFY,
                    message: format!("hard checks failed: {}", failed.join(", ")),
                });
            }
            let _ = writeln!(stdout, "all {} hard checks passed", report.entries.iter().filter(|e| e.hard).count());
        }
        Command::Simulate => {
            let csv = simulate_csv(spec, &params, &sol)?;
            write_file(&spec.out, "sim.csv", &csv)?;
        }
        Command::Explicit2 => match comparison_csv(&params, &sol) {
            Ok(csv) => write_file(&spec.out, "comparison.csv", &csv)?,
            Err(Error::OracleUnavailable(msg)) => {
                let _ = writeln!(stdout, "explicit oracle unavailable: {msg}");
            }
            Err(Error::Contract(msg)) => return Err(config_err(msg)),
            Err(e) => return Err(solver_err(e)),
        },
    }
    Ok(())
}

pub fn barriers_csv(sol: &PolicySolution) -> String {
    let mut s = String::from("state,subsidiary,m,C\n");
    for row in sol.barriers_table() {
        let _ = writeln!(s, "{},{},{},{}", row.state, row.subsidiary + 1, num(row.m), num(row.c));
    }
    s
}

/// Group value on a tensor grid over the survivors of each state, with
/// defaulted coordinates held at 0.
pub fn value_grid_csv(sol: &PolicySolution, points: usize) -> String {
    let n = sol.n();
    let k = points.max(2);
    let mut s = String::from("state");
    for i in 1..=n {
        let _ = write!(s, ",x{i}");
    }
    s.push_str(",f\n");
    for mask in 0..(1u32 << n) {
        let z = DefaultState::new(n, mask);
        let alive = z.surviving();
        let upper = sol.max_barrier(z) + 1.0;
        let total = k.pow(alive.len() as u32);
        let mut x = vec![0.0; n];
        for flat in 0..total {
            let mut rest = flat;
            for &i in &alive {
                x[i] = upper * (rest % k) as f64 / (k - 1) as f64;
                rest /= k;
            }
            s.push_str(&z.bitstring());
            for v in &x {
                let _ = write!(s, ",{}", num(*v));
            }
            let _ = writeln!(s, ",{}", num(sol.value(&x, z)));
        }
    }
    s
}

fn simulate_csv(
    spec: &RunSpec,
    params: &ModelParams,
    sol: &PolicySolution,
) -> std::result::Result<String, Failure> {
    let n = params.n;
    let z0 = spec.z0.unwrap_or_else(|| DefaultState::all_alive(n));
    if z0.n() != n {
        return Err(config_err(format!("--z0 must have {n} digits")));
    }
    let x0 = match &spec.x0 {
        Some(x) if x.len() != n => return Err(config_err(format!("--x0 must have {n} entries"))),
        Some(x) => x.clone(),
        None => (0..n)
            .map(|i| sol.barrier(i, z0).map_or(0.0, |m| m / 2.0))
            .collect(),
    };
    let mut cfg = SimConfig::for_params(params, spec.paths.unwrap_or(DEFAULT_PATHS), spec.seed);
    if let Some(dt) = spec.dt {
        cfg.dt = dt;
    }
    if let Some(h) = spec.horizon {
        cfg.horizon = h;
    }
    let scales = spec.perturb.clone().unwrap_or_else(|| vec![1.0]);
    let rows = compare_policies(params, sol, &scales, &x0, z0, &cfg).map_err(|e| match e {
        Error::Simulation(_) => config_err(e),
        e => solver_err(e),
    })?;
    let mut s = String::from("policy_scale,estimate,std_error,paths");
    for i in 1..=n {
        let _ = write!(s, ",sub{i}");
    }
    s.push('\n');
    for row in rows {
        let r = &row.result;
        let _ = write!(s, "{},{},{},{}", num(row.scale), num(r.estimate), num(r.std_error), r.paths_used);
        for b in &r.breakdown {
            let _ = write!(s, ",{}", num(*b));
        }
        s.push('\n');
    }
    Ok(s)
}

/// Largest difference between the generic and the explicit value functions
/// of each subsidiary with both alive.
pub fn comparison_csv(params: &ModelParams, sol: &PolicySolution) -> Result<String> {
    let ex = solve_explicit2(params)?;
    let z = DefaultState::all_alive(2);
    let mut s = String::from("function,max_abs_diff,m_generic,m_explicit\n");
    for (i, part) in ex.parts.iter().enumerate() {
        let generic = sol.get(i, z).expect("both alive solved");
        let upper = generic.m.max(part.m) + 1.0;
        let diff = (0..COMPARE_POINTS)
            .map(|k| {
                let x = upper * k as f64 / (COMPARE_POINTS - 1) as f64;
                (generic.value(x) - part.value(x, 0)).abs()
            })
            .fold(0.0, f64::max);
        let _ = writeln!(s, "f{},{},{},{}", i + 1, num(diff), num(generic.m), num(part.m));
    }
    Ok(s)
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let spec = match RunSpec::try_parse_from(args) {
        Ok(spec) => spec,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match run(&spec, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
