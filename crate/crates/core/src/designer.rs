//! Numerical MVU design.
//!
//! For a fixed output alphabet the minimum-variance unbiased mechanism under
//! L1-metric-DP is a linear program in the probabilities `p_ij`:
//!
//! ```text
//! minimize    Σ_i Σ_j a_j² p_ij
//! subject to  Σ_j p_ij = 1,   Σ_j a_j p_ij = x_i           (every i)
//!             p_ij ≤ exp(ε |x_i − x_i'|) p_i'j               (every i ≠ i', j)
//!             p_ij ≥ 0
//! ```
//!
//! (`Σ_i x_i²` is constant, so the objective equals the summed variance up to
//! a shift.) The alphabet is restricted to the symmetric affine family
//! `a_j = 1/2 + s (2(j−1)/(B_out−1) − 1)` and the scale `s` is chosen by a
//! golden-section search over the LP optimum.
//!
//! Metric-DP constraints are only generated for adjacent grid points; the
//! remaining pairs follow by chaining, since `|x_i − x_i'|` is additive along
//! the grid.

use std::fmt;

use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpOutcome, SimplexOptions};
use crate::mechanism::{log_sum_exp, MechanismTable};

/// Smallest probability a designed table may contain.
pub const PROB_FLOOR: f64 = 1e-12;
/// Largest `b_in · b_out` the dense designer accepts.
pub const MAX_TABLE_CELLS: usize = 4096;
pub const GOLDEN_ITERATIONS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct DesignSpec {
    pub b_in: usize,
    pub b_out: usize,
    pub eps: f64,
    /// Search interval for the alphabet scale `s`.
    pub alphabet_scale_range: (f64, f64),
    pub lp_tol: f64,
    pub symmetrize: bool,
}

impl DesignSpec {
    /// Default search range `[0.5, e^ε/(e^ε − 1) + 1]`, which brackets the
    /// randomized-response scale for every `ε`.
    pub fn new(b_in: usize, b_out: usize, eps: f64) -> Self {
        let upper = 1.0 / (-(-eps).exp_m1()) + 1.0;
        Self {
            b_in,
            b_out,
            eps,
            alphabet_scale_range: (0.5, upper),
            lp_tol: 1e-6,
            symmetrize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b_in < 2 || self.b_out < 2 {
            return Err(Error::input(format!(
                "b_in and b_out must be at least 2 (got {} and {})",
                self.b_in, self.b_out
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::input(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.lp_tol > 0.0 && self.lp_tol <= 1e-4) {
            return Err(Error::input(format!("lp_tol must lie in (0, 1e-4], got {}", self.lp_tol)));
        }
        let (lo, hi) = self.alphabet_scale_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::input(format!("bad alphabet scale range [{lo}, {hi}]")));
        }
        if self.b_in * self.b_out > MAX_TABLE_CELLS {
            return Err(Error::Size(format!(
                "b_in·b_out = {} exceeds {MAX_TABLE_CELLS}",
                self.b_in * self.b_out
            )));
        }
        Ok(())
    }
}

/// Affine alphabet `a_j = 1/2 + s (2(j−1)/(B_out−1) − 1)`.
pub fn affine_alphabet(b_out: usize, scale: f64) -> Vec<f64> {
    let last = (b_out - 1) as f64;
    (0..b_out)
        .map(|j| 0.5 + scale * (2.0 * j as f64 / last - 1.0))
        .collect()
}

/// The LP for a fixed alphabet.
pub fn mvu_program(grid: &[f64], alphabet: &[f64], eps: f64) -> LinearProgram {
    let b_in = grid.len();
    let b_out = alphabet.len();
    let n = b_in * b_out;
    let var = |i: usize, j: usize| i * b_out + j;
    let objective: Vec<f64> = (0..b_in).flat_map(|_| alphabet.iter().map(|a| a * a)).collect();
    let mut eq = Vec::with_capacity(2 * b_in);
    for (i, x) in grid.iter().enumerate() {
        let mut sum = vec![0.0; n];
        let mut mean = vec![0.0; n];
        for (j, a) in alphabet.iter().enumerate() {
            sum[var(i, j)] = 1.0;
            mean[var(i, j)] = *a;
        }
        eq.push((sum, 1.0));
        eq.push((mean, *x));
    }
    let mut le = Vec::with_capacity(2 * (b_in - 1) * b_out);
    for i in 0..b_in - 1 {
        let k = (eps * (grid[i + 1] - grid[i])).exp();
        for j in 0..b_out {
            for (p, q) in [(var(i, j), var(i + 1, j)), (var(i + 1, j), var(i, j))] {
                let mut row = vec![0.0; n];
                row[p] = 1.0;
                row[q] = -k;
                le.push((row, 0.0));
            }
        }
    }
    LinearProgram { objective, eq, le }
}

struct ScaleEval {
    scale: f64,
    /// Summed variance over the grid.
    variance: f64,
    probs: Vec<Vec<f64>>,
}

enum Eval {
    Feasible(ScaleEval),
    Infeasible { residual: f64, row: usize },
}

fn evaluate_scale(spec: &DesignSpec, grid: &[f64], scale: f64) -> Result<Eval> {
    let alphabet = affine_alphabet(spec.b_out, scale);
    let program = mvu_program(grid, &alphabet, spec.eps);
    let opts = SimplexOptions {
        feas_tol: 1e-9,
        ..SimplexOptions::default()
    };
    match lp::solve(&program, &opts)? {
        LpOutcome::Optimal { x, objective } => {
            let probs = x.chunks(spec.b_out).map(<[f64]>::to_vec).collect();
            let variance = objective - grid.iter().map(|v| v * v).sum::<f64>();
            Ok(Eval::Feasible(ScaleEval {
                scale,
                variance,
                probs,
            }))
        }
        LpOutcome::Infeasible { residual, row } => Ok(Eval::Infeasible { residual, row }),
        LpOutcome::Unbounded => Err(Error::Design("variance LP reported unbounded".into())),
    }
}

fn describe_row(spec: &DesignSpec, row: usize) -> String {
    let n_eq = 2 * spec.b_in;
    if row < n_eq {
        let kind = if row % 2 == 0 { "simplex" } else { "unbiasedness" };
        format!("{kind} at grid point {}", row / 2)
    } else {
        let k = row - n_eq;
        let pair = k / (2 * spec.b_out);
        let j = (k / 2) % spec.b_out;
        format!("metric-DP between grid points {pair} and {} at output {j}", pair + 1)
    }
}

/// Designs a table: golden-section search over the alphabet scale, LP at
/// each scale, then flooring, optional anadromic symmetrization and
/// re-verification at `spec.lp_tol`.
pub fn design_mvu(spec: &DesignSpec) -> Result<MechanismTable> {
    spec.validate()?;
    let grid = MechanismTable::uniform_grid(spec.b_in);
    let (mut lo, mut hi) = spec.alphabet_scale_range;

    let mut best: Option<ScaleEval> = None;
    let mut tightest: Option<(f64, usize)> = None;
    let mut eval = |s: f64, best: &mut Option<ScaleEval>| -> Result<f64> {
        match evaluate_scale(spec, &grid, s)? {
            Eval::Feasible(e) => {
                let v = e.variance;
                if best.as_ref().is_none_or(|b| v < b.variance) {
                    *best = Some(e);
                }
                Ok(v)
            }
            Eval::Infeasible { residual, row } => {
                if tightest.is_none_or(|(r, _)| residual < r) {
                    tightest = Some((residual, row));
                }
                Ok(f64::INFINITY)
            }
        }
    };

    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - golden * (hi - lo);
    let mut d = lo + golden * (hi - lo);
    let mut fc = eval(c, &mut best)?;
    let mut fd = eval(d, &mut best)?;
    for _ in 0..GOLDEN_ITERATIONS {
        // Feasibility is monotone in the scale: an infeasible `c` rules out
        // everything to its left.
        if fc.is_infinite() || fc > fd {
            lo = c;
            c = d;
            fc = fd;
            d = lo + golden * (hi - lo);
            fd = eval(d, &mut best)?;
        } else {
            hi = d;
            d = c;
            fd = fc;
            c = hi - golden * (hi - lo);
            fc = eval(c, &mut best)?;
        }
    }
    if best.is_none() {
        eval(spec.alphabet_scale_range.1, &mut best)?;
    }
    let Some(best) = best else {
        let detail = match tightest {
            Some((residual, row)) => format!(
                "LP infeasible at every alphabet scale; tightest violated constraint: {} (residual {residual:.3e})",
                describe_row(spec, row)
            ),
            None => "LP infeasible at every alphabet scale".into(),
        };
        return Err(Error::Design(detail));
    };

    let alphabet = affine_alphabet(spec.b_out, best.scale);
    let mut probs = best.probs;
    if spec.symmetrize {
        probs = anadromic_average(&probs);
    }
    let log_probs = finalize_log_probs(&grid, &probs, spec.eps);
    let table = MechanismTable::new(grid, alphabet, log_probs, spec.eps)
        .map_err(|e| Error::Design(format!("designed table failed its invariants: {e}")))?;
    let report = validate_table(&table, spec.lp_tol);
    if let Some(check) = report.first_failure() {
        return Err(Error::Design(format!("designed table failed validation: {check}")));
    }
    Ok(table)
}

/// Floors probabilities, renormalizes, and restores exact log-space metric-DP
/// where floating-point error in the LP left tiny violations.
fn finalize_log_probs(grid: &[f64], probs: &[Vec<f64>], eps: f64) -> Vec<Vec<f64>> {
    let mut logs: Vec<Vec<f64>> = probs
        .iter()
        .map(|row| {
            let floored: Vec<f64> = row.iter().map(|p| p.max(PROB_FLOOR)).collect();
            let z: f64 = floored.iter().sum();
            floored.iter().map(|p| (p / z).ln()).collect()
        })
        .collect();
    let b_in = grid.len();
    let b_out = logs[0].len();
    for _ in 0..100 {
        let mut worst = 0.0f64;
        for j in 0..b_out {
            let column: Vec<f64> = logs.iter().map(|r| r[j]).collect();
            for i in 0..b_in {
                let envelope = (0..b_in)
                    .map(|k| column[k] - eps * (grid[i] - grid[k]).abs())
                    .fold(f64::NEG_INFINITY, f64::max);
                worst = worst.max(envelope - column[i]);
                logs[i][j] = envelope;
            }
        }
        for row in &mut logs {
            let a = log_sum_exp(row);
            row.iter_mut().for_each(|l| *l -= a);
        }
        if worst <= 1e-15 {
            break;
        }
    }
    logs
}

/// `p_ij ← (p_ij + p_{B_in−i+1, B_out−j+1}) / 2`, rows renormalized.
pub fn anadromic_average(probs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let b_in = probs.len();
    (0..b_in)
        .map(|i| {
            let row = &probs[i];
            let mirror = &probs[b_in - 1 - i];
            let b_out = row.len();
            let avg: Vec<f64> = (0..b_out)
                .map(|j| (row[j] + mirror[b_out - 1 - j]) / 2.0)
                .collect();
            let z: f64 = avg.iter().sum();
            avg.into_iter().map(|p| p / z).collect()
        })
        .collect()
}

/// Symmetrizes a table so that row `i` is the reversal of row
/// `B_in − i + 1`, then re-checks every design constraint.
pub fn enforce_anadromic(table: &MechanismTable) -> Result<MechanismTable> {
    let averaged = anadromic_average(&table.probs());
    let log_probs = averaged
        .iter()
        .map(|row| row.iter().map(|p| p.ln()).collect())
        .collect();
    MechanismTable::new(
        table.grid().to_vec(),
        table.alphabet().to_vec(),
        log_probs,
        table.design_eps(),
    )
    .map_err(|e| Error::Symmetry(format!("symmetrized table violates its design constraints: {e}")))
}

/// Largest `|η_i[j] − η_{B_in−i+1}[B_out−j+1]|` over the table.
pub fn anadromic_error(log_probs: &[Vec<f64>]) -> f64 {
    let b_in = log_probs.len();
    let mut worst = 0.0f64;
    for i in 0..b_in {
        let b_out = log_probs[i].len();
        for j in 0..b_out {
            worst = worst.max((log_probs[i][j] - log_probs[b_in - 1 - i][b_out - 1 - j]).abs());
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub max_violation: f64,
    /// Where the largest violation occurred, e.g. `"row 3"`.
    pub location: Option<String>,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: max violation {:.3e}", self.name, self.max_violation)?;
        if let Some(loc) = &self.location {
            write!(f, " at {loc}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub tol: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.first_failure().is_none()
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !(c.max_violation <= self.tol))
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Fails with the first check exceeding its own tolerance.
    pub(crate) fn require(&self, tol: impl Fn(&str) -> f64) -> Result<()> {
        for c in &self.checks {
            if !(c.max_violation <= tol(c.name)) {
                return Err(Error::invariant(c.name, c.to_string()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.max_violation <= self.tol { "ok  " } else { "FAIL" };
            writeln!(f, "{status} {c}")?;
        }
        Ok(())
    }
}

pub fn validate_table(table: &MechanismTable, tol: f64) -> ValidationReport {
    let checks = validate_parts(
        table.grid(),
        table.alphabet(),
        &table.probs(),
        Some(table.log_probs()),
        table.design_eps(),
    )
    .checks;
    ValidationReport { checks, tol }
}

fn track(worst: &mut (f64, Option<String>), v: f64, loc: impl FnOnce() -> String) {
    if v > worst.0 || (v.is_nan() && !worst.0.is_nan()) {
        *worst = (v, Some(loc()));
    }
}

/// Runs every table check on raw parts. `log_probs`, when supplied, is used
/// for the metric-DP check instead of `ln(probs)`. The returned report has
/// tolerance zero; callers judge violations against their own tolerances.
pub fn validate_parts(
    grid: &[f64],
    alphabet: &[f64],
    probs: &[Vec<f64>],
    log_probs: Option<&[Vec<f64>]>,
    eps: f64,
) -> ValidationReport {
    let mut checks = Vec::new();
    let b_in = grid.len();
    let b_out = alphabet.len();
    let shape_ok = b_in >= 2
        && b_out >= 2
        && probs.len() == b_in
        && probs.iter().all(|r| r.len() == b_out)
        && log_probs.is_none_or(|l| l.len() == b_in && l.iter().all(|r| r.len() == b_out))
        && eps > 0.0
        && eps.is_finite();
    if !shape_ok {
        checks.push(Check {
            name: "shape",
            max_violation: f64::INFINITY,
            location: Some(format!(
                "b_in={b_in}, b_out={b_out}, rows={}, eps={eps}",
                probs.len()
            )),
        });
        return ValidationReport { checks, tol: 0.0 };
    }
    checks.push(Check {
        name: "shape",
        max_violation: 0.0,
        location: None,
    });

    let mut w = (0.0, None);
    let last = (b_in - 1) as f64;
    for (i, x) in grid.iter().enumerate() {
        track(&mut w, (x - i as f64 / last).abs(), || format!("grid point {i}"));
    }
    checks.push(Check {
        name: "grid_uniformity",
        max_violation: w.0,
        location: w.1,
    });

    let mut w = (0.0, None);
    for j in 0..b_out - 1 {
        let gap = alphabet[j] - alphabet[j + 1];
        track(&mut w, if gap >= 0.0 { gap.max(f64::MIN_POSITIVE) } else { 0.0 }, || {
            format!("alphabet entries {j},{}", j + 1)
        });
        if !alphabet[j].is_finite() {
            track(&mut w, f64::INFINITY, || format!("alphabet entry {j}"));
        }
    }
    checks.push(Check {
        name: "alphabet_order",
        max_violation: w.0,
        location: w.1,
    });

    let mut w = (0.0, None);
    for (i, row) in probs.iter().enumerate() {
        let s: f64 = row.iter().sum();
        track(&mut w, (s - 1.0).abs(), || format!("row {i}"));
        for (j, p) in row.iter().enumerate() {
            track(&mut w, -p, || format!("row {i}, output {j}"));
        }
    }
    checks.push(Check {
        name: "simplex",
        max_violation: w.0,
        location: w.1,
    });

    let mut w = (0.0, None);
    for (i, row) in probs.iter().enumerate() {
        for (j, p) in row.iter().enumerate() {
            if !(*p > 0.0 && p.is_finite()) {
                track(&mut w, f64::INFINITY, || format!("row {i}, output {j}"));
            }
        }
    }
    checks.push(Check {
        name: "positivity",
        max_violation: w.0,
        location: w.1,
    });

    let mut w = (0.0, None);
    for (i, row) in probs.iter().enumerate() {
        let mean: f64 = row.iter().zip(alphabet).map(|(p, a)| p * a).sum();
        track(&mut w, (mean - grid[i]).abs(), || format!("row {i}"));
    }
    checks.push(Check {
        name: "unbiasedness",
        max_violation: w.0,
        location: w.1,
    });

    let owned;
    let logs: &[Vec<f64>] = match log_probs {
        Some(l) => l,
        None => {
            owned = probs
                .iter()
                .map(|r| r.iter().map(|p| if *p > 0.0 { p.ln() } else { f64::NAN }).collect())
                .collect::<Vec<Vec<f64>>>();
            &owned
        }
    };
    let mut w = (0.0, None);
    for i in 0..b_in {
        for k in i + 1..b_in {
            let budget = eps * (grid[i] - grid[k]).abs();
            for j in 0..b_out {
                let v = (logs[i][j] - logs[k][j]).abs() - budget;
                let v = if v.is_nan() { f64::INFINITY } else { v.max(0.0) };
                track(&mut w, v, || format!("rows {i},{k}, output {j}"));
            }
        }
    }
    checks.push(Check {
        name: "metric_dp",
        max_violation: w.0,
        location: w.1,
    });

    ValidationReport { checks, tol: 0.0 }
}
