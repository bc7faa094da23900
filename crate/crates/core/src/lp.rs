//! Dense two-phase simplex for the small linear programs solved by the
//! mechanism designer.
//!
//! Problems have the form
//!
//! ```text
//! minimize    cᵀx
//! subject to  A_eq x = b_eq
//!             A_le x ≤ b_le
//!             x ≥ 0
//! ```
//!
//! The tableau is dense, so the solver is meant for a few thousand variables
//! at most. Pricing is Dantzig's rule; after a run of degenerate pivots it
//! switches to Bland's rule, which cannot cycle.

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub le: Vec<(Vec<f64>, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    /// Phase one could not drive the artificial variables to zero.
    /// `residual` is the remaining sum of infeasibilities and `row` the
    /// constraint carrying the largest share of it.
    Infeasible { residual: f64, row: usize },
    Unbounded,
}

#[derive(Clone, Copy, Debug)]
pub struct SimplexOptions {
    /// Phase-one residual above which the problem is declared infeasible.
    pub feas_tol: f64,
    /// Reduced costs above `-opt_tol` count as optimal.
    pub opt_tol: f64,
    pub pivot_tol: f64,
    pub max_pivots: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-9,
            opt_tol: 1e-11,
            pivot_tol: 1e-11,
            max_pivots: 200_000,
        }
    }
}

struct Tableau {
    /// `rows × (cols + 1)`; the last column is the right-hand side.
    a: Vec<f64>,
    rows: usize,
    cols: usize,
    /// Reduced-cost row, `cols + 1` entries (last is minus the objective).
    cost: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn width(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.width() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width();
        let inv = 1.0 / self.at(pr, pc);
        for v in &mut self.a[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        self.a[pr * w + pc] = 1.0;
        let pivot_row: Vec<f64> = self.a[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.a[r * w + pc];
            if f != 0.0 {
                let row = &mut self.a[r * w..(r + 1) * w];
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[pc] = 0.0;
            }
        }
        let f = self.cost[pc];
        if f != 0.0 {
            for (v, p) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            self.cost[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Runs simplex iterations on the current cost row. Columns with
    /// `allowed[c] == false` never enter the basis.
    fn optimize(&mut self, allowed: &[bool], opts: &SimplexOptions) -> Result<bool> {
        let mut degenerate_run = 0usize;
        for _ in 0..opts.max_pivots {
            let bland = degenerate_run > 50;
            let mut enter = None;
            let mut best = -opts.opt_tol;
            for c in 0..self.cols {
                if !allowed[c] {
                    continue;
                }
                let rc = self.cost[c];
                if rc < best {
                    enter = Some(c);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(pc) = enter else {
                return Ok(true);
            };
            let mut leave: Option<usize> = None;
            let mut ratio = f64::INFINITY;
            for r in 0..self.rows {
                let v = self.at(r, pc);
                if v > opts.pivot_tol {
                    let q = self.rhs(r).max(0.0) / v;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            q < ratio - 1e-14
                                || (q <= ratio + 1e-14
                                    && if bland {
                                        self.basis[r] < self.basis[l]
                                    } else {
                                        v > self.at(l, pc)
                                    })
                        }
                    };
                    if better {
                        ratio = q;
                        leave = Some(r);
                    }
                }
            }
            let Some(pr) = leave else {
                return Ok(false);
            };
            if ratio <= 1e-14 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(pr, pc);
        }
        Err(Error::Design(format!(
            "simplex exceeded {} pivots",
            opts.max_pivots
        )))
    }
}

pub fn solve(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpOutcome> {
    let n = lp.objective.len();
    for (row, _) in lp.eq.iter().chain(&lp.le) {
        if row.len() != n {
            return Err(Error::input("constraint row length differs from objective length"));
        }
    }
    let n_le = lp.le.len();
    let rows = lp.eq.len() + n_le;

    // Normalize each row to unit max-coefficient and non-negative rhs.
    struct Row {
        coef: Vec<f64>,
        rhs: f64,
        slack: f64,
    }
    let mut norm_rows = Vec::with_capacity(rows);
    for (coef, rhs, slack) in lp
        .eq
        .iter()
        .map(|(c, b)| (c, *b, 0.0))
        .chain(lp.le.iter().map(|(c, b)| (c, *b, 1.0)))
    {
        let scale = coef.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
        let f = sign / scale;
        norm_rows.push(Row {
            coef: coef.iter().map(|v| v * f).collect(),
            rhs: rhs * f,
            slack: slack * f,
        });
    }

    // Columns: structural | slacks | artificials.
    let needs_art: Vec<bool> = norm_rows.iter().map(|r| r.slack <= 0.0).collect();
    let n_art = needs_art.iter().filter(|b| **b).count();
    let cols = n + n_le + n_art;
    let width = cols + 1;
    let mut a = vec![0.0; rows * width];
    let mut basis = vec![0usize; rows];
    let mut art_col = n + n_le;
    let mut slack_col = n;
    for (r, row) in norm_rows.iter().enumerate() {
        let base = r * width;
        a[base..base + n].copy_from_slice(&row.coef);
        a[base + cols] = row.rhs;
        if r >= lp.eq.len() {
            a[base + slack_col] = row.slack;
            if row.slack > 0.0 {
                basis[r] = slack_col;
            }
            slack_col += 1;
        }
        if needs_art[r] {
            a[base + art_col] = 1.0;
            basis[r] = art_col;
            art_col += 1;
        }
    }

    // Phase one: minimize the sum of artificials.
    let mut cost = vec![0.0; width];
    for c in n + n_le..cols {
        cost[c] = 1.0;
    }
    for r in 0..rows {
        if needs_art[r] {
            for c in 0..width {
                cost[c] -= a[r * width + c];
            }
        }
    }
    let mut t = Tableau {
        a,
        rows,
        cols,
        cost,
        basis,
    };
    let all = vec![true; cols];
    t.optimize(&all, opts)?;
    let residual = -t.cost[cols];
    if residual > opts.feas_tol {
        let row = (0..rows)
            .filter(|r| t.basis[*r] >= n + n_le)
            .max_by(|x, y| t.rhs(*x).total_cmp(&t.rhs(*y)))
            .unwrap_or(0);
        return Ok(LpOutcome::Infeasible { residual, row });
    }

    // Drive zero-level artificials out of the basis where possible.
    for r in 0..rows {
        if t.basis[r] >= n + n_le {
            if let Some(c) = (0..n + n_le).find(|c| t.at(r, *c).abs() > 1e-9) {
                t.pivot(r, c);
            }
        }
    }

    // Phase two.
    let mut cost = vec![0.0; width];
    cost[..n].copy_from_slice(&lp.objective);
    for r in 0..rows {
        let cb = if t.basis[r] < n { lp.objective[t.basis[r]] } else { 0.0 };
        if cb != 0.0 {
            for c in 0..width {
                cost[c] -= cb * t.at(r, c);
            }
        }
    }
    t.cost = cost;
    let mut allowed = vec![true; cols];
    for c in allowed.iter_mut().skip(n + n_le) {
        *c = false;
    }
    if !t.optimize(&allowed, opts)? {
        return Ok(LpOutcome::Unbounded);
    }
    let mut x = vec![0.0; n];
    for r in 0..rows {
        if t.basis[r] < n {
            x[t.basis[r]] = t.rhs(r).max(0.0);
        }
    }
    let objective = x.iter().zip(&lp.objective).map(|(v, c)| v * c).sum();
    Ok(LpOutcome::Optimal { x, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn opt(lp: &LinearProgram) -> (Vec<f64>, f64) {
        match solve(lp, &SimplexOptions::default()).unwrap() {
            LpOutcome::Optimal { x, objective } => (x, objective),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18  → (2, 6), 36
        let lp = LinearProgram {
            objective: vec![-3.0, -5.0],
            eq: vec![],
            le: vec![
                (vec![1.0, 0.0], 4.0),
                (vec![0.0, 2.0], 12.0),
                (vec![3.0, 2.0], 18.0),
            ],
        };
        let (x, obj) = opt(&lp);
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(obj, -36.0, epsilon = 1e-12);
    }

    #[test]
    fn equality_and_negative_rhs() {
        // min x + 2y s.t. x + y = 3, -x ≤ -1 (x ≥ 1)
        let lp = LinearProgram {
            objective: vec![1.0, 2.0],
            eq: vec![(vec![1.0, 1.0], 3.0)],
            le: vec![(vec![-1.0, 0.0], -1.0)],
        };
        let (x, obj) = opt(&lp);
        assert_abs_diff_eq!(x[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(obj, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let infeasible = LinearProgram {
            objective: vec![1.0],
            eq: vec![(vec![1.0], 2.0)],
            le: vec![(vec![1.0], 1.0)],
        };
        assert!(matches!(
            solve(&infeasible, &SimplexOptions::default()).unwrap(),
            LpOutcome::Infeasible { .. }
        ));
        let unbounded = LinearProgram {
            objective: vec![-1.0, 0.0],
            eq: vec![(vec![0.0, 1.0], 1.0)],
            le: vec![],
        };
        assert_eq!(
            solve(&unbounded, &SimplexOptions::default()).unwrap(),
            LpOutcome::Unbounded
        );
    }

    #[test]
    fn redundant_equalities() {
        let lp = LinearProgram {
            objective: vec![1.0, 1.0],
            eq: vec![(vec![1.0, 1.0], 1.0), (vec![2.0, 2.0], 2.0)],
            le: vec![],
        };
        let (_, obj) = opt(&lp);
        assert_abs_diff_eq!(obj, 1.0, epsilon = 1e-12);
    }
}
