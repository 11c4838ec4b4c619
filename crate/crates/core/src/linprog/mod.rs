//! Small dense linear programs.
//!
//! [`solve_lp`] runs a two-phase primal simplex on a dense tableau with
//! Bland's rule, so a given program always follows the same pivot path.
//! [`LpBuilder`] assembles programs and linearizes weighted absolute-value
//! objectives with slack pairs.

mod simplex;

use serde::Serialize;

use crate::error::{Error, Result};

pub use simplex::SimplexOptions;

/// Pivot elements smaller than this are never used.
pub const PIVOT_TOL: f64 = 1e-10;
/// Phase-one residual and reduced-cost tolerance.
pub const FEAS_TOL: f64 = 1e-9;
/// Constraint violation accepted when certifying an optimal point.
pub const CHECK_TOL: f64 = 1e-7;

/// `minimize c^T x` subject to `A_eq x = b_eq`, `A_ub x <= b_ub` and
/// per-variable bounds (infinite bounds allowed).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub eq_matrix: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub ub_matrix: Vec<Vec<f64>>,
    pub ub_rhs: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Empty unless `status == Optimal`.
    pub x: Vec<f64>,
    pub objective_value: f64,
}

impl LinearProgram {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.n_vars();
        if self.bounds.len() != n {
            return Err(Error::MalformedLp(format!("{} bounds for {n} variables", self.bounds.len())));
        }
        if self.eq_matrix.len() != self.eq_rhs.len() || self.ub_matrix.len() != self.ub_rhs.len() {
            return Err(Error::MalformedLp("row count and right-hand side length differ".into()));
        }
        for row in self.eq_matrix.iter().chain(&self.ub_matrix) {
            if row.len() != n {
                return Err(Error::MalformedLp(format!("row of length {} for {n} variables", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::MalformedLp("non-finite constraint coefficient".into()));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::MalformedLp("non-finite objective coefficient".into()));
        }
        if self.eq_rhs.iter().chain(&self.ub_rhs).any(|b| !b.is_finite()) {
            return Err(Error::MalformedLp("non-finite right-hand side".into()));
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::MalformedLp(format!("bad bounds [{lo}, {hi}] on variable {j}")));
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let dot = |row: &[f64]| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let eq = self
            .eq_matrix
            .iter()
            .zip(&self.eq_rhs)
            .map(|(row, b)| (dot(row) - b).abs());
        let ub = self
            .ub_matrix
            .iter()
            .zip(&self.ub_rhs)
            .map(|(row, b)| (dot(row) - b).max(0.0));
        let bounds = self
            .bounds
            .iter()
            .zip(x)
            .map(|(&(lo, hi), &v)| (lo - v).max(v - hi).max(0.0));
        eq.chain(ub).chain(bounds).fold(0.0, f64::max)
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// Solves `lp` with default options.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    solve_lp_with(lp, &SimplexOptions::default())
}

pub fn solve_lp_with(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution> {
    lp.check()?;
    let sol = simplex::solve(lp, opts)?;
    if sol.status == LpStatus::Optimal {
        let violation = lp.max_violation(&sol.x);
        if violation > CHECK_TOL {
            return Err(Error::NumericalFailure(format!(
                "optimal point violates constraints by {violation:e}"
            )));
        }
    }
    Ok(sol)
}

/// A sparse linear expression `sum coef * x[var] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new(terms: Vec<(usize, f64)>, constant: f64) -> Self {
        LinExpr { terms, constant }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, c)| c * x[j]).sum::<f64>()
    }
}

/// One `weight * |expr|` objective term.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsTerm {
    pub weight: f64,
    pub expr: LinExpr,
}

/// Variable indices `(u, v)` with `expr = u - v`, `u, v >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlackPair {
    pub pos: usize,
    pub neg: usize,
}

/// Incremental [`LinearProgram`] assembly.
#[derive(Debug, Clone, Default)]
pub struct LpBuilder {
    objective: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    eq: Vec<(Vec<(usize, f64)>, f64)>,
    ub: Vec<(Vec<(usize, f64)>, f64)>,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        self.objective.push(cost);
        self.bounds.push((lower, upper));
        self.objective.len() - 1
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    /// `expr == 0`.
    pub fn add_eq(&mut self, expr: &LinExpr) {
        self.eq.push((expr.terms.clone(), -expr.constant));
    }

    /// `expr <= 0`.
    pub fn add_le(&mut self, expr: &LinExpr) {
        self.ub.push((expr.terms.clone(), -expr.constant));
    }

    /// `expr >= 0`.
    pub fn add_ge(&mut self, expr: &LinExpr) {
        let negated: Vec<(usize, f64)> = expr.terms.iter().map(|&(j, c)| (j, -c)).collect();
        self.ub.push((negated, expr.constant));
    }

    /// Adds `sum w_i |expr_i|` to the objective through slack pairs
    /// `expr_i = u_i - v_i`, `u_i, v_i >= 0`, costing `w_i (u_i + v_i)`.
    /// At an optimum with `w_i > 0` one of each pair is zero.
    pub fn abs_objective(&mut self, terms: &[AbsTerm]) -> Result<Vec<SlackPair>> {
        if let Some(t) = terms.iter().find(|t| !(t.weight >= 0.0) || !t.weight.is_finite()) {
            return Err(Error::InvalidWeight(t.weight));
        }
        let mut pairs = Vec::with_capacity(terms.len());
        for term in terms {
            let pos = self.add_var(0.0, f64::INFINITY, term.weight);
            let neg = self.add_var(0.0, f64::INFINITY, term.weight);
            let mut link = term.expr.clone();
            link.terms.push((pos, -1.0));
            link.terms.push((neg, 1.0));
            self.add_eq(&link);
            pairs.push(SlackPair { pos, neg });
        }
        Ok(pairs)
    }

    pub fn build(&self) -> LinearProgram {
        let n = self.objective.len();
        let dense = |rows: &[(Vec<(usize, f64)>, f64)]| -> (Vec<Vec<f64>>, Vec<f64>) {
            rows.iter()
                .map(|(terms, rhs)| {
                    let mut row = vec![0.0; n];
                    for &(j, c) in terms {
                        row[j] += c;
                    }
                    (row, *rhs)
                })
                .unzip()
        };
        let (eq_matrix, eq_rhs) = dense(&self.eq);
        let (ub_matrix, ub_rhs) = dense(&self.ub);
        LinearProgram {
            objective: self.objective.clone(),
            eq_matrix,
            eq_rhs,
            ub_matrix,
            ub_rhs,
            bounds: self.bounds.clone(),
        }
    }
}
