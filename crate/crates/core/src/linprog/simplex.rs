//! Two-phase primal simplex on a dense tableau, Bland's pivoting rule.

use super::{LinearProgram, LpSolution, LpStatus, FEAS_TOL, PIVOT_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Total pivots across both phases before giving up.
    pub max_iterations: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iterations: 200_000,
        }
    }
}

/// `x_j = offset + sum coef * y_col` over nonnegative standard columns.
struct VarMap {
    offset: f64,
    cols: Vec<(usize, f64)>,
}

struct Tableau {
    rows: usize,
    /// Columns excluding the right-hand side.
    cols: usize,
    data: Vec<f64>,
    /// Reduced costs, last entry holds minus the objective value.
    obj: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn stride(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.stride() + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.stride() + self.cols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let stride = self.stride();
        let p = self.at(r, c);
        let (before, rest) = self.data.split_at_mut(r * stride);
        let (prow, after) = rest.split_at_mut(stride);
        for v in prow.iter_mut() {
            *v /= p;
        }
        prow[c] = 1.0;
        let eliminate = |row: &mut [f64]| {
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        };
        before.chunks_mut(stride).for_each(eliminate);
        after.chunks_mut(stride).for_each(eliminate);
        eliminate(&mut self.obj);
        self.basis[r] = c;
    }

    /// Bland's rule iterations over columns `< allowed`. Returns false when
    /// the objective is unbounded below.
    fn run(&mut self, allowed: usize, budget: &mut usize) -> Result<bool> {
        loop {
            let Some(c) = (0..allowed).find(|&j| self.obj[j] < -FEAS_TOL) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        if ratio < br - 1e-12 * (1.0 + br.abs())
                            || (ratio <= br + 1e-12 * (1.0 + br.abs()) && self.basis[i] < self.basis[bi])
                        {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                return Ok(false);
            };
            if *budget == 0 {
                return Err(Error::NumericalFailure("simplex iteration cap exceeded".into()));
            }
            *budget -= 1;
            self.pivot(r, c);
        }
    }

    fn set_objective(&mut self, costs: &[f64]) {
        let stride = self.stride();
        self.obj = vec![0.0; stride];
        self.obj[..costs.len()].copy_from_slice(costs);
        for i in 0..self.rows {
            let cb = self.obj_cost(costs, self.basis[i]);
            if cb != 0.0 {
                let row = &self.data[i * stride..(i + 1) * stride];
                for (o, v) in self.obj.iter_mut().zip(row) {
                    *o -= cb * v;
                }
            }
        }
    }

    fn obj_cost(&self, costs: &[f64], col: usize) -> f64 {
        costs.get(col).copied().unwrap_or(0.0)
    }

    fn remove_rows(&mut self, drop: &[bool]) {
        let stride = self.stride();
        let mut data = Vec::with_capacity(self.data.len());
        let mut basis = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            if !drop[i] {
                data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
                basis.push(self.basis[i]);
            }
        }
        self.rows = basis.len();
        self.data = data;
        self.basis = basis;
    }
}

pub(super) fn solve(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution> {
    // Shift, reflect or split every variable onto nonnegative columns.
    let mut maps = Vec::with_capacity(lp.n_vars());
    let mut n_y = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for &(lo, hi) in &lp.bounds {
        let map = if lo.is_finite() {
            if hi.is_finite() {
                bound_rows.push((n_y, hi - lo));
            }
            VarMap { offset: lo, cols: vec![(n_y, 1.0)] }
        } else if hi.is_finite() {
            VarMap { offset: hi, cols: vec![(n_y, -1.0)] }
        } else {
            n_y += 1;
            VarMap { offset: 0.0, cols: vec![(n_y - 1, 1.0), (n_y, -1.0)] }
        };
        n_y += 1;
        maps.push(map);
    }

    let transform = |row: &[f64], rhs: f64| -> (Vec<f64>, f64) {
        let mut out = vec![0.0; n_y];
        let mut b = rhs;
        for (j, &a) in row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            b -= a * maps[j].offset;
            for &(col, coef) in &maps[j].cols {
                out[col] += a * coef;
            }
        }
        (out, b)
    };

    // (coefficients over y, rhs, has_slack)
    let mut rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    for (row, &b) in lp.eq_matrix.iter().zip(&lp.eq_rhs) {
        let (r, b) = transform(row, b);
        rows.push((r, b, false));
    }
    for (row, &b) in lp.ub_matrix.iter().zip(&lp.ub_rhs) {
        let (r, b) = transform(row, b);
        rows.push((r, b, true));
    }
    for &(col, width) in &bound_rows {
        let mut r = vec![0.0; n_y];
        r[col] = 1.0;
        rows.push((r, width, true));
    }

    let m = rows.len();
    let n_s = rows.iter().filter(|r| r.2).count();
    let n_a = rows
        .iter()
        .filter(|(_, b, slack)| !*slack || *b < 0.0)
        .count();
    let cols = n_y + n_s + n_a;
    let stride = cols + 1;
    let mut data = vec![0.0; m * stride];
    let mut basis = vec![0usize; m];
    let mut slack_col = n_y;
    let mut art_col = n_y + n_s;
    for (i, (coeffs, b, has_slack)) in rows.iter().enumerate() {
        let sign = if *b < 0.0 { -1.0 } else { 1.0 };
        let row = &mut data[i * stride..(i + 1) * stride];
        for (dst, c) in row.iter_mut().zip(coeffs) {
            *dst = sign * c;
        }
        row[cols] = sign * b;
        if *has_slack {
            row[slack_col] = sign;
            if sign > 0.0 {
                basis[i] = slack_col;
            }
            slack_col += 1;
        }
        if !*has_slack || sign < 0.0 {
            row[art_col] = 1.0;
            basis[i] = art_col;
            art_col += 1;
        }
    }

    let mut t = Tableau {
        rows: m,
        cols,
        data,
        obj: Vec::new(),
        basis,
    };
    let mut budget = opts.max_iterations;
    let first_art = n_y + n_s;

    if n_a > 0 {
        let mut phase1 = vec![0.0; cols];
        phase1[first_art..].fill(1.0);
        t.set_objective(&phase1);
        t.run(cols, &mut budget)?;
        let scale = 1.0 + rows.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
        let residual = -t.obj[cols];
        if residual > FEAS_TOL * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: Vec::new(),
                objective_value: f64::NAN,
            });
        }
        // Pivot remaining (zero-level) artificials out; drop redundant rows.
        let mut drop = vec![false; t.rows];
        for i in 0..t.rows {
            if t.basis[i] < first_art {
                continue;
            }
            let stride = t.stride();
            let row = &t.data[i * stride..i * stride + first_art];
            let pick = row
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > PIVOT_TOL)
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(j, _)| j);
            match pick {
                Some(j) => t.pivot(i, j),
                None => drop[i] = true,
            }
        }
        if drop.iter().any(|&d| d) {
            t.remove_rows(&drop);
        }
    }

    let mut costs = vec![0.0; cols];
    let mut constant = 0.0;
    for (j, map) in maps.iter().enumerate() {
        let c = lp.objective[j];
        constant += c * map.offset;
        for &(col, coef) in &map.cols {
            costs[col] += c * coef;
        }
    }
    t.set_objective(&costs);
    if !t.run(first_art, &mut budget)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            objective_value: f64::NEG_INFINITY,
        });
    }

    let mut y = vec![0.0; cols];
    for i in 0..t.rows {
        y[t.basis[i]] = t.rhs(i).max(0.0);
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|map| map.offset + map.cols.iter().map(|&(col, coef)| coef * y[col]).sum::<f64>())
        .collect();
    let objective_value = lp.objective_at(&x);
    debug_assert!((objective_value - (constant - t.obj[cols])).abs() < 1e-6 * (1.0 + objective_value.abs()));
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective_value,
    })
}
