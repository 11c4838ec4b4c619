//! Dense LU solves with an explicit near-singularity check.

use nalgebra::{DMatrix, DVector};

/// Relative pivot magnitude below which a system is reported singular.
const PIVOT_TOL: f64 = 1e-13;

/// Solves `a * x = b`. Returns `None` when a pivot of the LU factorization
/// is negligible relative to the largest matrix entry.
pub(crate) fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.amax().max(1.0);
    let lu = a.lu();
    let u = lu.u();
    if u.diagonal().iter().any(|d| d.abs() <= PIVOT_TOL * scale) {
        return None;
    }
    let x = lu.solve(&b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}
