//! Dense two-phase simplex for tiny linear programs.
//!
//! Solves `maximize c'x  s.t.  A x <= b, x >= 0` and returns the optimal
//! vertex together with the row multipliers. Bland's rule keeps degenerate
//! pivots from cycling. Meant for a handful of rows and columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const EPS: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multiplier of each row of `A x <= b`, nonnegative.
    pub duals: Vec<f64>,
}

/// `maximize c'x  s.t.  A x <= b, x >= 0`.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution> {
    let m = a.len();
    let n = c.len();
    if b.len() != m || a.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParams("inconsistent LP dimensions".into()));
    }
    // standard form columns: x (n), one slack/surplus per row (m), one
    // artificial per row with negative right-hand side
    let flipped: Vec<bool> = b.iter().map(|&v| v < 0.0).collect();
    let arts: Vec<usize> = (0..m).filter(|&i| flipped[i]).collect();
    let cols = n + m + arts.len();
    let mut t = DMatrix::<f64>::zeros(m, cols + 1);
    let mut basis = vec![0usize; m];
    for i in 0..m {
        let s = if flipped[i] { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = s * a[i][j];
        }
        t[(i, n + i)] = s; // slack, or surplus with coefficient -1 after the flip
        t[(i, cols)] = s * b[i];
        basis[i] = n + i;
    }
    for (r, &i) in arts.iter().enumerate() {
        t[(i, n + m + r)] = 1.0;
        basis[i] = n + m + r;
    }
    if !arts.is_empty() {
        let mut cost = vec![0.0; cols];
        for r in 0..arts.len() {
            cost[n + m + r] = -1.0;
        }
        run(&mut t, &mut basis, &cost, cols)?;
        let infeas: f64 = basis
            .iter()
            .enumerate()
            .filter(|(_, &j)| j >= n + m)
            .map(|(i, _)| t[(i, cols)])
            .sum();
        if infeas > 1e-9 * (1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            return Err(Error::Infeasible { certificate: infeas });
        }
        // drive zero-level artificials out of the basis where possible
        for i in 0..m {
            if basis[i] >= n + m {
                if let Some(j) = (0..n + m).find(|&j| t[(i, j)].abs() > 1e-9) {
                    pivot(&mut t, &mut basis, i, j);
                }
            }
        }
    }
    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(c);
    run(&mut t, &mut basis, &cost, n + m)?;

    let mut x = vec![0.0; n];
    for (i, &j) in basis.iter().enumerate() {
        if j < n {
            x[j] = t[(i, cols)];
        }
    }
    // duals from the original data: y' B = c_B over the structural+slack
    // columns of the basis
    let mut bmat = DMatrix::<f64>::zeros(m, m);
    let mut cb = DVector::<f64>::zeros(m);
    for (r, &j) in basis.iter().enumerate() {
        for i in 0..m {
            bmat[(i, r)] = if j < n {
                a[i][j]
            } else if j < n + m {
                if j - n == i { 1.0 } else { 0.0 }
            } else {
                0.0
            };
        }
        cb[r] = if j < n { c[j] } else { 0.0 };
    }
    let duals = match bmat.transpose().lu().solve(&cb) {
        Some(y) => y.iter().map(|v| v.max(0.0)).collect(),
        None => vec![0.0; m],
    };
    let objective = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(LpSolution { x, objective, duals })
}

fn pivot(t: &mut DMatrix<f64>, basis: &mut [usize], row: usize, col: usize) {
    let p = t[(row, col)];
    let width = t.ncols();
    for j in 0..width {
        t[(row, j)] /= p;
    }
    for i in 0..t.nrows() {
        if i != row {
            let f = t[(i, col)];
            if f != 0.0 {
                for j in 0..width {
                    let v = t[(row, j)];
                    t[(i, j)] -= f * v;
                }
            }
        }
    }
    basis[row] = col;
}

/// Primal simplex over the first `active` columns with Bland's rule.
fn run(t: &mut DMatrix<f64>, basis: &mut [usize], cost: &[f64], active: usize) -> Result<()> {
    let m = t.nrows();
    let rhs = t.ncols() - 1;
    for _ in 0..10_000 {
        // reduced costs c_j - c_B B^-1 A_j
        let entering = (0..active).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let z: f64 = (0..m).map(|i| cost[basis[i]] * t[(i, j)]).sum();
            cost[j] - z > EPS
        });
        let Some(col) = entering else { return Ok(()) };
        let mut best: Option<(f64, usize)> = None;
        for i in 0..m {
            let v = t[(i, col)];
            if v > EPS {
                let ratio = t[(i, rhs)] / v;
                let better = match best {
                    None => true,
                    Some((r, bi)) => ratio < r - EPS || (ratio <= r + EPS && basis[i] < basis[bi]),
                };
                if better {
                    best = Some((ratio, i));
                }
            }
        }
        let Some((_, row)) = best else {
            return Err(Error::InvalidParams("linear program is unbounded".into()));
        };
        pivot(t, basis, row, col);
    }
    Err(Error::InvalidParams("simplex iteration limit".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let s = maximize(&[3.0, 5.0], &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]], &[4.0, 12.0, 18.0]).unwrap();
        assert!((s.objective - 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
        // known multipliers (0, 3/2, 1)
        assert!((s.duals[0]).abs() < 1e-12);
        assert!((s.duals[1] - 1.5).abs() < 1e-12);
        assert!((s.duals[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lower_bounds_need_phase_one() {
        // max -x - y, x + y >= 2 (as -x - y <= -2), x <= 3 -> objective -2
        let s = maximize(&[-1.0, -1.0], &[vec![-1.0, -1.0], vec![1.0, 0.0]], &[-2.0, 3.0]).unwrap();
        assert!((s.objective + 2.0).abs() < 1e-12);
        assert!((s.duals[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasibility() {
        let r = maximize(&[1.0], &[vec![1.0], vec![-1.0]], &[1.0, -2.0]);
        assert!(matches!(r, Err(Error::Infeasible { .. })));
    }
}
