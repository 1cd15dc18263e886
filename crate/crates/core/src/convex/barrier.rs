//! Log-barrier interior-point method for small dense problems
//!
//! ```text
//! maximize f(x)  subject to  g_i(x) <= 0
//! ```
//!
//! with `f` concave and every `g_i` convex, each given as a [`Composite`].
//! Centering uses damped Newton steps on `-t f(x) - sum ln(-g_i(x))`; the
//! barrier parameter grows by a fixed factor until `m / t` drops below the
//! gap tolerance. Dual estimates come from the central-path identity
//! `lambda_i = 1 / (t * -g_i(x))`.

use nalgebra::{DMatrix, DVector};

use super::expr::{Composite, Term};
use crate::error::{Error, Result};

/// Inequality `expr(x) <= 0`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub expr: Composite,
    /// Whether phase I may relax this constraint. Domain constraints such as
    /// nonnegativity of a perspective's time variable must stay strict.
    pub relax: bool,
}

impl Constraint {
    pub fn new(expr: Composite) -> Self {
        Self { expr, relax: true }
    }

    pub fn strict(expr: Composite) -> Self {
        Self { expr, relax: false }
    }

    /// `lo - x[i] <= 0`
    pub fn lower(i: usize, lo: f64) -> Self {
        Self::strict(Composite::new(lo).with(Term::Linear { i, coef: -1.0 }))
    }

    /// `x[i] - hi <= 0`
    pub fn upper(i: usize, hi: f64) -> Self {
        Self::new(Composite::new(-hi).with(Term::Linear { i, coef: 1.0 }))
    }
}

#[derive(Debug, Clone)]
pub struct ConvexProgram {
    pub dim: usize,
    /// Concave objective to maximize.
    pub objective: Composite,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    /// Stop once `m / t` (the duality-gap bound) is below this.
    pub gap_tol: f64,
    /// Gap bound at which a run that runs out of Newton steps still counts
    /// as solved.
    pub acceptable_gap: f64,
    /// Centering stops when half the squared Newton decrement is below this.
    pub newton_tol: f64,
    /// Barrier parameter growth factor.
    pub growth: f64,
    pub t_init: f64,
    /// Cap on Newton steps over the whole solve.
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-9, acceptable_gap: 1e-6, newton_tol: 1e-10, growth: 10.0, t_init: 1.0, max_newton: 4000 }
    }
}

#[derive(Debug, Clone)]
pub struct BarrierSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// One multiplier per constraint.
    pub duals: Vec<f64>,
    pub gap: f64,
    /// Infinity norm of `grad f - sum lambda_i grad g_i`.
    pub kkt_residual: f64,
    pub newton_iters: usize,
}

impl ConvexProgram {
    fn constraint_values(&self, x: &DVector<f64>) -> Option<Vec<f64>> {
        let vals: Vec<f64> = self.constraints.iter().map(|c| c.expr.value(x)).collect();
        if vals.iter().all(|v| v.is_finite() && *v < 0.0) {
            Some(vals)
        } else {
            None
        }
    }

    pub fn is_strictly_feasible(&self, x: &DVector<f64>) -> bool {
        self.constraint_values(x).is_some()
    }

    /// Largest constraint value at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.constraints.iter().map(|c| c.expr.value(x)).fold(f64::NEG_INFINITY, f64::max)
    }

    fn barrier_value(&self, x: &DVector<f64>, t: f64) -> Option<f64> {
        let vals = self.constraint_values(x)?;
        let f = self.objective.value(x);
        if !f.is_finite() {
            return None;
        }
        Some(-t * f - vals.iter().map(|v| (-v).ln()).sum::<f64>())
    }

    fn barrier_derivatives(&self, x: &DVector<f64>, t: f64, vals: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim;
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        self.objective.accumulate(x, -t, &mut g, &mut h);
        for (c, &v) in self.constraints.iter().zip(vals) {
            let gi = c.expr.gradient(x);
            let inv = 1.0 / (-v);
            g.axpy(inv, &gi, 1.0);
            h.ger(inv * inv, &gi, &gi, 1.0);
            c.expr.accumulate(x, inv, &mut DVector::zeros(n), &mut h);
        }
        (g, h)
    }

    /// Maximizes the program from a strictly feasible `x0`.
    pub fn maximize(&self, x0: DVector<f64>, opts: &BarrierOptions) -> Result<BarrierSolution> {
        self.maximize_until(x0, opts, |_| false)
    }

    /// As [`maximize`](Self::maximize), but returns early once `stop(x)` holds
    /// after a Newton step.
    pub fn maximize_until<F: Fn(&DVector<f64>) -> bool>(
        &self,
        x0: DVector<f64>,
        opts: &BarrierOptions,
        stop: F,
    ) -> Result<BarrierSolution> {
        if !self.is_strictly_feasible(&x0) {
            return Err(Error::NoStrictlyFeasibleStart);
        }
        let m = self.constraints.len().max(1) as f64;
        let mut x = x0;
        let mut t = opts.t_init;
        let mut iters = 0usize;
        loop {
            let early = match self.center(&mut x, t, opts, &mut iters, &stop) {
                Ok(early) => early,
                // the last centered point already meets the looser tolerance
                Err(Error::MaxNewtonIters { .. } | Error::LineSearchStall { .. })
                    if t > opts.t_init && opts.growth * m / t <= opts.acceptable_gap =>
                {
                    return Ok(self.solution(x, t / opts.growth, iters));
                }
                Err(e) => return Err(e),
            };
            if early || m / t <= opts.gap_tol {
                break;
            }
            t *= opts.growth;
        }
        Ok(self.solution(x, t, iters))
    }

    /// Newton centering at fixed `t`. Returns `true` if `stop` fired.
    fn center<F: Fn(&DVector<f64>) -> bool>(
        &self,
        x: &mut DVector<f64>,
        t: f64,
        opts: &BarrierOptions,
        iters: &mut usize,
        stop: &F,
    ) -> Result<bool> {
        loop {
            if *iters >= opts.max_newton {
                return Err(Error::MaxNewtonIters { gap: self.constraints.len() as f64 / t });
            }
            *iters += 1;
            let vals = self.constraint_values(x).ok_or(Error::NoStrictlyFeasibleStart)?;
            let (g, h) = self.barrier_derivatives(x, t, &vals);
            let step = newton_direction(&h, &g);
            let decrement = -g.dot(&step);
            if !decrement.is_finite() {
                return Err(Error::LineSearchStall { decrement });
            }
            if decrement / 2.0 <= opts.newton_tol {
                return Ok(false);
            }
            let psi0 = self.barrier_value(x, t).ok_or(Error::NoStrictlyFeasibleStart)?;
            let mut s = 1.0;
            let accepted = loop {
                let cand = &*x + &step * s;
                if let Some(psi) = self.barrier_value(&cand, t) {
                    if psi <= psi0 - 0.25 * s * decrement {
                        break Some((cand, psi));
                    }
                }
                s *= 0.5;
                if s < 1e-20 {
                    break None;
                }
            };
            match accepted {
                Some((cand, psi)) => {
                    let stalled = psi0 - psi <= 4.0 * f64::EPSILON * psi0.abs().max(1.0);
                    *x = cand;
                    if stalled {
                        // no representable progress left at this t
                        return Ok(stop(x));
                    }
                }
                // rounding floor: the decrement is too small to resolve
                None if decrement < 1e-6 => return Ok(false),
                None => return Err(Error::LineSearchStall { decrement }),
            }
            if stop(x) {
                return Ok(true);
            }
        }
    }

    fn solution(&self, x: DVector<f64>, t: f64, newton_iters: usize) -> BarrierSolution {
        let vals: Vec<f64> = self.constraints.iter().map(|c| c.expr.value(&x)).collect();
        let duals: Vec<f64> = vals.iter().map(|v| 1.0 / (t * -v)).collect();
        let mut r = self.objective.gradient(&x);
        for (c, &l) in self.constraints.iter().zip(&duals) {
            r.axpy(-l, &c.expr.gradient(&x), 1.0);
        }
        BarrierSolution {
            objective: self.objective.value(&x),
            kkt_residual: r.amax(),
            gap: self.constraints.len() as f64 / t,
            duals,
            x,
            newton_iters,
        }
    }

    /// Finds a strictly feasible point starting from `x0`, which must satisfy
    /// every non-relaxable constraint strictly. Relaxable constraints are
    /// shifted by a slack that is driven below zero.
    pub fn phase_one(&self, x0: &DVector<f64>, opts: &BarrierOptions) -> Result<DVector<f64>> {
        if self.is_strictly_feasible(x0) {
            return Ok(x0.clone());
        }
        let n = self.dim;
        let worst = self
            .constraints
            .iter()
            .filter(|c| c.relax)
            .map(|c| c.expr.value(x0))
            .fold(f64::NEG_INFINITY, f64::max);
        let slack0 = worst + worst.abs().max(1.0);
        let mut constraints: Vec<Constraint> = self
            .constraints
            .iter()
            .map(|c| {
                if c.relax {
                    Constraint::new(c.expr.clone().with(Term::Linear { i: n, coef: -1.0 }))
                } else {
                    c.clone()
                }
            })
            .collect();
        constraints.push(Constraint::lower(n, -1.0));
        let aux = ConvexProgram {
            dim: n + 1,
            objective: Composite::new(0.0).with(Term::Linear { i: n, coef: -1.0 }),
            constraints,
        };
        let mut start = x0.clone().insert_row(n, slack0);
        start[n] = slack0;
        let sol = aux.maximize_until(start, opts, |x| {
            let inner = x.rows(0, n).into_owned();
            x[n] < 0.0 && self.is_strictly_feasible(&inner)
        })?;
        let x = sol.x.rows(0, n).into_owned();
        if self.is_strictly_feasible(&x) {
            Ok(x)
        } else {
            Err(Error::Infeasible { certificate: sol.x[n] })
        }
    }

    /// Phase I followed by [`maximize`](Self::maximize).
    pub fn solve(&self, x0: &DVector<f64>, opts: &BarrierOptions) -> Result<BarrierSolution> {
        let start = self.phase_one(x0, opts)?;
        self.maximize(start, opts)
    }
}

/// Solves `H d = -g` with Jacobi scaling and Cholesky, adding diagonal
/// damping if the factorization fails.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let n = g.len();
    let d: DVector<f64> = DVector::from_iterator(n, (0..n).map(|i| {
        let v = h[(i, i)];
        if v > 0.0 && v.is_finite() { 1.0 / v.sqrt() } else { 1.0 }
    }));
    let mut hs = h.clone();
    for i in 0..n {
        for j in 0..n {
            hs[(i, j)] *= d[i] * d[j];
        }
    }
    let gs = g.component_mul(&d);
    let mut damping = 0.0;
    loop {
        let mut m = hs.clone();
        for i in 0..n {
            m[(i, i)] += damping;
        }
        if let Some(ch) = m.cholesky() {
            return ch.solve(&(-&gs)).component_mul(&d);
        }
        damping = if damping == 0.0 { 1e-14 } else { damping * 100.0 };
        if damping > 1e6 {
            return -g.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concave_quadratic_with_lower_bound() {
        // maximize -x^2 s.t. x >= -1
        let prog = ConvexProgram {
            dim: 1,
            objective: Composite::new(0.0).with(Term::Square { i: 0, coef: -1.0 }),
            constraints: vec![Constraint::lower(0, -1.0)],
        };
        let sol = prog.maximize(DVector::from_element(1, 0.5), &BarrierOptions::default()).unwrap();
        assert!(sol.x[0].abs() < 1e-8, "{}", sol.x[0]);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn linear_over_disc() {
        // maximize x + y s.t. x^2 + y^2 <= 1
        let prog = ConvexProgram {
            dim: 2,
            objective: Composite::new(0.0)
                .with(Term::Linear { i: 0, coef: 1.0 })
                .with(Term::Linear { i: 1, coef: 1.0 }),
            constraints: vec![Constraint::new(
                Composite::new(-1.0).with(Term::Square { i: 0, coef: 1.0 }).with(Term::Square { i: 1, coef: 1.0 }),
            )],
        };
        let sol = prog.maximize(DVector::from_element(2, 0.0), &BarrierOptions::default()).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((sol.x[0] - r).abs() < 1e-8 && (sol.x[1] - r).abs() < 1e-8, "{}", sol.x);
        // dual of the disc constraint is 1/(2 r) = 1/sqrt(2)
        assert!((sol.duals[0] - r).abs() < 1e-6);
    }

    #[test]
    fn rejects_infeasible_start() {
        let prog = ConvexProgram {
            dim: 1,
            objective: Composite::new(0.0).with(Term::Linear { i: 0, coef: 1.0 }),
            constraints: vec![Constraint::upper(0, 1.0)],
        };
        assert!(matches!(
            prog.maximize(DVector::from_element(1, 2.0), &BarrierOptions::default()),
            Err(Error::NoStrictlyFeasibleStart)
        ));
        let sol = prog.solve(&DVector::from_element(1, 2.0), &BarrierOptions::default()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn phase_one_detects_infeasibility() {
        // x <= 1 and x >= 2 (both relaxable)
        let prog = ConvexProgram {
            dim: 1,
            objective: Composite::new(0.0).with(Term::Linear { i: 0, coef: 1.0 }),
            constraints: vec![
                Constraint::upper(0, 1.0),
                Constraint::new(Composite::new(2.0).with(Term::Linear { i: 0, coef: -1.0 })),
            ],
        };
        match prog.solve(&DVector::from_element(1, 0.0), &BarrierOptions::default()) {
            Err(Error::Infeasible { certificate }) => assert!(certificate > 0.4),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }
}
