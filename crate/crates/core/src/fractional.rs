//! Dinkelbach outer loop for max-min computation efficiency.
//!
//! For a parameter `eta` the inner problem maximizes
//! `min_k R_k - eta E_k`. The loop moves `eta` to the smallest per-user
//! efficiency `min_k R_k / E_k` of each inner optimum, so the trace never
//! decreases, and stops once that ratio agrees with `eta`.

use crate::error::{Error, Result};
use crate::model::{feasibility_residuals, min_ce, Allocation, Regime, Residual, SystemParams, UserParams};

/// What one inner solve reports back to the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerOutcome {
    /// Optimal value of `min_k R_k - eta E_k`.
    pub upsilon: f64,
    /// `min_k R_k / E_k` of the returned allocation.
    pub ratio: f64,
    pub alloc: Allocation,
    /// Work spent by the inner solver (Newton steps, SCA rounds, ...).
    pub inner_iters: usize,
}

impl InnerOutcome {
    /// Builds an outcome from an allocation, measuring its efficiency.
    pub fn measured(
        upsilon: f64,
        alloc: Allocation,
        inner_iters: usize,
        regime: Regime,
        users: &[UserParams],
        sys: &SystemParams,
    ) -> Result<Self> {
        let ratio = min_ce(&alloc, regime, users, sys)?;
        Ok(Self { upsilon, ratio, alloc, inner_iters })
    }
}

/// A parametric inner problem, solved for one `eta` at a time.
pub struct ParametricProblem<'a> {
    pub regime: Regime,
    pub users: &'a [UserParams],
    pub eta0: f64,
    solve: Box<dyn FnMut(f64) -> Result<InnerOutcome> + 'a>,
}

impl<'a> ParametricProblem<'a> {
    pub fn new(
        regime: Regime,
        users: &'a [UserParams],
        solve: impl FnMut(f64) -> Result<InnerOutcome> + 'a,
    ) -> Self {
        Self { regime, users, eta0: 0.0, solve: Box::new(solve) }
    }

    pub fn with_eta0(mut self, eta0: f64) -> Self {
        self.eta0 = eta0;
        self
    }

    pub fn solve_inner(&mut self, eta: f64) -> Result<InnerOutcome> {
        (self.solve)(eta)
    }
}

/// One outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerTrace {
    pub eta: f64,
    pub upsilon: f64,
    pub ratio: f64,
    pub inner_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Max-min computation efficiency, bits/J.
    pub eta_star: f64,
    pub alloc: Allocation,
    /// Parameter used at each outer iteration.
    pub eta_trace: Vec<f64>,
    pub inner_traces: Vec<InnerTrace>,
    /// Constraint residuals of `alloc`.
    pub residuals: Vec<Residual>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the run stopped on an inner failure after the first step.
    pub failure: Option<String>,
}

impl SolveReport {
    /// The smallest per-user bit count of the allocation under `regime`.
    pub fn min_bits(&self, regime: Regime, users: &[UserParams], sys: &SystemParams) -> Result<f64> {
        Ok(crate::model::evaluate(&self.alloc, regime, users, sys)?
            .iter()
            .map(|m| m.bits)
            .fold(f64::INFINITY, f64::min))
    }
}

/// Runs the outer loop to convergence. Reaching the iteration cap is an
/// error carrying the best efficiency found.
pub fn dinkelbach(problem: &mut ParametricProblem<'_>, sys: &SystemParams) -> Result<SolveReport> {
    let rep = dinkelbach_lenient(problem, sys)?;
    if rep.converged {
        Ok(rep)
    } else {
        Err(Error::NonConvergent { iterations: rep.iterations, best: rep.eta_star })
    }
}

/// Like [`dinkelbach`], but hands back the best iterate when the cap is
/// reached or an inner solve fails after the first iteration.
pub fn dinkelbach_lenient(problem: &mut ParametricProblem<'_>, sys: &SystemParams) -> Result<SolveReport> {
    if !(problem.eta0 >= 0.0 && problem.eta0.is_finite()) {
        return Err(Error::InvalidParams("initial eta must be finite and nonnegative".into()));
    }
    let tol = sys.tol.outer;
    let mut eta = problem.eta0;
    let mut eta_trace = Vec::new();
    let mut inner_traces = Vec::new();
    let mut best: Option<InnerOutcome> = None;
    let mut converged = false;
    let mut failure = None;
    for n in 0..sys.max_iters.max(1) {
        let out = match problem.solve_inner(eta) {
            Ok(out) => out,
            Err(e) if best.is_some() => {
                failure = Some(format!("iteration {n}: {e}"));
                break;
            }
            Err(e) => return Err(Error::InnerSolverFailure { iteration: n, message: e.to_string() }),
        };
        eta_trace.push(eta);
        inner_traces.push(InnerTrace { eta, upsilon: out.upsilon, ratio: out.ratio, inner_iters: out.inner_iters });
        let done = (out.ratio - eta).abs() <= tol * eta.max(1.0);
        let next = eta.max(out.ratio);
        if best.as_ref().is_none_or(|b| out.ratio > b.ratio) {
            best = Some(out);
        }
        if done {
            converged = true;
            break;
        }
        eta = next;
    }
    let best = best.expect("at least one inner solve succeeded");
    let residuals = feasibility_residuals(&best.alloc, problem.regime, problem.users, sys)?;
    Ok(SolveReport {
        eta_star: best.ratio,
        alloc: best.alloc,
        iterations: eta_trace.len(),
        eta_trace,
        inner_traces,
        residuals,
        converged,
        failure,
    })
}

/// The computation-bits benchmark: one inner solve at `eta = 0`, which
/// maximizes the smallest per-user bit count. `eta_star` holds the
/// efficiency that allocation happens to reach.
pub fn max_min_bits(problem: &mut ParametricProblem<'_>, sys: &SystemParams) -> Result<SolveReport> {
    let out = problem
        .solve_inner(0.0)
        .map_err(|e| Error::InnerSolverFailure { iteration: 0, message: e.to_string() })?;
    let residuals = feasibility_residuals(&out.alloc, problem.regime, problem.users, sys)?;
    Ok(SolveReport {
        eta_star: out.ratio,
        eta_trace: vec![0.0],
        inner_traces: vec![InnerTrace { eta: 0.0, upsilon: out.upsilon, ratio: out.ratio, inner_iters: out.inner_iters }],
        alloc: out.alloc,
        residuals,
        iterations: 1,
        converged: true,
        failure: None,
    })
}
