//! Binary offloading: each user either computes locally or offloads its
//! whole task.
//!
//! The mode of user `k` enters the Lagrangian of the fixed-mode problem
//! linearly, with coefficient `F1_k - F2_k`, where `F1_k` is the net dual
//! value of the offloading variables and `F2_k` that of the local CPU. The
//! selection rule picks offloading unless `F1_k < F2_k`.
//!
//! [`alternate_solve`] wraps the fixed-mode solvers in a Dinkelbach loop and,
//! at every efficiency parameter, alternates between solving with the modes
//! fixed and re-selecting the modes from the resulting duals. A proposed mode
//! vector is only kept if it raises the inner objective, so the objective
//! trace of the alternation never decreases.

use std::f64::consts::LN_2;

use crate::convex::{harvest_powers, solve_p6, InnerSolution};
use crate::error::{Error, Result};
use crate::fractional::{dinkelbach_lenient, InnerOutcome, ParametricProblem, SolveReport};
use crate::kkt::DualVars;
use crate::model::{Regime, SystemParams, UserParams};
use crate::nomasca::{p11_problem, sca_loop, ScaOptions};
use crate::{convex, model};

/// Thresholds relaxed modes at 0.5; exactly 0.5 offloads.
pub fn round_alpha(relaxed: &[f64]) -> Vec<f64> {
    relaxed.iter().map(|&a| if a >= 0.5 { 1.0 } else { 0.0 }).collect()
}

fn pick(scores: &[(f64, f64)]) -> Vec<f64> {
    scores.iter().map(|&(f1, f2)| if f1 < f2 { 0.0 } else { 1.0 }).collect()
}

fn local_score(gain: f64, cost: f64, f: f64, sys: &SystemParams) -> f64 {
    gain * sys.frame * f / sys.cycles_per_bit - cost * sys.frame * sys.capacitance * f.powi(3)
}

/// `(F1_k, F2_k)` for every user of a TDMA candidate.
pub fn mode_scores_tdma(d: &DualVars, cand: &InnerSolution, eta: f64, users: &[UserParams], sys: &SystemParams) -> Vec<(f64, f64)> {
    users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let gain = d.lambda[k] + d.chi[k];
            let cost = d.mu[k] + d.chi[k] * eta;
            let (tau, y) = (cand.tau[k], cand.y[k]);
            let bits = if tau > 0.0 {
                sys.bandwidth * tau / u.overhead * (u.g * y / (tau * sys.noise)).ln_1p() / LN_2
            } else {
                0.0
            };
            let f1 = gain * bits - sys.amplifier * cost * (y + tau * u.p_circuit) - d.upsilon * tau;
            (f1, local_score(gain, cost, cand.freq[k], sys))
        })
        .collect()
}

/// Mode vector chosen from the duals and primal values of a TDMA candidate.
pub fn mode_select_tdma(d: &DualVars, cand: &InnerSolution, eta: f64, users: &[UserParams], sys: &SystemParams) -> Vec<f64> {
    pick(&mode_scores_tdma(d, cand, eta, users, sys))
}

/// `(F1_k, F2_k)` for every user of a NOMA candidate. Users must be in
/// decoding order; user `k` sees interference from users `k+1..K` weighted
/// by their modes. The value of one offloaded bit is taken from the minimum
/// bits and efficiency multipliers, which is what the rate row's multiplier
/// equals at a stationary point.
pub fn mode_scores_noma(d: &DualVars, cand: &InnerSolution, eta: f64, users: &[UserParams], sys: &SystemParams) -> Vec<(f64, f64)> {
    let tau1 = cand.tau.first().copied().unwrap_or(0.0);
    users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let gain = d.varpi[k] + d.omega[k];
            let cost = d.mu[k] + d.omega[k] * eta;
            let interference: f64 = (k + 1..users.len()).map(|i| cand.alpha[i] * users[i].g * cand.power[i]).sum();
            let p = cand.power[k];
            let rate = sys.bandwidth / u.overhead * (u.g * p / (interference + sys.noise)).ln_1p() / LN_2;
            let f1 = tau1 * (gain * rate - sys.amplifier * cost * (p + u.p_circuit));
            (f1, local_score(gain, cost, cand.freq[k], sys))
        })
        .collect()
}

/// Mode vector chosen from the duals and primal values of a NOMA candidate.
pub fn mode_select_noma(d: &DualVars, cand: &InnerSolution, eta: f64, users: &[UserParams], sys: &SystemParams) -> Vec<f64> {
    pick(&mode_scores_noma(d, cand, eta, users, sys))
}

/// Fills the variables of each user's inactive mode with their best
/// response to the candidate's duals, so both scores can be compared.
fn complete_candidate(cand: &InnerSolution, eta: f64, noma: bool, users: &[UserParams], sys: &SystemParams) -> InnerSolution {
    let mut c = cand.clone();
    let d = &cand.duals;
    let pe = harvest_powers(users, sys);
    let used: f64 = if noma { cand.tau.first().copied().unwrap_or(0.0) } else { cand.tau.iter().sum() };
    for (k, u) in users.iter().enumerate() {
        let (gain, cost) = if noma {
            (d.varpi[k] + d.omega[k], d.mu[k] + d.omega[k] * eta)
        } else {
            (d.lambda[k] + d.chi[k], d.mu[k] + d.chi[k] * eta)
        };
        let budget = (cand.tau0 * (pe[k] - u.p_receive)).max(0.0);
        if c.freq[k] == 0.0 {
            let cap = (budget / (sys.frame * sys.capacitance)).cbrt();
            let f = if cost > 0.0 { (gain / (3.0 * sys.cycles_per_bit * sys.capacitance * cost)).sqrt() } else { cap };
            c.freq[k] = f.min(cap);
        }
        if c.power[k] == 0.0 {
            let (tau, interference) = if noma {
                let t = if used > 0.0 { used } else { sys.frame - cand.tau0 };
                let i: f64 = (k + 1..users.len()).map(|i| cand.alpha[i] * users[i].g * cand.power[i]).sum();
                (t, i)
            } else {
                (sys.frame - cand.tau0 - used, 0.0)
            };
            if tau <= 0.0 || u.g <= 0.0 {
                continue;
            }
            let cap = (budget / (sys.amplifier * tau) - u.p_circuit).max(0.0);
            let noise = interference + sys.noise;
            let p = if cost > 0.0 {
                gain * sys.bandwidth / (u.overhead * LN_2 * sys.amplifier * cost) - noise / u.g
            } else {
                cap
            };
            let p = p.clamp(0.0, cap);
            let rate = sys.bandwidth / u.overhead * (u.g * p / noise).ln_1p() / LN_2;
            let time_price = if noma { 0.0 } else { d.upsilon };
            if gain * rate - sys.amplifier * cost * (p + u.p_circuit) - time_price <= 0.0 {
                continue;
            }
            c.power[k] = p;
            if !noma {
                c.tau[k] = tau;
                c.y[k] = tau * p;
            }
        }
    }
    if noma {
        let t = if used > 0.0 { used } else { sys.frame - cand.tau0 };
        c.tau.iter_mut().for_each(|v| *v = t);
    }
    c
}

/// Settings of the mode alternation.
#[derive(Debug, Clone, PartialEq)]
pub struct AlternationOptions {
    /// Starting modes; all users offload when `None`.
    pub alpha0: Option<Vec<f64>>,
    pub max_rounds: usize,
}

impl Default for AlternationOptions {
    fn default() -> Self {
        Self { alpha0: None, max_rounds: 30 }
    }
}

/// Outcome of [`alternate_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryReport {
    /// Dinkelbach run with the rounded modes fixed.
    pub report: SolveReport,
    pub alpha: Vec<f64>,
    /// Modes reached by the alternation, before rounding.
    pub relaxed_alpha: Vec<f64>,
    /// Efficiency of the relaxed modes.
    pub relaxed_eta: f64,
    /// Inner objective after every accepted alternation round, one list per
    /// outer iteration.
    pub alternation_traces: Vec<Vec<f64>>,
}

fn fixed_mode_solve(regime: Regime, eta: f64, alpha: &[f64], users: &[UserParams], sys: &SystemParams) -> Result<InnerSolution> {
    match regime {
        Regime::TdmaBinary => solve_p6(eta, alpha, users, sys),
        Regime::NomaBinary => {
            let opts = ScaOptions { tol: sys.tol.sca, ..ScaOptions::default() };
            sca_loop(eta, Some(alpha), users, sys, &opts).map(|(s, _)| s)
        }
        other => Err(Error::InvalidParams(format!("{other} has no mode variables"))),
    }
}

fn improves(new: f64, old: f64, scale: f64, tol: f64) -> bool {
    new > old + tol * old.abs().max(scale)
}

/// One alternation at a fixed `eta`, starting from `alpha`. Returns the best
/// solution, its modes and the accepted objective trace.
fn alternate(
    regime: Regime,
    eta: f64,
    alpha: Vec<f64>,
    opts: &AlternationOptions,
    users: &[UserParams],
    sys: &SystemParams,
) -> Result<(InnerSolution, Vec<f64>, Vec<f64>)> {
    let noma = regime == Regime::NomaBinary;
    let scale = convex::Scales::new(users, sys).bits;
    let tol = sys.tol.alternation;
    let mut alpha = alpha;
    let mut best = match fixed_mode_solve(regime, eta, &alpha, users, sys) {
        Ok(sol) => sol,
        // an infeasible start falls back to computing everything locally
        Err(e) if alpha.iter().any(|&a| a != 0.0) => {
            alpha = vec![0.0; users.len()];
            fixed_mode_solve(regime, eta, &alpha, users, sys).map_err(|_| e)?
        }
        Err(e) => return Err(e),
    };
    let mut trace = vec![best.upsilon];
    for _ in 1..opts.max_rounds.max(1) {
        let cand = complete_candidate(&best, eta, noma, users, sys);
        let scores = if noma {
            mode_scores_noma(&best.duals, &cand, eta, users, sys)
        } else {
            mode_scores_tdma(&best.duals, &cand, eta, users, sys)
        };
        let proposal = pick(&scores);
        if proposal == alpha {
            break;
        }
        let mut flips: Vec<usize> = (0..users.len()).filter(|&k| proposal[k] != alpha[k]).collect();
        flips.sort_by(|&a, &b| {
            let m = |k: usize| (scores[k].0 - scores[k].1).abs();
            m(b).total_cmp(&m(a))
        });
        let mut tries = vec![proposal];
        if flips.len() > 1 {
            for &k in &flips {
                let mut a = alpha.clone();
                a[k] = 1.0 - a[k];
                tries.push(a);
            }
        }
        let mut accepted = false;
        for a in tries {
            // a failed solve just rules the proposal out
            let Ok(sol) = fixed_mode_solve(regime, eta, &a, users, sys) else { continue };
            if improves(sol.upsilon, best.upsilon, scale, tol) {
                best = sol;
                alpha = a;
                trace.push(best.upsilon);
                accepted = true;
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    Ok((best, alpha, trace))
}

/// Max-min efficiency under binary offloading. NOMA requires users sorted by
/// ascending uplink gain.
pub fn alternate_solve(regime: Regime, users: &[UserParams], sys: &SystemParams) -> Result<BinaryReport> {
    alternate_solve_with(regime, users, sys, &AlternationOptions::default())
}

pub fn alternate_solve_with(
    regime: Regime,
    users: &[UserParams],
    sys: &SystemParams,
    opts: &AlternationOptions,
) -> Result<BinaryReport> {
    if !regime.is_binary() {
        return Err(Error::InvalidParams(format!("{regime} is not a binary regime")));
    }
    model::validate_all(users, sys)?;
    if regime.is_noma() {
        model::check_decoding_order(users)?;
    }
    let k = users.len();
    let alpha0 = opts.alpha0.clone().unwrap_or_else(|| vec![1.0; k]);
    if alpha0.len() != k || alpha0.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidParams("alpha must lie in [0,1] for every user".into()));
    }

    let mut alpha = alpha0;
    let mut traces = Vec::new();
    let relaxed = {
        let mut problem = ParametricProblem::new(regime, users, |eta| {
            let (sol, a, trace) = alternate(regime, eta, alpha.clone(), opts, users, sys)?;
            alpha = a;
            traces.push(trace);
            InnerOutcome::measured(sol.upsilon, sol.allocation(), traces.last().map_or(0, Vec::len), regime, users, sys)
        });
        dinkelbach_lenient(&mut problem, sys)?
    };
    let relaxed_alpha = relaxed.alloc.alpha.clone();
    let rounded = round_alpha(&relaxed_alpha);

    let fixed = |a: &[f64]| -> Result<SolveReport> {
        match regime {
            Regime::TdmaBinary => dinkelbach_lenient(&mut convex::p6_problem(a, users, sys), sys),
            _ => dinkelbach_lenient(&mut p11_problem(a, users, sys), sys),
        }
    };
    let relaxed_final = fixed(&relaxed_alpha)?;
    let report = if rounded == relaxed_alpha { relaxed_final.clone() } else { fixed(&rounded)? };
    if !report.converged {
        return Err(Error::NonConvergent { iterations: report.iterations, best: report.eta_star });
    }
    Ok(BinaryReport {
        report,
        alpha: rounded,
        relaxed_alpha,
        relaxed_eta: relaxed_final.eta_star,
        alternation_traces: traces,
    })
}

/// Computation-bits benchmark under binary offloading: one mode alternation
/// at `eta = 0`, which maximizes the smallest per-user bit count. The
/// report's `eta_star` is the efficiency that allocation happens to reach.
pub fn max_min_bits(regime: Regime, users: &[UserParams], sys: &SystemParams) -> Result<BinaryReport> {
    if !regime.is_binary() {
        return Err(Error::InvalidParams(format!("{regime} is not a binary regime")));
    }
    model::validate_all(users, sys)?;
    if regime.is_noma() {
        model::check_decoding_order(users)?;
    }
    let opts = AlternationOptions::default();
    let (sol, alpha, trace) = alternate(regime, 0.0, vec![1.0; users.len()], &opts, users, sys)
        .map_err(|e| Error::InnerSolverFailure { iteration: 0, message: e.to_string() })?;
    let rounded = round_alpha(&alpha);
    let alloc = sol.allocation();
    let ratio = model::min_ce(&alloc, regime, users, sys)?;
    let report = SolveReport {
        eta_star: ratio,
        residuals: model::feasibility_residuals(&alloc, regime, users, sys)?,
        alloc,
        eta_trace: vec![0.0],
        inner_traces: vec![crate::fractional::InnerTrace { eta: 0.0, upsilon: sol.upsilon, ratio, inner_iters: trace.len() }],
        iterations: 1,
        converged: true,
        failure: None,
    };
    Ok(BinaryReport { report, alpha: rounded, relaxed_alpha: alpha, relaxed_eta: ratio, alternation_traces: vec![trace] })
}
