//! NOMA regimes by successive convex approximation.
//!
//! Powers and the shared offloading time enter through logarithms,
//! `P_k = exp(x_k)` and `tau1 = exp(d1)`, and the offloaded bits of user `k`
//! through `exp(z_k)` with the rate row
//!
//! ```text
//! z_k <= d1 + ln(B / (v ln 2)) + ln ln(1 + SINR_k(x))
//! ```
//!
//! `ln ln(1 + e^u)` is concave and nondecreasing and the SINR exponent `u`
//! is concave in `x`, so this row is convex as written; no linearization of
//! the interference is needed. The only non-convex pieces are the `exp(z_k)`
//! terms on the bit side of the minimum-bits and efficiency rows, which are
//! replaced by their tangents at `z_bar`. Tangents under-estimate `exp`, so
//! every iterate is feasible for the original problem and the surrogate
//! optimum never decreases from one round to the next.
//!
//! Users must be sorted by ascending uplink gain: user `k` is decoded in the
//! presence of every user with a larger index.

use nalgebra::DVector;

use crate::convex::barrier::{BarrierOptions, BarrierSolution, Constraint, ConvexProgram};
use crate::convex::expr::{Composite, Term};
use crate::convex::{degenerate_energy, harvest_powers, InnerSolution, Scales};
use crate::error::{Error, Result};
use crate::fractional::{InnerOutcome, ParametricProblem};
use crate::model::{check_decoding_order, evaluate, validate_all, Regime, SystemParams, UserParams};

/// Floor on the log-power variables, ln(1e-12 W).
const LOG_POWER_FLOOR: f64 = -27.631_021_115_928_547;
/// Floor on the log offloading time, relative to the frame.
const LOG_TIME_FLOOR: f64 = -27.631_021_115_928_547;
/// Floor on the scaled log-bit variables.
const LOG_BITS_FLOOR: f64 = -60.0;
const PROX: f64 = 1e-12;

/// First-order Taylor expansion of `exp` at `z_bar`, evaluated at `z`.
/// Never exceeds `exp(z)`.
pub fn linearize_exp(z_bar: f64, z: f64) -> f64 {
    z_bar.exp() * (1.0 + z - z_bar)
}

/// Linearization points and history of an SCA run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaState {
    /// ln of the offloaded bits at which `exp(z_k)` is linearized.
    pub z_bar: Vec<f64>,
    /// ln of the offloading powers of the last iterate.
    pub x_bar: Vec<f64>,
    pub iteration: usize,
    /// Surrogate optimum of every round, in bits.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Previous surrogate solution in internal units, used as a warm start.
    warm: Option<DVector<f64>>,
}

impl ScaState {
    /// Starting point: half a frame of harvesting, 40% of the frame for
    /// offloading, and half of each user's harvested energy spent on
    /// offloading power.
    pub fn initial(alpha: Option<&[f64]>, users: &[UserParams], sys: &SystemParams) -> Self {
        let pe = harvest_powers(users, sys);
        let (tau0, tau1) = (0.5 * sys.frame, 0.4 * sys.frame);
        let power: Vec<f64> = users
            .iter()
            .zip(&pe)
            .map(|(u, p)| {
                let budget = 0.5 * tau0 * (p - u.p_receive);
                (budget / (sys.amplifier * tau1) - u.p_circuit).max(1e-9)
            })
            .collect();
        let weights = mode_weights(alpha, users.len());
        let z_bar = (0..users.len())
            .map(|k| {
                let bits = noma_rate(tau1, &power, &weights, k, users, sys);
                let z = if bits > 0.0 { bits.ln() } else { 0.0 };
                // a tangent taken at the demand itself represents it exactly
                if weights[k].0 == 0.0 && users[k].min_bits > 0.0 { z.max(users[k].min_bits.ln()) } else { z }
            })
            .collect();
        Self {
            z_bar,
            x_bar: power.iter().map(|p| p.ln()).collect(),
            iteration: 0,
            trace: Vec::new(),
            converged: false,
            warm: None,
        }
    }
}

fn mode_weights(alpha: Option<&[f64]>, k: usize) -> Vec<(f64, f64)> {
    match alpha {
        Some(a) => a.iter().map(|&a| (1.0 - a, a)).collect(),
        None => vec![(1.0, 1.0); k],
    }
}

/// Offloaded bits of user `k`; interference from stronger users is scaled by
/// their offloading weight.
fn noma_rate(tau1: f64, power: &[f64], weights: &[(f64, f64)], k: usize, users: &[UserParams], sys: &SystemParams) -> f64 {
    let interference: f64 = (k + 1..users.len()).map(|i| weights[i].1 * users[i].g * power[i]).sum();
    let sinr = users[k].g * power[k] / (interference + sys.noise);
    sys.bandwidth * tau1 / users[k].overhead * sinr.ln_1p() / std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy)]
struct Slots {
    x: Option<usize>,
    z: Option<usize>,
    f: Option<usize>,
    w_local: f64,
    w_off: f64,
}

struct Layout {
    users: Vec<Slots>,
    upsilon: usize,
    dim: usize,
}

const TAU0: usize = 0;
const D1: usize = 1;

impl Layout {
    fn new(weights: &[(f64, f64)], users: &[UserParams]) -> Self {
        let mut next = 2;
        let mut take = |on: bool| {
            on.then(|| {
                next += 1;
                next - 1
            })
        };
        let slots = weights
            .iter()
            .zip(users)
            .map(|(&(w_local, w_off), u)| {
                let offload = w_off > 0.0 && u.g > 0.0;
                Slots { x: take(offload), z: take(offload), f: take(w_local > 0.0), w_local, w_off }
            })
            .collect();
        Self { users: slots, upsilon: next, dim: next + 1 }
    }
}

struct Rows {
    bits: Vec<Option<usize>>,
    energy: Vec<usize>,
    ce: Vec<usize>,
    time: usize,
}

#[allow(clippy::too_many_arguments)]
fn build(
    eta: f64,
    z_bar: &[f64],
    layout: &Layout,
    users: &[UserParams],
    sys: &SystemParams,
    sc: &Scales,
) -> (ConvexProgram, Rows) {
    let pe = harvest_powers(users, sys);
    let ln2 = std::f64::consts::LN_2;
    let eta_s = eta * sc.energy / sc.bits;
    let mut cons = Vec::new();
    let mut rows = Rows { bits: Vec::new(), energy: Vec::new(), ce: Vec::new(), time: 0 };
    for (k, (u, s)) in users.iter().zip(&layout.users).enumerate() {
        // scaled bits, with exp(z) replaced by its tangent at z_bar
        let mut bits = Composite::new(0.0);
        if let Some(f) = s.f {
            bits.push(Term::Linear { i: f, coef: s.w_local * sys.frame * sc.freq / (sys.cycles_per_bit * sc.bits) });
        }
        if let Some(z) = s.z {
            let zb = z_bar[k] - sc.bits.ln();
            let e = zb.exp();
            bits.constant += s.w_off * e * (1.0 - zb);
            bits.push(Term::Linear { i: z, coef: s.w_off * e });
        }
        // scaled energy other than harvesting
        let mut energy = Composite::new(0.0);
        if s.w_off > 0.0 {
            let c = s.w_off * sys.amplifier / sc.energy;
            if let Some(x) = s.x {
                energy.push(Term::Exp { idx: vec![D1, x], coef: c });
            }
            energy.push(Term::Exp { idx: vec![D1], coef: c * u.p_circuit });
        }
        if let Some(f) = s.f {
            energy.push(Term::Cube { i: f, coef: s.w_local });
        }

        if u.min_bits > 0.0 {
            let mut c = Composite::new(u.min_bits / sc.bits - bits.constant);
            c.terms.extend(bits.terms.iter().map(|t| crate::convex::scale_term(t, -1.0)));
            rows.bits.push(Some(cons.len()));
            cons.push(Constraint::new(c));
        } else {
            rows.bits.push(None);
        }

        let mut eh = energy.clone();
        eh.push(Term::Linear { i: TAU0, coef: (u.p_receive - pe[k]) / sc.energy });
        rows.energy.push(cons.len());
        cons.push(Constraint::new(eh));

        let mut ce = Composite::new(-bits.constant);
        ce.terms.extend(bits.terms.iter().map(|t| crate::convex::scale_term(t, -1.0)));
        ce.terms.extend(energy.terms.iter().map(|t| crate::convex::scale_term(t, eta_s)));
        ce.push(Term::Linear { i: TAU0, coef: eta_s * u.p_receive / sc.energy });
        ce.push(Term::Linear { i: layout.upsilon, coef: 1.0 });
        rows.ce.push(cons.len());
        cons.push(Constraint::new(ce));

        if let (Some(x), Some(z)) = (s.x, s.z) {
            let interferers: Vec<(usize, f64)> = (k + 1..users.len())
                .filter_map(|i| layout.users[i].x.map(|xi| (xi, layout.users[i].w_off * users[i].g)))
                .collect();
            let rate = Composite::new(-(sys.bandwidth / (u.overhead * ln2 * sc.bits)).ln())
                .with(Term::Linear { i: z, coef: 1.0 })
                .with(Term::Linear { i: D1, coef: -1.0 })
                .with(Term::LogRate { own: x, gain: u.g, interferers, noise: sys.noise, coef: -1.0 });
            cons.push(Constraint::new(rate));
        }
    }
    let time = Composite::new(-1.0)
        .with(Term::Linear { i: TAU0, coef: 1.0 / sys.frame })
        .with(Term::Exp { idx: vec![D1], coef: 1.0 / sys.frame });
    rows.time = cons.len();
    cons.push(Constraint::new(time));
    cons.push(Constraint::lower(TAU0, 0.0));
    cons.push(Constraint::lower(D1, sys.frame.ln() + LOG_TIME_FLOOR));
    for s in &layout.users {
        if let Some(x) = s.x {
            cons.push(Constraint::lower(x, LOG_POWER_FLOOR));
        }
        if let Some(z) = s.z {
            cons.push(Constraint::lower(z, LOG_BITS_FLOOR));
        }
        if let Some(f) = s.f {
            cons.push(Constraint::lower(f, 0.0));
        }
    }
    let mut objective = Composite::new(0.0).with(Term::Linear { i: layout.upsilon, coef: 1.0 });
    for i in 0..layout.dim {
        objective.push(Term::Square { i, coef: -PROX });
    }
    (ConvexProgram { dim: layout.dim, objective, constraints: cons }, rows)
}

fn start_point(state: &ScaState, layout: &Layout, users: &[UserParams], sys: &SystemParams, sc: &Scales) -> DVector<f64> {
    let mut x = DVector::zeros(layout.dim);
    if let Some(w) = &state.warm {
        if w.len() == layout.dim {
            x.copy_from(w);
            // step back inside the strict bounds
            x[TAU0] *= 0.999;
            x[D1] -= 1e-3;
            for s in &layout.users {
                if let Some(i) = s.x {
                    x[i] = (x[i] - 1e-3).max(LOG_POWER_FLOOR + 1e-3);
                }
                if let Some(i) = s.z {
                    x[i] = (x[i] - 1e-3).max(LOG_BITS_FLOOR + 1e-3);
                }
                if let Some(i) = s.f {
                    x[i] = (0.999 * x[i]).max(1e-100);
                }
            }
            return x;
        }
    }
    let pe = harvest_powers(users, sys);
    x[TAU0] = 0.5 * sys.frame;
    x[D1] = (0.4 * sys.frame).ln();
    for (k, s) in layout.users.iter().enumerate() {
        if let Some(i) = s.x {
            x[i] = state.x_bar[k].max(LOG_POWER_FLOOR + 1.0);
        }
        if let Some(i) = s.z {
            x[i] = (state.z_bar[k] - sc.bits.ln() - 1e-3).max(LOG_BITS_FLOOR + 1.0);
        }
        if let Some(i) = s.f {
            let budget = (x[TAU0] * (pe[k] - users[k].p_receive)).max(0.0) / sc.energy;
            x[i] = (0.1 * budget / s.w_local).cbrt().max(1e-100);
        }
    }
    x
}

fn push_upsilon_below(x: &mut DVector<f64>, layout: &Layout, prog: &ConvexProgram, rows: &Rows) {
    x[layout.upsilon] = 0.0;
    let worst = rows.ce.iter().map(|&r| prog.constraints[r].expr.value(x)).fold(f64::NEG_INFINITY, f64::max);
    x[layout.upsilon] = -worst.max(0.0) - 1.0 - worst.abs() * 1e-3;
}

fn step(
    eta: f64,
    alpha: Option<&[f64]>,
    state: &ScaState,
    users: &[UserParams],
    sys: &SystemParams,
) -> Result<(InnerSolution, ScaState)> {
    validate_all(users, sys)?;
    check_decoding_order(users)?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParams(format!("eta must be finite and nonnegative, got {eta}")));
    }
    let k = users.len();
    if let Some(a) = alpha {
        if a.len() != k || a.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParams("alpha must lie in [0,1] for every user".into()));
        }
    }
    if state.z_bar.len() != k || state.x_bar.len() != k {
        return Err(Error::InvalidParams("SCA state does not match the user count".into()));
    }
    let alpha_vec = alpha.map_or_else(|| vec![1.0; k], |a| a.to_vec());
    if let Some(r) = degenerate_energy(users, sys) {
        r?;
        let mut next = state.clone();
        next.iteration += 1;
        next.trace.push(0.0);
        return Ok((InnerSolution::zero(k, true, alpha_vec, sys), next));
    }
    let sc = Scales::new(users, sys);
    let weights = mode_weights(alpha, k);
    let layout = Layout::new(&weights, users);
    let (prog, rows) = build(eta, &state.z_bar, &layout, users, sys, &sc);
    let mut x0 = start_point(state, &layout, users, sys, &sc);
    push_upsilon_below(&mut x0, &layout, &prog, &rows);
    let sol = prog.solve(&x0, &BarrierOptions::default())?;
    let out = recover(eta, &sol, &layout, &rows, alpha_vec, users, sys, &sc)?;

    let mut next = state.clone();
    for (j, s) in layout.users.iter().enumerate() {
        if let Some(z) = s.z {
            next.z_bar[j] = sol.x[z] + sc.bits.ln();
        }
        if let Some(x) = s.x {
            next.x_bar[j] = sol.x[x];
        }
    }
    next.iteration += 1;
    next.trace.push(sol.x[layout.upsilon] * sc.bits);
    next.warm = Some(sol.x);
    Ok((out, next))
}

#[allow(clippy::too_many_arguments)]
fn recover(
    eta: f64,
    sol: &BarrierSolution,
    layout: &Layout,
    rows: &Rows,
    alpha: Vec<f64>,
    users: &[UserParams],
    sys: &SystemParams,
    sc: &Scales,
) -> Result<InnerSolution> {
    let k = users.len();
    let x = &sol.x;
    let mut out = InnerSolution::zero(k, true, alpha, sys);
    let tau1 = x[D1].exp();
    out.tau0 = x[TAU0];
    for (j, s) in layout.users.iter().enumerate() {
        out.tau[j] = tau1;
        if let Some(i) = s.x {
            out.power[j] = x[i].exp();
            out.y[j] = tau1 * out.power[j];
        }
        if let Some(i) = s.f {
            out.freq[j] = x[i] * sc.freq;
        }
    }
    let regime = if layout.users.iter().all(|s| s.w_local == 1.0 && s.w_off == 1.0) {
        Regime::NomaPartial
    } else {
        Regime::NomaBinary
    };
    out.upsilon = evaluate(&out.allocation(), regime, users, sys)?
        .iter()
        .map(|m| m.bits - eta * m.energy)
        .fold(f64::INFINITY, f64::min);
    let d = &sol.duals;
    for j in 0..k {
        out.duals.lambda[j] = rows.bits[j].map_or(0.0, |r| d[r]);
        out.duals.rho[j] = d[rows.energy[j]] * sc.bits / sc.energy;
        out.duals.theta[j] = d[rows.ce[j]];
    }
    out.duals.beta = d[rows.time] * sc.bits / sys.frame;
    out.duals.mirror_binary_names();
    out.kkt_residual = sol.kkt_residual;
    out.gap = sol.gap;
    out.newton_iters = sol.newton_iters;
    Ok(out)
}

/// One SCA round of the NOMA partial problem.
pub fn solve_p9(eta: f64, state: &ScaState, users: &[UserParams], sys: &SystemParams) -> Result<(InnerSolution, ScaState)> {
    step(eta, None, state, users, sys)
}

/// One SCA round of the NOMA problem with modes fixed to `alpha`.
pub fn solve_p11(
    eta: f64,
    alpha: &[f64],
    state: &ScaState,
    users: &[UserParams],
    sys: &SystemParams,
) -> Result<(InnerSolution, ScaState)> {
    step(eta, Some(alpha), state, users, sys)
}

/// Options of the SCA loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaOptions {
    /// Stop when successive surrogate optima differ by less than this
    /// fraction of `max(|Upsilon|, bit scale)`.
    pub tol: f64,
    pub max_rounds: usize,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self { tol: 1e-4, max_rounds: 50 }
    }
}

/// Repeats `round` from `state` until the surrogate optimum settles. The
/// returned state records whether it did.
pub fn sca_iterate(
    mut state: ScaState,
    opts: &ScaOptions,
    scale: f64,
    mut round: impl FnMut(&ScaState) -> Result<(InnerSolution, ScaState)>,
) -> Result<(InnerSolution, ScaState)> {
    let mut last: Option<InnerSolution> = None;
    for _ in 0..opts.max_rounds.max(1) {
        let (sol, next) = round(&state)?;
        state = next;
        last = Some(sol);
        let n = state.trace.len();
        if n >= 2 {
            let (a, b) = (state.trace[n - 2], state.trace[n - 1]);
            if (b - a).abs() <= opts.tol * b.abs().max(scale) {
                state.converged = true;
                break;
            }
        }
    }
    Ok((last.expect("at least one round ran"), state))
}

/// Full SCA solve of the NOMA inner problem for a fixed `eta`, partial
/// (`alpha = None`) or with fixed modes.
pub fn sca_loop(
    eta: f64,
    alpha: Option<&[f64]>,
    users: &[UserParams],
    sys: &SystemParams,
    opts: &ScaOptions,
) -> Result<(InnerSolution, ScaState)> {
    let state = ScaState::initial(alpha, users, sys);
    let scale = Scales::new(users, sys).bits;
    sca_iterate(state, opts, scale, |s| step(eta, alpha, s, users, sys))
}

/// NOMA partial offloading as a parametric problem. Each outer iteration
/// warm-starts the SCA from the previous linearization point.
pub fn p9_problem<'a>(users: &'a [UserParams], sys: &'a SystemParams) -> ParametricProblem<'a> {
    noma_problem(None, users, sys)
}

/// NOMA with modes fixed to `alpha` as a parametric problem.
pub fn p11_problem<'a>(alpha: &'a [f64], users: &'a [UserParams], sys: &'a SystemParams) -> ParametricProblem<'a> {
    noma_problem(Some(alpha), users, sys)
}

fn noma_problem<'a>(alpha: Option<&'a [f64]>, users: &'a [UserParams], sys: &'a SystemParams) -> ParametricProblem<'a> {
    let regime = if alpha.is_some() { Regime::NomaBinary } else { Regime::NomaPartial };
    let opts = ScaOptions { tol: sys.tol.sca, ..ScaOptions::default() };
    let scale = Scales::new(users, sys).bits;
    let mut state = ScaState::initial(alpha, users, sys);
    ParametricProblem::new(regime, users, move |eta| {
        let mut start = state.clone();
        start.trace.clear();
        start.converged = false;
        let (sol, next) = sca_iterate(start, &opts, scale, |s| step(eta, alpha, s, users, sys))?;
        let rounds = next.trace.len();
        state = next;
        InnerOutcome::measured(sol.upsilon, sol.allocation(), rounds, regime, users, sys)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{feasibility_residuals, max_residual};
    use proptest::prelude::*;

    #[test]
    fn tangent_touches_and_stays_below() {
        assert_eq!(linearize_exp(0.7, 0.7), 0.7_f64.exp());
        assert_eq!(linearize_exp(0.0, 1.0), 2.0);
        assert!(linearize_exp(0.0, 1.0) <= 1.0_f64.exp());
    }

    proptest! {
        #[test]
        fn tangent_underestimates(zb in -20.0..20.0_f64, z in -20.0..20.0_f64) {
            prop_assert!(linearize_exp(zb, z) <= z.exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn single_user_matches_tdma() {
        let sys = SystemParams::default();
        let users = vec![UserParams::with_gains(0.8, 2e-4)];
        for eta in [0.0, 1e9] {
            let (noma, state) = sca_loop(eta, None, &users, &sys, &ScaOptions::default()).unwrap();
            let tdma = crate::convex::solve_p3(eta, &users, &sys).unwrap();
            assert!(state.converged);
            let rel = (noma.upsilon - tdma.upsilon).abs() / tdma.upsilon.abs().max(1.0);
            assert!(rel < 1e-3, "eta {eta}: {} vs {}", noma.upsilon, tdma.upsilon);
        }
    }

    #[test]
    fn trace_is_nondecreasing_and_iterates_feasible() {
        let sys = SystemParams::default();
        let users = vec![UserParams::with_gains(0.6, 5e-5), UserParams::with_gains(0.9, 4e-4), UserParams::with_gains(0.7, 1e-3)];
        let mut state = ScaState::initial(None, &users, &sys);
        for _ in 0..8 {
            let (sol, next) = solve_p9(1e9, &state, &users, &sys).unwrap();
            let res = feasibility_residuals(&sol.allocation(), Regime::NomaPartial, &users, &sys).unwrap();
            assert!(max_residual(&res) <= 1e-8, "{res:?}");
            state = next;
        }
        for w in state.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{:?}", state.trace);
        }
    }

    #[test]
    fn all_local_modes_leave_offloading_inert() {
        let sys = SystemParams::default();
        let users = vec![UserParams::with_gains(0.6, 5e-5), UserParams::with_gains(0.9, 4e-4)];
        let (sol, _) = sca_loop(0.0, Some(&[0.0, 0.0]), &users, &sys, &ScaOptions::default()).unwrap();
        assert!(sol.power.iter().all(|&p| p == 0.0));
        assert!(sol.freq.iter().all(|&f| f > 0.0));
    }

    #[test]
    fn unsorted_users_are_rejected() {
        let sys = SystemParams::default();
        let users = vec![UserParams::with_gains(0.6, 5e-4), UserParams::with_gains(0.9, 4e-5)];
        let state = ScaState::initial(None, &users, &sys);
        assert!(matches!(solve_p9(0.0, &state, &users, &sys), Err(Error::InvalidDecodingOrder { .. })));
    }
}
