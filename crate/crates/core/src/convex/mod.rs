//! Inner convex subproblems for the TDMA regimes.
//!
//! For a fixed fractional parameter `eta` the max-min problem is lifted with
//! `y_k = tau_k * P_k` and an epigraph variable `upsilon`, which makes every
//! constraint convex. The station power is pinned at its cap. Variables are
//! rescaled internally (energy by the largest harvestable frame energy,
//! frequency by the matching CPU speed, bits by the matching local bit count)
//! so the barrier sees O(1) quantities.

pub mod barrier;
pub mod expr;

use nalgebra::DVector;

use self::barrier::{BarrierOptions, BarrierSolution, Constraint, ConvexProgram};
use self::expr::{Composite, Term};
use crate::error::{Error, Result};
use crate::fractional::{InnerOutcome, ParametricProblem};
use crate::kkt::DualVars;
use crate::model::{validate_all, Allocation, OffloadSchedule, Regime, SystemParams, UserParams};

/// Proximal weight that makes the optimum unique on symmetric instances.
const PROX: f64 = 1e-12;
/// Relative slack below which a row counts as active when polishing duals.
const ACTIVE_TOL: f64 = 1e-6;

/// Unit scales for the internal variables.
#[derive(Debug, Clone, Copy)]
pub struct Scales {
    /// Energy unit, J.
    pub energy: f64,
    /// Frequency unit, Hz; the CPU speed that burns one energy unit per frame.
    pub freq: f64,
    /// Bit unit; bits computed locally at the unit frequency.
    pub bits: f64,
}

impl Scales {
    pub fn new(users: &[UserParams], sys: &SystemParams) -> Self {
        let p_best = users
            .iter()
            .map(|u| sys.eh.harvested_power(u.h * sys.max_station_power))
            .fold(0.0, f64::max);
        let energy = sys.frame * if p_best > 0.0 { p_best } else { sys.eh.p_max };
        let freq = (energy / (sys.frame * sys.capacitance)).cbrt();
        Self { energy, freq, bits: sys.frame * freq / sys.cycles_per_bit }
    }
}

/// Parameters of one inner solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerProblem<'a> {
    pub eta: f64,
    /// Mode vector; `None` for partial offloading.
    pub alpha: Option<&'a [f64]>,
    pub users: &'a [UserParams],
    pub sys: &'a SystemParams,
}

/// Primal and dual output of an inner solve, in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    /// Optimal epigraph value `min_k R_k - eta E_k`.
    pub upsilon: f64,
    pub tau0: f64,
    /// Offloading time per user; under NOMA every entry holds the shared slot.
    pub tau: Vec<f64>,
    /// Lifted energy variable `tau_k * P_k`.
    pub y: Vec<f64>,
    pub power: Vec<f64>,
    pub freq: Vec<f64>,
    pub alpha: Vec<f64>,
    pub noma: bool,
    pub station_power: f64,
    pub duals: DualVars,
    /// KKT residual of the barrier solve in internal units.
    pub kkt_residual: f64,
    pub gap: f64,
    pub newton_iters: usize,
}

impl InnerSolution {
    pub fn allocation(&self) -> Allocation {
        Allocation {
            tau0: self.tau0,
            schedule: if self.noma {
                OffloadSchedule::Noma(self.tau.first().copied().unwrap_or(0.0))
            } else {
                OffloadSchedule::Tdma(self.tau.clone())
            },
            power: self.power.clone(),
            freq: self.freq.clone(),
            alpha: self.alpha.clone(),
            station_power: self.station_power,
        }
    }

    /// The all-zero solution, optimal whenever some user can never harvest
    /// more than its receive-processing power.
    pub(crate) fn zero(k: usize, noma: bool, alpha: Vec<f64>, sys: &SystemParams) -> Self {
        Self {
            upsilon: 0.0,
            tau0: 0.0,
            tau: vec![0.0; k],
            y: vec![0.0; k],
            power: vec![0.0; k],
            freq: vec![0.0; k],
            alpha,
            noma,
            station_power: sys.max_station_power,
            duals: DualVars::zeros(k),
            kkt_residual: 0.0,
            gap: 0.0,
            newton_iters: 0,
        }
    }
}

/// Harvested power of each user at the station power cap.
pub fn harvest_powers(users: &[UserParams], sys: &SystemParams) -> Vec<f64> {
    users.iter().map(|u| sys.eh.harvested_power(u.h * sys.max_station_power)).collect()
}

/// Handles instances where some user cannot gain energy from harvesting:
/// the harvest time is forced to zero, nobody has energy, and the zero
/// allocation is optimal (or the instance is infeasible if bits are required).
pub(crate) fn degenerate_energy(users: &[UserParams], sys: &SystemParams) -> Option<Result<()>> {
    let starved = users
        .iter()
        .zip(harvest_powers(users, sys))
        .any(|(u, p)| p <= u.p_receive);
    if !starved {
        return None;
    }
    if users.iter().any(|u| u.min_bits > 0.0) {
        Some(Err(Error::Infeasible { certificate: f64::INFINITY }))
    } else {
        Some(Ok(()))
    }
}

#[derive(Debug, Clone, Copy)]
struct UserSlots {
    tau: Option<usize>,
    y: Option<usize>,
    f: Option<usize>,
    w_local: f64,
    w_off: f64,
}

struct TdmaLayout {
    users: Vec<UserSlots>,
    upsilon: usize,
    dim: usize,
}

impl TdmaLayout {
    fn new(weights: &[(f64, f64)]) -> Self {
        let mut next = 1; // slot 0 is tau0
        let users = weights
            .iter()
            .map(|&(w_local, w_off)| {
                let mut take = |on: bool| {
                    on.then(|| {
                        next += 1;
                        next - 1
                    })
                };
                let tau = take(w_off > 0.0);
                let y = take(w_off > 0.0);
                let f = take(w_local > 0.0);
                UserSlots { tau, y, f, w_local, w_off }
            })
            .collect();
        Self { users, upsilon: next, dim: next + 1 }
    }
}

/// Indices of the constraint families inside the assembled program.
struct Rows {
    bits: Vec<Option<usize>>,
    energy: Vec<usize>,
    ce: Vec<usize>,
    time: usize,
}

fn build_tdma(
    eta: f64,
    layout: &TdmaLayout,
    users: &[UserParams],
    sys: &SystemParams,
    sc: &Scales,
) -> (ConvexProgram, Rows) {
    let pe = harvest_powers(users, sys);
    let ln2 = std::f64::consts::LN_2;
    let mut cons = Vec::new();
    let mut rows = Rows { bits: Vec::new(), energy: Vec::new(), ce: Vec::new(), time: 0 };
    let eta_s = eta * sc.energy / sc.bits;
    for (k, (u, slot)) in users.iter().zip(&layout.users).enumerate() {
        let mut bits = Composite::new(0.0);
        if let Some(f) = slot.f {
            bits.push(Term::Linear { i: f, coef: slot.w_local * sys.frame * sc.freq / (sys.cycles_per_bit * sc.bits) });
        }
        if let (Some(t), Some(y)) = (slot.tau, slot.y) {
            bits.push(Term::PerspectiveLog {
                t,
                y,
                a: u.g * sc.energy / (sys.amplifier * sys.noise),
                coef: slot.w_off * sys.bandwidth / (u.overhead * ln2 * sc.bits),
            });
        }
        let mut energy = Composite::new(0.0);
        if let (Some(t), Some(y)) = (slot.tau, slot.y) {
            energy.push(Term::Linear { i: y, coef: slot.w_off });
            energy.push(Term::Linear { i: t, coef: slot.w_off * sys.amplifier * u.p_circuit / sc.energy });
        }
        if let Some(f) = slot.f {
            energy.push(Term::Cube { i: f, coef: slot.w_local });
        }
        let neg = |c: &Composite, s: f64| Composite {
            constant: c.constant * s,
            terms: c
                .terms
                .iter()
                .map(|t| scale_term(t, s))
                .collect(),
        };

        if u.min_bits > 0.0 {
            let mut c = neg(&bits, -1.0);
            c.constant += u.min_bits / sc.bits;
            rows.bits.push(Some(cons.len()));
            cons.push(Constraint::new(c));
        } else {
            rows.bits.push(None);
        }

        let mut eh = energy.clone();
        eh.push(Term::Linear { i: 0, coef: (u.p_receive - pe[k]) / sc.energy });
        rows.energy.push(cons.len());
        cons.push(Constraint::new(eh));

        let mut ce = neg(&bits, -1.0);
        ce.push(Term::Linear { i: layout.upsilon, coef: 1.0 });
        ce.terms.extend(neg(&energy, eta_s).terms);
        ce.push(Term::Linear { i: 0, coef: eta_s * u.p_receive / sc.energy });
        rows.ce.push(cons.len());
        cons.push(Constraint::new(ce));
    }
    let mut time = Composite::new(-1.0).with(Term::Linear { i: 0, coef: 1.0 / sys.frame });
    for slot in &layout.users {
        if let Some(t) = slot.tau {
            time.push(Term::Linear { i: t, coef: slot.w_off / sys.frame });
        }
    }
    rows.time = cons.len();
    cons.push(Constraint::new(time));
    cons.push(Constraint::lower(0, 0.0));
    for slot in &layout.users {
        for i in [slot.tau, slot.y, slot.f].into_iter().flatten() {
            cons.push(Constraint::lower(i, 0.0));
        }
    }
    let mut objective = Composite::new(0.0).with(Term::Linear { i: layout.upsilon, coef: 1.0 });
    for i in 0..layout.dim {
        objective.push(Term::Square { i, coef: -PROX });
    }
    (ConvexProgram { dim: layout.dim, objective, constraints: cons }, rows)
}

pub(crate) fn scale_term(t: &Term, s: f64) -> Term {
    match t.clone() {
        Term::Linear { i, coef } => Term::Linear { i, coef: coef * s },
        Term::Square { i, coef } => Term::Square { i, coef: coef * s },
        Term::Cube { i, coef } => Term::Cube { i, coef: coef * s },
        Term::PerspectiveLog { t, y, a, coef } => Term::PerspectiveLog { t, y, a, coef: coef * s },
        Term::Exp { idx, coef } => Term::Exp { idx, coef: coef * s },
        Term::LogRate { own, gain, interferers, noise, coef } => {
            Term::LogRate { own, gain, interferers, noise, coef: coef * s }
        }
    }
}

/// Strictly positive start following the harvest-then-spend pattern; the
/// R_min rows may still be violated, phase I takes it from there.
fn tdma_start(eta: f64, layout: &TdmaLayout, prog: &ConvexProgram, users: &[UserParams], sys: &SystemParams, sc: &Scales) -> DVector<f64> {
    let pe = harvest_powers(users, sys);
    let n_off = layout.users.iter().filter(|s| s.tau.is_some()).count().max(1) as f64;
    let mut x = DVector::zeros(layout.dim);
    let tau0 = 0.5 * sys.frame;
    x[0] = tau0;
    for ((u, slot), p) in users.iter().zip(&layout.users).zip(&pe) {
        let mut tau = 0.4 * sys.frame / n_off;
        let mut budget = tau0 * (p - u.p_receive) - slot.w_off * sys.amplifier * tau * u.p_circuit;
        let mut shrink = 0;
        while budget <= 0.0 && shrink < 200 && slot.tau.is_some() {
            tau *= 0.5;
            budget = tau0 * (p - u.p_receive) - slot.w_off * sys.amplifier * tau * u.p_circuit;
            shrink += 1;
        }
        let budget = budget.max(0.0) / sc.energy;
        if let Some(t) = slot.tau {
            x[t] = tau;
        }
        if let Some(y) = slot.y {
            x[y] = (0.1 * budget / slot.w_off).max(1e-300);
        }
        if let Some(f) = slot.f {
            x[f] = (0.1 * budget / slot.w_local).cbrt().max(1e-100);
        }
    }
    // push upsilon below every CE row
    x[layout.upsilon] = 0.0;
    let worst = prog.max_violation(&x).max(0.0);
    let _ = eta;
    x[layout.upsilon] = -worst - 1.0;
    let ce_max = prog
        .constraints
        .iter()
        .map(|c| c.expr.value(&x))
        .fold(f64::NEG_INFINITY, f64::max);
    if ce_max >= 0.0 {
        x[layout.upsilon] -= ce_max + 1.0;
    }
    x
}

fn tdma_solve(
    eta: f64,
    weights: Vec<(f64, f64)>,
    alpha: Vec<f64>,
    users: &[UserParams],
    sys: &SystemParams,
) -> Result<InnerSolution> {
    validate_all(users, sys)?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParams(format!("eta must be finite and nonnegative, got {eta}")));
    }
    let k = users.len();
    if let Some(r) = degenerate_energy(users, sys) {
        return r.map(|_| InnerSolution::zero(k, false, alpha, sys));
    }
    let sc = Scales::new(users, sys);
    let layout = TdmaLayout::new(&weights);
    let (prog, rows) = build_tdma(eta, &layout, users, sys, &sc);
    let x0 = tdma_start(eta, &layout, &prog, users, sys, &sc);
    let sol = prog.solve(&x0, &BarrierOptions::default())?;
    Ok(recover_tdma(&sol, &layout, &rows, alpha, users, sys, &sc))
}

fn recover_tdma(
    sol: &BarrierSolution,
    layout: &TdmaLayout,
    rows: &Rows,
    alpha: Vec<f64>,
    users: &[UserParams],
    sys: &SystemParams,
    sc: &Scales,
) -> InnerSolution {
    let k = users.len();
    let x = &sol.x;
    let mut out = InnerSolution::zero(k, false, alpha, sys);
    out.tau0 = x[0];
    for (j, slot) in layout.users.iter().enumerate() {
        if let (Some(t), Some(y)) = (slot.tau, slot.y) {
            out.tau[j] = x[t];
            out.y[j] = x[y] * sc.energy / sys.amplifier;
            out.power[j] = if x[t] > 0.0 { out.y[j] / x[t] } else { 0.0 };
        }
        if let Some(f) = slot.f {
            out.freq[j] = x[f] * sc.freq;
        }
    }
    out.upsilon = x[layout.upsilon] * sc.bits;
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
    out
}

/// Inner problem of TDMA partial offloading for a fixed `eta`. The barrier
/// multipliers are re-estimated from the stationarity equations.
pub fn solve_p3(eta: f64, users: &[UserParams], sys: &SystemParams) -> Result<InnerSolution> {
    let k = users.len();
    let mut sol = tdma_solve(eta, vec![(1.0, 1.0); k], vec![1.0; k], users, sys)?;
    if degenerate_energy(users, sys).is_none() {
        sol.duals = crate::kkt::polish_duals(&sol, eta, users, sys, ACTIVE_TOL);
    }
    Ok(sol)
}

/// Inner problem of TDMA binary offloading for fixed `eta` and modes `alpha`.
/// Components of `alpha` may be fractional (relaxed modes).
pub fn solve_p6(eta: f64, alpha: &[f64], users: &[UserParams], sys: &SystemParams) -> Result<InnerSolution> {
    if alpha.len() != users.len() || alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidParams("alpha must lie in [0,1] for every user".into()));
    }
    let weights = alpha.iter().map(|&a| (1.0 - a, a)).collect();
    tdma_solve(eta, weights, alpha.to_vec(), users, sys)
}

/// TDMA partial offloading as a parametric problem for the outer loop.
pub fn p3_problem<'a>(users: &'a [UserParams], sys: &'a SystemParams) -> ParametricProblem<'a> {
    ParametricProblem::new(Regime::TdmaPartial, users, move |eta| {
        let sol = solve_p3(eta, users, sys)?;
        InnerOutcome::measured(sol.upsilon, sol.allocation(), sol.newton_iters, Regime::TdmaPartial, users, sys)
    })
}

/// TDMA with the modes fixed to `alpha` as a parametric problem.
pub fn p6_problem<'a>(alpha: &'a [f64], users: &'a [UserParams], sys: &'a SystemParams) -> ParametricProblem<'a> {
    ParametricProblem::new(Regime::TdmaBinary, users, move |eta| {
        let sol = solve_p6(eta, alpha, users, sys)?;
        InnerOutcome::measured(sol.upsilon, sol.allocation(), sol.newton_iters, Regime::TdmaBinary, users, sys)
    })
}

/// Dispatches on the optional mode vector of an [`InnerProblem`].
pub fn solve_inner(p: &InnerProblem<'_>) -> Result<InnerSolution> {
    match p.alpha {
        Some(a) => solve_p6(p.eta, a, p.users, p.sys),
        None => solve_p3(p.eta, p.users, p.sys),
    }
}
