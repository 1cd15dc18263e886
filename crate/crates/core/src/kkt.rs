//! Closed-form optimality conditions for the TDMA partial-offloading inner
//! problem and a dual-ascent solver built only from them.
//!
//! Dual symbols follow the Lagrangian
//!
//! ```text
//! L = sum_k lambda_k (R_k - R_min,k) + sum_k rho_k (Phi_k - E_k)
//!   + beta (T - tau0 - sum_k tau_k) + sum_k theta_k (R_k - eta E_k - Y) + Y
//! ```
//!
//! with `R_k` the computed bits, `E_k` the consumed energy and `Phi_k` the
//! harvested energy of user `k`.

use std::f64::consts::LN_2;

use crate::convex::{degenerate_energy, harvest_powers, InnerSolution, Scales};
use crate::error::{Error, Result};
use crate::model::{validate_all, EhModel, SystemParams, UserParams};

/// Lagrange multipliers of every inner problem in the crate.
///
/// The TDMA partial problem uses `lambda` (minimum bits), `rho` (energy
/// causality), `theta` (CE epigraph) and `beta` (time budget). The binary
/// problems name their energy, epigraph and time multipliers `mu`, `chi` and
/// `upsilon`; the NOMA binary problem adds `varpi` (minimum bits) and uses
/// `lambda` for the rate definition rows and `omega` for the epigraph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DualVars {
    pub lambda: Vec<f64>,
    pub rho: Vec<f64>,
    pub theta: Vec<f64>,
    pub beta: f64,
    pub mu: Vec<f64>,
    pub upsilon: f64,
    pub chi: Vec<f64>,
    pub varpi: Vec<f64>,
    pub omega: Vec<f64>,
}

impl DualVars {
    pub fn zeros(k: usize) -> Self {
        let z = vec![0.0; k];
        Self {
            lambda: z.clone(),
            rho: z.clone(),
            theta: z.clone(),
            beta: 0.0,
            mu: z.clone(),
            upsilon: 0.0,
            chi: z.clone(),
            varpi: z.clone(),
            omega: z,
        }
    }

    /// Fills the binary-mode names from the partial-mode ones (TDMA layout).
    pub fn mirror_binary_names(&mut self) {
        self.mu = self.rho.clone();
        self.chi = self.theta.clone();
        self.upsilon = self.beta;
        self.varpi = self.lambda.clone();
        self.omega = self.theta.clone();
    }

    pub fn num_users(&self) -> usize {
        self.lambda.len()
    }

    fn all_nonnegative(&self) -> bool {
        [&self.lambda, &self.rho, &self.theta, &self.mu, &self.chi, &self.varpi, &self.omega]
            .iter()
            .all(|v| v.iter().all(|&x| x >= 0.0))
            && self.beta >= 0.0
            && self.upsilon >= 0.0
    }

    fn check(&self, k: usize) -> Result<()> {
        if k >= self.num_users() || self.rho.len() != self.num_users() || self.theta.len() != self.num_users() {
            return Err(Error::InvalidParams(format!("dual vector has no entry for user {k}")));
        }
        if !self.all_nonnegative() {
            return Err(Error::InvalidParams("dual variables must be nonnegative".into()));
        }
        Ok(())
    }

    /// `lambda_k + theta_k`, the marginal value of a computed bit.
    fn bit_weight(&self, k: usize) -> f64 {
        self.lambda[k] + self.theta[k]
    }

    /// `rho_k + theta_k * eta`, the marginal cost of a joule.
    fn energy_weight(&self, k: usize, eta: f64) -> f64 {
        self.rho[k] + self.theta[k] * eta
    }
}

/// Primal point implied by a set of multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPrimal {
    pub f_star: Vec<f64>,
    pub p_star: Vec<f64>,
    pub y_star: Vec<f64>,
    pub tau0_star: f64,
    pub tau_star: Vec<f64>,
    pub upsilon_star: f64,
}

/// Stationary CPU frequency `sqrt((lambda + theta) / (3 C gamma (rho + theta eta)))`.
pub fn optimal_frequency(d: &DualVars, k: usize, eta: f64, sys: &SystemParams) -> Result<f64> {
    d.check(k)?;
    let num = d.bit_weight(k);
    if num == 0.0 {
        return Ok(0.0);
    }
    let den = 3.0 * sys.cycles_per_bit * sys.capacitance * d.energy_weight(k, eta);
    if den <= 0.0 {
        return Err(Error::DegenerateDuals { denominator: den });
    }
    Ok((num / den).sqrt())
}

/// Water level `(lambda + theta) B / (zeta v ln2 (rho + theta eta))` shared by
/// the power rule and the offloading threshold.
fn water_level(d: &DualVars, k: usize, eta: f64, u: &UserParams, sys: &SystemParams) -> Result<f64> {
    let num = d.bit_weight(k) * sys.bandwidth;
    if num == 0.0 {
        return Ok(0.0);
    }
    let den = sys.amplifier * u.overhead * LN_2 * d.energy_weight(k, eta);
    if den <= 0.0 {
        return Err(Error::DegenerateDuals { denominator: den });
    }
    Ok(num / den)
}

/// Stationary offloading power; zero when the slot is empty or the channel is
/// below the threshold `g B (lambda + theta) <= sigma^2 zeta v ln2 (rho + theta eta)`.
pub fn optimal_power(
    d: &DualVars,
    k: usize,
    eta: f64,
    u: &UserParams,
    sys: &SystemParams,
    tau_k: f64,
) -> Result<f64> {
    d.check(k)?;
    if tau_k == 0.0 {
        return Ok(0.0);
    }
    let level = water_level(d, k, eta, u, sys)?;
    let lhs = u.g * sys.bandwidth * d.bit_weight(k);
    let rhs = sys.noise * sys.amplifier * u.overhead * LN_2 * d.energy_weight(k, eta);
    if lhs <= rhs {
        return Ok(0.0);
    }
    Ok(level - sys.noise / u.g)
}

/// Harvested power at the station power cap, written out for the non-linear
/// model and delegated to [`crate::model::EhParams`] otherwise.
pub fn harvest_power_at_cap(u: &UserParams, sys: &SystemParams) -> f64 {
    let eh = &sys.eh;
    match eh.model {
        EhModel::NonLinear => {
            let omega = (-eh.mu * eh.p0 + eh.psi).exp();
            let bracket = (1.0 + omega) / (1.0 + (-eh.mu * u.h * sys.max_station_power + eh.psi).exp()) - 1.0;
            (eh.p_max / omega * bracket).max(0.0)
        }
        EhModel::LinearBaseline { .. } => eh.harvested_power(u.h * sys.max_station_power),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tau0Rule {
    /// The Lagrangian decreases in `tau0`; the maximizer is `tau0 = 0`.
    Zero { z: f64 },
    /// The Lagrangian is flat in `tau0`; its value is fixed by complementary
    /// slackness.
    Interior { z: f64 },
}

/// Derivative of the Lagrangian with respect to `tau0`.
pub fn tau0_slope(d: &DualVars, eta: f64, users: &[UserParams], sys: &SystemParams) -> (f64, f64) {
    let mut z = -d.beta;
    let mut scale = d.beta;
    for (k, u) in users.iter().enumerate() {
        let pe = harvest_power_at_cap(u, sys);
        z += d.rho[k] * (pe - u.p_receive) - d.theta[k] * eta * u.p_receive;
        scale += d.rho[k] * (pe + u.p_receive) + d.theta[k] * eta * u.p_receive;
    }
    (z, scale)
}

pub fn tau0_rule(d: &DualVars, eta: f64, users: &[UserParams], sys: &SystemParams) -> Result<Tau0Rule> {
    if d.num_users() != users.len() {
        return Err(Error::InvalidParams("dual vector length differs from user count".into()));
    }
    let (z, scale) = tau0_slope(d, eta, users, sys);
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    if z > tol {
        Err(Error::PositiveZ { z })
    } else if z < -tol {
        Ok(Tau0Rule::Zero { z })
    } else {
        Ok(Tau0Rule::Interior { z })
    }
}

/// Left side of the channel-threshold equation evaluated at gain `w`, with
/// the energy multiplier reduced to `theta eta` as in its derivation.
pub fn omega_equation(d: &DualVars, k: usize, eta: f64, u: &UserParams, sys: &SystemParams, w: f64) -> f64 {
    let a = d.bit_weight(k) * sys.bandwidth / u.overhead;
    let c = d.theta[k] * eta;
    let arg = a * w / (sys.amplifier * c * sys.noise * LN_2);
    a * arg.log2() - a / LN_2 + sys.amplifier * c * sys.noise / w - sys.amplifier * c * u.p_circuit - d.beta
}

/// Magnitude used to judge the residual of [`omega_equation`].
pub fn omega_scale(d: &DualVars, k: usize, eta: f64, u: &UserParams, sys: &SystemParams) -> f64 {
    let a = d.bit_weight(k) * sys.bandwidth / u.overhead;
    a / LN_2 + sys.amplifier * d.theta[k] * eta * u.p_circuit + d.beta
}

/// Channel gain at which offloading starts paying off: the root of
/// [`omega_equation`], found by bisection on a geometrically grown bracket.
pub fn omega_root(d: &DualVars, k: usize, eta: f64, u: &UserParams, sys: &SystemParams) -> Result<f64> {
    d.check(k)?;
    let c = d.theta[k] * eta;
    if c <= 0.0 {
        return Err(Error::DegenerateCoefficients("theta_k * eta must be positive".into()));
    }
    if d.bit_weight(k) <= 0.0 {
        return Err(Error::DegenerateCoefficients("lambda_k + theta_k must be positive".into()));
    }
    let h = |w: f64| omega_equation(d, k, eta, u, sys, w);
    let mut lo = sys.noise * sys.amplifier * u.overhead * c * LN_2 / (d.bit_weight(k) * sys.bandwidth);
    if h(lo) >= 0.0 {
        return Ok(lo);
    }
    let mut hi = 2.0 * lo;
    let mut doublings = 0;
    while h(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings >= 200 || !hi.is_finite() {
            return Err(Error::DegenerateCoefficients(format!("no sign change after {doublings} doublings")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Primal quantities the offloading-time rule needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauContext {
    pub tau0: f64,
    pub f: f64,
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauRule {
    Zero,
    /// The slot spends the whole remaining energy budget.
    AtCap(f64),
    /// The Lagrangian is flat; any time in `[0, cap]`.
    Interior { cap: f64 },
}

/// Longest offloading time the energy left after harvesting and local
/// computing can pay for, clamped into `[0, T - tau0]`.
pub fn offload_time_cap(ctx: &TauContext, u: &UserParams, sys: &SystemParams) -> Result<f64> {
    let phi = ctx.tau0 * harvest_power_at_cap(u, sys);
    let left = phi - ctx.tau0 * u.p_receive - sys.frame * sys.capacitance * ctx.f.powi(3);
    let scale = phi.max(ctx.tau0 * u.p_receive).max(f64::MIN_POSITIVE);
    if left < -1e-12 * scale {
        return Err(Error::NegativeZ { z: left });
    }
    let per_second = sys.amplifier * (u.p_circuit + ctx.power);
    let z = if left <= 0.0 {
        0.0
    } else if per_second > 0.0 {
        left / per_second
    } else {
        f64::INFINITY
    };
    Ok(z.clamp(0.0, (sys.frame - ctx.tau0).max(0.0)))
}

/// Classifies user `k`'s offloading time by comparing its uplink gain with
/// the threshold from [`omega_root`].
pub fn tau_k_rule(
    d: &DualVars,
    k: usize,
    eta: f64,
    u: &UserParams,
    sys: &SystemParams,
    ctx: &TauContext,
) -> Result<TauRule> {
    let cap = offload_time_cap(ctx, u, sys)?;
    let w = omega_root(d, k, eta, u, sys)?;
    Ok(if u.g > w {
        TauRule::AtCap(cap)
    } else if u.g == w {
        TauRule::Interior { cap }
    } else {
        TauRule::Zero
    })
}

fn user_terms(k: usize, p: &StationaryPrimal, eta: f64, u: &UserParams, sys: &SystemParams) -> (f64, f64) {
    let bits = sys.frame * p.f_star[k] / sys.cycles_per_bit
        + if p.tau_star[k] > 0.0 {
            sys.bandwidth * p.tau_star[k] / u.overhead * (1.0 + u.g * p.p_star[k] / sys.noise).log2()
        } else {
            0.0
        };
    let energy = p.tau0_star * u.p_receive
        + sys.amplifier * p.tau_star[k] * (p.p_star[k] + u.p_circuit)
        + sys.frame * sys.capacitance * p.f_star[k].powi(3);
    (bits, bits - eta * energy)
}

/// Epigraph value implied by the multipliers: zero when the CE multipliers
/// sum above one, else the smallest `R_k - eta E_k` of the candidate.
pub fn upsilon_rule(d: &DualVars, p: &StationaryPrimal, eta: f64, users: &[UserParams], sys: &SystemParams) -> f64 {
    if d.theta.iter().sum::<f64>() > 1.0 {
        return 0.0;
    }
    users
        .iter()
        .enumerate()
        .map(|(k, u)| user_terms(k, p, eta, u, sys).1)
        .fold(f64::INFINITY, f64::min)
}

/// Partial derivatives of the Lagrangian in `f_k` and `y_k` (`y = tau P`).
#[allow(clippy::too_many_arguments)]
pub fn lagrangian_gradient_fy(
    d: &DualVars,
    k: usize,
    eta: f64,
    u: &UserParams,
    sys: &SystemParams,
    tau: f64,
    y: f64,
    f: f64,
) -> (f64, f64) {
    let df = d.bit_weight(k) * sys.frame / sys.cycles_per_bit
        - 3.0 * d.energy_weight(k, eta) * sys.frame * sys.capacitance * f * f;
    let dy = d.bit_weight(k) * sys.bandwidth * tau * u.g / (u.overhead * LN_2 * (tau * sys.noise + u.g * y))
        - sys.amplifier * d.energy_weight(k, eta);
    (df, dy)
}

/// Full Lagrangian value for user-level variables; used to validate
/// [`lagrangian_gradient_fy`] numerically.
#[allow(clippy::too_many_arguments)]
pub fn lagrangian(
    d: &DualVars,
    eta: f64,
    users: &[UserParams],
    sys: &SystemParams,
    tau0: f64,
    tau: &[f64],
    y: &[f64],
    f: &[f64],
    upsilon: f64,
) -> f64 {
    let mut l = upsilon + d.beta * (sys.frame - tau0 - tau.iter().sum::<f64>());
    for (k, u) in users.iter().enumerate() {
        let rate = if tau[k] > 0.0 {
            sys.bandwidth * tau[k] / u.overhead * (1.0 + u.g * y[k] / (tau[k] * sys.noise)).log2()
        } else {
            0.0
        };
        let bits = sys.frame * f[k] / sys.cycles_per_bit + rate;
        let energy = tau0 * u.p_receive
            + sys.amplifier * (y[k] + tau[k] * u.p_circuit)
            + sys.frame * sys.capacitance * f[k].powi(3);
        l += d.lambda[k] * (bits - u.min_bits)
            + d.rho[k] * (tau0 * harvest_power_at_cap(u, sys) - energy)
            + d.theta[k] * (bits - eta * energy - upsilon);
    }
    l
}

/// Relative stationarity residuals in `f_k` and `y_k` at an inner solution.
/// `None` marks a variable sitting on its zero bound, where stationarity holds
/// with a bound multiplier instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stationarity {
    pub df: Option<f64>,
    pub dy: Option<f64>,
}

pub fn stationarity_residuals(
    sol: &InnerSolution,
    eta: f64,
    users: &[UserParams],
    sys: &SystemParams,
) -> Vec<Stationarity> {
    let sc = Scales::new(users, sys);
    users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let (tau, y, f) = (sol.tau[k], sol.y[k], sol.freq[k]);
            let (df, dy) = lagrangian_gradient_fy(&sol.duals, k, eta, u, sys, tau, y, f);
            let f_active = f > 1e-6 * sc.freq;
            let y_active = tau > 1e-6 * sys.frame && y * sys.amplifier > 1e-9 * sc.energy;
            let f_scale = sol.duals.bit_weight(k) * sys.frame / sys.cycles_per_bit
                + 3.0 * sol.duals.energy_weight(k, eta) * sys.frame * sys.capacitance * f * f;
            let y_scale = sys.amplifier * sol.duals.energy_weight(k, eta) + (dy + sys.amplifier * sol.duals.energy_weight(k, eta)).abs();
            Stationarity {
                df: f_active.then(|| df.abs() / f_scale.max(f64::MIN_POSITIVE)),
                dy: y_active.then(|| dy.abs() / y_scale.max(f64::MIN_POSITIVE)),
            }
        })
        .collect()
}

/// Re-estimates the multipliers of a TDMA partial inner solution from its
/// primal point.
///
/// Rows whose relative slack is at most `active_tol` are taken as active;
/// the stationarity equations in `Y`, `f_k`, `y_k`, `tau_k` and `tau0` are
/// then solved for the active multipliers in the least-squares sense, each
/// equation normalized by the size of its terms at the supplied duals.
/// Inactive multipliers are zero and negative estimates are clamped.
pub fn polish_duals(sol: &InnerSolution, eta: f64, users: &[UserParams], sys: &SystemParams, active_tol: f64) -> DualVars {
    let k = users.len();
    let sc = Scales::new(users, sys);
    let n = 3 * k + 1;
    let b_coef = sys.bandwidth / LN_2;
    let mut bits = vec![0.0; k];
    let mut energy = vec![0.0; k];
    let mut rate_y = vec![0.0; k];
    let mut rate_t = vec![0.0; k];
    for (j, u) in users.iter().enumerate() {
        let (tau, y, f) = (sol.tau[j], sol.y[j], sol.freq[j]);
        let mut rate = 0.0;
        if tau > 0.0 && y > 0.0 {
            let snr = u.g * y / (tau * sys.noise);
            rate = b_coef / u.overhead * tau * snr.ln_1p();
            rate_y[j] = b_coef / u.overhead * tau * u.g / (tau * sys.noise + u.g * y);
            rate_t[j] = b_coef / u.overhead * (snr.ln_1p() - snr / (1.0 + snr));
        }
        bits[j] = sys.frame * f / sys.cycles_per_bit + rate;
        energy[j] = sol.tau0 * u.p_receive + sys.amplifier * (y + tau * u.p_circuit) + sys.frame * sys.capacitance * f.powi(3);
    }
    let pe = harvest_powers(users, sys);
    let mut active = vec![false; n];
    for (j, u) in users.iter().enumerate() {
        active[3 * j] = u.min_bits > 0.0 && bits[j] - u.min_bits <= active_tol * u.min_bits.max(sc.bits);
        let harvested = sol.tau0 * pe[j];
        active[3 * j + 1] = harvested - energy[j] <= active_tol * harvested.max(sc.energy);
        let ce = bits[j] - eta * energy[j];
        active[3 * j + 2] = ce - sol.upsilon <= active_tol * sol.upsilon.abs().max(sc.bits);
    }
    let used = sol.tau0 + sol.tau.iter().sum::<f64>();
    active[3 * k] = sys.frame - used <= active_tol * sys.frame;

    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut upsilon_row = vec![0.0; n];
    for j in 0..k {
        upsilon_row[3 * j + 2] = 1.0;
    }
    rows.push((upsilon_row, 1.0));
    let mut tau0_row = vec![0.0; n];
    tau0_row[3 * k] = -1.0;
    for (j, u) in users.iter().enumerate() {
        let (tau, y, f) = (sol.tau[j], sol.y[j], sol.freq[j]);
        if f > 0.0 {
            let mut r = vec![0.0; n];
            let marginal = 3.0 * sys.frame * sys.capacitance * f * f;
            r[3 * j] = sys.frame / sys.cycles_per_bit;
            r[3 * j + 1] = -marginal;
            r[3 * j + 2] = sys.frame / sys.cycles_per_bit - eta * marginal;
            rows.push((r, 0.0));
        }
        if tau > 0.0 && y > 0.0 {
            let mut r = vec![0.0; n];
            r[3 * j] = rate_y[j];
            r[3 * j + 1] = -sys.amplifier;
            r[3 * j + 2] = rate_y[j] - eta * sys.amplifier;
            rows.push((r, 0.0));
            let mut r = vec![0.0; n];
            r[3 * j] = rate_t[j];
            r[3 * j + 1] = -sys.amplifier * u.p_circuit;
            r[3 * j + 2] = rate_t[j] - eta * sys.amplifier * u.p_circuit;
            r[3 * k] = -1.0;
            rows.push((r, 0.0));
        }
        tau0_row[3 * j + 1] = pe[j] - u.p_receive;
        tau0_row[3 * j + 2] = -eta * u.p_receive;
    }
    if sol.tau0 > 0.0 {
        rows.push((tau0_row, 0.0));
    }

    let flat = |d: &DualVars| -> Vec<f64> {
        let mut v = vec![0.0; n];
        for j in 0..k {
            v[3 * j] = d.lambda[j];
            v[3 * j + 1] = d.rho[j];
            v[3 * j + 2] = d.theta[j];
        }
        v[3 * k] = d.beta;
        v
    };
    let prior = flat(&sol.duals);
    let cols: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
    let a = nalgebra::DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
        let (row, rhs) = &rows[r];
        let norm = row.iter().zip(&prior).map(|(a, d)| (a * d).abs()).sum::<f64>() + rhs.abs();
        row[cols[c]] / norm.max(f64::MIN_POSITIVE)
    });
    let b = nalgebra::DVector::from_fn(rows.len(), |r, _| {
        let (row, rhs) = &rows[r];
        let norm = row.iter().zip(&prior).map(|(a, d)| (a * d).abs()).sum::<f64>() + rhs.abs();
        rhs / norm.max(f64::MIN_POSITIVE)
    });
    let mut out = DualVars::zeros(k);
    let Ok(x) = a.svd(true, true).solve(&b, 1e-14) else { return sol.duals.clone() };
    let mut full = vec![0.0; n];
    for (c, &i) in cols.iter().enumerate() {
        full[i] = x[c].max(0.0);
    }
    for j in 0..k {
        out.lambda[j] = full[3 * j];
        out.rho[j] = full[3 * j + 1];
        out.theta[j] = full[3 * j + 2];
    }
    out.beta = full[3 * k];
    out.mirror_binary_names();
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualAscentOptions {
    pub max_steps: usize,
    /// Stop once `(dual bound - primal value)` falls below this fraction of
    /// `max(|primal value|, bit scale)`.
    pub rel_gap: f64,
    /// During the subgradient phase, primal recovery runs every this many
    /// steps.
    pub recover_every: usize,
}

impl Default for DualAscentOptions {
    fn default() -> Self {
        Self { max_steps: 5000, rel_gap: 2e-4, recover_every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualAscentReport {
    pub solution: InnerSolution,
    pub duals: DualVars,
    /// Best dual bound on the epigraph value, in bits.
    pub dual_bound: f64,
    /// Relative gap between the dual bound and the recovered primal value.
    pub gap: f64,
    pub steps: usize,
    pub closed: bool,
}

/// Dual method for the inner TDMA partial problem.
///
/// A projected subgradient phase (step `a / sqrt(t)` on the scaled
/// multipliers) supplies a starting point for the per-user ratios
/// `(lambda + theta) / (rho + theta eta)`. Frequencies and powers follow
/// from the ratios in closed form and the times from a small linear program,
/// so the primal is then polished by a direct search over the ratios. The
/// bound comes from the dual function evaluated at multipliers fitted to
/// that primal point. Fails with [`Error::GapNotClosed`] if the gap stays
/// above tolerance.
pub fn dual_ascent_p3(eta: f64, users: &[UserParams], sys: &SystemParams) -> Result<(InnerSolution, DualVars)> {
    let rep = dual_ascent_p3_with(eta, users, sys, &DualAscentOptions::default())?;
    if rep.closed {
        Ok((rep.solution, rep.duals))
    } else {
        Err(Error::GapNotClosed { gap: rep.gap })
    }
}

/// Multipliers in internal units: the bit-valued rows are divided by the bit
/// scale, the energy rows by the energy scale and the time row by `T`.
#[derive(Debug, Clone)]
struct ScaledDuals {
    lambda: Vec<f64>,
    rho: Vec<f64>,
    theta: Vec<f64>,
    beta: f64,
}

impl ScaledDuals {
    fn to_raw(&self, sc: &Scales, sys: &SystemParams) -> DualVars {
        let mut d = DualVars::zeros(self.lambda.len());
        d.lambda = self.lambda.clone();
        d.theta = self.theta.clone();
        d.rho = self.rho.iter().map(|r| r * sc.bits / sc.energy).collect();
        d.beta = self.beta * sc.bits / sys.frame;
        d.mirror_binary_names();
        d
    }
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let mut s: Vec<f64> = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut shift = 0.0;
    for (i, x) in s.iter().enumerate() {
        acc += x;
        let t = (acc - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            shift = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - shift).max(0.0);
    }
}

struct Caps {
    f: Vec<f64>,
    p: f64,
}

/// Maximizer of the Lagrangian over the box `0 <= tau_n <= T`. Times take
/// the bang-bang response to the sign of their coefficient.
fn primal_response(
    d: &DualVars,
    eta: f64,
    users: &[UserParams],
    sys: &SystemParams,
    caps: &Caps,
) -> StationaryPrimal {
    let k = users.len();
    let mut p = StationaryPrimal {
        f_star: vec![0.0; k],
        p_star: vec![0.0; k],
        y_star: vec![0.0; k],
        tau0_star: 0.0,
        tau_star: vec![0.0; k],
        upsilon_star: 0.0,
    };
    let share = |slope: f64| if slope > 0.0 { 1.0 } else { 0.0 };
    for (j, u) in users.iter().enumerate() {
        p.f_star[j] = match optimal_frequency(d, j, eta, sys) {
            Ok(f) => f.min(caps.f[j]),
            Err(_) => caps.f[j],
        };
        let power = match optimal_power(d, j, eta, u, sys, 1.0) {
            Ok(pw) => pw.min(caps.p),
            Err(_) => caps.p,
        };
        if power > 0.0 {
            let rate = sys.bandwidth / u.overhead * (1.0 + u.g * power / sys.noise).log2();
            let slope = d.bit_weight(j) * rate - sys.amplifier * d.energy_weight(j, eta) * (power + u.p_circuit) - d.beta;
            p.tau_star[j] = share(slope) * sys.frame;
            if p.tau_star[j] > 0.0 {
                p.p_star[j] = power;
                p.y_star[j] = power * p.tau_star[j];
            }
        }
    }
    p.tau0_star = share(tau0_slope(d, eta, users, sys).0) * sys.frame;
    p
}

/// Same as [`dual_ascent_p3`] but always returns the final state, closed or not.
pub fn dual_ascent_p3_with(
    eta: f64,
    users: &[UserParams],
    sys: &SystemParams,
    opts: &DualAscentOptions,
) -> Result<DualAscentReport> {
    validate_all(users, sys)?;
    let k = users.len();
    if let Some(r) = degenerate_energy(users, sys) {
        r?;
        let sol = InnerSolution::zero(k, false, vec![1.0; k], sys);
        return Ok(DualAscentReport {
            duals: sol.duals.clone(),
            solution: sol,
            dual_bound: 0.0,
            gap: 0.0,
            steps: 0,
            closed: true,
        });
    }
    let sc = Scales::new(users, sys);
    let pe = harvest_powers(users, sys);
    let caps = Caps {
        f: pe
            .iter()
            .zip(users)
            .map(|(p, u)| ((p - u.p_receive).max(0.0) / sys.capacitance).cbrt())
            .collect(),
        p: 1e3 * sc.energy / (sys.amplifier * sys.frame),
    };
    let to_raw = |z: &[f64]| {
        ScaledDuals {
            lambda: z[..k].to_vec(),
            rho: z[k..2 * k].to_vec(),
            theta: z[2 * k..3 * k].to_vec(),
            beta: z[3 * k],
        }
        .to_raw(&sc, sys)
    };
    // dual function (in bit-scale units) and a subgradient at z
    let dual_at = |z: &[f64]| -> (f64, Vec<f64>) {
        let d = to_raw(z);
        let resp = primal_response(&d, eta, users, sys, &caps);
        let idle = sys.frame - resp.tau0_star - resp.tau_star.iter().sum::<f64>();
        let mut sub = vec![0.0; 3 * k + 1];
        for (j, u) in users.iter().enumerate() {
            let (bits, ce) = user_terms(j, &resp, eta, u, sys);
            let energy = resp.tau0_star * u.p_receive
                + sys.amplifier * resp.tau_star[j] * (resp.p_star[j] + u.p_circuit)
                + sys.frame * sys.capacitance * resp.f_star[j].powi(3);
            sub[j] = (bits - u.min_bits) / sc.bits;
            sub[k + j] = (resp.tau0_star * pe[j] - energy) / sc.energy;
            sub[2 * k + j] = ce / sc.bits;
        }
        sub[3 * k] = idle / sys.frame;
        let val = z.iter().zip(&sub).map(|(a, b)| a * b).sum::<f64>();
        (val, sub)
    };
    let project = |z: &mut [f64]| {
        for v in z[..2 * k].iter_mut() {
            *v = v.max(0.0);
        }
        project_simplex(&mut z[2 * k..3 * k]);
        z[3 * k] = z[3 * k].max(0.0);
    };
    let ratio_of = |z: &[f64]| -> Vec<f64> {
        let d = to_raw(z);
        (0..k)
            .map(|j| {
                let (num, den) = (d.bit_weight(j), d.energy_weight(j, eta));
                if num > 0.0 && den > 0.0 { num / den } else { f64::NAN }
            })
            .collect()
    };
    let freq_cap = |j: usize| caps.f[j];
    let evaluate = |log_r: &[f64]| -> Option<(StationaryPrimal, Vec<f64>)> {
        let (f, power) = ratio_response(log_r, users, sys, &caps);
        time_lp(&f, &power, eta, users, sys, &sc, &pe).ok()
    };

    // theta starts on the simplex so every exact value is an upper bound
    let mut z = vec![0.0; 3 * k + 1];
    for v in z[2 * k..3 * k].iter_mut() {
        *v = 1.0 / k as f64;
    }
    for v in z[k..2 * k].iter_mut() {
        *v = 1.0;
    }
    z[3 * k] = 1.0;
    let mut best_z = z.clone();
    let mut best_bound = f64::INFINITY;
    let mut best: Option<(Vec<f64>, StationaryPrimal)> = None;
    let mut steps = 0;
    let mut gap = f64::INFINITY;
    let gap_of = |bound: f64, p: &StationaryPrimal| {
        (bound * sc.bits - p.upsilon_star).max(0.0) / p.upsilon_star.abs().max(sc.bits)
    };
    let consider = |log_r: Vec<f64>, best: &mut Option<(Vec<f64>, StationaryPrimal)>| {
        if let Some((p, _)) = evaluate(&log_r) {
            if best.as_ref().is_none_or(|(_, b)| p.upsilon_star > b.upsilon_star) {
                *best = Some((log_r, p));
            }
        }
    };

    // projected subgradient on the scaled multipliers, recovering a primal
    // point from the running average of the per-user ratios
    let subgradient_steps = opts.max_steps / 4;
    let mut avg_log_r = vec![0.0; k];
    let mut avg_weight = 0.0;
    let scale0 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    while steps < subgradient_steps {
        steps += 1;
        let (val, sub) = dual_at(&z);
        if val < best_bound {
            best_bound = val;
            best_z = z.clone();
        }
        let r = ratio_of(&z);
        if r.iter().all(|v| v.is_finite()) {
            let w = 1.0 / (steps as f64).sqrt();
            for (a, v) in avg_log_r.iter_mut().zip(&r) {
                *a += w * v.ln();
            }
            avg_weight += w;
        }
        if avg_weight > 0.0 && steps % opts.recover_every == 0 {
            consider(avg_log_r.iter().map(|v| v / avg_weight).collect(), &mut best);
            if let Some((_, p)) = &best {
                gap = gap_of(best_bound, p);
                if gap <= opts.rel_gap {
                    break;
                }
            }
        }
        let norm = sub.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let step = scale0 / (steps as f64).sqrt();
        for (zi, si) in z.iter_mut().zip(&sub) {
            *zi -= step * si / norm;
        }
        project(&mut z);
    }
    if best.is_none() {
        // no averaged ratio was usable: fall back to the frequency caps
        let log_r: Vec<f64> = (0..k)
            .map(|j| (3.0 * sys.cycles_per_bit * sys.capacitance * freq_cap(j).powi(2)).ln())
            .collect();
        consider(log_r, &mut best);
    }
    let Some((start, _)) = best.clone() else {
        return Err(Error::GapNotClosed { gap: f64::INFINITY });
    };

    // polish the primal by a direct search over the ratios, which fix the
    // frequencies and powers; the times then follow from a linear program
    if gap > opts.rel_gap {
        let budget = (opts.max_steps - steps) / 2;
        let (log_r, iters) = polish_ratios(&start, budget, |x| {
            evaluate(x).map_or(f64::INFINITY, |(p, _)| -p.upsilon_star / sc.bits)
        });
        steps += iters;
        consider(log_r, &mut best);
        let (log_r, primal) = best.as_ref().expect("a primal point was recorded");
        // the certificate is tight only at the optimal ratios, which the
        // primal value is flat around: search the ratios again on the bound
        let bound_at = |x: &[f64]| certificate(x, eta, users, sys, &sc, &pe, &caps).map(|zc| (dual_at(&zc).0, zc));
        let (log_r, iters) = polish_ratios(log_r, opts.max_steps - steps, |x| bound_at(x).map_or(f64::INFINITY, |(v, _)| v));
        steps += iters;
        if let Some((val, zc)) = bound_at(&log_r) {
            if val < best_bound {
                best_bound = val;
                best_z = zc;
            }
        }
        gap = gap_of(best_bound, primal);
    }

    let best_duals = to_raw(&best_z);
    let (_, primal) = best.expect("a primal point was recorded");
    let mut sol = InnerSolution::zero(k, false, vec![1.0; k], sys);
    sol.upsilon = primal.upsilon_star;
    sol.tau0 = primal.tau0_star;
    sol.tau = primal.tau_star.clone();
    sol.power = primal.p_star.clone();
    sol.y = primal.y_star.clone();
    sol.freq = primal.f_star.clone();
    sol.duals = best_duals.clone();
    sol.kkt_residual = gap;
    sol.gap = gap;
    sol.newton_iters = steps;
    Ok(DualAscentReport {
        solution: sol,
        duals: best_duals,
        dual_bound: best_bound * sc.bits,
        gap,
        steps,
        closed: gap <= opts.rel_gap,
    })
}

/// Frequencies and powers maximizing the Lagrangian when the per-user ratio
/// `(lambda + theta) / (rho + theta eta)` equals `exp(log_r)`.
fn ratio_response(log_r: &[f64], users: &[UserParams], sys: &SystemParams, caps: &Caps) -> (Vec<f64>, Vec<f64>) {
    let mut f = Vec::with_capacity(users.len());
    let mut power = Vec::with_capacity(users.len());
    for (j, u) in users.iter().enumerate() {
        let r = log_r[j].exp();
        f.push((r / (3.0 * sys.cycles_per_bit * sys.capacitance)).sqrt().min(caps.f[j]));
        let level = r * sys.bandwidth / (sys.amplifier * u.overhead * LN_2);
        power.push(if u.g > 0.0 { (level - sys.noise / u.g).clamp(0.0, caps.p) } else { 0.0 });
    }
    (f, power)
}

/// Nelder-Mead in log-ratio space. Returns the best point and the number of
/// iterations spent.
fn polish_ratios(start: &[f64], budget: usize, cost: impl Fn(&[f64]) -> f64) -> (Vec<f64>, usize) {
    use argmin::core::{CostFunction, Executor, State};
    use argmin::solver::neldermead::NelderMead;

    struct Cost<F>(F);
    impl<F: Fn(&[f64]) -> f64> CostFunction for Cost<F> {
        type Param = Vec<f64>;
        type Output = f64;
        fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
            Ok((self.0)(x))
        }
    }

    let mut best = start.to_vec();
    let mut used = 0;
    // restart from the incumbent with a shrinking simplex
    for width in [0.5, 0.05, 0.005] {
        if used >= budget {
            break;
        }
        let mut simplex = vec![best.clone()];
        for i in 0..best.len() {
            let mut v = best.clone();
            v[i] += width;
            simplex.push(v);
        }
        let Ok(solver) = NelderMead::new(simplex).with_sd_tolerance(1e-13) else { break };
        let iters = ((budget - used) as u64).min(4000);
        let Ok(res) = Executor::new(Cost(&cost), solver).configure(|s| s.max_iters(iters)).run() else { break };
        used += res.state().get_iter() as usize;
        if let Some(p) = res.state().get_best_param() {
            if cost(p) <= cost(&best) {
                best = p.clone();
            }
        }
    }
    (best, used)
}

/// Multipliers certifying a recovered primal point, in scaled units.
///
/// With the per-user ratio pinned to `exp(log_r)` the frequency and power
/// maximizers of the Lagrangian stay at the recovered values, so the dual
/// function is piecewise linear in the multipliers: a linear part plus
/// `T max(0, c_n)` for each time variable. Minimizing it over that affine
/// set is a linear program.
fn certificate(
    log_r: &[f64],
    eta: f64,
    users: &[UserParams],
    sys: &SystemParams,
    sc: &Scales,
    pe: &[f64],
    caps: &Caps,
) -> Option<Vec<f64>> {
    let k = users.len();
    let t = sys.frame;
    let nz = 3 * k + 1;
    let (f, power) = ratio_response(log_r, users, sys, caps);
    // raw multiplier = unit * scaled multiplier
    let mut unit = vec![1.0; nz];
    for v in unit[k..2 * k].iter_mut() {
        *v = sc.bits / sc.energy;
    }
    unit[3 * k] = sc.bits / t;
    let (lam, rho, th, beta) = (0, k, 2 * k, 3 * k);

    // linear part of the dual function and the time coefficients, raw units
    let mut base = vec![0.0; nz];
    let mut slopes = vec![vec![0.0; nz]; k + 1];
    base[beta] = t;
    for (j, u) in users.iter().enumerate() {
        let bits = t * f[j] / sys.cycles_per_bit;
        let energy = t * sys.capacitance * f[j].powi(3);
        base[lam + j] = bits - u.min_bits;
        base[th + j] = bits - eta * energy;
        base[rho + j] = -energy;
        let rate = if power[j] > 0.0 {
            sys.bandwidth / u.overhead * (1.0 + u.g * power[j] / sys.noise).log2()
        } else {
            0.0
        };
        let cost = sys.amplifier * (power[j] + u.p_circuit);
        let c = &mut slopes[1 + j];
        c[lam + j] = rate;
        c[th + j] = rate - eta * cost;
        c[rho + j] = -cost;
        c[beta] = -1.0;
        slopes[0][rho + j] = pe[j] - u.p_receive;
        slopes[0][th + j] = -eta * u.p_receive;
    }
    slopes[0][beta] = -1.0;

    // columns: scaled multipliers, then one epigraph variable per time variable
    let n = nz + k + 1;
    let mut a = Vec::new();
    let mut b = Vec::new();
    let push_eq = |row: Vec<f64>, rhs: f64, a: &mut Vec<Vec<f64>>, b: &mut Vec<f64>| {
        a.push(row.iter().map(|v| -v).collect());
        b.push(-rhs);
        a.push(row);
        b.push(rhs);
    };
    for (n_idx, c) in slopes.iter().enumerate() {
        let mut row = vec![0.0; n];
        for i in 0..nz {
            row[i] = c[i] * unit[i] * t / sc.bits;
        }
        row[nz + n_idx] = -1.0;
        a.push(row);
        b.push(0.0);
    }
    for j in 0..k {
        let interior_f = f[j] > 0.0 && f[j] < caps.f[j];
        let interior_p = power[j] > 0.0 && power[j] < caps.p;
        if interior_f || interior_p {
            let r = log_r[j].exp();
            let mut row = vec![0.0; n];
            row[lam + j] = unit[lam + j];
            row[th + j] = (1.0 - r * eta) * unit[th + j];
            row[rho + j] = -r * unit[rho + j];
            let norm = row.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let row = row.iter().map(|v| v / norm).collect();
            push_eq(row, 0.0, &mut a, &mut b);
        }
    }
    let mut row = vec![0.0; n];
    for v in row[th..th + k].iter_mut() {
        *v = 1.0;
    }
    push_eq(row, 1.0, &mut a, &mut b);
    let mut c = vec![0.0; n];
    for i in 0..nz {
        c[i] = -base[i] * unit[i] / sc.bits;
    }
    for v in c[nz..].iter_mut() {
        *v = -1.0;
    }
    let sol = crate::lp::maximize(&c, &a, &b).ok()?;
    Some(sol.x[..nz].to_vec())
}

/// Exact optimum over `(tau0, tau, Y)` for fixed frequencies and powers, and
/// the multipliers of its rows in internal units (bits rows, energy rows,
/// epigraph rows, time row).
fn time_lp(
    f: &[f64],
    power: &[f64],
    eta: f64,
    users: &[UserParams],
    sys: &SystemParams,
    sc: &Scales,
    pe: &[f64],
) -> Result<(StationaryPrimal, Vec<f64>)> {
    let k = users.len();
    let t = sys.frame;
    // columns: u0, u_1..u_k (times over T), Y+ and Y- (over the bit scale)
    let n = k + 3;
    let mut rows = Vec::with_capacity(3 * k + 1);
    let mut rhs = Vec::with_capacity(3 * k + 1);
    let local = |j: usize| (t * f[j] / sys.cycles_per_bit, t * sys.capacitance * f[j].powi(3));
    let rate = |j: usize| {
        if power[j] > 0.0 {
            sys.bandwidth / users[j].overhead * (1.0 + users[j].g * power[j] / sys.noise).log2()
        } else {
            0.0
        }
    };
    for (j, u) in users.iter().enumerate() {
        let (a, _) = local(j);
        let mut r = vec![0.0; n];
        r[1 + j] = -rate(j) * t / sc.bits;
        rows.push(r);
        rhs.push((a - u.min_bits) / sc.bits);
    }
    for (j, u) in users.iter().enumerate() {
        let (_, e) = local(j);
        let mut r = vec![0.0; n];
        r[0] = t * (u.p_receive - pe[j]) / sc.energy;
        r[1 + j] = t * sys.amplifier * (power[j] + u.p_circuit) / sc.energy;
        rows.push(r);
        rhs.push(-e / sc.energy);
    }
    for (j, u) in users.iter().enumerate() {
        let (a, e) = local(j);
        let mut r = vec![0.0; n];
        r[0] = eta * t * u.p_receive / sc.bits;
        r[1 + j] = -(rate(j) - eta * sys.amplifier * (power[j] + u.p_circuit)) * t / sc.bits;
        r[k + 1] = 1.0;
        r[k + 2] = -1.0;
        rows.push(r);
        rhs.push((a - eta * e) / sc.bits);
    }
    let mut r = vec![1.0; n];
    r[k + 1] = 0.0;
    r[k + 2] = 0.0;
    rows.push(r);
    rhs.push(1.0);
    let mut c = vec![0.0; n];
    c[k + 1] = 1.0;
    c[k + 2] = -1.0;
    let sol = crate::lp::maximize(&c, &rows, &rhs)?;
    let tau: Vec<f64> = (0..k).map(|j| sol.x[1 + j] * t).collect();
    let p_eff: Vec<f64> = (0..k).map(|j| if tau[j] > 0.0 { power[j] } else { 0.0 }).collect();
    let primal = StationaryPrimal {
        f_star: f.to_vec(),
        y_star: tau.iter().zip(&p_eff).map(|(a, b)| a * b).collect(),
        p_star: p_eff,
        tau0_star: sol.x[0] * t,
        tau_star: tau,
        upsilon_star: sol.objective * sc.bits,
    };
    Ok((primal, sol.duals))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn duals(lambda: f64, rho: f64, theta: f64, beta: f64) -> DualVars {
        let mut d = DualVars::zeros(1);
        d.lambda[0] = lambda;
        d.rho[0] = rho;
        d.theta[0] = theta;
        d.beta = beta;
        d
    }

    #[test]
    fn frequency_rule() {
        let sys = SystemParams::default();
        let d = duals(1.0, 1.0, 0.0, 0.0);
        let f = optimal_frequency(&d, 0, 0.0, &sys).unwrap();
        assert!((f - 1.825_741_858_350_553_7e12).abs() < 1e-3 * 1.0e0 * 1e3);
        assert_eq!(optimal_frequency(&duals(0.0, 1.0, 0.0, 0.0), 0, 0.0, &sys).unwrap(), 0.0);
        let unit = 3.0 * sys.cycles_per_bit * sys.capacitance;
        let f = optimal_frequency(&duals(unit, 1.0, 0.0, 0.0), 0, 0.0, &sys).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
        assert!(matches!(
            optimal_frequency(&duals(1.0, 0.0, 0.0, 0.0), 0, 0.0, &sys),
            Err(Error::DegenerateDuals { .. })
        ));
    }

    #[test]
    fn power_rule() {
        let sys = SystemParams::default();
        let u = UserParams { g: 1e-6, overhead: 1.1, ..UserParams::default() };
        let d = duals(1.0, 1e6, 0.0, 0.0);
        let p = optimal_power(&d, 0, 0.0, &u, &sys, 0.1).unwrap();
        assert!((p - 0.873_360_630_841_796).abs() < 1e-12, "{p}");
        assert_eq!(optimal_power(&d, 0, 0.0, &u, &sys, 0.0).unwrap(), 0.0);
        // exactly on the threshold the power is zero
        let thr = sys.noise * sys.amplifier * u.overhead * LN_2 * 1e6 / sys.bandwidth;
        let at = UserParams { g: thr, ..u.clone() };
        assert_eq!(optimal_power(&d, 0, 0.0, &at, &sys, 0.1).unwrap(), 0.0);
        let below = UserParams { g: 0.5 * thr, ..u };
        assert_eq!(optimal_power(&d, 0, 0.0, &below, &sys, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn tau0_branches() {
        let sys = SystemParams::default();
        let u = UserParams::default();
        assert!(matches!(tau0_rule(&duals(0.0, 0.0, 0.0, 2.0), 0.0, std::slice::from_ref(&u), &sys), Ok(Tau0Rule::Zero { .. })));
        let pe = harvest_power_at_cap(&u, &sys);
        let beta = 3.0 * (pe - u.p_receive);
        assert!(matches!(tau0_rule(&duals(0.0, 3.0, 0.0, beta), 0.0, std::slice::from_ref(&u), &sys), Ok(Tau0Rule::Interior { .. })));
        assert!(matches!(tau0_rule(&duals(0.0, 3.0, 0.0, 0.0), 0.0, &[u], &sys), Err(Error::PositiveZ { .. })));
    }

    #[test]
    fn closed_form_harvest_matches_model() {
        let sys = SystemParams::default();
        for h in [1e-3, 0.01, 0.1, 0.5, 1.0, 3.0] {
            let u = UserParams { h, ..UserParams::default() };
            let a = harvest_power_at_cap(&u, &sys);
            let b = sys.eh.harvested_power(h * sys.max_station_power);
            assert!((a - b).abs() <= 1e-15, "{a} {b}");
        }
    }

    #[test]
    fn omega_root_solves_threshold_equation() {
        let sys = SystemParams::default();
        let u = UserParams::default();
        let d = duals(0.3, 0.0, 0.7, 1e4);
        let eta = 1e9;
        let w = omega_root(&d, 0, eta, &u, &sys).unwrap();
        let lo = sys.noise * sys.amplifier * u.overhead * 0.7 * eta * LN_2 / (1.0 * sys.bandwidth);
        assert!(omega_equation(&d, 0, eta, &u, &sys, lo) < 0.0);
        let r = omega_equation(&d, 0, eta, &u, &sys, w);
        assert!(r.abs() <= 1e-9 * omega_scale(&d, 0, eta, &u, &sys), "{r}");
        assert!(matches!(omega_root(&d, 0, 0.0, &u, &sys), Err(Error::DegenerateCoefficients(_))));
    }

    #[test]
    fn tau_rule_branches() {
        let sys = SystemParams::default();
        let d = duals(0.3, 0.0, 0.7, 1e4);
        let eta = 1e9;
        let u = UserParams::default();
        let w = omega_root(&d, 0, eta, &u, &sys).unwrap();
        let ctx = TauContext { tau0: 0.5, f: 0.0, power: 0.01 };
        let weak = UserParams { g: 0.5 * w, ..u.clone() };
        assert_eq!(tau_k_rule(&d, 0, eta, &weak, &sys, &ctx).unwrap(), TauRule::Zero);
        let strong = UserParams { g: 2.0 * w, ..u.clone() };
        assert!(matches!(tau_k_rule(&d, 0, eta, &strong, &sys, &ctx).unwrap(), TauRule::AtCap(_)));
        // the budget is used up by local computing, so the cap is zero
        let pe = harvest_power_at_cap(&u, &sys);
        let f = (0.5 * (pe - u.p_receive) / (sys.frame * sys.capacitance)).cbrt();
        let z = offload_time_cap(&TauContext { tau0: 0.5, f, power: 0.01 }, &u, &sys).unwrap();
        assert!(z.abs() < 1e-9, "{z}");
    }

    #[test]
    fn upsilon_branches() {
        let sys = SystemParams::default();
        let users = vec![UserParams::default(); 2];
        let p = StationaryPrimal {
            f_star: vec![1e7, 2e7],
            p_star: vec![0.0; 2],
            y_star: vec![0.0; 2],
            tau0_star: 0.5,
            tau_star: vec![0.0; 2],
            upsilon_star: 0.0,
        };
        let mut d = DualVars::zeros(2);
        d.theta = vec![0.75, 0.75];
        assert_eq!(upsilon_rule(&d, &p, 1e6, &users, &sys), 0.0);
        d.theta = vec![0.25, 0.25];
        let e0 = 0.5 * users[0].p_receive + sys.capacitance * 1e21;
        let want = 1e4 - 1e6 * e0;
        let got = upsilon_rule(&d, &p, 1e6, &users, &sys);
        assert!((got - want).abs() < 1e-9 * want.abs(), "{got} {want}");
    }

    #[test]
    fn gradient_matches_finite_difference_of_lagrangian() {
        let sys = SystemParams::default();
        let users = vec![UserParams::with_gains(0.8, 0.5), UserParams::with_gains(0.3, 0.9)];
        let mut d = DualVars::zeros(2);
        d.lambda = vec![0.2, 0.1];
        d.rho = vec![4e9, 2e9];
        d.theta = vec![0.4, 0.6];
        d.beta = 1e5;
        let eta = 1e8;
        let (tau0, tau, y, f) = (0.4, vec![0.2, 0.3], vec![1e-4, 3e-4], vec![2e7, 4e7]);
        for k in 0..2 {
            let (df, dy) = lagrangian_gradient_fy(&d, k, eta, &users[k], &sys, tau[k], y[k], f[k]);
            let h = 1e3;
            let mut fp = f.clone();
            let mut fm = f.clone();
            fp[k] += h;
            fm[k] -= h;
            let fd = (lagrangian(&d, eta, &users, &sys, tau0, &tau, &y, &fp, 0.0)
                - lagrangian(&d, eta, &users, &sys, tau0, &tau, &y, &fm, 0.0))
                / (2.0 * h);
            assert!((fd - df).abs() <= 1e-6 * df.abs().max(1e-3), "{fd} {df}");
            let h = 1e-9;
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[k] += h;
            ym[k] -= h;
            let fd = (lagrangian(&d, eta, &users, &sys, tau0, &tau, &yp, &f, 0.0)
                - lagrangian(&d, eta, &users, &sys, tau0, &tau, &ym, &f, 0.0))
                / (2.0 * h);
            assert!((fd - dy).abs() <= 1e-5 * dy.abs().max(1.0), "{fd} {dy}");
        }
    }

    #[test]
    fn zero_duals_give_zero_frequency_response() {
        let sys = SystemParams::default();
        let users = vec![UserParams::default()];
        let caps = Caps { f: vec![1e9], p: 1.0 };
        let r = primal_response(&DualVars::zeros(1), 0.0, &users, &sys, &caps);
        assert_eq!(r.f_star[0], 0.0);
    }

    #[test]
    fn simplex_projection() {
        let mut v = vec![0.5, 0.5, 0.5];
        project_simplex(&mut v);
        for x in &v {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut v = vec![2.0, 0.0];
        project_simplex(&mut v);
        assert_eq!(v, vec![1.0, 0.0]);
    }

    #[test]
    fn single_user_matches_barrier() {
        let sys = SystemParams::default();
        let users = vec![UserParams::with_gains(0.8, 1e-4)];
        let (sol, _) = dual_ascent_p3(0.0, &users, &sys).unwrap();
        let reference = crate::convex::solve_p3(0.0, &users, &sys).unwrap();
        assert!((sol.upsilon - reference.upsilon).abs() <= 1e-3 * reference.upsilon);
    }

    #[test]
    fn symmetric_users_get_symmetric_duals() {
        let sys = SystemParams::default();
        let users = vec![UserParams::with_gains(0.7, 2e-4); 2];
        let (sol, d) = dual_ascent_p3(1e8, &users, &sys).unwrap();
        assert!((d.theta[0] - d.theta[1]).abs() <= 1e-3);
        assert!((d.rho[0] - d.rho[1]).abs() <= 1e-3 * d.rho[0].max(d.rho[1]));
        assert!((sol.freq[0] - sol.freq[1]).abs() <= 1e-3 * sol.freq[0]);
    }

    #[test]
    fn polished_duals_satisfy_stationarity() {
        let sys = SystemParams::default();
        let users = vec![UserParams::with_gains(0.8, 2e-4), UserParams::with_gains(0.55, 4e-5)];
        for eta in [0.0, 1e8] {
            let sol = crate::convex::solve_p3(eta, &users, &sys).unwrap();
            let theta: f64 = sol.duals.theta.iter().sum();
            assert!((theta - 1.0).abs() < 1e-6, "{theta}");
            for s in stationarity_residuals(&sol, eta, &users, &sys) {
                for r in [s.df, s.dy].into_iter().flatten() {
                    assert!(r <= 1e-6, "eta {eta}: {r}");
                }
            }
        }
    }
}
