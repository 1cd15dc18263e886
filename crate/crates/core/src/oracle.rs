//! Brute-force reference solutions for tiny instances.
//!
//! [`grid_maxmin`] searches the allocation space directly: a log-spaced grid
//! over the harvest and offloading times, nested grids over the offloading
//! powers and CPU frequencies, and a coordinate refinement pass at every
//! level. It shares nothing with the optimization modules beyond the system
//! model, which is what makes it useful as a check on them.

use crate::error::{Error, Result};
use crate::model::{
    check_decoding_order, local_bits, local_energy, noma_bits_unchecked, offload_bits_tdma, validate_all, Allocation,
    OffloadSchedule, Regime, SystemParams, UserParams,
};

/// What the per-user metric being max-minimized is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Computed bits per joule.
    Efficiency,
    /// Computed bits.
    Bits,
}

/// Points per axis at each level of the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    /// Harvest and offloading times.
    pub time: usize,
    pub power: usize,
    pub freq: usize,
    /// Number of step halvings in the refinement pass.
    pub halvings: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { time: 16, power: 16, freq: 32, halvings: 10 }
    }
}

const MAX_USERS: usize = 2;
const MAX_AXIS: usize = 64;
const TIME_RANGE: f64 = 1e-9;
const POWER_RANGE: f64 = 1e-9;
const FREQ_RANGE: f64 = 1e-8;

fn log_map(u: f64, lo_ratio: f64, hi: f64) -> f64 {
    hi * lo_ratio.powf(1.0 - u)
}

/// Like [`log_map`], with the bottom of the axis meaning zero time.
fn time_map(u: f64, frame: f64) -> f64 {
    if u == 0.0 { 0.0 } else { log_map(u, TIME_RANGE, frame) }
}

/// Maximizes `f` over the unit cube: full grid with `n` points per axis,
/// then coordinate moves of halving step length.
fn search(dims: usize, n: usize, halvings: usize, mut f: impl FnMut(&[f64]) -> f64) -> (Vec<f64>, f64) {
    if dims == 0 {
        return (Vec::new(), f(&[]));
    }
    let n = n.max(2);
    let mut best = (vec![0.0; dims], f64::NEG_INFINITY);
    let mut idx = vec![0usize; dims];
    let mut u = vec![0.0; dims];
    loop {
        for (ui, &i) in u.iter_mut().zip(&idx) {
            *ui = i as f64 / (n - 1) as f64;
        }
        let v = f(&u);
        if v > best.1 {
            best = (u.clone(), v);
        }
        let mut d = 0;
        while d < dims && idx[d] == n - 1 {
            idx[d] = 0;
            d += 1;
        }
        if d == dims {
            break;
        }
        idx[d] += 1;
    }
    if !best.1.is_finite() {
        return best;
    }
    let mut step = 1.0 / (n - 1) as f64;
    for _ in 0..halvings {
        for _sweep in 0..100 {
            let mut improved = false;
            for d in 0..dims {
                for s in [-step, step] {
                    let mut c = best.0.clone();
                    c[d] = (c[d] + s).clamp(0.0, 1.0);
                    let v = f(&c);
                    if v > best.1 {
                        best = (c, v);
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        step *= 0.5;
    }
    best
}

fn metric(target: Target, bits: f64, energy: f64, u: &UserParams) -> f64 {
    if bits < u.min_bits {
        return f64::NEG_INFINITY;
    }
    match target {
        Target::Efficiency if energy > 0.0 => bits / energy,
        Target::Efficiency => 0.0,
        Target::Bits => bits,
    }
}

/// Best local frequency for one user given what offloading already uses.
/// Returns `(metric, f)`.
#[allow(clippy::too_many_arguments)]
fn best_local(
    target: Target,
    local: bool,
    bits0: f64,
    energy0: f64,
    budget: f64,
    u: &UserParams,
    sys: &SystemParams,
    grid: &GridSpec,
) -> (f64, f64) {
    let rem = budget - energy0;
    if rem < 0.0 {
        return (f64::NEG_INFINITY, 0.0);
    }
    let fmax = (rem / (sys.frame * sys.capacitance)).cbrt() * (1.0 - 1e-12);
    if !local || fmax <= 0.0 {
        return (metric(target, bits0, energy0, u), 0.0);
    }
    let at = |v: f64| {
        let f = log_map(v, FREQ_RANGE, fmax);
        metric(target, bits0 + local_bits(f, sys), energy0 + local_energy(f, sys), u)
    };
    let (v, m) = search(1, grid.freq, grid.halvings, |x| at(x[0]));
    (m, log_map(v[0], FREQ_RANGE, fmax))
}

struct Ctx<'a> {
    target: Target,
    users: &'a [UserParams],
    sys: &'a SystemParams,
    grid: GridSpec,
    /// Harvested power of each user at the station power cap.
    harvest: Vec<f64>,
}

impl Ctx<'_> {
    fn budget(&self, k: usize, tau0: f64) -> f64 {
        tau0 * self.harvest[k]
    }

    /// TDMA: best `(metric, power, f)` of user `k` for fixed times.
    fn tdma_user(&self, k: usize, tau0: f64, tau: f64, modes: (bool, bool)) -> (f64, f64, f64) {
        let (u, sys) = (&self.users[k], self.sys);
        let base = tau0 * u.p_receive;
        let budget = self.budget(k, tau0);
        let (local, offload) = modes;
        if !offload || tau <= 0.0 {
            let (m, f) = best_local(self.target, local, 0.0, base, budget, u, sys, &self.grid);
            return (m, 0.0, f);
        }
        let cap = (budget - base) / (sys.amplifier * tau) - u.p_circuit;
        if cap <= 0.0 {
            return (f64::NEG_INFINITY, 0.0, 0.0);
        }
        let at = |v: f64| {
            let p = log_map(v, POWER_RANGE, cap);
            let e = base + sys.amplifier * tau * (p + u.p_circuit);
            best_local(self.target, local, offload_bits_tdma(tau, p, u, sys), e, budget, u, sys, &self.grid)
        };
        let (v, m) = search(1, self.grid.power, self.grid.halvings, |x| at(x[0]).0);
        let p = log_map(v[0], POWER_RANGE, cap);
        (m, p, at(v[0]).1)
    }

    /// TDMA objective and allocation for outer coordinates `x` =
    /// (tau0, offloading times of the offloading users).
    fn tdma(&self, x: &[f64], modes: &[(bool, bool)]) -> (f64, Option<Allocation>) {
        let sys = self.sys;
        let tau0 = time_map(x[0], sys.frame);
        let mut tau = vec![0.0; self.users.len()];
        let mut j = 1;
        for (k, m) in modes.iter().enumerate() {
            if m.1 {
                tau[k] = time_map(x[j], sys.frame);
                j += 1;
            }
        }
        if tau0 + tau.iter().sum::<f64>() > sys.frame {
            return (f64::NEG_INFINITY, None);
        }
        let mut worst = f64::INFINITY;
        let mut power = vec![0.0; tau.len()];
        let mut freq = vec![0.0; tau.len()];
        for k in 0..self.users.len() {
            let (m, p, f) = self.tdma_user(k, tau0, tau[k], modes[k]);
            worst = worst.min(m);
            power[k] = p;
            freq[k] = f;
            if worst == f64::NEG_INFINITY {
                return (worst, None);
            }
        }
        (worst, Some(self.allocation(tau0, OffloadSchedule::Tdma(tau), power, freq, modes)))
    }

    /// NOMA objective for outer `x` = (tau0, tau1) and power coordinates.
    fn noma_powers(&self, tau0: f64, tau1: f64, v: &[f64], modes: &[(bool, bool)]) -> (f64, Vec<f64>, Vec<f64>) {
        let (users, sys) = (self.users, self.sys);
        let k = users.len();
        let mut power = vec![0.0; k];
        let mut j = 0;
        for (i, m) in modes.iter().enumerate() {
            if m.1 {
                let cap = (self.budget(i, tau0) - tau0 * users[i].p_receive) / (sys.amplifier * tau1) - users[i].p_circuit;
                if cap <= 0.0 {
                    return (f64::NEG_INFINITY, power, vec![0.0; k]);
                }
                power[i] = log_map(v[j], POWER_RANGE, cap);
                j += 1;
            }
        }
        let mut worst = f64::INFINITY;
        let mut freq = vec![0.0; k];
        for (i, u) in users.iter().enumerate() {
            let (local, offload) = modes[i];
            let base = tau0 * u.p_receive;
            let (bits, energy) = if offload {
                (noma_bits_unchecked(tau1, &power, i, users, sys), base + sys.amplifier * tau1 * (power[i] + u.p_circuit))
            } else {
                (0.0, base)
            };
            let (m, f) = best_local(self.target, local, bits, energy, self.budget(i, tau0), u, sys, &self.grid);
            worst = worst.min(m);
            freq[i] = f;
        }
        (worst, power, freq)
    }

    fn noma(&self, x: &[f64], modes: &[(bool, bool)]) -> (f64, Option<Allocation>) {
        let sys = self.sys;
        let tau0 = time_map(x[0], sys.frame);
        let n_off = modes.iter().filter(|m| m.1).count();
        let tau1 = if n_off > 0 { time_map(x[1], sys.frame) } else { 0.0 };
        if tau0 + tau1 > sys.frame {
            return (f64::NEG_INFINITY, None);
        }
        if tau1 == 0.0 {
            let off: Vec<(bool, bool)> = modes.iter().map(|m| (m.0, false)).collect();
            let (m, power, freq) = self.noma_powers(tau0, 0.0, &[], &off);
            return (m, Some(self.allocation(tau0, OffloadSchedule::Noma(0.0), power, freq, modes)));
        }
        let (v, m) = search(n_off, self.grid.power, self.grid.halvings, |v| self.noma_powers(tau0, tau1, v, modes).0);
        if m == f64::NEG_INFINITY {
            return (m, None);
        }
        let (m, power, freq) = self.noma_powers(tau0, tau1, &v, modes);
        (m, Some(self.allocation(tau0, OffloadSchedule::Noma(tau1), power, freq, modes)))
    }

    fn allocation(&self, tau0: f64, schedule: OffloadSchedule, power: Vec<f64>, freq: Vec<f64>, modes: &[(bool, bool)]) -> Allocation {
        Allocation {
            tau0,
            schedule,
            power,
            freq,
            alpha: modes.iter().map(|m| if m.1 { 1.0 } else { 0.0 }).collect(),
            station_power: self.sys.max_station_power,
        }
    }

    fn solve(&self, regime: Regime, modes: &[(bool, bool)]) -> (f64, Option<Allocation>) {
        let eval = |x: &[f64]| if regime.is_noma() { self.noma(x, modes) } else { self.tdma(x, modes) };
        let n_off = modes.iter().filter(|m| m.1).count();
        let dims = 1 + if regime.is_noma() { usize::from(n_off > 0) } else { n_off };
        let (x, m) = search(dims, self.grid.time, self.grid.halvings, |x| eval(x).0);
        if m == f64::NEG_INFINITY {
            return (m, None);
        }
        eval(&x)
    }
}

/// Best allocation found by exhaustive search for at most two users, with
/// the station transmitting at its power cap. Binary regimes try every mode
/// vector. Deterministic.
pub fn grid_maxmin(
    regime: Regime,
    target: Target,
    users: &[UserParams],
    sys: &SystemParams,
    grid: &GridSpec,
) -> Result<(Allocation, f64)> {
    validate_all(users, sys)?;
    if users.is_empty() || users.len() > MAX_USERS {
        return Err(Error::InvalidParams(format!("grid search supports 1 to {MAX_USERS} users")));
    }
    if [grid.time, grid.power, grid.freq].iter().any(|&n| !(2..=MAX_AXIS).contains(&n)) {
        return Err(Error::InvalidParams(format!("grid sizes must lie in 2..={MAX_AXIS}")));
    }
    if regime.is_noma() {
        check_decoding_order(users)?;
    }
    let ctx = Ctx {
        target,
        users,
        sys,
        grid: *grid,
        harvest: users.iter().map(|u| sys.eh.harvested_power(u.h * sys.max_station_power)).collect(),
    };
    let k = users.len();
    let mode_sets: Vec<Vec<(bool, bool)>> = if regime.is_binary() {
        (0..1usize << k).map(|bits| (0..k).map(|i| if bits >> i & 1 == 1 { (false, true) } else { (true, false) }).collect()).collect()
    } else {
        vec![vec![(true, true); k]]
    };
    let mut best: Option<(Allocation, f64)> = None;
    for modes in &mode_sets {
        if let (m, Some(alloc)) = ctx.solve(regime, modes) {
            if best.as_ref().is_none_or(|b| m > b.1) {
                best = Some((alloc, m));
            }
        }
    }
    let (mut alloc, m) = best.ok_or(Error::NoFeasiblePoint)?;
    if !regime.is_binary() {
        alloc.alpha = vec![1.0; k];
    }
    if m == 0.0 {
        alloc = Allocation::zeros(k, regime.is_noma(), sys.max_station_power);
    }
    Ok((alloc, m))
}

/// Best mode vector over all `2^K` choices (`K <= 8`), scoring each with
/// `inner`. Modes for which `inner` reports infeasibility are skipped; other
/// errors are returned.
pub fn enumerate_modes(k: usize, mut inner: impl FnMut(&[f64]) -> Result<f64>) -> Result<(Vec<f64>, f64)> {
    if k == 0 || k > 8 {
        return Err(Error::InvalidParams("mode enumeration supports 1 to 8 users".into()));
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for bits in 0..1usize << k {
        let alpha: Vec<f64> = (0..k).map(|i| f64::from((bits >> i & 1) as u8)).collect();
        let v = match inner(&alpha) {
            Ok(v) => v,
            Err(Error::Infeasible { .. } | Error::NoFeasiblePoint | Error::InnerSolverFailure { iteration: 0, .. }) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| v > b.1) {
            best = Some((alpha, v));
        }
    }
    best.ok_or(Error::NoFeasiblePoint)
}
