//! System model: parameters, decision variables and the pure evaluators for
//! harvested energy, computed bits, consumed energy and computation efficiency.
//!
//! Units are SI throughout (W, s, Hz, J); bit counts are dimensionless.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// Energy-harvester transfer characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EhModel {
    /// Logistic harvester with a sensitivity threshold and saturation.
    NonLinear,
    /// Ideal linear conversion with a fixed efficiency in (0, 1].
    LinearBaseline { efficiency: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EhParams {
    /// Saturation (maximum) harvested power, W.
    pub p_max: f64,
    /// Sensitivity threshold, W.
    pub p0: f64,
    pub mu: f64,
    pub psi: f64,
    pub model: EhModel,
}

impl Default for EhParams {
    fn default() -> Self {
        Self { p_max: 0.004927, p0: 0.000064, mu: 274.0, psi: 0.29, model: EhModel::NonLinear }
    }
}

impl EhParams {
    /// Harvested power for a received RF power `rf` (W).
    pub fn harvested_power(&self, rf: f64) -> f64 {
        match self.model {
            EhModel::NonLinear => {
                let omega = (-self.mu * self.p0 + self.psi).exp();
                let logistic = (1.0 + omega) / (1.0 + (-self.mu * rf + self.psi).exp());
                (self.p_max / omega * (logistic - 1.0)).max(0.0)
            }
            EhModel::LinearBaseline { efficiency } => efficiency * rf.max(0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.p_max > 0.0 && self.p0 >= 0.0 && self.mu > 0.0 && self.psi.is_finite();
        if !ok {
            return Err(Error::InvalidParams("EH parameters need p_max>0, p0>=0, mu>0".into()));
        }
        if let EhModel::LinearBaseline { efficiency } = self.model {
            if !(efficiency > 0.0 && efficiency <= 1.0) {
                return Err(Error::InvalidParams("linear EH efficiency must lie in (0,1]".into()));
            }
        }
        Ok(())
    }
}

/// Stopping tolerances shared by the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Outer (fractional-programming) tolerance, relative to the CE.
    pub outer: f64,
    /// Successive-convex-approximation tolerance.
    pub sca: f64,
    /// Mode-alternation tolerance for the binary regimes.
    pub alternation: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { outer: 1e-4, sca: 1e-4, alternation: 1e-4 }
    }
}

/// Global constants of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Frame length T, s.
    pub frame: f64,
    /// Bandwidth B, Hz.
    pub bandwidth: f64,
    /// CPU cycles per bit C.
    pub cycles_per_bit: f64,
    /// Effective capacitance coefficient.
    pub capacitance: f64,
    /// Noise power, W.
    pub noise: f64,
    /// Power-amplifier coefficient (>= 1).
    pub amplifier: f64,
    /// Station transmit power cap, W.
    pub max_station_power: f64,
    pub eh: EhParams,
    pub tol: Tolerances,
    /// Outer iteration cap N.
    pub max_iters: usize,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            frame: 1.0,
            bandwidth: 2e6,
            cycles_per_bit: 1e3,
            capacitance: 1e-28,
            noise: 1e-9,
            amplifier: 3.0,
            max_station_power: 0.025,
            eh: EhParams::default(),
            tol: Tolerances::default(),
            max_iters: 30,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.frame > 0.0
            && self.bandwidth > 0.0
            && self.cycles_per_bit >= 1.0
            && self.capacitance > 0.0
            && self.noise > 0.0
            && self.amplifier >= 1.0
            && self.max_station_power > 0.0
            && self.tol.outer > 0.0
            && self.tol.sca > 0.0
            && self.tol.alternation > 0.0
            && self.max_iters > 0;
        if !ok {
            return Err(Error::InvalidParams(format!("system parameters out of range: {self:?}")));
        }
        self.eh.validate()
    }

    /// Returns a copy with the station power cap replaced.
    pub fn with_station_power(&self, p: f64) -> Self {
        Self { max_station_power: p, ..self.clone() }
    }
}

/// Per-user channel and hardware parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserParams {
    /// Downlink (station to user) power gain.
    pub h: f64,
    /// Uplink (user to server) power gain.
    pub g: f64,
    /// Communication overhead factor (> 1).
    pub overhead: f64,
    /// Receive-processing power during harvesting, W.
    pub p_receive: f64,
    /// Circuit power while offloading, W.
    pub p_circuit: f64,
    /// Minimum computed bits per frame.
    pub min_bits: f64,
}

impl Default for UserParams {
    fn default() -> Self {
        Self {
            h: 1.0,
            g: 1.0,
            overhead: 1.1,
            p_receive: dbm_to_watts(5.0),
            p_circuit: dbm_to_watts(5.0),
            min_bits: 1e4,
        }
    }
}

impl UserParams {
    pub fn with_gains(h: f64, g: f64) -> Self {
        Self { h, g, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.h >= 0.0
            && self.g >= 0.0
            && self.overhead > 1.0
            && self.p_receive >= 0.0
            && self.p_circuit >= 0.0
            && self.min_bits >= 0.0
            && self.h.is_finite()
            && self.g.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("user parameters out of range: {self:?}")))
        }
    }
}

pub fn validate_all(users: &[UserParams], sys: &SystemParams) -> Result<()> {
    if users.is_empty() {
        return Err(Error::InvalidParams("at least one user is required".into()));
    }
    sys.validate()?;
    users.iter().try_for_each(UserParams::validate)
}

/// Multiple access scheme and offloading mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    TdmaPartial,
    NomaPartial,
    TdmaBinary,
    NomaBinary,
}

impl Regime {
    pub const ALL: [Regime; 4] =
        [Regime::TdmaPartial, Regime::NomaPartial, Regime::TdmaBinary, Regime::NomaBinary];

    pub fn is_noma(self) -> bool {
        matches!(self, Regime::NomaPartial | Regime::NomaBinary)
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Regime::TdmaBinary | Regime::NomaBinary)
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::TdmaPartial => "tdma_partial",
            Regime::NomaPartial => "noma_partial",
            Regime::TdmaBinary => "tdma_binary",
            Regime::NomaBinary => "noma_binary",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime '{s}'")))
    }
}

/// Offloading time: one slot per user (TDMA) or one shared slot (NOMA).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OffloadSchedule {
    Tdma(Vec<f64>),
    Noma(f64),
}

impl OffloadSchedule {
    pub fn time_for(&self, k: usize) -> f64 {
        match self {
            OffloadSchedule::Tdma(t) => t[k],
            OffloadSchedule::Noma(t) => *t,
        }
    }
}

/// Decision variables of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Harvesting time, s.
    pub tau0: f64,
    pub schedule: OffloadSchedule,
    /// Offloading powers, W.
    pub power: Vec<f64>,
    /// CPU frequencies, Hz.
    pub freq: Vec<f64>,
    /// Mode indicators (1 = offload); all ones for the partial regimes.
    pub alpha: Vec<f64>,
    /// Station transmit power, W.
    pub station_power: f64,
}

impl Allocation {
    /// The all-zero allocation for `k` users.
    pub fn zeros(k: usize, noma: bool, station_power: f64) -> Self {
        Self {
            tau0: 0.0,
            schedule: if noma { OffloadSchedule::Noma(0.0) } else { OffloadSchedule::Tdma(vec![0.0; k]) },
            power: vec![0.0; k],
            freq: vec![0.0; k],
            alpha: vec![1.0; k],
            station_power,
        }
    }

    pub fn num_users(&self) -> usize {
        self.power.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUserMetrics {
    pub bits: f64,
    pub energy: f64,
    /// Bits per joule; zero when nothing is computed.
    pub ce: f64,
}

/// Energy harvested by a user in `tau0` seconds at station power `ps`.
pub fn harvested_energy(tau0: f64, ps: f64, u: &UserParams, sys: &SystemParams) -> f64 {
    tau0 * sys.eh.harvested_power(u.h * ps)
}

/// Bits offloaded over an interference-free link.
pub fn offload_bits_tdma(tau: f64, power: f64, u: &UserParams, sys: &SystemParams) -> f64 {
    if tau <= 0.0 || power <= 0.0 {
        return 0.0;
    }
    sys.bandwidth * tau / u.overhead * (u.g * power / sys.noise).ln_1p() / std::f64::consts::LN_2
}

/// Checks that uplink gains are nondecreasing with the user index, the
/// order required for successive interference cancellation.
pub fn check_decoding_order(users: &[UserParams]) -> Result<()> {
    for k in 1..users.len() {
        if users[k - 1].g > users[k].g {
            return Err(Error::InvalidDecodingOrder { index: k - 1, next: k });
        }
    }
    Ok(())
}

/// Bits offloaded by user `k` under NOMA: every stronger user (higher index)
/// interferes, the strongest user is interference free.
pub fn offload_bits_noma(
    tau1: f64,
    power: &[f64],
    k: usize,
    users: &[UserParams],
    sys: &SystemParams,
) -> Result<f64> {
    check_decoding_order(users)?;
    Ok(noma_bits_unchecked(tau1, power, k, users, sys))
}

pub(crate) fn noma_bits_unchecked(
    tau1: f64,
    power: &[f64],
    k: usize,
    users: &[UserParams],
    sys: &SystemParams,
) -> f64 {
    if tau1 <= 0.0 || power[k] <= 0.0 {
        return 0.0;
    }
    let interference: f64 = (k + 1..users.len()).map(|i| users[i].g * power[i]).sum();
    let sinr = users[k].g * power[k] / (interference + sys.noise);
    sys.bandwidth * tau1 / users[k].overhead * sinr.ln_1p() / std::f64::consts::LN_2
}

pub fn local_bits(f: f64, sys: &SystemParams) -> f64 {
    sys.frame * f / sys.cycles_per_bit
}

pub fn local_energy(f: f64, sys: &SystemParams) -> f64 {
    sys.frame * sys.capacitance * f.powi(3)
}

fn metrics(bits: f64, energy: f64, user: usize) -> Result<PerUserMetrics> {
    if energy > 0.0 {
        Ok(PerUserMetrics { bits, energy, ce: bits / energy })
    } else if bits > 0.0 {
        Err(Error::NanGuard { user, bits })
    } else {
        Ok(PerUserMetrics { bits: 0.0, energy: 0.0, ce: 0.0 })
    }
}

fn check_dims(alloc: &Allocation, regime: Regime, users: &[UserParams]) -> Result<()> {
    let k = users.len();
    let sched_ok = match (&alloc.schedule, regime.is_noma()) {
        (OffloadSchedule::Tdma(t), false) => t.len() == k,
        (OffloadSchedule::Noma(_), true) => true,
        _ => false,
    };
    if !sched_ok || alloc.power.len() != k || alloc.freq.len() != k || alloc.alpha.len() != k {
        return Err(Error::InvalidParams(format!(
            "allocation does not match {k} users under {regime}"
        )));
    }
    Ok(())
}

/// Effective mode weight of user `k`: partial regimes always use both
/// local computing and offloading.
fn mode_weight(alloc: &Allocation, regime: Regime, k: usize) -> (f64, f64) {
    if regime.is_binary() {
        let a = alloc.alpha[k];
        (1.0 - a, a)
    } else {
        (1.0, 1.0)
    }
}

/// Offloaded bits of every user. For NOMA binary the interference of user
/// `i` is weighted by its mode indicator.
fn offloaded_bits(alloc: &Allocation, regime: Regime, users: &[UserParams], sys: &SystemParams) -> Result<Vec<f64>> {
    match &alloc.schedule {
        OffloadSchedule::Tdma(tau) => Ok((0..users.len())
            .map(|k| offload_bits_tdma(tau[k], alloc.power[k], &users[k], sys))
            .collect()),
        OffloadSchedule::Noma(tau1) => {
            check_decoding_order(users)?;
            let eff: Vec<f64> = if regime.is_binary() {
                alloc.power.iter().zip(&alloc.alpha).map(|(p, a)| p * a).collect()
            } else {
                alloc.power.clone()
            };
            Ok((0..users.len())
                .map(|k| {
                    // the user's own power is not scaled by its indicator
                    let mut p = eff.clone();
                    p[k] = alloc.power[k];
                    noma_bits_unchecked(*tau1, &p, k, users, sys)
                })
                .collect())
        }
    }
}

/// Per-user bits, energy and CE of an allocation under a regime.
pub fn evaluate(
    alloc: &Allocation,
    regime: Regime,
    users: &[UserParams],
    sys: &SystemParams,
) -> Result<Vec<PerUserMetrics>> {
    check_dims(alloc, regime, users)?;
    let off = offloaded_bits(alloc, regime, users, sys)?;
    users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let (w_local, w_off) = mode_weight(alloc, regime, k);
            let tau = alloc.schedule.time_for(k);
            let bits = w_local * local_bits(alloc.freq[k], sys) + w_off * off[k];
            let energy = alloc.tau0 * u.p_receive
                + w_off * sys.amplifier * tau * (alloc.power[k] + u.p_circuit)
                + w_local * local_energy(alloc.freq[k], sys);
            metrics(bits, energy, k)
        })
        .collect()
}

/// Minimum per-user CE of an allocation.
pub fn min_ce(alloc: &Allocation, regime: Regime, users: &[UserParams], sys: &SystemParams) -> Result<f64> {
    Ok(evaluate(alloc, regime, users, sys)?.iter().map(|m| m.ce).fold(f64::INFINITY, f64::min))
}

/// Which constraint a residual belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    MinBits,
    EnergyCausality,
    TimeBudget,
    Nonnegativity,
    StationPower,
    ModeBounds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub kind: ConstraintKind,
    /// User index, `None` for global constraints.
    pub user: Option<usize>,
    /// Signed violation in the constraint's natural unit; <= 0 is satisfied.
    pub value: f64,
}

/// Signed constraint residuals of an allocation.
pub fn feasibility_residuals(
    alloc: &Allocation,
    regime: Regime,
    users: &[UserParams],
    sys: &SystemParams,
) -> Result<Vec<Residual>> {
    check_dims(alloc, regime, users)?;
    let off = offloaded_bits(alloc, regime, users, sys)?;
    let mut out = Vec::new();
    let mut push = |kind, user, value| out.push(Residual { kind, user, value });
    for (k, u) in users.iter().enumerate() {
        let (w_local, w_off) = mode_weight(alloc, regime, k);
        let tau = alloc.schedule.time_for(k);
        let bits = w_local * local_bits(alloc.freq[k], sys) + w_off * off[k];
        push(ConstraintKind::MinBits, Some(k), u.min_bits - bits);
        let spent = alloc.tau0 * u.p_receive
            + w_off * sys.amplifier * tau * (alloc.power[k] + u.p_circuit)
            + w_local * local_energy(alloc.freq[k], sys);
        let harvested = harvested_energy(alloc.tau0, alloc.station_power, u, sys);
        push(ConstraintKind::EnergyCausality, Some(k), spent - harvested);
        push(ConstraintKind::Nonnegativity, Some(k), -alloc.power[k]);
        push(ConstraintKind::Nonnegativity, Some(k), -alloc.freq[k]);
        if regime.is_binary() {
            push(ConstraintKind::ModeBounds, Some(k), -alloc.alpha[k]);
            push(ConstraintKind::ModeBounds, Some(k), alloc.alpha[k] - 1.0);
        }
    }
    let used = match &alloc.schedule {
        OffloadSchedule::Tdma(tau) => {
            for (k, t) in tau.iter().enumerate() {
                push(ConstraintKind::Nonnegativity, Some(k), -t);
            }
            tau.iter()
                .enumerate()
                .map(|(k, t)| if regime.is_binary() { alloc.alpha[k] * t } else { *t })
                .sum::<f64>()
        }
        OffloadSchedule::Noma(t) => {
            push(ConstraintKind::Nonnegativity, None, -t);
            *t
        }
    };
    push(ConstraintKind::Nonnegativity, None, -alloc.tau0);
    push(ConstraintKind::TimeBudget, None, alloc.tau0 + used - sys.frame);
    push(ConstraintKind::StationPower, None, alloc.station_power - sys.max_station_power);
    push(ConstraintKind::StationPower, None, -alloc.station_power);
    Ok(out)
}

/// Largest residual; <= 0 means feasible.
pub fn max_residual(res: &[Residual]) -> f64 {
    res.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max)
}

/// Generative channel stand-in: distance-based path loss times a Rayleigh
/// fade, independent for the downlink and uplink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub min_distance: f64,
    pub max_distance: f64,
    pub path_loss_exponent: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self { min_distance: 1.0, max_distance: 5.0, path_loss_exponent: 2.5 }
    }
}

impl ChannelModel {
    /// Draws `(h, g)` pairs for `k` users from a seeded generator.
    pub fn draw(&self, k: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|_| {
                let d = rng.random_range(self.min_distance..=self.max_distance);
                let pl = d.powf(-self.path_loss_exponent);
                let fade_h: f64 = Exp1.sample(&mut rng);
                let fade_g: f64 = Exp1.sample(&mut rng);
                (pl * fade_h, pl * fade_g)
            })
            .collect()
    }
}

/// Stable sort of users by ascending uplink gain. Returns the sorted users
/// and, for each sorted position, the original index.
pub fn sort_for_noma(users: &[UserParams]) -> (Vec<UserParams>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..users.len()).collect();
    idx.sort_by(|&a, &b| users[a].g.total_cmp(&users[b].g).then(a.cmp(&b)));
    (idx.iter().map(|&i| users[i].clone()).collect(), idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_sys() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn harvest_zero_at_sensitivity() {
        let sys = table_sys();
        let u = UserParams::with_gains(1.0, 1.0);
        assert_eq!(harvested_energy(0.7, 6.4e-5, &u, &sys), 0.0);
        assert_eq!(harvested_energy(0.7, 1e-5, &u, &sys), 0.0);
    }

    #[test]
    fn harvest_saturates_at_p_max() {
        let sys = table_sys();
        let u = UserParams::with_gains(1.0, 1.0);
        let e = harvested_energy(1.0, 1e3, &u, &sys);
        assert!((e - 0.004927).abs() < 1e-15);
    }

    #[test]
    fn harvest_reference_point() {
        // independent evaluation with mpmath at 50 digits: 5.52827755952...e-4
        let sys = table_sys();
        let u = UserParams::with_gains(1.0, 1.0);
        let e = harvested_energy(1.0, 1e-3, &u, &sys);
        assert!((e - 5.528_277_559_52e-4).abs() < 1e-14, "{e}");
    }

    #[test]
    fn linear_baseline() {
        let mut sys = table_sys();
        sys.eh.model = EhModel::LinearBaseline { efficiency: 0.5 };
        let u = UserParams::with_gains(0.2, 1.0);
        assert!((harvested_energy(2.0, 0.01, &u, &sys) - 2.0 * 0.5 * 0.2 * 0.01).abs() < 1e-18);
    }

    #[test]
    fn tdma_bits() {
        let sys = table_sys();
        let mut u = UserParams::with_gains(1.0, 1e-9);
        u.overhead = 1.0;
        assert!((offload_bits_tdma(0.1, 1.0, &u, &sys) - 2e5).abs() < 1e-6);
        assert_eq!(offload_bits_tdma(0.1, 0.0, &u, &sys), 0.0);
        u.overhead = 1.1;
        // 2e5 * 2 / 1.1 = 363636.3636...
        assert!((offload_bits_tdma(0.1, 3.0, &u, &sys) - 363_636.363_636_363_6).abs() < 1e-6);
    }

    #[test]
    fn noma_bits() {
        let sys = table_sys();
        let mut users = vec![UserParams::with_gains(1.0, 1e-9), UserParams::with_gains(1.0, 2e-9)];
        for u in &mut users {
            u.overhead = 1.0;
        }
        let p = [1.0, 0.5];
        let b2 = offload_bits_noma(0.1, &p, 1, &users, &sys).unwrap();
        assert!((b2 - 2e5).abs() < 1e-6);
        let b1 = offload_bits_noma(0.1, &p, 0, &users, &sys).unwrap();
        // 2e5 * log2(1.5)
        assert!((b1 - 116_992.500_144_231_24).abs() < 1e-6, "{b1}");
        assert_eq!(offload_bits_noma(0.1, &[0.0, 0.5], 0, &users, &sys).unwrap(), 0.0);
        users.swap(0, 1);
        assert!(matches!(
            offload_bits_noma(0.1, &p, 0, &users, &sys),
            Err(Error::InvalidDecodingOrder { .. })
        ));
    }

    #[test]
    fn local_terms() {
        let sys = table_sys();
        assert!((local_bits(1e6, &sys) - 1000.0).abs() < 1e-12);
        assert!((local_energy(1e6, &sys) - 1e-10).abs() < 1e-24);
        assert_eq!((local_bits(0.0, &sys), local_energy(0.0, &sys)), (0.0, 0.0));
    }

    fn binary_alloc(alpha: f64) -> Allocation {
        Allocation {
            tau0: 0.3,
            schedule: OffloadSchedule::Tdma(vec![0.2]),
            power: vec![0.01],
            freq: vec![2e7],
            alpha: vec![alpha],
            station_power: 0.02,
        }
    }

    #[test]
    fn binary_collapses() {
        let sys = table_sys();
        let users = vec![UserParams::with_gains(0.5, 1e-3)];
        let u = &users[0];
        let local = evaluate(&binary_alloc(0.0), Regime::TdmaBinary, &users, &sys).unwrap()[0];
        assert_eq!(local.bits, local_bits(2e7, &sys));
        assert_eq!(local.energy, 0.3 * u.p_receive + local_energy(2e7, &sys));
        let off = evaluate(&binary_alloc(1.0), Regime::TdmaBinary, &users, &sys).unwrap()[0];
        assert_eq!(off.bits, offload_bits_tdma(0.2, 0.01, u, &sys));
        assert_eq!(off.energy, 0.3 * u.p_receive + 3.0 * 0.2 * (0.01 + u.p_circuit));
    }

    #[test]
    fn partial_two_users_by_hand() {
        let sys = table_sys();
        let users = vec![UserParams::with_gains(0.5, 1e-3), UserParams::with_gains(0.3, 2e-3)];
        let alloc = Allocation {
            tau0: 0.4,
            schedule: OffloadSchedule::Tdma(vec![0.1, 0.2]),
            power: vec![0.002, 0.001],
            freq: vec![3e7, 1e7],
            alpha: vec![1.0, 1.0],
            station_power: 0.025,
        };
        let m = evaluate(&alloc, Regime::TdmaPartial, &users, &sys).unwrap();
        // hand computation of R = Tf/C + B tau/v log2(1+gP/s2), E = tau0 Pr + 3 tau (P+Pc) + T gc f^3
        let pr = dbm_to_watts(5.0);
        let r0 = 3e4 + 2e6 * 0.1 / 1.1 * (1.0 + 2e3f64).log2();
        let e0 = 0.4 * pr + 0.3 * (0.002 + pr) + 1e-28 * 2.7e22;
        assert!((m[0].bits - r0).abs() < 1e-6 * r0);
        assert!((m[0].energy - e0).abs() < 1e-12 * e0);
        assert!((m[0].ce - r0 / e0).abs() < 1e-9 * m[0].ce);
    }

    #[test]
    fn residuals_zero_alloc_and_time_budget() {
        let sys = table_sys();
        let mut users = vec![UserParams::with_gains(0.5, 1e-3)];
        users[0].min_bits = 0.0;
        let zero = Allocation::zeros(1, false, 0.0);
        let res = feasibility_residuals(&zero, Regime::TdmaPartial, &users, &sys).unwrap();
        assert!(max_residual(&res) <= 0.0);
        let mut bad = zero.clone();
        bad.tau0 = sys.frame;
        bad.schedule = OffloadSchedule::Tdma(vec![0.1]);
        let res = feasibility_residuals(&bad, Regime::TdmaPartial, &users, &sys).unwrap();
        let time = res.iter().find(|r| r.kind == ConstraintKind::TimeBudget).unwrap();
        assert!(time.value > 0.0);
    }

    #[test]
    fn eh_residual_on_boundary() {
        // choose f so that local energy uses exactly the harvest surplus
        let sys = table_sys();
        let mut users = vec![UserParams::with_gains(1.0, 1e-3)];
        users[0].min_bits = 0.0;
        let tau0 = 0.5;
        let surplus = harvested_energy(tau0, 0.025, &users[0], &sys) - tau0 * users[0].p_receive;
        let f = (surplus / (sys.frame * sys.capacitance)).cbrt();
        let alloc = Allocation {
            tau0,
            schedule: OffloadSchedule::Tdma(vec![0.0]),
            power: vec![0.0],
            freq: vec![f],
            alpha: vec![1.0],
            station_power: 0.025,
        };
        let res = feasibility_residuals(&alloc, Regime::TdmaPartial, &users, &sys).unwrap();
        let eh = res.iter().find(|r| r.kind == ConstraintKind::EnergyCausality).unwrap();
        assert!(eh.value.abs() < 1e-12);
    }

    #[test]
    fn channel_draw_is_seeded() {
        let m = ChannelModel::default();
        assert_eq!(m.draw(5, 7), m.draw(5, 7));
        assert_ne!(m.draw(5, 7), m.draw(5, 8));
        for (h, g) in m.draw(50, 1) {
            assert!(h >= 0.0 && g >= 0.0);
        }
    }

    #[test]
    fn noma_sort_is_stable() {
        let users: Vec<_> = [3.0, 1.0, 3.0, 2.0].iter().map(|&g| UserParams::with_gains(1.0, g)).collect();
        let (sorted, idx) = sort_for_noma(&users);
        assert_eq!(idx, vec![1, 3, 0, 2]);
        assert!(check_decoding_order(&sorted).is_ok());
    }
}
