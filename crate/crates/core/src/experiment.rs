//! Experiment runner: station-power sweeps across regimes, written as CSV.
//!
//! A run reads a TOML config with the sections `system`, `users`, `sweep`
//! and `regimes`, solves every (station power, regime) point, and writes
//!
//! * `sweep.csv`: max-min computation efficiency per point,
//! * `traces.csv`: the outer-iteration trace of every point,
//! * `cbmax.csv`: the computation-bits benchmark, when `sweep.cb_max` is set,
//! * `manifest.toml`: the resolved config, itself a valid config that
//!   reproduces the run.
//!
//! ```toml
//! seed = 7
//!
//! [system]
//! max_station_power = 0.025
//!
//! [users]
//! gains = [[0.9, 8e-4], [0.6, 1e-4]]   # (downlink h, uplink g) per user
//! # count = 4                          # with a seed, draws gains instead
//!
//! [sweep]
//! station_power = [0.02, 0.025, 0.03]
//! cb_max = true
//!
//! [regimes]
//! enabled = ["tdma_partial", "noma_partial", "tdma_binary", "noma_binary"]
//! ```

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binary;
use crate::convex::{p3_problem, Scales};
use crate::error::{Error, Result};
use crate::fractional::{self, dinkelbach_lenient, SolveReport};
use crate::model::{evaluate, sort_for_noma, ChannelModel, Regime, SystemParams, UserParams};
use crate::nomasca::p9_problem;

/// User population: explicit gains, or a draw from the channel model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UsersConfig {
    /// Number of users to draw when `gains` is absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// `(h, g)` per user; overrides the channel model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<[f64; 2]>>,
    /// Hardware parameters shared by all users; its gains are ignored.
    pub template: UserParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelModel>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Station transmit powers, W. Each point also caps the station power.
    pub station_power: Vec<f64>,
    /// Also run the computation-bits benchmark.
    pub cb_max: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimesConfig {
    pub enabled: Vec<Regime>,
}

impl Default for RegimesConfig {
    fn default() -> Self {
        Self { enabled: Regime::ALL.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub system: SystemParams,
    pub users: UsersConfig,
    pub sweep: SweepConfig,
    pub regimes: RegimesConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.system.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(p) = self.sweep.station_power.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Config(format!("sweep.station_power entries must be positive, got {p}")));
        }
        if self.regimes.enabled.is_empty() {
            return bad("regimes.enabled is empty");
        }
        match (&self.users.gains, self.users.count) {
            (Some(g), Some(c)) if g.len() != c => bad("users.count does not match the number of users.gains entries"),
            (Some(g), _) if g.is_empty() => bad("users.gains is empty"),
            (None, None) => bad("users needs either gains or count"),
            (None, Some(0)) => bad("users.count must be positive"),
            (None, Some(_)) if self.seed.is_none() => bad("a seed is required to draw user gains"),
            _ => Ok(()),
        }
    }

    /// Users with gains filled in, in config order.
    pub fn resolve_users(&self) -> Result<Vec<UserParams>> {
        let gains: Vec<[f64; 2]> = match &self.users.gains {
            Some(g) => g.clone(),
            None => {
                let seed = self.seed.ok_or_else(|| Error::Config("a seed is required to draw user gains".into()))?;
                let count = self.users.count.unwrap_or(0);
                self.users.channel.unwrap_or_default().draw(count, seed).into_iter().map(|(h, g)| [h, g]).collect()
            }
        };
        let users: Vec<UserParams> =
            gains.iter().map(|&[h, g]| UserParams { h, g, ..self.users.template.clone() }).collect();
        users.iter().try_for_each(|u| u.validate().map_err(|e| Error::Config(e.to_string())))?;
        Ok(users)
    }

    /// The config with drawn gains written out explicitly.
    pub fn resolved(&self) -> Result<Self> {
        let users = self.resolve_users()?;
        let mut out = self.clone();
        out.users.gains = Some(users.iter().map(|u| [u.h, u.g]).collect());
        out.users.count = Some(users.len());
        Ok(out)
    }
}

/// Jain's fairness index `(sum x)^2 / (K sum x^2)`, in `[1/K, 1]`.
pub fn fairness_index(values: &[f64]) -> Result<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::InvalidParams("fairness index needs nonnegative values".into()));
    }
    let sum: f64 = values.iter().sum();
    let sq: f64 = values.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return Err(Error::AllZero);
    }
    Ok(sum * sum / (values.len() as f64 * sq))
}

/// Which max-min metric a sweep optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Framework {
    /// Max-min computation efficiency.
    Efficiency,
    /// Max-min computed bits; the efficiency column reports what that
    /// allocation reaches.
    Bits,
}

/// Solves one regime. NOMA regimes sort the users internally; the report's
/// allocation is then in ascending-`g` order, see [`regime_users`].
pub fn solve_regime(regime: Regime, framework: Framework, users: &[UserParams], sys: &SystemParams) -> Result<SolveReport> {
    let users = regime_users(regime, users);
    match (framework, regime) {
        (Framework::Efficiency, Regime::TdmaPartial) => dinkelbach_lenient(&mut p3_problem(&users, sys), sys),
        (Framework::Efficiency, Regime::NomaPartial) => dinkelbach_lenient(&mut p9_problem(&users, sys), sys),
        (Framework::Efficiency, r) => binary::alternate_solve(r, &users, sys).map(|b| b.report),
        (Framework::Bits, Regime::TdmaPartial) => fractional::max_min_bits(&mut p3_problem(&users, sys), sys),
        (Framework::Bits, Regime::NomaPartial) => fractional::max_min_bits(&mut p9_problem(&users, sys), sys),
        (Framework::Bits, r) => binary::max_min_bits(r, &users, sys).map(|b| b.report),
    }
}

/// The user order a regime's solver works in.
pub fn regime_users(regime: Regime, users: &[UserParams]) -> Vec<UserParams> {
    if regime.is_noma() {
        sort_for_noma(users).0
    } else {
        users.to_vec()
    }
}

/// Whether some user with a bit demand can never harvest more than its
/// receive-processing power, which makes every regime infeasible.
pub fn starved(users: &[UserParams], sys: &SystemParams) -> bool {
    users
        .iter()
        .any(|u| u.min_bits > 0.0 && sys.eh.harvested_power(u.h * sys.max_station_power) <= u.p_receive)
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    #[serde(rename = "Ps_W")]
    pub station_power: f64,
    pub regime: Regime,
    #[serde(rename = "eta_star_bits_per_J")]
    pub eta_star: f64,
    pub min_bits: f64,
    pub sum_bits: f64,
    #[serde(rename = "sum_energy_J")]
    pub sum_energy: f64,
    pub jain_index: Option<f64>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub status: String,
    /// Reserved for externally supplied sum-efficiency baselines.
    pub sum_ce_baseline: Option<f64>,
}

/// One outer iteration of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    #[serde(rename = "Ps_W")]
    pub station_power: f64,
    pub regime: Regime,
    pub iteration: usize,
    pub eta: f64,
    pub upsilon: f64,
    pub ratio: f64,
    pub inner_iters: usize,
}

/// Result of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub row: Row,
    pub trace: Vec<TraceRow>,
    /// The solver failed outright (not an infeasible instance).
    pub hard_failure: bool,
}

fn empty_row(ps: f64, regime: Regime, status: String) -> Row {
    Row {
        station_power: ps,
        regime,
        eta_star: 0.0,
        min_bits: 0.0,
        sum_bits: 0.0,
        sum_energy: 0.0,
        jain_index: None,
        outer_iters: 0,
        inner_iters: 0,
        status,
        sum_ce_baseline: None,
    }
}

/// Solves one (station power, regime) point with the station power cap set
/// to `ps`.
pub fn solve_point(ps: f64, regime: Regime, framework: Framework, users: &[UserParams], base: &SystemParams) -> PointResult {
    let sys = base.with_station_power(ps);
    if starved(users, &sys) {
        return PointResult { row: empty_row(ps, regime, "infeasible".into()), trace: Vec::new(), hard_failure: false };
    }
    let report = match solve_regime(regime, framework, users, &sys) {
        Ok(r) => r,
        Err(e) => {
            return PointResult { row: empty_row(ps, regime, format!("failed: {e}")), trace: Vec::new(), hard_failure: true };
        }
    };
    let ordered = regime_users(regime, users);
    let metrics = match evaluate(&report.alloc, regime, &ordered, &sys) {
        Ok(m) => m,
        Err(e) => {
            return PointResult { row: empty_row(ps, regime, format!("failed: {e}")), trace: Vec::new(), hard_failure: true };
        }
    };
    let ce: Vec<f64> = metrics.iter().map(|m| m.ce).collect();
    let status = match (&report.failure, report.converged) {
        (Some(_), _) => "inner_failure",
        (None, true) => "ok",
        (None, false) => "max_iters",
    };
    let row = Row {
        station_power: ps,
        regime,
        eta_star: ce.iter().copied().fold(f64::INFINITY, f64::min),
        min_bits: metrics.iter().map(|m| m.bits).fold(f64::INFINITY, f64::min),
        sum_bits: metrics.iter().map(|m| m.bits).sum(),
        sum_energy: metrics.iter().map(|m| m.energy).sum(),
        jain_index: fairness_index(&ce).ok(),
        outer_iters: report.iterations,
        inner_iters: report.inner_traces.iter().map(|t| t.inner_iters).sum(),
        status: status.into(),
        sum_ce_baseline: None,
    };
    let trace = report
        .inner_traces
        .iter()
        .enumerate()
        .map(|(i, t)| TraceRow {
            station_power: ps,
            regime,
            iteration: i + 1,
            eta: t.eta,
            upsilon: t.upsilon,
            ratio: t.ratio,
            inner_iters: t.inner_iters,
        })
        .collect();
    PointResult { row, trace, hard_failure: false }
}

/// Every (station power, regime) point of a sweep, sorted by station power
/// and then regime. Runs on the current rayon pool.
pub fn sweep_compare(
    powers: &[f64],
    regimes: &[Regime],
    framework: Framework,
    users: &[UserParams],
    sys: &SystemParams,
) -> Vec<PointResult> {
    let points: Vec<(f64, Regime)> = powers.iter().flat_map(|&p| regimes.iter().map(move |&r| (p, r))).collect();
    let mut out: Vec<PointResult> =
        points.par_iter().map(|&(p, r)| solve_point(p, r, framework, users, sys)).collect();
    out.sort_by(|a, b| a.row.station_power.total_cmp(&b.row.station_power).then(a.row.regime.cmp(&b.row.regime)));
    out
}

/// Max-min efficiency with the station power as a free variable in
/// `(0, P_th]`: a uniform grid of `points` values followed by a
/// golden-section refinement around the best one. Returns `(Ps, eta)`.
pub fn optimize_station_power(regime: Regime, users: &[UserParams], sys: &SystemParams, points: usize) -> Result<(f64, f64)> {
    let cap = sys.max_station_power;
    let points = points.max(2);
    let ce = |ps: f64| -> Result<f64> {
        let local = sys.with_station_power(ps);
        if starved(users, &local) {
            return Ok(0.0);
        }
        let rep = solve_regime(regime, Framework::Efficiency, users, &local)?;
        Ok(rep.eta_star)
    };
    let grid: Vec<f64> = (1..=points).map(|i| cap * i as f64 / points as f64).collect();
    let values = grid.iter().map(|&p| ce(p)).collect::<Result<Vec<f64>>>()?;
    let best = (0..points).max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a))).unwrap_or(0);
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(points - 1)]);
    if best == 0 {
        lo = cap * 1e-3;
    }
    let mut winner = (grid[best], values[best]);
    let mut keep = |p: f64, v: f64| {
        if v > winner.1 {
            winner = (p, v);
        }
    };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
    let (mut fa, mut fb) = (ce(a)?, ce(b)?);
    keep(a, fa);
    keep(b, fb);
    while hi - lo > 1e-3 * cap {
        if fa >= fb {
            hi = b;
            (b, fb) = (a, fa);
            a = hi - phi * (hi - lo);
            fa = ce(a)?;
            keep(a, fa);
        } else {
            lo = a;
            (a, fa) = (b, fb);
            b = lo + phi * (hi - lo);
            fb = ce(b)?;
            keep(b, fb);
        }
    }
    Ok(winner)
}

/// Command-line overrides of a config.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Worker threads; all cores when `None`.
    pub parallel: Option<usize>,
    pub regimes: Option<Vec<Regime>>,
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub rows: usize,
    pub hard_failures: usize,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let io = |e: csv::Error| Error::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Runs every experiment of `cfg` and writes the outputs into `out`.
pub fn run(cfg: &Config, out: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let mut cfg = cfg.clone();
    if opts.seed.is_some() {
        cfg.seed = opts.seed;
    }
    if let Some(r) = &opts.regimes {
        cfg.regimes.enabled = r.clone();
    }
    cfg.validate()?;
    let cfg = cfg.resolved()?;
    let users = cfg.resolve_users()?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    let manifest = toml::to_string(&cfg).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(out.join("manifest.toml"), manifest).map_err(|e| Error::Io(e.to_string()))?;
    if cfg.sweep.station_power.is_empty() {
        return Ok(RunSummary { rows: 0, hard_failures: 0 });
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.parallel {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut frameworks = vec![(Framework::Efficiency, "sweep.csv")];
    if cfg.sweep.cb_max {
        frameworks.push((Framework::Bits, "cbmax.csv"));
    }
    let mut summary = RunSummary { rows: 0, hard_failures: 0 };
    for (framework, file) in frameworks {
        let results =
            pool.install(|| sweep_compare(&cfg.sweep.station_power, &cfg.regimes.enabled, framework, &users, &cfg.system));
        summary.rows += results.len();
        summary.hard_failures += results.iter().filter(|r| r.hard_failure).count();
        write_csv(&out.join(file), results.iter().map(|r| &r.row))?;
        if framework == Framework::Efficiency {
            write_csv(&out.join("traces.csv"), results.iter().flat_map(|r| &r.trace))?;
        }
    }
    Ok(summary)
}

/// Scale used to judge whether two efficiencies agree.
pub fn bit_scale(users: &[UserParams], sys: &SystemParams) -> f64 {
    Scales::new(users, sys).bits
}
