//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wpmec::convex::{p3_problem, solve_p3, InnerSolution, Scales};
use wpmec::experiment::{optimize_station_power, run, solve_regime, sweep_compare, Config, Framework, RunOptions};
use wpmec::fractional::{dinkelbach, SolveReport};
use wpmec::kkt::{
    dual_ascent_p3, lagrangian, lagrangian_gradient_fy, omega_equation, omega_root, omega_scale, stationarity_residuals,
};
use wpmec::model::{
    feasibility_residuals, max_residual, min_ce, sort_for_noma, Regime, SystemParams, UserParams,
};
use wpmec::nomasca::{p9_problem, solve_p9, ScaState};
use wpmec::oracle::{grid_maxmin, GridSpec, Target};

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn default_users() -> Vec<UserParams> {
    [(0.9, 8e-4), (0.75, 3e-4), (0.6, 1e-4), (0.5, 5e-5), (0.4, 2e-5)]
        .iter()
        .map(|&(h, g)| UserParams::with_gains(h, g))
        .collect()
}

/// Seeded instance with `k` users that can all harvest above their receive
/// power at the default station power.
fn instance(seed: u64, k: usize) -> Vec<UserParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let h = rng.random_range(0.45..1.0);
            let g = 10f64.powf(rng.random_range(-5.0..-3.0));
            UserParams::with_gains(h, g)
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Min efficiency of an inner TDMA solution.
fn efficiency(sol: &InnerSolution, users: &[UserParams], sys: &SystemParams) -> std::result::Result<f64, String> {
    min_ce(&sol.allocation(), Regime::TdmaPartial, users, sys).map_err(|e| e.to_string())
}

fn within(limit: Duration, start: Instant) -> std::result::Result<(), String> {
    let t = start.elapsed();
    if t <= limit {
        Ok(())
    } else {
        Err(format!("took {:.1} s, limit {} s", t.as_secs_f64(), limit.as_secs()))
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn solve_ce(regime: Regime, users: &[UserParams], sys: &SystemParams) -> std::result::Result<SolveReport, String> {
    solve_regime(regime, Framework::Efficiency, users, sys).map_err(|e| format!("{regime}: {e}"))
}

fn eh_fidelity() -> Check {
    let eh = SystemParams::default().eh;
    ensure(eh.harvested_power(0.0) == 0.0 && eh.harvested_power(eh.p0) == 0.0, || "nonzero at or below P0".into())?;
    let mut last = 0.0;
    for i in 0..=10_000 {
        let rf = 0.2 * i as f64 / 10_000.0;
        let p = eh.harvested_power(rf);
        if rf <= eh.p0 {
            ensure(p == 0.0, || format!("P_E({rf}) = {p} below sensitivity"))?;
        }
        ensure(p >= last, || format!("decreases at {rf}"))?;
        ensure(p <= eh.p_max, || format!("exceeds P_max at {rf}"))?;
        last = p;
    }
    let top = eh.harvested_power(0.1);
    ensure((top - eh.p_max).abs() <= 1e-6, || format!("P_E(0.1) = {top}"))?;
    Ok(format!("P_E(0.1 W) = {top:.9}"))
}

fn cross_solver() -> Check {
    let start = Instant::now();
    let sys = SystemParams::default();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let users = instance(100 + seed, 1 + seed as usize % 4);
        let barrier0 = solve_p3(0.0, &users, &sys).map_err(|e| format!("seed {seed}: {e}"))?;
        // alternate between eta = 0 and the efficiency reached at eta = 0
        let eta = if seed % 2 == 0 { 0.0 } else { efficiency(&barrier0, &users, &sys)? };
        let barrier = solve_p3(eta, &users, &sys).map_err(|e| format!("seed {seed}: {e}"))?;
        let (dual, _) = dual_ascent_p3(eta, &users, &sys).map_err(|e| format!("seed {seed}: {e}"))?;
        let scale = Scales::new(&users, &sys).bits;
        let gap = (dual.upsilon.abs() - barrier.upsilon.abs()).abs() / barrier.upsilon.abs().max(scale);
        ensure(gap <= 1e-3, || format!("seed {seed}: |Y| {} vs {}", dual.upsilon, barrier.upsilon))?;
        worst = worst.max(gap);
    }
    within(Duration::from_secs(120), start)?;
    Ok(format!("20 instances, worst relative gap {worst:.2e}, {:.1} s", start.elapsed().as_secs_f64()))
}

fn oracle_bound() -> Check {
    let start = Instant::now();
    let sys = SystemParams::default();
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for k in 1..=2usize {
        for seed in 0..3u64 {
            let users = sort_for_noma(&instance(200 + 10 * k as u64 + seed, k)).0;
            for regime in [Regime::TdmaPartial, Regime::NomaPartial] {
                let rep = solve_ce(regime, &users, &sys)?;
                let res = max_residual(&feasibility_residuals(&rep.alloc, regime, &users, &sys).map_err(|e| e.to_string())?);
                ensure(res <= 1e-8, || format!("{regime} K={k} seed {seed}: residual {res:e}"))?;
                let (_, oracle) = grid_maxmin(regime, Target::Efficiency, &users, &sys, &GridSpec::default())
                    .map_err(|e| format!("oracle: {e}"))?;
                ensure(rep.eta_star >= oracle * (1.0 - 0.02), || {
                    format!("{regime} K={k} seed {seed}: {} < oracle {oracle}", rep.eta_star)
                })?;
                worst = worst.min(rep.eta_star / oracle - 1.0);
                count += 1;
            }
        }
    }
    within(Duration::from_secs(300), start)?;
    Ok(format!("{count} solves, worst margin over oracle {:+.3}%, {:.1} s", 100.0 * worst, start.elapsed().as_secs_f64()))
}

fn dinkelbach_behaviour() -> Check {
    let sys = SystemParams::default();
    let nondecreasing = |rep: &SolveReport| rep.eta_trace.windows(2).all(|w| w[1] >= w[0]);
    let users = default_users();
    let mut iters = Vec::new();
    for regime in Regime::ALL {
        let rep = solve_ce(regime, &users, &sys)?;
        ensure(rep.converged, || format!("{regime} did not converge on the default scenario"))?;
        ensure(nondecreasing(&rep), || format!("{regime}: eta trace {:?}", rep.eta_trace))?;
        ensure(rep.iterations <= 15, || format!("{regime}: {} iterations", rep.iterations))?;
        iters.push(rep.iterations);
    }
    let mut max_elsewhere = 0;
    for seed in 0..10u64 {
        let users = instance(300 + seed, 1 + seed as usize % 4);
        let rep = dinkelbach(&mut p3_problem(&users, &sys), &sys).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(nondecreasing(&rep), || format!("seed {seed}: eta trace {:?}", rep.eta_trace))?;
        ensure(rep.iterations <= sys.max_iters, || format!("seed {seed}: {} iterations", rep.iterations))?;
        max_elsewhere = max_elsewhere.max(rep.iterations);
    }
    Ok(format!("default scenario iterations {iters:?}, at most {max_elsewhere} on 10 random instances"))
}

fn station_power_sweep() -> Check {
    let start = Instant::now();
    let sys = SystemParams::default();
    let users = default_users();
    let powers = [5e-5, 1e-3, 0.01, 0.02, 0.025, 0.03, 0.04];
    let points = sweep_compare(&powers, &Regime::ALL, Framework::Efficiency, &users, &sys);
    if let Some(p) = points.iter().find(|p| p.hard_failure) {
        return Err(format!("{} at {}: {}", p.row.regime, p.row.station_power, p.row.status));
    }
    let sensitivity = users.iter().map(|u| sys.eh.p0 / u.h).fold(f64::INFINITY, f64::min);
    let mut below = 0;
    for chunk in points.chunks(4) {
        let ps = chunk[0].row.station_power;
        let eta = |r: Regime| chunk.iter().find(|p| p.row.regime == r).map(|p| p.row.eta_star).unwrap_or(f64::NAN);
        let (tp, np, tb, nb) =
            (eta(Regime::TdmaPartial), eta(Regime::NomaPartial), eta(Regime::TdmaBinary), eta(Regime::NomaBinary));
        let ge = |a: f64, b: f64| a >= b - 1e-6 * b.abs();
        ensure(ge(tp, tb) && ge(np, nb), || format!("Ps {ps}: partial below binary ({tp}, {np}) vs ({tb}, {nb})"))?;
        ensure(ge(np, tp) && ge(nb, tb), || format!("Ps {ps}: NOMA below TDMA ({np}, {nb}) vs ({tp}, {tb})"))?;
        if ps <= sensitivity {
            below += 1;
            let all = [tp, np, tb, nb];
            let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
            ensure(hi - lo <= 0.01 * hi.abs(), || format!("Ps {ps}: regimes differ below sensitivity {all:?}"))?;
        }
    }
    ensure(below > 0, || "sweep has no point below sensitivity".into())?;
    within(Duration::from_secs(600), start)?;
    Ok(format!("{} points, {below} below sensitivity, {:.1} s", points.len(), start.elapsed().as_secs_f64()))
}

fn cb_max_shape() -> Check {
    // weak uplinks: the bit-maximizing allocation computes locally, and its
    // efficiency peaks once the harvested power passes 1.5 P_r
    let users = vec![UserParams::with_gains(0.4, 1e-7); 3];
    let sys = SystemParams::default();
    let powers: Vec<f64> = (2..=10).map(|i| 0.01 * i as f64).collect();
    let mut ce = Vec::new();
    let mut bits = Vec::new();
    for &ps in &powers {
        let s = sys.with_station_power(ps);
        let rep = solve_regime(Regime::TdmaPartial, Framework::Bits, &users, &s).map_err(|e| format!("Ps {ps}: {e}"))?;
        ce.push(rep.eta_star);
        bits.push(rep.min_bits(Regime::TdmaPartial, &users, &s).map_err(|e| e.to_string())?);
    }
    ensure(bits.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9)), || format!("min bits {bits:?}"))?;
    let signs: Vec<f64> = ce
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| d.abs() > 1e-9 * ce[0])
        .map(f64::signum)
        .collect();
    let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    ensure(signs.first() == Some(&1.0) && changes == 1, || format!("CE {ce:?}"))?;
    let peak = ce.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| powers[i]).unwrap_or(0.0);
    Ok(format!("CE peaks at Ps = {peak} W, one sign change; min bits nondecreasing"))
}

fn free_station_power() -> Check {
    let sys = SystemParams::default();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let users = instance(400 + seed, 1 + seed as usize % 3);
        let regime = if seed % 2 == 0 { Regime::TdmaPartial } else { Regime::NomaPartial };
        let users = sort_for_noma(&users).0;
        let at_cap = solve_ce(regime, &users, &sys)?.eta_star;
        let (ps, free) = optimize_station_power(regime, &users, &sys, 8).map_err(|e| format!("seed {seed}: {e}"))?;
        let gap = rel(free, at_cap);
        ensure(gap <= 1e-4, || format!("seed {seed}: free Ps {ps} gives {free}, P_th gives {at_cap}"))?;
        worst = worst.max(gap);
    }
    Ok(format!("10 instances, worst relative difference {worst:.2e}"))
}

fn kkt_residuals() -> Check {
    let sys = SystemParams::default();
    let mut worst_stat: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    let mut worst_omega: f64 = 0.0;
    for seed in 0..10u64 {
        let users = instance(500 + seed, 1 + seed as usize % 4);
        let eta = 0.5 * efficiency(&solve_p3(0.0, &users, &sys).map_err(|e| e.to_string())?, &users, &sys)?;
        let sol = solve_p3(eta, &users, &sys).map_err(|e| format!("seed {seed}: {e}"))?;
        let duals = sol.duals.clone();
        for (k, s) in stationarity_residuals(&sol, eta, &users, &sys).iter().enumerate() {
            for r in [s.df, s.dy].into_iter().flatten() {
                ensure(r <= 1e-6, || format!("seed {seed} user {k}: stationarity residual {r:e}"))?;
                worst_stat = worst_stat.max(r);
            }
        }
        // analytic gradient against central differences of the Lagrangian
        let (tau0, tau, y, f) = (sol.tau0, sol.tau.clone(), sol.y.clone(), sol.freq.clone());
        for k in 0..users.len() {
            let (df, dy) = lagrangian_gradient_fy(&duals, k, eta, &users[k], &sys, tau[k], y[k], f[k]);
            let l = |y: &[f64], f: &[f64]| lagrangian(&duals, eta, &users, &sys, tau0, &tau, y, f, sol.upsilon);
            let h = 1e-4 * f[k].max(1e6);
            let (mut fp, mut fm) = (f.clone(), f.clone());
            fp[k] += h;
            fm[k] -= h;
            let fd = (l(&y, &fp) - l(&y, &fm)) / (2.0 * h);
            let scale = (duals.lambda[k] + duals.theta[k]) * sys.frame / sys.cycles_per_bit;
            let e = (fd - df).abs() / scale.max(f64::MIN_POSITIVE);
            ensure(e <= 1e-6, || format!("seed {seed} user {k}: d/df {df:e} vs {fd:e}"))?;
            worst_fd = worst_fd.max(e);
            if tau[k] > 0.0 && y[k] > 0.0 {
                let h = 1e-4 * y[k];
                let (mut yp, mut ym) = (y.clone(), y.clone());
                yp[k] += h;
                ym[k] -= h;
                let fd = (l(&yp, &f) - l(&ym, &f)) / (2.0 * h);
                let scale = sys.amplifier * (duals.rho[k] + duals.theta[k] * eta) + dy.abs();
                let e = (fd - dy).abs() / scale.max(f64::MIN_POSITIVE);
                ensure(e <= 1e-6, || format!("seed {seed} user {k}: d/dy {dy:e} vs {fd:e}"))?;
                worst_fd = worst_fd.max(e);
            }
            if duals.theta[k] > 0.0 && eta > 0.0 {
                let w = omega_root(&duals, k, eta, &users[k], &sys).map_err(|e| e.to_string())?;
                let r = omega_equation(&duals, k, eta, &users[k], &sys, w).abs() / omega_scale(&duals, k, eta, &users[k], &sys);
                ensure(r <= 1e-9, || format!("seed {seed} user {k}: omega residual {r:e}"))?;
                worst_omega = worst_omega.max(r);
            }
        }
    }
    Ok(format!("stationarity {worst_stat:.1e}, finite-difference {worst_fd:.1e}, omega root {worst_omega:.1e}"))
}

fn sca_behaviour() -> Check {
    let sys = SystemParams::default();
    for seed in 0..3u64 {
        let users = sort_for_noma(&instance(600 + seed, 3)).0;
        let eta = 0.5 * efficiency(&solve_p3(0.0, &users, &sys).map_err(|e| e.to_string())?, &users, &sys)?;
        let mut state = ScaState::initial(None, &users, &sys);
        for round in 0..10 {
            let (sol, next) = solve_p9(eta, &state, &users, &sys).map_err(|e| format!("seed {seed}: {e}"))?;
            let res = max_residual(&feasibility_residuals(&sol.allocation(), Regime::NomaPartial, &users, &sys).map_err(|e| e.to_string())?);
            ensure(res <= 1e-8, || format!("seed {seed} round {round}: residual {res:e}"))?;
            state = next;
        }
        let t = &state.trace;
        ensure(t.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0)), || format!("seed {seed}: trace {t:?}"))?;
    }
    let mut worst: f64 = 0.0;
    for seed in 0..3u64 {
        let users = instance(700 + seed, 1);
        let noma = dinkelbach(&mut p9_problem(&users, &sys), &sys).map_err(|e| e.to_string())?.eta_star;
        let tdma = dinkelbach(&mut p3_problem(&users, &sys), &sys).map_err(|e| e.to_string())?.eta_star;
        ensure(rel(noma, tdma) <= 1e-3, || format!("K=1 seed {seed}: NOMA {noma} vs TDMA {tdma}"))?;
        worst = worst.max(rel(noma, tdma));
    }
    Ok(format!("traces nondecreasing, iterates feasible, K=1 NOMA vs TDMA {worst:.1e}"))
}

fn determinism() -> Check {
    let text = "[users]\ncount = 3\n[sweep]\nstation_power = [0.02, 0.03]\ncb_max = true\n";
    let cfg = Config::from_toml_str(&format!("seed = 5\n{text}")).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let outputs: Vec<Vec<Vec<u8>>> = [1usize, 4, 4]
        .iter()
        .enumerate()
        .map(|(i, &threads)| {
            let out = dir.path().join(format!("run{i}"));
            let opts = RunOptions { seed: Some(17), parallel: Some(threads), regimes: None };
            run(&cfg, &out, &opts).map_err(|e| e.to_string())?;
            ["sweep.csv", "cbmax.csv", "traces.csv", "manifest.toml"]
                .iter()
                .map(|f| std::fs::read(out.join(f)).map_err(|e| e.to_string()))
                .collect()
        })
        .collect::<std::result::Result<_, String>>()?;
    ensure(outputs.windows(2).all(|w| w[0] == w[1]), || "outputs differ between identical runs".into())?;
    // the manifest alone reproduces the run
    let replay = Config::load(&dir.path().join("run0/manifest.toml")).map_err(|e| e.to_string())?;
    let out = dir.path().join("replay");
    run(&replay, &out, &RunOptions::default()).map_err(|e| e.to_string())?;
    let again = std::fs::read(out.join("sweep.csv")).map_err(|e| e.to_string())?;
    ensure(again == outputs[0][0], || "manifest replay differs".into())?;
    Ok("byte-identical across thread counts and manifest replay".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("EH fidelity", eh_fidelity),
        ("cross-solver agreement", cross_solver),
        ("oracle", oracle_bound),
        ("Dinkelbach", dinkelbach_behaviour),
        ("Ps sweep", station_power_sweep),
        ("CB-max", cb_max_shape),
        ("station power at cap", free_station_power),
        ("KKT", kkt_residuals),
        ("SCA", sca_behaviour),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}) [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail}) [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
