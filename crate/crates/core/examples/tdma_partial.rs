//! Max-min computation efficiency with TDMA partial offloading on the
//! five-user default scenario.

use wpmec::convex::p3_problem;
use wpmec::fractional::dinkelbach;
use wpmec::model::{evaluate, Regime, SystemParams, UserParams};

fn main() -> wpmec::Result<()> {
    let sys = SystemParams::default();
    let users: Vec<UserParams> = [(0.9, 8e-4), (0.75, 3e-4), (0.6, 1e-4), (0.5, 5e-5), (0.4, 2e-5)]
        .iter()
        .map(|&(h, g)| UserParams::with_gains(h, g))
        .collect();
    let rep = dinkelbach(&mut p3_problem(&users, &sys), &sys)?;
    for (i, eta) in rep.eta_trace.iter().enumerate() {
        println!("iteration {i}: eta = {eta:.6e} bits/J");
    }
    println!("harvest time {:.4} s", rep.alloc.tau0);
    for (k, m) in evaluate(&rep.alloc, Regime::TdmaPartial, &users, &sys)?.iter().enumerate() {
        println!(
            "user {k}: slot {:.4} s, power {:.3e} W, cpu {:.3e} Hz, {:.0} bits, {:.3e} bits/J",
            rep.alloc.schedule.time_for(k),
            rep.alloc.power[k],
            rep.alloc.freq[k],
            m.bits,
            m.ce
        );
    }
    Ok(())
}
