//! Binary offloading: each user either offloads everything or computes
//! locally, chosen by alternating mode selection and resource allocation.

use wpmec::binary::alternate_solve;
use wpmec::model::{Regime, SystemParams, UserParams};

fn main() -> wpmec::Result<()> {
    // a demanding per-bit CPU load makes offloading worthwhile for strong links
    let sys = SystemParams { cycles_per_bit: 1e6, ..SystemParams::default() };
    let users = vec![UserParams::with_gains(0.9, 1e-2), UserParams::with_gains(0.7, 2e-1)];
    for regime in [Regime::TdmaBinary, Regime::NomaBinary] {
        let rep = alternate_solve(regime, &users, &sys)?;
        println!("{regime}: eta* = {:.6e} bits/J, modes {:?}", rep.report.eta_star, rep.alpha);
        for (i, trace) in rep.alternation_traces.iter().enumerate().take(3) {
            println!("  outer {i}: alternation objective {trace:?}");
        }
    }
    Ok(())
}
