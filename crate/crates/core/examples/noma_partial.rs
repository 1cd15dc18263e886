//! NOMA partial offloading by successive convex approximation inside the
//! Dinkelbach loop, next to TDMA.

use wpmec::convex::p3_problem;
use wpmec::fractional::dinkelbach;
use wpmec::model::{sort_for_noma, SystemParams, UserParams};
use wpmec::nomasca::p9_problem;

fn main() -> wpmec::Result<()> {
    let sys = SystemParams::default();
    let users = vec![UserParams::with_gains(0.9, 8e-4), UserParams::with_gains(0.5, 5e-5), UserParams::with_gains(0.7, 2e-4)];
    // the decoding order needs ascending uplink gains
    let (sorted, order) = sort_for_noma(&users);
    let noma = dinkelbach(&mut p9_problem(&sorted, &sys), &sys)?;
    let tdma = dinkelbach(&mut p3_problem(&sorted, &sys), &sys)?;
    println!("decoding order (original indices): {order:?}");
    println!("NOMA eta* = {:.6e} bits/J after {} iterations", noma.eta_star, noma.iterations);
    println!("TDMA eta* = {:.6e} bits/J after {} iterations", tdma.eta_star, tdma.iterations);
    for t in &noma.inner_traces {
        println!("  eta {:.4e}: {} SCA rounds", t.eta, t.inner_iters);
    }
    Ok(())
}
