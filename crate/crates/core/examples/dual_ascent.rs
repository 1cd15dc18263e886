//! The dual method for one inner TDMA problem, checked against the barrier
//! solver.

use wpmec::convex::solve_p3;
use wpmec::kkt::{dual_ascent_p3_with, DualAscentOptions};
use wpmec::model::{SystemParams, UserParams};

fn main() -> wpmec::Result<()> {
    let sys = SystemParams::default();
    let users = vec![UserParams::with_gains(0.8, 3e-4), UserParams::with_gains(0.6, 5e-5), UserParams::with_gains(0.7, 1e-4)];
    let eta = 1e8;
    let rep = dual_ascent_p3_with(eta, &users, &sys, &DualAscentOptions::default())?;
    let barrier = solve_p3(eta, &users, &sys)?;
    println!("dual method: Y = {:.6e} bits, bound {:.6e}, gap {:.1e}, {} steps", rep.solution.upsilon, rep.dual_bound, rep.gap, rep.steps);
    println!("barrier:     Y = {:.6e} bits", barrier.upsilon);
    println!("theta = {:?}", rep.duals.theta);
    println!("rho   = {:?}", rep.duals.rho);
    Ok(())
}
