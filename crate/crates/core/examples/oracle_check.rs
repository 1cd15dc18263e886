//! Brute-force grid search on a two-user instance as a lower bound for the
//! solvers.

use wpmec::experiment::{solve_regime, Framework};
use wpmec::model::{sort_for_noma, Regime, SystemParams, UserParams};
use wpmec::oracle::{grid_maxmin, GridSpec, Target};

fn main() -> wpmec::Result<()> {
    let sys = SystemParams::default();
    let users = sort_for_noma(&[UserParams::with_gains(0.85, 4e-4), UserParams::with_gains(0.6, 6e-5)]).0;
    for regime in Regime::ALL {
        let (_, oracle) = grid_maxmin(regime, Target::Efficiency, &users, &sys, &GridSpec::default())?;
        let solver = solve_regime(regime, Framework::Efficiency, &users, &sys)?.eta_star;
        println!("{:>13}: solver {solver:.6e}, oracle {oracle:.6e}, ratio {:.5}", regime.to_string(), solver / oracle);
    }
    Ok(())
}
