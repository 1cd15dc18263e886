//! Station-power sweep across the four regimes, printed as a table. The
//! `wpmec run` command writes the same rows to CSV.

use wpmec::experiment::{sweep_compare, Framework};
use wpmec::model::{Regime, SystemParams, UserParams};

fn main() {
    let sys = SystemParams::default();
    let users: Vec<UserParams> =
        [(0.9, 8e-4), (0.6, 1e-4), (0.45, 3e-5)].iter().map(|&(h, g)| UserParams::with_gains(h, g)).collect();
    let powers = [0.005, 0.02, 0.025, 0.03, 0.04];
    println!("{:>8} {:>13} {:>14} {:>10} {:>12}", "Ps_W", "regime", "eta*", "min_bits", "status");
    for p in sweep_compare(&powers, &Regime::ALL, Framework::Efficiency, &users, &sys) {
        let r = p.row;
        println!("{:>8} {:>13} {:>14.6e} {:>10.0} {:>12}", r.station_power, r.regime.to_string(), r.eta_star, r.min_bits, r.status);
    }
}
