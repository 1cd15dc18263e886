//! Harvested DC power of the saturating energy-harvesting model against the
//! received RF power.

use wpmec::model::SystemParams;

fn main() {
    let eh = SystemParams::default().eh;
    println!("{:>12} {:>14}", "rf_W", "harvested_W");
    for rf in [0.0, 3e-5, 6.4e-5, 1e-4, 3e-4, 1e-3, 3e-3, 0.01, 0.03, 0.1] {
        println!("{rf:>12.3e} {:>14.6e}", eh.harvested_power(rf));
    }
}
