use nalgebra::DVector;
use proptest::prelude::*;
use wpmec::convex::barrier::{BarrierOptions, Constraint, ConvexProgram};
use wpmec::convex::expr::{Composite, Term};
use wpmec::convex::{p3_problem, solve_p3};
use wpmec::experiment::fairness_index;
use wpmec::fractional::dinkelbach;
use wpmec::lp;
use wpmec::model::{evaluate, feasibility_residuals, max_residual, sort_for_noma, Regime, SystemParams, UserParams};

fn users_strategy(max: usize) -> impl Strategy<Value = Vec<UserParams>> {
    prop::collection::vec((0.45f64..1.0, -5.0f64..-3.0), 1..=max)
        .prop_map(|v| v.into_iter().map(|(h, lg)| UserParams::with_gains(h, 10f64.powf(lg))).collect())
}

proptest! {
    #[test]
    fn harvested_power_is_monotone_and_bounded(a in 0.0f64..0.2, b in 0.0f64..0.2) {
        let eh = SystemParams::default().eh;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(eh.harvested_power(lo) <= eh.harvested_power(hi));
        prop_assert!(eh.harvested_power(hi) <= eh.p_max);
        prop_assert!(eh.harvested_power(lo) >= 0.0);
    }

    #[test]
    fn jain_index_lies_between_one_over_k_and_one(v in prop::collection::vec(0.0f64..1e9, 1..8)) {
        prop_assume!(v.iter().any(|x| *x > 0.0));
        let j = fairness_index(&v).unwrap();
        let k = v.len() as f64;
        prop_assert!(j >= 1.0 / k - 1e-12 && j <= 1.0 + 1e-12);
    }

    #[test]
    fn noma_sort_is_a_permutation_by_ascending_uplink_gain(users in users_strategy(6)) {
        let (sorted, order) = sort_for_noma(&users);
        prop_assert!(sorted.windows(2).all(|w| w[0].g <= w[1].g));
        let mut seen = order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..users.len()).collect::<Vec<_>>());
        for (s, &i) in sorted.iter().zip(&order) {
            prop_assert_eq!(s, &users[i]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn inner_solutions_are_feasible_and_self_consistent(users in users_strategy(3), eta in 0.0f64..1e9) {
        let sys = SystemParams::default();
        let sol = solve_p3(eta, &users, &sys).unwrap();
        let alloc = sol.allocation();
        let res = feasibility_residuals(&alloc, Regime::TdmaPartial, &users, &sys).unwrap();
        prop_assert!(max_residual(&res) <= 1e-8, "{:?}", res);
        // the epigraph value is the smallest per-user R_k - eta E_k
        let worst = evaluate(&alloc, Regime::TdmaPartial, &users, &sys)
            .unwrap()
            .iter()
            .map(|m| m.bits - eta * m.energy)
            .fold(f64::INFINITY, f64::min);
        prop_assert!((worst - sol.upsilon).abs() <= 1e-6 * worst.abs().max(1e4));
    }

    #[test]
    fn dinkelbach_optimum_dominates_a_tighter_station_power(users in users_strategy(3)) {
        let sys = SystemParams::default();
        let low = sys.with_station_power(0.8 * sys.max_station_power);
        let full = dinkelbach(&mut p3_problem(&users, &sys), &sys).unwrap().eta_star;
        let reduced = match dinkelbach(&mut p3_problem(&users, &low), &low) {
            Ok(r) => r.eta_star,
            Err(_) => 0.0,
        };
        prop_assert!(full >= reduced * (1.0 - 1e-6));
    }
}

/// Random LPs with a bounded feasible region containing the origin.
fn lp_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..5, 2usize..6).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), m),
            prop::collection::vec(0.5f64..2.0, m),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn barrier_matches_simplex_on_random_lps((c, mut a, mut b) in lp_strategy()) {
        let n = c.len();
        // a box keeps every instance bounded
        for i in 0..n {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            a.push(row);
            b.push(3.0);
        }
        let simplex = lp::maximize(&c, &a, &b).unwrap();
        let mut objective = Composite::new(0.0);
        for (i, &ci) in c.iter().enumerate() {
            objective.push(Term::Linear { i, coef: ci });
        }
        let mut constraints: Vec<Constraint> = a
            .iter()
            .zip(&b)
            .map(|(row, &bi)| {
                let mut e = Composite::new(-bi);
                for (i, &aij) in row.iter().enumerate() {
                    e.push(Term::Linear { i, coef: aij });
                }
                Constraint::new(e)
            })
            .collect();
        constraints.extend((0..n).map(|i| Constraint::lower(i, 0.0)));
        let prog = ConvexProgram { dim: n, objective, constraints };
        let sol = prog.solve(&DVector::from_element(n, 1e-3), &BarrierOptions::default()).unwrap();
        prop_assert!((sol.objective - simplex.objective).abs() <= 1e-6 * simplex.objective.abs().max(1.0),
            "barrier {} simplex {}", sol.objective, simplex.objective);
    }
}
