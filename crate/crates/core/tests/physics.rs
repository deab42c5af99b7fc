use std::sync::OnceLock;

use proptest::prelude::*;
use zonegp::harness::{physics_check, reference_in_zone};
use zonegp::netflow::{solve_pressures, BuildingNetwork};
use zonegp::scenario::SourceScenario;
use zonegp::simulator::Simulator;

fn hallway() -> &'static Simulator {
    static SIM: OnceLock<Simulator> = OnceLock::new();
    SIM.get_or_init(|| Simulator::new(&BuildingNetwork::seven_room().with_cfd_zone(Some(1)), 1.0).unwrap())
}

#[test]
fn conservation_for_every_grid_zone_used_in_experiments() {
    let net = BuildingNetwork::seven_room();
    for zone in [1, 2, 4] {
        let c = physics_check(&net, zone, &reference_in_zone(&net, zone)).unwrap();
        assert!(c.passed, "zone {zone}: {}", c.detail);
    }
}

#[test]
fn all_mixed_network_balances() {
    let net = BuildingNetwork::seven_room();
    let sol = solve_pressures(&net).unwrap();
    let worst = sol.zone_residuals(&net).into_iter().fold(0.0f64, |m, r| m.max(r.abs()));
    assert!(worst <= 1e-8, "{worst}");
}

#[test]
fn identical_inputs_give_identical_traces() {
    let sc = SourceScenario::reference();
    let a = hallway().trace(&sc, 40.0).unwrap();
    let b = hallway().trace(&sc, 40.0).unwrap();
    assert_eq!(a.concentrations, b.concentrations);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn releases_conserve_mass_and_stay_nonnegative(
        x1 in 0.1f64..11.9, y1 in 0.1f64..3.9, x2 in 0.1f64..11.9, y2 in 0.1f64..3.9,
        amount in 0.01f64..0.2, start in 0.0f64..20.0,
    ) {
        let sim = hallway();
        let sc = SourceScenario { zone: 1, amount, start, locations: vec![(x1, y1), (x2, y2)] };
        let tr = sim.trace(&sc, 40.0).unwrap();
        for (t, row) in tr.times.iter().zip(&tr.concentrations) {
            prop_assert!(row.iter().all(|v| *v >= 0.0));
            if *t <= start {
                prop_assert!(row.iter().all(|v| *v == 0.0));
            }
        }
        let audit = sim.audit(&sc, 60.0).unwrap();
        prop_assert!(audit.relative_closure() <= 1e-6, "closure {}", audit.relative_closure());
    }

    #[test]
    fn doubling_the_rate_doubles_the_trace(x in 0.5f64..11.5, y in 0.5f64..3.5) {
        let sim = hallway();
        let one = SourceScenario { zone: 1, amount: 0.05, start: 2.0, locations: vec![(x, y)] };
        let two = SourceScenario { amount: 0.1, ..one.clone() };
        let a = sim.trace(&one, 20.0).unwrap();
        let b = sim.trace(&two, 20.0).unwrap();
        for (ra, rb) in a.concentrations.iter().zip(&b.concentrations) {
            for (va, vb) in ra.iter().zip(rb) {
                prop_assert!((2.0 * va - vb).abs() <= 1e-12 * vb.abs().max(1e-12));
            }
        }
    }
}
