//! One pass/fail line per acceptance criterion. Failing criteria are
//! reported, not asserted; the target only errors if it cannot run.

mod common;

use std::time::Instant;

use zonegp::harness::{
    interpolation_check, physics_check, reference_in_zone, staged_case, table1_case, timing_case, train_campaign,
    varying_sensors_case, CriterionCheck, ExperimentReport, ExperimentSettings,
};
use zonegp::inference::EmulatorPredictor;
use zonegp::netflow::BuildingNetwork;

fn check(criterion: u32, name: &str, passed: bool, detail: String) -> CriterionCheck {
    CriterionCheck { criterion, name: name.into(), passed, detail }
}

fn from_report(r: zonegp::Result<ExperimentReport>, criteria: &[(u32, &str)]) -> Vec<CriterionCheck> {
    match r {
        Ok(rep) => rep.checks,
        Err(e) => criteria.iter().map(|(c, n)| check(*c, n, false, format!("experiment failed: {e}"))).collect(),
    }
}

fn main() {
    let t0 = Instant::now();
    let net = BuildingNetwork::seven_room();
    let s = ExperimentSettings::default();
    let mut checks = Vec::new();

    let (err, secs) = common::gp_oracle_max_error();
    checks.push(check(3, "GP oracle equivalence", err <= 1e-10 && secs <= 10.0, format!("max |diff| {err:.2e} over 50 instances in {secs:.2}s")));
    let (tv, acc) = common::mh_five_state(100_000);
    checks.push(check(5, "MH correctness", tv <= 0.02 && acc == 1.0, format!("5-state TV {tv:.4} at 1e5 samples; flat-target acceptance {acc}")));
    let (factor, wins) = common::lambda_recovery(10);
    checks.push(check(
        10,
        "lambda recovery",
        factor <= 3.0 && wins == 1.0,
        format!("worst factor {factor:.2} over 10 seeds; MPE beat 100 random draws in {:.0}% of trials", 100.0 * wins),
    ));
    let phys: Vec<CriterionCheck> = [1, 2, 4]
        .iter()
        .map(|&z| physics_check(&net, z, &reference_in_zone(&net, z)).unwrap_or_else(|e| check(6, "", false, e.to_string())))
        .collect();
    checks.push(check(
        6,
        "physics conservation",
        phys.iter().all(|c| c.passed),
        phys.iter().zip([1, 2, 4]).map(|(c, z)| format!("grid zone {z}: {}", c.detail)).collect::<Vec<_>>().join("; "),
    ));

    let tc = Instant::now();
    match train_campaign(&net, &s.campaign) {
        Ok(res) => {
            eprintln!("desk campaign: {} emulators in {:.0}s", res.models.len(), tc.elapsed().as_secs_f64());
            checks.push(interpolation_check(&res.models));
            let emu = EmulatorPredictor::new(res.models);
            checks.extend(from_report(table1_case(&net, &s, &emu), &[(1, "table-1 identification"), (2, "emulator/direct agreement")]));
            checks.extend(from_report(varying_sensors_case(&net, &s, &emu), &[(7, "sensor-count monotonicity")]));
            checks.extend(from_report(staged_case(&net, &s, &emu), &[(8, "staged network")]));
            checks.extend(from_report(timing_case(&net, &s, &emu), &[(9, "emulator timing")]));
        }
        Err(e) => {
            for (c, n) in [(1, "table-1 identification"), (2, "emulator/direct agreement"), (4, "emulator interpolation"), (7, "sensor-count monotonicity"), (8, "staged network"), (9, "emulator timing")] {
                checks.push(check(c, n, false, format!("campaign training failed: {e}")));
            }
        }
    }

    checks.sort_by_key(|c| c.criterion);
    println!("acceptance ({:.0}s):", t0.elapsed().as_secs_f64());
    for c in &checks {
        println!("[{}] criterion {} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.criterion, c.name, c.detail);
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    println!("{passed}/{} criteria pass", checks.len());
}
