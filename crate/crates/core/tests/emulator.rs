use std::sync::OnceLock;

use nalgebra::DMatrix;
use proptest::prelude::*;
use zonegp::emulator::{fit_gls, lambda_log_posterior, EmulatorModel};
use zonegp::harness::{interpolation_check, lhs_design, train_campaign, Campaign, CampaignResult};
use zonegp::netflow::BuildingNetwork;

fn small_campaign() -> Campaign {
    Campaign { source_counts: vec![1, 2], zones: vec![3], sensors: vec![1, 3], n_initial: 20, n_added: 4, ..Campaign::default() }
}

fn trained() -> &'static CampaignResult {
    static RES: OnceLock<CampaignResult> = OnceLock::new();
    RES.get_or_init(|| train_campaign(&BuildingNetwork::seven_room(), &small_campaign()).unwrap())
}

#[test]
fn campaign_covers_every_index_and_interpolates() {
    let res = trained();
    assert!(res.failures.is_empty(), "{:?}", res.failures);
    assert_eq!(res.models.len(), 2 * 1 * 2);
    let c = interpolation_check(&res.models);
    assert!(c.passed, "{}", c.detail);
    for m in &res.models {
        assert!(m.design.n() <= 24 && m.design.n() >= 20);
        assert_eq!(m.design.dim(), 2 * m.index.sources + 2);
    }
}

#[test]
fn saved_campaign_predicts_bitwise() {
    let res = trained();
    let dir = tempfile::tempdir().unwrap();
    res.save(dir.path()).unwrap();
    let back = CampaignResult::load(dir.path()).unwrap();
    assert_eq!(back.config_hash, res.config_hash);
    for (a, b) in res.models.iter().zip(&back.models) {
        for p in lhs_design(10, a.design.dim(), 5) {
            let (m1, m2) = a.predict_knots(&p);
            let (n1, n2) = b.predict_knots(&p);
            assert_eq!(m1, n1);
            assert_eq!(m2, n2);
        }
    }
}

#[test]
fn retraining_is_deterministic() {
    let again = train_campaign(&BuildingNetwork::seven_room(), &small_campaign()).unwrap();
    let ser = |m: &EmulatorModel| serde_json::to_string(&m.to_archive()).unwrap();
    for (a, b) in trained().models.iter().zip(&again.models) {
        assert_eq!(ser(a), ser(b));
    }
}

#[test]
fn missing_campaign_directory_has_hint() {
    let err = CampaignResult::load(std::path::Path::new("/nonexistent/emulators")).unwrap_err();
    assert!(err.to_string().contains("train-emulator"));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn copied_columns_copy_coefficients(seed in 0u64..1000, l0 in 0.5f64..20.0, l1 in 0.5f64..20.0) {
        let pts = lhs_design(8, 2, seed);
        let d = DMatrix::from_fn(8, 1, |i, _| (3.0 * pts[i][0]).sin() + pts[i][1] * pts[i][1]);
        let dd = DMatrix::from_fn(8, 2, |i, _| d[(i, 0)]);
        let f1 = fit_gls(&pts, &d, &[l0, l1]).unwrap();
        let f2 = fit_gls(&pts, &dd, &[l0, l1]).unwrap();
        for k in 0..3 {
            prop_assert!((f2.b_hat[(k, 0)] - f1.b_hat[(k, 0)]).abs() < 1e-9);
            prop_assert!((f2.b_hat[(k, 1)] - f1.b_hat[(k, 0)]).abs() < 1e-9);
        }
    }

    #[test]
    fn output_rescaling_shifts_the_lambda_objective_by_a_constant(
        seed in 0u64..1000, s in 0.1f64..10.0, c in -5.0f64..5.0,
        la in prop::collection::vec(0.1f64..30.0, 2), lb in prop::collection::vec(0.1f64..30.0, 2),
    ) {
        let pts = lhs_design(10, 2, seed);
        let d = DMatrix::from_fn(10, 2, |i, j| (2.0 * pts[i][j]).cos() + pts[i][1 - j].powi(3));
        let t = d.map(|v| s * v + c);
        let gap = |l: &[f64]| lambda_log_posterior(&pts, &t, l).unwrap() - lambda_log_posterior(&pts, &d, l).unwrap();
        prop_assert!((gap(&la) - gap(&lb)).abs() < 1e-6 * (1.0 + gap(&la).abs()));
    }
}
