use proptest::prelude::*;
use zonegp::inference::{
    decode, encode, ks_statistic, log_jacobian, log_likelihood, log_prior, total_variation, DiscrepancyConfig,
    BinnedDensity, Observation, ObservationSet, ParameterBounds,
};
use zonegp::netflow::BuildingNetwork;

fn bounds() -> ParameterBounds {
    ParameterBounds::new(&BuildingNetwork::seven_room(), 3, (0.07, 0.12), (0.0, 30.0)).unwrap()
}

fn phi_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, 10)
}

proptest! {
    #[test]
    fn decode_encode_round_trip(phi in phi_strategy()) {
        let b = bounds();
        let (a, zone, sc) = decode(&phi, &b);
        prop_assert!(a >= 1 && a <= 3 && b.zones.contains(&zone));
        let back = encode(&sc, &b).unwrap();
        let (a2, z2, sc2) = decode(&back, &b);
        prop_assert_eq!((a, zone), (a2, z2));
        prop_assert!((sc.amount - sc2.amount).abs() < 1e-12 && (sc.start - sc2.start).abs() < 1e-12);
        for (p, q) in sc.locations.iter().zip(&sc2.locations) {
            prop_assert!((p.0 - q.0).abs() < 1e-12 && (p.1 - q.1).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_is_flat_in_phi(phi in phi_strategy()) {
        let b = bounds();
        let (a, _, sc) = decode(&phi, &b);
        let lp = log_prior(a, &sc, &b);
        prop_assert!(lp.is_finite());
        prop_assert!((lp + log_jacobian(a, &sc, &b)).abs() < 1e-9);
    }

    #[test]
    fn distances_are_bounded_and_symmetric(
        p in prop::collection::vec(0.0f64..1.0, 5),
        q in prop::collection::vec(0.0f64..1.0, 5),
        xs in prop::collection::vec(-5.0f64..5.0, 1..50),
        ys in prop::collection::vec(-5.0f64..5.0, 1..50),
    ) {
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum::<f64>().max(1e-12); v.iter().map(|x| x / s).collect::<Vec<f64>>() };
        let (p, q) = (norm(&p), norm(&q));
        let tv = total_variation(&p, &q);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&tv));
        prop_assert!((tv - total_variation(&q, &p)).abs() < 1e-15);
        let ks = ks_statistic(&xs, &ys);
        prop_assert!((0.0..=1.0).contains(&ks));
        prop_assert_eq!(ks_statistic(&xs, &xs), 0.0);
    }

    #[test]
    fn observation_csv_round_trip(vals in prop::collection::vec((1usize..7, 0u32..60, 0.0f64..1.0, 1e-6f64..1e-2), 1..30)) {
        let recs: Vec<Observation> = vals.iter().map(|&(zone, t, value, noise_sd)| Observation { zone, time: t as f64, value, noise_sd }).collect();
        let obs = ObservationSet::new(recs).unwrap();
        prop_assert_eq!(ObservationSet::from_csv(&obs.to_csv()).unwrap(), obs);
    }

    #[test]
    fn binned_density_integrates_to_one(xs in prop::collection::vec(0.0f64..=1.0, 1..200), bins in 2usize..60) {
        let d = BinnedDensity::from_samples(&xs, bins, 1e-6);
        let width = (d.hi - d.lo) / bins as f64;
        let integral = d.values.iter().sum::<f64>() * width + d.outside * (1.0 - (d.hi - d.lo));
        prop_assert!((integral - 1.0).abs() < 1e-12, "{integral}");
        prop_assert!(0.0 <= d.lo && d.lo < d.hi && d.hi <= 1.0);
        prop_assert!(xs.iter().all(|x| d.density(*x) > d.outside));
        prop_assert!(d.outside > 0.0);
    }

    #[test]
    fn likelihood_peaks_at_the_observations(shift in 1e-4f64..0.05) {
        let recs: Vec<Observation> = (1..=3).flat_map(|z| (19..=23).map(move |t| Observation {
            zone: z, time: t as f64, value: 0.01 * z as f64 + 0.001 * t as f64, noise_sd: 1e-3,
        })).collect();
        let obs = ObservationSet::new(recs).unwrap();
        let disc = DiscrepancyConfig::from_peaks(&obs, 0.02);
        let exact: Vec<Vec<f64>> = (1..=3).map(|z| obs.zone_records(z).iter().map(|r| r.value).collect()).collect();
        let off: Vec<Vec<f64>> = exact.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect();
        prop_assert!(log_likelihood(&obs, &exact, &disc).unwrap() > log_likelihood(&obs, &off, &disc).unwrap());
    }
}

#[test]
fn off_grid_or_nonpositive_noise_is_rejected() {
    let r = Observation { zone: 1, time: 19.5, value: 0.1, noise_sd: 1e-3 };
    assert!(ObservationSet::new(vec![r]).is_err());
    let r = Observation { zone: 1, time: 19.0, value: 0.1, noise_sd: 0.0 };
    assert!(ObservationSet::new(vec![r]).is_err());
}
