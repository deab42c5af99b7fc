use zonegp::harness::{make_observations, ScenarioFile};
use zonegp::netflow::BuildingNetwork;
use zonegp::scenario::SourceScenario;
use zonegp::sensornet::{detect, SensorDeployment};
use zonegp::simulator::Simulator;

fn deployment() -> SensorDeployment {
    SensorDeployment::new((1..=6).collect(), 0.01, 1e-5).unwrap()
}

#[test]
fn noiseless_readings_equal_the_simulator() {
    let net = BuildingNetwork::seven_room();
    let sc = SourceScenario::reference();
    let data = make_observations(&net, &sc, &deployment(), 30.0, None, false, 1).unwrap();
    let tr = Simulator::new(&net.with_cfd_zone(Some(1)), 1.0).unwrap().trace(&sc, 30.0).unwrap();
    for r in &data.observations.records {
        assert_eq!(r.value, tr.at(r.time, r.zone).unwrap());
    }
}

#[test]
fn five_minutes_from_detection_gives_thirty_records() {
    let net = BuildingNetwork::seven_room();
    let sc = SourceScenario::reference();
    let dep = deployment();
    let data = make_observations(&net, &sc, &dep, 40.0, None, true, 3).unwrap();
    let det = detect(&data.sensed, &dep).unwrap();
    assert_eq!(det.zone, 1);
    let obs = data.observations.filter(|r| r.time >= det.time && r.time <= det.time + 4.0);
    assert_eq!(obs.records.len(), 30);
}

#[test]
fn noise_stays_within_five_percent() {
    let net = BuildingNetwork::seven_room();
    let sc = SourceScenario::reference();
    let clean = make_observations(&net, &sc, &deployment(), 30.0, Some((21.0, 30.0)), false, 0).unwrap();
    let (mut inside, mut total) = (0usize, 0usize);
    for seed in 0..20 {
        let noisy = make_observations(&net, &sc, &deployment(), 30.0, Some((21.0, 30.0)), true, seed).unwrap();
        for (a, b) in noisy.observations.records.iter().zip(&clean.observations.records) {
            total += 1;
            inside += ((a.value - b.value).abs() <= 0.05 * b.value) as usize;
        }
    }
    assert!(inside as f64 / total as f64 >= 0.99, "{inside}/{total}");
}

#[test]
fn scenario_file_parses_and_rejects_unknown_keys() {
    let text = r#"
horizon = 35.0
[deployment]
zones = [1, 3]
[source]
zone = 2
amount = 0.1
start = 5.0
locations = [[1.0, 1.0]]
"#;
    let sf = ScenarioFile::parse(text).unwrap();
    assert_eq!(sf.deployment().unwrap().threshold, 1e-4);
    assert_eq!(sf.source.locations, vec![(1.0, 1.0)]);
    assert!(ScenarioFile::parse(&text.replace("horizon", "horizn")).is_err());
}
