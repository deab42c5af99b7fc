//! End-to-end workflows: design generation, emulator campaigns, synthetic
//! observations and experiment reproduction.

mod campaign;
mod experiments;

pub use campaign::{train_campaign, train_pair, Campaign, CampaignResult, CampaignFailure};
pub use experiments::{
    load_or_train, reference_in_zone, reproduce, staged_case, table1_case, timing_case, varying_sensors_case,
    interpolation_check, physics_check, CriterionCheck, ExperimentReport, ExperimentSettings, EXPERIMENTS,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::inference::{Observation, ObservationSet, SourceScenario};
use crate::netflow::BuildingNetwork;
use crate::sensornet::SensorDeployment;
use crate::simulator::{Simulator, TransientTrace};

/// Worker-count environment variable.
pub const WORKERS_ENV: &str = "ZONEGP_WORKERS";

/// Worker threads: `ZONEGP_WORKERS` if set, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|n: &usize| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// n × d Latin hypercube in [0, 1): column j times n, floored, is a
/// permutation of 0..n.
pub fn lhs_design(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for (i, p) in perm.into_iter().enumerate() {
            let u: f64 = rng.random();
            // keep the stratum even if rounding would push u·(1/n) onto its edge
            pts[i][j] = ((p as f64 + u) / n as f64).min((p as f64 + 1.0) / n as f64 - f64::EPSILON).max(p as f64 / n as f64);
        }
    }
    pts
}

/// Hex SHA-256 of a serializable configuration.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).unwrap_or_default();
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deployment plus true release, as read from a scenario TOML file:
///
/// ```toml
/// horizon = 40.0
/// [deployment]
/// zones = [1, 2, 3, 4, 5, 6]
/// noise_fraction = 0.01
/// noise_floor = 1e-5
/// [source]
/// zone = 1
/// amount = 0.09
/// start = 18.0
/// locations = [[4.0, 1.36], [1.44, 3.6]]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub deployment: DeploymentSection,
    pub source: SourceScenario,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentSection {
    pub zones: Vec<usize>,
    #[serde(default = "default_fraction")]
    pub noise_fraction: f64,
    #[serde(default = "default_floor")]
    pub noise_floor: f64,
    /// Defaults to ten times the noise floor.
    pub threshold: Option<f64>,
}

fn default_horizon() -> f64 {
    40.0
}
fn default_fraction() -> f64 {
    0.01
}
fn default_floor() -> f64 {
    1e-5
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact {
            path: path.display().to_string(),
            hint: "pass a scenario TOML with [deployment] and [source] sections".into(),
        })?;
        Self::parse(&text)
    }

    pub fn reference() -> Self {
        Self {
            horizon: default_horizon(),
            deployment: DeploymentSection {
                zones: (1..=6).collect(),
                noise_fraction: default_fraction(),
                noise_floor: default_floor(),
                threshold: None,
            },
            source: SourceScenario::reference(),
        }
    }

    pub fn deployment(&self) -> Result<SensorDeployment> {
        let d = &self.deployment;
        let mut dep = SensorDeployment::new(d.zones.clone(), d.noise_fraction, d.noise_floor)?;
        if let Some(t) = d.threshold {
            dep.threshold = t;
            dep.validate()?;
        }
        Ok(dep)
    }
}

/// Sensor readings for one synthetic release.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub truth: TransientTrace,
    /// Noisy readings at every minute in the sensor zones (zeros elsewhere).
    pub sensed: TransientTrace,
    pub observations: ObservationSet,
}

/// Simulates `truth` with the source zone on the grid, reads every sensor
/// each minute over [0, horizon] and adds Gaussian noise with sd
/// `deployment.noise_sd(true value)` unless `noise` is false. Observations
/// are restricted to `window` (inclusive minutes) when given.
pub fn make_observations(
    net: &BuildingNetwork,
    truth: &SourceScenario,
    deployment: &SensorDeployment,
    horizon: f64,
    window: Option<(f64, f64)>,
    noise: bool,
    seed: u64,
) -> Result<SyntheticData> {
    deployment.validate()?;
    let sim = Simulator::new(&net.with_cfd_zone(Some(truth.zone)), 1.0)?;
    let tr = sim.trace(truth, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sensed = tr.clone();
    let mut zones = deployment.zones.clone();
    zones.sort_unstable();
    let mut records = Vec::new();
    for (i, &t) in tr.times.iter().enumerate() {
        for z in 1..=tr.n_zones() {
            if !zones.contains(&z) {
                sensed.concentrations[i][z - 1] = 0.0;
                continue;
            }
            let v = tr.concentrations[i][z - 1];
            let sd = deployment.noise_sd(v);
            let y = if noise { v + Normal::new(0.0, sd).expect("finite sd").sample(&mut rng) } else { v };
            sensed.concentrations[i][z - 1] = y;
            if window.is_none_or(|(a, b)| t >= a - 1e-9 && t <= b + 1e-9) {
                records.push(Observation { zone: z, time: t, value: y, noise_sd: sd });
            }
        }
    }
    Ok(SyntheticData { truth: tr, sensed, observations: ObservationSet::new(records)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lhs_is_stratified() {
        for (n, d) in [(1, 3), (5, 2), (37, 4)] {
            let p = lhs_design(n, d, 9);
            for j in 0..d {
                let mut cells: Vec<usize> = p.iter().map(|r| (r[j] * n as f64).floor() as usize).collect();
                cells.sort_unstable();
                assert_eq!(cells, (0..n).collect::<Vec<_>>());
            }
        }
        assert_eq!(lhs_design(6, 2, 1), lhs_design(6, 2, 1));
        assert_ne!(lhs_design(6, 2, 1), lhs_design(6, 2, 2));
    }
}
