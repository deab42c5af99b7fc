//! Dynamic incremental sensor network: a detection trigger followed by
//! inference stages over growing sensor sets, each stage's posterior serving
//! as the next stage's prior.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::inference::{
    posterior_summaries, DiscrepancyConfig, EmpiricalPrior, McmcOptions, ObservationSet, ParameterBounds, PhiPrior,
    Posterior, PosteriorChain, PosteriorSummary, Predictor,
};
use crate::netflow::BuildingNetwork;
use crate::simulator::TransientTrace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorDeployment {
    /// Sensor zones O.
    pub zones: Vec<usize>,
    /// g/kg
    pub threshold: f64,
    /// Reading interval, min.
    pub cadence: f64,
    /// Multiplicative noise sd as a fraction of the reading.
    pub noise_fraction: f64,
    /// Additive noise sd, g/kg.
    pub noise_floor: f64,
}

impl SensorDeployment {
    /// Threshold ten times the noise floor.
    pub fn new(zones: Vec<usize>, noise_fraction: f64, noise_floor: f64) -> Result<Self> {
        let d = Self { zones, threshold: 10.0 * noise_floor, cadence: 1.0, noise_fraction, noise_floor };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.zones.is_empty() {
            return invalid("a deployment needs at least one sensor");
        }
        if !(self.threshold > 0.0) {
            return invalid("detection threshold must be positive");
        }
        if self.noise_fraction < 0.0 || !(self.noise_floor > 0.0) {
            return invalid("noise floor must be positive and the noise fraction nonnegative");
        }
        Ok(())
    }

    /// σ_e for a reading of `value`.
    pub fn noise_sd(&self, value: f64) -> f64 {
        (self.noise_fraction * value).hypot(self.noise_floor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub zone: usize,
    /// min
    pub time: f64,
}

/// Earliest (minute, zone) whose sensed value reaches the threshold; ties in
/// time go to the lowest zone id.
pub fn detect(trace: &TransientTrace, deployment: &SensorDeployment) -> Result<Detection> {
    let mut zones = deployment.zones.clone();
    zones.sort_unstable();
    for z in &zones {
        if *z == 0 || *z > trace.n_zones() {
            return invalid(format!("sensor zone {z} is not in the trace"));
        }
    }
    for (i, &t) in trace.times.iter().enumerate() {
        for &z in &zones {
            if trace.concentrations[i][z - 1] >= deployment.threshold {
                return Ok(Detection { zone: z, time: t });
            }
        }
    }
    Err(Error::NoDetection)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorSource {
    Initial,
    Previous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub sensors: Vec<usize>,
    /// Inclusive observation window, absolute minutes.
    pub window: (f64, f64),
    pub prior: PriorSource,
}

impl Stage {
    pub fn select(&self, obs: &ObservationSet) -> ObservationSet {
        obs.filter(|r| self.sensors.contains(&r.zone) && r.time >= self.window.0 - 1e-9 && r.time <= self.window.1 + 1e-9)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub detection: Detection,
    pub stages: Vec<Stage>,
}

/// The detecting sensor alone, one reading one minute after detection.
pub fn first_stage(detection: &Detection) -> Stage {
    let t = detection.time + 1.0;
    Stage { sensors: vec![detection.zone], window: (t, t), prior: PriorSource::Initial }
}

/// Three stages: the detecting sensor at t+1; that sensor plus the (at most
/// two, by probability) adjacent sensor zones with nonzero stage-1 p(Z) over
/// t+2..t+4; every sensor over t+5..t+9.
pub fn plan_stages(
    detection: &Detection,
    deployment: &SensorDeployment,
    net: &BuildingNetwork,
    stage1_zone_probs: &BTreeMap<usize, f64>,
) -> StagePlan {
    let t = detection.time;
    let mut nbrs: Vec<(usize, f64)> = net
        .adjacent(detection.zone)
        .into_iter()
        .filter(|z| deployment.zones.contains(z))
        .map(|z| (z, stage1_zone_probs.get(&z).copied().unwrap_or(0.0)))
        .filter(|(_, p)| *p > 0.0)
        .collect();
    nbrs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut second = vec![detection.zone];
    second.extend(nbrs.iter().take(2).map(|(z, _)| *z));
    let mut all = deployment.zones.clone();
    all.sort_unstable();
    StagePlan {
        detection: *detection,
        stages: vec![
            first_stage(detection),
            Stage { sensors: second, window: (t + 2.0, t + 4.0), prior: PriorSource::Previous },
            Stage { sensors: all, window: (t + 5.0, t + 9.0), prior: PriorSource::Previous },
        ],
    }
}

/// Sampler and prior-chaining settings shared by every stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSettings {
    pub bounds: ParameterBounds,
    pub total: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub init_draws: usize,
    /// σ_δ as a fraction of each zone's peak reading.
    pub discrepancy_fraction: f64,
    pub smoothing: f64,
    pub bins: usize,
    pub floor: f64,
}

impl StageSettings {
    pub fn new(bounds: ParameterBounds, total: usize, burn_in: usize, seed: u64) -> Self {
        Self { bounds, total, burn_in, seed, init_draws: 200, discrepancy_fraction: 0.02, smoothing: 1e-3, bins: 50, floor: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: Stage,
    pub chain: PosteriorChain,
    pub summary: PosteriorSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagedPosterior {
    pub stages: Vec<StageResult>,
}

impl StagedPosterior {
    pub fn last(&self) -> &StageResult {
        self.stages.last().expect("at least one stage")
    }
}

/// One stage: its own observations, the given prior, a seeded chain.
pub fn run_stage(
    stage: &Stage,
    obs: &ObservationSet,
    predictor: &dyn Predictor,
    prior: PhiPrior,
    start: &[Vec<f64>],
    settings: &StageSettings,
    seed: u64,
) -> Result<StageResult> {
    let data = stage.select(obs);
    if data.records.is_empty() {
        return invalid(format!("no observations for stage window {:?}", stage.window));
    }
    let disc = DiscrepancyConfig::from_peaks(&data, settings.discrepancy_fraction);
    let post = Posterior::new(settings.bounds.clone(), &data, &disc, prior, predictor)?;
    let opts = McmcOptions::new(settings.bounds.phi_dim(), settings.total, settings.burn_in, seed);
    let chain = post.sample(&opts, settings.init_draws, start)?;
    let summary = posterior_summaries(&chain, &settings.bounds);
    Ok(StageResult { stage: stage.clone(), chain, summary })
}

/// Runs a plan's stages in order; stage k > 1 with a `Previous` prior uses
/// independent histogram marginals of stage k−1's posterior.
pub fn run_staged_inference(
    plan: &StagePlan,
    obs: &ObservationSet,
    predictor: &dyn Predictor,
    settings: &StageSettings,
) -> Result<StagedPosterior> {
    continue_stages(plan, Vec::new(), obs, predictor, settings)
}

fn continue_stages(
    plan: &StagePlan,
    mut done: Vec<StageResult>,
    obs: &ObservationSet,
    predictor: &dyn Predictor,
    settings: &StageSettings,
) -> Result<StagedPosterior> {
    for (k, stage) in plan.stages.iter().enumerate().skip(done.len()) {
        let (prior, start) = match (stage.prior, done.last()) {
            (PriorSource::Previous, Some(prev)) => (
                PhiPrior::Empirical(EmpiricalPrior::from_chain(
                    &prev.chain,
                    &settings.bounds,
                    settings.smoothing,
                    settings.bins,
                    settings.floor,
                )),
                prev.chain.samples.last().cloned().into_iter().collect(),
            ),
            _ => (PhiPrior::Uniform, Vec::new()),
        };
        let seed = settings.seed.wrapping_add(k as u64);
        done.push(run_stage(stage, obs, predictor, prior, &start, settings, seed)?);
    }
    Ok(StagedPosterior { stages: done })
}

/// The full protocol: stage 1 from the detecting sensor, then stages 2–3
/// planned from the stage-1 zone probabilities.
pub fn dynamic_network(
    detection: &Detection,
    deployment: &SensorDeployment,
    net: &BuildingNetwork,
    obs: &ObservationSet,
    predictor: &dyn Predictor,
    settings: &StageSettings,
) -> Result<(StagePlan, StagedPosterior)> {
    let s1 = first_stage(detection);
    let r1 = run_stage(&s1, obs, predictor, PhiPrior::Uniform, &[], settings, settings.seed)?;
    let plan = plan_stages(detection, deployment, net, &r1.summary.zone);
    let staged = continue_stages(&plan, vec![r1], obs, predictor, settings)?;
    Ok((plan, staged))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(rows: Vec<Vec<f64>>) -> TransientTrace {
        TransientTrace { times: (0..rows.len()).map(|t| t as f64).collect(), concentrations: rows }
    }

    #[test]
    fn detection_rules() {
        let dep = SensorDeployment::new(vec![1, 2, 3], 0.01, 1e-5).unwrap();
        assert!(matches!(detect(&trace(vec![vec![0.0; 3]; 4]), &dep), Err(Error::NoDetection)));
        let tr = trace(vec![vec![0.0, 0.0, 0.0], vec![0.0, 5e-5, 0.0], vec![0.0, 2e-4, 3e-4]]);
        assert_eq!(detect(&tr, &dep).unwrap(), Detection { zone: 2, time: 2.0 });
    }

    #[test]
    fn stage_two_takes_top_two_neighbours() {
        let net = BuildingNetwork::seven_room();
        let dep = SensorDeployment::new(vec![1, 2, 3, 4, 5, 6], 0.01, 1e-5).unwrap();
        let det = Detection { zone: 1, time: 19.0 };
        let p: BTreeMap<usize, f64> = [(1, 0.5), (2, 0.1), (3, 0.25), (5, 0.15)].into_iter().collect();
        let plan = plan_stages(&det, &dep, &net, &p);
        assert_eq!(plan.stages[0].sensors, vec![1]);
        assert_eq!(plan.stages[0].window, (20.0, 20.0));
        assert_eq!(plan.stages[1].sensors, vec![1, 3, 5]);
        assert_eq!(plan.stages[1].window, (21.0, 23.0));
        assert_eq!(plan.stages[2].sensors, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(plan.stages[2].window, (24.0, 28.0));
        let only: BTreeMap<usize, f64> = [(1, 1.0)].into_iter().collect();
        assert_eq!(plan_stages(&det, &dep, &net, &only).stages[1].sensors, vec![1]);
    }
}
