use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::campaign::{train_campaign, Campaign, CampaignResult};
use super::{config_hash, make_observations, SyntheticData};
use crate::emulator::EmulatorModel;
use crate::error::{Error, Result};
use crate::inference::{
    continuous_marginals, ks_statistic, mh_sample, posterior_summaries, total_variation, DirectPredictor, DiscrepancyConfig,
    EmulatorPredictor, McmcOptions, ObservationSet, ParameterBounds, PhiPrior, Posterior, PosteriorChain,
    PosteriorSummary, Predictor, SourceScenario,
};
use crate::netflow::BuildingNetwork;
use crate::sensornet::{detect, dynamic_network, Detection, SensorDeployment, StageSettings};

pub const EXPERIMENTS: [&str; 4] = ["table1-desk", "varying-sensors", "timing", "staged"];

/// Knobs shared by the reproduction experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub campaign: Campaign,
    pub sensors: Vec<usize>,
    pub noise_fraction: f64,
    pub noise_floor: f64,
    pub burn_in: usize,
    pub samples: usize,
    pub init_draws: usize,
    pub discrepancy_fraction: f64,
    /// Readings per sensor in the Table-1 case.
    pub readings: usize,
    /// Chain length (iterations) of the timing comparison.
    pub timing_iterations: usize,
    pub staged_zones: Vec<usize>,
    pub seed: u64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            campaign: Campaign::default(),
            sensors: (1..=6).collect(),
            noise_fraction: 0.01,
            noise_floor: 1e-5,
            burn_in: 3000,
            samples: 6000,
            init_draws: 200,
            discrepancy_fraction: 0.02,
            readings: 5,
            timing_iterations: 200,
            staged_zones: vec![1, 2, 4],
            seed: 2024,
        }
    }
}

impl ExperimentSettings {
    pub fn full_scale() -> Self {
        Self { campaign: Campaign::full_scale(), burn_in: 10_000, samples: 20_000, ..Self::default() }
    }

    pub fn deployment(&self, zones: Vec<usize>) -> Result<SensorDeployment> {
        SensorDeployment::new(zones, self.noise_fraction, self.noise_floor)
    }

    fn mcmc(&self, bounds: &ParameterBounds, seed: u64) -> McmcOptions {
        McmcOptions::new(bounds.phi_dim(), self.burn_in + self.samples, self.burn_in, seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionCheck {
    pub criterion: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub id: String,
    pub seed: u64,
    pub config_hash: String,
    pub checks: Vec<CriterionCheck>,
    /// (file name, CSV text)
    pub tables: Vec<(String, String)>,
    /// (label, seconds)
    pub runtimes: Vec<(String, f64)>,
}

impl ExperimentReport {
    fn new(id: &str, settings: &ExperimentSettings) -> Self {
        Self { id: id.into(), seed: settings.seed, config_hash: config_hash(settings), ..Self::default() }
    }

    fn check(&mut self, criterion: u32, name: &str, passed: bool, detail: String) {
        self.checks.push(CriterionCheck { criterion, name: name.into(), passed, detail });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One line per check.
    pub fn summary(&self) -> String {
        self.checks
            .iter()
            .map(|c| format!("[{}] criterion {} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.criterion, c.name, c.detail))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}_report.json", self.id)), serde_json::to_string_pretty(self)?)?;
        for (name, csv) in &self.tables {
            std::fs::write(dir.join(name), csv)?;
        }
        Ok(())
    }
}

/// Two reference sources placed at the same relative positions in `zone`.
pub fn reference_in_zone(net: &BuildingNetwork, zone: usize) -> SourceScenario {
    let r = SourceScenario::reference();
    let (w0, d0) = (net.zone(1).floor_dims[0], net.zone(1).floor_dims[1]);
    let (w, d) = (net.zone(zone).floor_dims[0], net.zone(zone).floor_dims[1]);
    let locations = r.locations.iter().map(|(x, y)| (x / w0 * w, y / d0 * d)).collect();
    SourceScenario { zone, locations, ..r }
}

fn synthetic(net: &BuildingNetwork, truth: &SourceScenario, s: &ExperimentSettings) -> Result<(SyntheticData, Detection)> {
    let dep = s.deployment(s.sensors.clone())?;
    let data = make_observations(net, truth, &dep, truth.start + 30.0, None, true, s.seed)?;
    let det = detect(&data.sensed, &dep)?;
    Ok((data, det))
}

fn chain(
    bounds: &ParameterBounds,
    obs: &ObservationSet,
    predictor: &dyn Predictor,
    s: &ExperimentSettings,
    opts: &McmcOptions,
) -> Result<(PosteriorChain, PosteriorSummary, f64)> {
    let disc = DiscrepancyConfig::from_peaks(obs, s.discrepancy_fraction);
    let post = Posterior::new(bounds.clone(), obs, &disc, PhiPrior::Uniform, predictor)?;
    let init = post.initial_state(s.init_draws, opts.polish, opts.seed, &[]);
    // sampling time only; initialization is excluded
    let t0 = Instant::now();
    let ch = mh_sample(&mut |phi: &[f64]| post.log_posterior(phi), &init, opts)?;
    let secs = t0.elapsed().as_secs_f64();
    let sum = posterior_summaries(&ch, bounds);
    Ok((ch, sum, secs))
}

fn window(obs: &ObservationSet, zones: &[usize], from: f64, to: f64) -> ObservationSet {
    obs.filter(|r| zones.contains(&r.zone) && r.time >= from - 1e-9 && r.time <= to + 1e-9)
}

/// Two reference sources in zone 1 read by all sensors for `readings`
/// minutes from detection; direct and emulator posteriors compared.
pub fn table1_case(net: &BuildingNetwork, s: &ExperimentSettings, emulators: &EmulatorPredictor) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::new("table1-desk", s);
    let bounds = s.campaign.bounds(net)?;
    let truth = SourceScenario::reference();
    let (data, det) = synthetic(net, &truth, s)?;
    let obs = window(&data.observations, &s.sensors, det.time, det.time + s.readings as f64 - 1.0);
    rep.tables.push(("table1_observations.csv".into(), obs.to_csv()));
    let opts = s.mcmc(&bounds, s.seed);
    let direct = DirectPredictor::new(net, s.campaign.dt);
    let (ch_d, sum_d, t_d) = chain(&bounds, &obs, &direct, s, &opts)?;
    let (ch_e, sum_e, t_e) = chain(&bounds, &obs, emulators, s, &opts)?;
    rep.runtimes.push(("direct chain".into(), t_d));
    rep.runtimes.push(("emulator chain".into(), t_e));
    let mut table = String::from("backend,p_zone1,p_sources2,S_a_mean,S_a_sd,S_t_mean,S_t_sd,acceptance,seconds\n");
    for (name, sum, ch, t) in [("direct", &sum_d, &ch_d, t_d), ("emulator", &sum_e, &ch_e, t_e)] {
        table.push_str(&format!(
            "{name},{},{},{},{},{},{},{},{t}\n",
            sum.p_zone(1),
            sum.p_sources(2),
            sum.amount_mean,
            sum.amount_sd,
            sum.start_mean,
            sum.start_sd,
            ch.acceptance_rate
        ));
        rep.tables.push((format!("table1_{name}_chain.csv"), ch.to_csv(&bounds)));
        rep.tables.push((format!("table1_{name}_summary.txt"), sum.report()));
        if let Some(loc) = sum.locations.get(&1) {
            rep.tables.push((format!("table1_{name}_locations.csv"), loc.to_csv()));
        }
    }
    rep.tables.push(("table1.csv".into(), table));
    let ok = |sum: &PosteriorSummary| sum.p_zone(1) >= 1.0 - 1e-9 && sum.p_sources(2) >= 0.99;
    rep.check(
        1,
        "table-1 identification",
        ok(&sum_d) && ok(&sum_e) && t_e <= 600.0,
        format!(
            "direct p(Z=1)={:.4} p(S_N=2)={:.4}; emulator p(Z=1)={:.4} p(S_N=2)={:.4}; emulator chain {t_e:.1}s",
            sum_d.p_zone(1),
            sum_d.p_sources(2),
            sum_e.p_zone(1),
            sum_e.p_sources(2)
        ),
    );
    let pz = |s: &PosteriorSummary| s.zone.values().copied().collect::<Vec<f64>>();
    let tv_z = total_variation(&pz(&sum_d), &pz(&sum_e));
    let tv_n = total_variation(&sum_d.sources, &sum_e.sources);
    let (a_d, t_dd) = continuous_marginals(&ch_d, &bounds);
    let (a_e, t_ee) = continuous_marginals(&ch_e, &bounds);
    let ks_a = ks_statistic(&a_d, &a_e);
    let ks_t = ks_statistic(&t_dd, &t_ee);
    rep.check(
        2,
        "emulator/direct agreement",
        tv_z <= 0.05 && tv_n <= 0.05 && ks_a <= 0.1 && ks_t <= 0.1,
        format!("TV(Z)={tv_z:.4} TV(S_N)={tv_n:.4} KS(S_a)={ks_a:.4} KS(S_t)={ks_t:.4}"),
    );
    Ok(rep)
}

/// Sensor-count sweep with one reading per sensor at the detection minute;
/// sensors join in the order source zone first, then ascending id.
pub fn varying_sensors_case(
    net: &BuildingNetwork,
    s: &ExperimentSettings,
    emulators: &EmulatorPredictor,
) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::new("varying-sensors", s);
    let bounds = s.campaign.bounds(net)?;
    let truth = SourceScenario::reference();
    let (data, det) = synthetic(net, &truth, s)?;
    let mut order = vec![truth.zone];
    order.extend(s.sensors.iter().copied().filter(|z| *z != truth.zone));
    let mut probs = Vec::new();
    let mut table = String::from("sensors,p_zone1,p_sources2\n");
    for k in 1..=order.len() {
        let obs = window(&data.observations, &order[..k], det.time, det.time);
        let (_, sum, _) = chain(&bounds, &obs, emulators, s, &s.mcmc(&bounds, s.seed + k as u64))?;
        table.push_str(&format!("{k},{},{}\n", sum.p_zone(truth.zone), sum.p_sources(2)));
        probs.push(sum.p_zone(truth.zone));
    }
    rep.tables.push(("varying_sensors.csv".into(), table));
    let mono = probs.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    let by3 = probs.iter().skip(2).all(|p| *p >= 1.0 - 1e-9);
    rep.check(
        7,
        "sensor-count monotonicity",
        mono && by3,
        format!("p(Z=1) for 1..{} sensors: {:?}", order.len(), probs.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>()),
    );
    Ok(rep)
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Emulator-backend wall time against sensor count, and a direct/emulator
/// comparison at equal chain length with every sensor.
pub fn timing_case(net: &BuildingNetwork, s: &ExperimentSettings, emulators: &EmulatorPredictor) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::new("timing", s);
    let bounds = s.campaign.bounds(net)?;
    let truth = SourceScenario::reference();
    let (data, det) = synthetic(net, &truth, s)?;
    let mut order = vec![truth.zone];
    order.extend(s.sensors.iter().copied().filter(|z| *z != truth.zone));
    let end = det.time + s.readings as f64 - 1.0;
    let long = McmcOptions::new(bounds.phi_dim(), s.burn_in + s.samples, s.burn_in, s.seed);
    let (mut ks, mut ts) = (Vec::new(), Vec::new());
    let mut table = String::from("sensors,emulator_seconds\n");
    for k in 1..=order.len() {
        let obs = window(&data.observations, &order[..k], det.time, end);
        // best of three to damp scheduler noise
        let t = (0..3)
            .map(|_| chain(&bounds, &obs, emulators, s, &long).map(|r| r.2))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        table.push_str(&format!("{k},{t}\n"));
        ks.push(k as f64);
        ts.push(t);
    }
    rep.tables.push(("timing_sensors.csv".into(), table));
    let r2 = r_squared(&ks, &ts);
    let obs = window(&data.observations, &order, det.time, end);
    let n = s.timing_iterations;
    let short = McmcOptions { polish: 0, ..McmcOptions::new(bounds.phi_dim(), n, n / 4, s.seed) };
    let direct = DirectPredictor::new(net, s.campaign.dt);
    // build every zone's simulator outside the timed region
    for z in &bounds.zones {
        direct.simulator(*z)?;
    }
    let sd = SettingsNoInit::from(s);
    let (_, _, t_direct) = chain(&bounds, &obs, &direct, &sd.0, &short)?;
    let (_, _, t_emul) = chain(&bounds, &obs, emulators, &sd.0, &short)?;
    let ratio = t_direct / t_emul.max(1e-12);
    rep.tables.push((
        "timing_backends.csv".into(),
        format!("backend,iterations,seconds\ndirect,{n},{t_direct}\nemulator,{n},{t_emul}\n"),
    ));
    rep.runtimes.push(("direct chain".into(), t_direct));
    rep.runtimes.push(("emulator chain".into(), t_emul));
    rep.check(
        9,
        "emulator timing",
        r2 >= 0.9 && ratio >= 100.0,
        format!("R^2={r2:.3} over 1..{} sensors; direct/emulator = {ratio:.0}x at {n} iterations", order.len()),
    );
    Ok(rep)
}

/// Settings with the initial-draw search reduced to a single draw; the short
/// backend chains only time sampling, so a careful start is wasted work.
struct SettingsNoInit(ExperimentSettings);

impl From<&ExperimentSettings> for SettingsNoInit {
    fn from(s: &ExperimentSettings) -> Self {
        Self(ExperimentSettings { init_draws: 1, ..s.clone() })
    }
}

/// The staged protocol for two sources in each of `settings.staged_zones`.
pub fn staged_case(net: &BuildingNetwork, s: &ExperimentSettings, emulators: &EmulatorPredictor) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::new("staged", s);
    let bounds = s.campaign.bounds(net)?;
    let mut table = String::from("zone,stage,sensors,window_start,window_end,p_true_zone,p_sources2,S_a_sd,S_t_sd\n");
    let mut all_ok = true;
    let mut details = Vec::new();
    for &zone in &s.staged_zones {
        let truth = reference_in_zone(net, zone);
        let (data, det) = synthetic(net, &truth, s)?;
        let dep = s.deployment(s.sensors.clone())?;
        let settings = StageSettings {
            init_draws: s.init_draws,
            discrepancy_fraction: s.discrepancy_fraction,
            ..StageSettings::new(bounds.clone(), s.burn_in + s.samples, s.burn_in, s.seed + 100 * zone as u64)
        };
        let (_, staged) = dynamic_network(&det, &dep, net, &data.observations, emulators, &settings)?;
        let sds_t: Vec<f64> = staged.stages.iter().map(|r| r.summary.start_sd).collect();
        let sds_a: Vec<f64> = staged.stages.iter().map(|r| r.summary.amount_sd).collect();
        for (k, r) in staged.stages.iter().enumerate() {
            table.push_str(&format!(
                "{zone},{},{},{},{},{},{},{},{}\n",
                k + 1,
                r.stage.sensors.iter().map(|z| z.to_string()).collect::<Vec<_>>().join(" "),
                r.stage.window.0,
                r.stage.window.1,
                r.summary.p_zone(zone),
                r.summary.p_sources(2),
                r.summary.amount_sd,
                r.summary.start_sd
            ));
            rep.tables.push((format!("staged_zone{zone}_stage{}_chain.csv", k + 1), r.chain.to_csv(&bounds)));
        }
        let nonincr = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
        let final_p = staged.last().summary.p_zone(zone);
        let ok = nonincr(&sds_t) && nonincr(&sds_a) && final_p >= 1.0 - 1e-9;
        all_ok &= ok;
        details.push(format!(
            "zone {zone}: sd(S_t) {:?} sd(S_a) {:?} final p(Z)={final_p:.3}",
            sds_t.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            sds_a.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        ));
    }
    rep.tables.push(("staged.csv".into(), table));
    rep.check(8, "staged network", all_ok, details.join("; "));
    Ok(rep)
}

/// Emulators from `dir` (must hold a campaign manifest), or a fresh campaign
/// saved under `out/emulators` when no directory is given.
pub fn load_or_train(net: &BuildingNetwork, s: &ExperimentSettings, dir: Option<&Path>, out: &Path) -> Result<Vec<EmulatorModel>> {
    match dir {
        Some(d) => {
            let res = CampaignResult::load(d)?;
            if res.campaign != s.campaign {
                log::warn!("emulators in {} were trained with a different campaign", d.display());
            }
            Ok(res.models)
        }
        None => {
            let res = train_campaign(net, &s.campaign)?;
            res.save(&out.join("emulators"))?;
            Ok(res.models)
        }
    }
}

/// Runs experiment `id` and writes its report and tables under `out`.
pub fn reproduce(
    id: &str,
    net: &BuildingNetwork,
    s: &ExperimentSettings,
    emulator_dir: Option<&Path>,
    out: &Path,
) -> Result<ExperimentReport> {
    if !EXPERIMENTS.contains(&id) {
        return Err(Error::Invalid(format!("unknown experiment {id:?}; expected one of {EXPERIMENTS:?}")));
    }
    let models = load_or_train(net, s, emulator_dir, out)?;
    let emu = EmulatorPredictor::new(models);
    let rep = match id {
        "table1-desk" => table1_case(net, s, &emu)?,
        "varying-sensors" => varying_sensors_case(net, s, &emu)?,
        "timing" => timing_case(net, s, &emu)?,
        _ => staged_case(net, s, &emu)?,
    };
    rep.write(out)?;
    Ok(rep)
}

/// Mass closure over 60 min, network mass balance and grid coupling
/// mismatch on `net` with its CFD zone set to `cfd_zone`.
pub fn physics_check(net: &BuildingNetwork, cfd_zone: usize, scenario: &SourceScenario) -> Result<CriterionCheck> {
    let net = net.with_cfd_zone(Some(cfd_zone));
    let mixed = net.with_cfd_zone(None);
    let residual = crate::netflow::solve_pressures(&mixed)?
        .zone_residuals(&mixed)
        .into_iter()
        .fold(0.0f64, |m, r| m.max(r.abs()));
    let coupled = crate::cfdzone::couple(&net)?;
    let mismatch = coupled.mismatch();
    let sim = crate::simulator::Simulator::new(&net, 1.0)?;
    let closure = sim.audit(scenario, 60.0)?.relative_closure();
    Ok(CriterionCheck {
        criterion: 6,
        name: "physics conservation".into(),
        passed: closure <= 1e-6 && residual <= 1e-8 && mismatch <= 1e-6,
        detail: format!("mass closure {closure:.2e}, network residual {residual:.2e} kg/s, coupling mismatch {mismatch:.2e} kg/s"),
    })
}

/// Every emulator reproduces its design outputs with vanishing c**.
pub fn interpolation_check(models: &[EmulatorModel]) -> CriterionCheck {
    let (mut err, mut c) = (0.0f64, 0.0f64);
    for m in models {
        let (e, cc) = m.interpolation_error();
        err = err.max(e);
        c = c.max(cc);
    }
    CriterionCheck {
        criterion: 4,
        name: "emulator interpolation".into(),
        passed: !models.is_empty() && err <= 1e-8 && c <= 1e-8,
        detail: format!("{} emulators: max |error| {err:.2e}, max c** {c:.2e}", models.len()),
    }
}
