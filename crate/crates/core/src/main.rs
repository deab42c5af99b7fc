use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zonegp::harness::{
    self, interpolation_check, lhs_design, make_observations, physics_check, reproduce, train_campaign,
    CampaignResult, CriterionCheck, ExperimentSettings, ScenarioFile, EXPERIMENTS,
};
use zonegp::inference::{
    posterior_summaries, DirectPredictor, DiscrepancyConfig, EmulatorPredictor, McmcOptions, ObservationSet, PhiPrior,
    Posterior, Predictor,
};
use zonegp::netflow::BuildingNetwork;
use zonegp::sensornet::{detect, dynamic_network, StageSettings};
use zonegp::simulator::Simulator;
use zonegp::{Error, Result};

#[derive(Parser)]
#[command(name = "zonegp", version, about = "Multizone-CFD emulation and Bayesian source localization")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Seed for every random stream (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment settings TOML (campaign, chain lengths, noise).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Full-size designs (121 + 29) and chains (30 000) instead of desk scale.
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a release and write the zone trace (g/m³).
    Simulate {
        #[arg(long)]
        building: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Zone resolved on the grid (default: the source zone).
        #[arg(long)]
        cfd_zone: Option<usize>,
        /// Also write per-minute grid rasters.
        #[arg(long)]
        snapshots: bool,
    },
    /// Latin-hypercube design for one (source count, zone) pair.
    Design {
        #[arg(long)]
        building: Option<PathBuf>,
        #[arg(long)]
        zone: usize,
        #[arg(long)]
        sources: usize,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train emulators for one (a, b) pair, or the whole campaign when
    /// --zone/--sources are omitted.
    TrainEmulator {
        #[arg(long)]
        building: Option<PathBuf>,
        #[arg(long)]
        zone: Option<usize>,
        #[arg(long)]
        sources: Option<usize>,
    },
    /// Synthetic noisy sensor readings for a scenario.
    MakeObs {
        #[arg(long)]
        building: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Inclusive minute window; defaults to five readings from detection.
        #[arg(long, num_args = 2)]
        window: Option<Vec<f64>>,
        #[arg(long)]
        no_noise: bool,
    },
    /// Sample the source posterior.
    Infer {
        #[arg(long)]
        building: Option<PathBuf>,
        #[arg(long)]
        emulators: Option<PathBuf>,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        burn: Option<usize>,
        /// Run the simulator inside the chain instead of the emulators.
        #[arg(long)]
        direct_simulator: bool,
    },
    /// Staged incremental sensor network.
    SensorNet {
        #[arg(long)]
        building: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        emulators: PathBuf,
    },
    /// Run a named experiment and evaluate its acceptance checks.
    Reproduce {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(EXPERIMENTS))]
        experiment: String,
        #[arg(long)]
        building: Option<PathBuf>,
        /// Trained campaign; trained into <out>/emulators when omitted.
        #[arg(long)]
        emulators: Option<PathBuf>,
    },
    /// Building, physics and (optionally) emulator checks.
    Validate {
        #[arg(long)]
        building: Option<PathBuf>,
        #[arg(long)]
        emulators: Option<PathBuf>,
    },
}

fn settings(c: &Common) -> Result<ExperimentSettings> {
    let mut s = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|_| Error::MissingArtifact { path: p.display().to_string(), hint: "pass an existing settings TOML".into() })?;
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None if c.paper_scale => ExperimentSettings::full_scale(),
        None => ExperimentSettings::default(),
    };
    if c.config.is_some() && c.paper_scale {
        let p = ExperimentSettings::full_scale();
        s.campaign.n_initial = p.campaign.n_initial;
        s.campaign.n_added = p.campaign.n_added;
        s.burn_in = p.burn_in;
        s.samples = p.samples;
    }
    if let Some(seed) = c.seed {
        s.seed = seed;
        s.campaign.seed = seed;
    }
    Ok(s)
}

fn building(p: &Option<PathBuf>) -> Result<BuildingNetwork> {
    match p {
        Some(p) => BuildingNetwork::from_file(p),
        None => Ok(BuildingNetwork::seven_room()),
    }
}

fn scenario(p: &Option<PathBuf>) -> Result<ScenarioFile> {
    match p {
        Some(p) => ScenarioFile::load(p),
        None => Ok(ScenarioFile::reference()),
    }
}

fn write(out: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(name), text)?;
    Ok(())
}

fn print_checks(checks: &[CriterionCheck]) -> bool {
    for c in checks {
        println!("[{}] criterion {} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.criterion, c.name, c.detail);
    }
    checks.iter().all(|c| c.passed)
}

fn run(cli: Cli) -> Result<bool> {
    let s = settings(&cli.common)?;
    let out = cli.common.out.clone();
    match cli.cmd {
        Cmd::Simulate { building: b, scenario: sp, cfd_zone, snapshots } => {
            let net = building(&b)?;
            let sf = scenario(&sp)?;
            let net = net.with_cfd_zone(Some(cfd_zone.unwrap_or(sf.source.zone)));
            let sim = Simulator::new(&net, s.campaign.dt)?;
            let tr = sim.trace(&sf.source, sf.horizon)?;
            write(&out, "trace.csv", &tr.to_csv(net.air_density))?;
            if snapshots {
                for (t, raster) in sim.grid_snapshots(&sf.source, sf.horizon)? {
                    write(&out.join("grid"), &format!("grid_t{t:03}.csv"), &raster)?;
                }
            }
            println!("wrote {}", out.join("trace.csv").display());
        }
        Cmd::Design { building: b, zone, sources, n } => {
            let net = building(&b)?;
            let bounds = s.campaign.bounds(&net)?.theta_bounds(sources, zone);
            let n = n.unwrap_or(s.campaign.n_initial);
            let pts = lhs_design(n, bounds.len(), s.campaign.seed);
            let mut csv: Vec<String> = (0..sources).flat_map(|i| [format!("x{}", i + 1), format!("y{}", i + 1)]).collect();
            csv.extend(["S_a".into(), "S_t".into()]);
            let mut text = csv.join(",") + "\n";
            for p in &pts {
                let row: Vec<String> = p.iter().zip(&bounds).map(|(u, (lo, hi))| (lo + u * (hi - lo)).to_string()).collect();
                text.push_str(&(row.join(",") + "\n"));
            }
            write(&out, &format!("design_a{sources}_b{zone}.csv"), &text)?;
            println!("{n} design points for a={sources}, b={zone}");
        }
        Cmd::TrainEmulator { building: b, zone, sources } => {
            let net = building(&b)?;
            let mut campaign = s.campaign.clone();
            if let Some(z) = zone {
                campaign.zones = vec![z];
            }
            if let Some(a) = sources {
                campaign.source_counts = vec![a];
            }
            let res = train_campaign(&net, &campaign)?;
            res.save(&out)?;
            println!("{} emulators written to {}, {} failures", res.models.len(), out.display(), res.failures.len());
            for f in &res.failures {
                println!("  failed (a={}, b={}, c={:?}): {}", f.sources, f.zone, f.observed, f.error);
            }
            return Ok(res.failures.is_empty());
        }
        Cmd::MakeObs { building: b, scenario: sp, window, no_noise } => {
            let net = building(&b)?;
            let sf = scenario(&sp)?;
            let dep = sf.deployment()?;
            let data = make_observations(&net, &sf.source, &dep, sf.horizon, None, !no_noise, s.seed)?;
            let det = detect(&data.sensed, &dep)?;
            let (from, to) = match window {
                Some(w) => (w[0], w[1]),
                None => (det.time, det.time + s.readings as f64 - 1.0),
            };
            let obs = data.observations.filter(|r| r.time >= from - 1e-9 && r.time <= to + 1e-9);
            write(&out, "observations.csv", &obs.to_csv())?;
            write(&out, "observations_all.csv", &data.observations.to_csv())?;
            write(&out, "truth_trace.csv", &data.truth.to_csv(net.air_density))?;
            write(&out, "detection.json", &serde_json::to_string_pretty(&det)?)?;
            println!("detection in zone {} at minute {}; {} records in [{from}, {to}]", det.zone, det.time, obs.records.len());
        }
        Cmd::Infer { building: b, emulators, obs, samples, burn, direct_simulator } => {
            let net = building(&b)?;
            let text = std::fs::read_to_string(&obs)
                .map_err(|_| Error::MissingArtifact { path: obs.display().to_string(), hint: "produce one with `zonegp make-obs`".into() })?;
            let obs = ObservationSet::from_csv(&text)?;
            let campaign = match &emulators {
                Some(d) if !direct_simulator => CampaignResult::load(d)?.campaign,
                _ => s.campaign.clone(),
            };
            let bounds = campaign.bounds(&net)?;
            let predictor: Box<dyn Predictor> = if direct_simulator {
                Box::new(DirectPredictor::new(&net, campaign.dt))
            } else {
                let dir = emulators.ok_or_else(|| Error::MissingArtifact {
                    path: "--emulators".into(),
                    hint: "pass a trained campaign directory or --direct-simulator".into(),
                })?;
                Box::new(EmulatorPredictor::new(CampaignResult::load(&dir)?.models))
            };
            let burn = burn.unwrap_or(s.burn_in);
            let total = burn + samples.unwrap_or(s.samples);
            let disc = DiscrepancyConfig::from_peaks(&obs, s.discrepancy_fraction);
            let post = Posterior::new(bounds.clone(), &obs, &disc, PhiPrior::Uniform, predictor.as_ref())?;
            let opts = McmcOptions::new(bounds.phi_dim(), total, burn, s.seed);
            let chain = post.sample(&opts, s.init_draws, &[])?;
            let sum = posterior_summaries(&chain, &bounds);
            write(&out, "chain.csv", &chain.to_csv(&bounds))?;
            write(&out, "summary.txt", &sum.report())?;
            write(&out, "hist_amount.csv", &sum.amount.to_csv("S_a"))?;
            write(&out, "hist_start.csv", &sum.start.to_csv("S_t"))?;
            for (z, loc) in &sum.locations {
                write(&out, &format!("locations_zone{z}.csv"), &loc.to_csv())?;
            }
            print!("{}", sum.report());
            if chain.low_acceptance {
                println!("warning: acceptance rate {:.3} below target", chain.acceptance_rate);
            }
        }
        Cmd::SensorNet { building: b, scenario: sp, emulators } => {
            let net = building(&b)?;
            let sf = scenario(&sp)?;
            let dep = sf.deployment()?;
            let res = CampaignResult::load(&emulators)?;
            let bounds = res.campaign.bounds(&net)?;
            let predictor = EmulatorPredictor::new(res.models);
            let data = make_observations(&net, &sf.source, &dep, sf.horizon, None, true, s.seed)?;
            let det = detect(&data.sensed, &dep)?;
            let settings = StageSettings {
                init_draws: s.init_draws,
                discrepancy_fraction: s.discrepancy_fraction,
                ..StageSettings::new(bounds.clone(), s.burn_in + s.samples, s.burn_in, s.seed)
            };
            let (plan, staged) = dynamic_network(&det, &dep, &net, &data.observations, &predictor, &settings)?;
            write(&out, "plan.json", &serde_json::to_string_pretty(&plan)?)?;
            for (k, r) in staged.stages.iter().enumerate() {
                let dir = out.join(format!("stage{}", k + 1));
                write(&dir, "chain.csv", &r.chain.to_csv(&bounds))?;
                write(&dir, "summary.txt", &r.summary.report())?;
                println!(
                    "stage {}: sensors {:?}, minutes {}..{}, p(Z={})={:.3}",
                    k + 1,
                    r.stage.sensors,
                    r.stage.window.0,
                    r.stage.window.1,
                    sf.source.zone,
                    r.summary.p_zone(sf.source.zone)
                );
            }
        }
        Cmd::Reproduce { experiment, building: b, emulators } => {
            let net = building(&b)?;
            let rep = reproduce(&experiment, &net, &s, emulators.as_deref(), &out)?;
            return Ok(print_checks(&rep.checks));
        }
        Cmd::Validate { building: b, emulators } => {
            let net = building(&b)?;
            net.validate()?;
            let sc = harness::reference_in_zone(&net, 1);
            let mut checks = vec![physics_check(&net, 1, &sc)?];
            if let Some(d) = emulators {
                checks.push(interpolation_check(&CampaignResult::load(&d)?.models));
            }
            return Ok(print_checks(&checks));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
