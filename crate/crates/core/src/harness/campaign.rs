use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{config_hash, lhs_design, worker_count};
use crate::emulator::{
    estimate_lambda_mpe, fit_gls, select_next_design, DesignSet, EmulatorIndex, EmulatorModel, KnotGrid, LambdaSearch,
};
use crate::error::{invalid, Error, Result};
use crate::inference::ParameterBounds;
use crate::netflow::BuildingNetwork;
use crate::scenario::SourceScenario;
use crate::simulator::Simulator;

/// Emulator training plan over (source count, source zone, sensor zone).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Campaign {
    /// N_s
    pub max_sources: usize,
    pub source_counts: Vec<usize>,
    pub zones: Vec<usize>,
    pub sensors: Vec<usize>,
    /// I_a, g/s per source
    pub amount: (f64, f64),
    /// I_t, min
    pub start: (f64, f64),
    pub n_initial: usize,
    pub n_added: usize,
    pub q1: usize,
    pub q2: usize,
    pub candidates: usize,
    /// Stop adding points once max c** falls to this.
    pub tolerance: f64,
    /// Simulator step, s.
    pub dt: f64,
    pub lambda_restarts: usize,
    pub seed: u64,
}

impl Default for Campaign {
    fn default() -> Self {
        Self {
            max_sources: 3,
            source_counts: vec![1, 2, 3],
            zones: (1..=7).collect(),
            sensors: (1..=6).collect(),
            amount: (0.07, 0.12),
            start: (0.0, 30.0),
            n_initial: 30,
            n_added: 10,
            q1: 5,
            q2: 5,
            candidates: 4096,
            tolerance: 0.05,
            dt: 1.0,
            lambda_restarts: 10,
            seed: 0,
        }
    }
}

impl Campaign {
    /// 121 initial points plus up to 29 added.
    pub fn full_scale() -> Self {
        Self { n_initial: 121, n_added: 29, ..Self::default() }
    }

    pub fn bounds(&self, net: &BuildingNetwork) -> Result<ParameterBounds> {
        ParameterBounds::new(net, self.max_sources, self.amount, self.start)
    }

    pub fn grid(&self) -> KnotGrid {
        KnotGrid::standard(self.q1, self.q2)
    }

    pub fn validate(&self, net: &BuildingNetwork) -> Result<()> {
        for &a in &self.source_counts {
            if a == 0 || a > self.max_sources {
                return invalid(format!("source count {a} outside 1..={}", self.max_sources));
            }
            if self.n_initial < 2 * a + 4 {
                return invalid(format!("{} initial points are too few for {a} source(s)", self.n_initial));
            }
        }
        for &z in self.zones.iter().chain(&self.sensors) {
            if z == 0 || z > net.n_zones() {
                return invalid(format!("zone {z} does not exist"));
            }
        }
        if self.q1 == 0 || self.q2 == 0 || self.candidates == 0 {
            return invalid("knot counts and candidate pool must be positive");
        }
        Ok(())
    }

    /// Hash of the campaign together with the building it runs on.
    pub fn hash(&self, net: &BuildingNetwork) -> String {
        config_hash(&(self, format!("{net:?}")))
    }

    fn pair_seed(&self, a: usize, b: usize) -> u64 {
        self.seed.wrapping_mul(0x5851_f42d_4c95_7f2d).wrapping_add((a * 1000 + b) as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignFailure {
    pub sources: usize,
    pub zone: usize,
    pub observed: Option<usize>,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct CampaignResult {
    pub models: Vec<EmulatorModel>,
    pub failures: Vec<CampaignFailure>,
    pub config_hash: String,
    pub campaign: Campaign,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    campaign: Campaign,
    archives: Vec<String>,
    failures: Vec<CampaignFailure>,
}

impl CampaignResult {
    /// Archives plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut archives = Vec::new();
        for m in &self.models {
            let name = m.index.file_name();
            m.save(&dir.join(&name))?;
            archives.push(name);
        }
        let man = Manifest {
            config_hash: self.config_hash.clone(),
            campaign: self.campaign.clone(),
            archives,
            failures: self.failures.clone(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&man)?)?;
        Ok(())
    }

    /// Every archive listed in `dir/manifest.json`.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|_| Error::MissingArtifact {
            path: path.display().to_string(),
            hint: "run `zonegp train-emulator` to produce an emulator directory".into(),
        })?;
        let man: Manifest = serde_json::from_str(&text)?;
        let models = man.archives.iter().map(|a| EmulatorModel::load(&dir.join(a))).collect::<Result<Vec<_>>>()?;
        Ok(Self { models, failures: man.failures, config_hash: man.config_hash, campaign: man.campaign })
    }
}

/// Simulated knot values at a unit-box design point, one row pair per sensor.
struct PairSimulator<'a> {
    sim: Simulator,
    design_bounds: Vec<(f64, f64)>,
    grid: &'a KnotGrid,
    sensors: &'a [usize],
    zone: usize,
    cache: HashMap<Vec<u64>, (Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl PairSimulator<'_> {
    fn run(&mut self, p: &[f64]) -> Result<&(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        if !self.cache.contains_key(&key) {
            let x: Vec<f64> = p.iter().zip(&self.design_bounds).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect();
            let a = (x.len() - 2) / 2;
            let sc = SourceScenario {
                zone: self.zone,
                amount: x[2 * a],
                start: x[2 * a + 1],
                locations: (0..a).map(|i| (x[2 * i], x[2 * i + 1])).collect(),
            };
            let times: Vec<f64> = self.grid.stage1.iter().chain(&self.grid.stage2).map(|t| sc.start + t).collect();
            let rows = self.sim.concentrations_at(&sc, &times)?;
            let q1 = self.grid.stage1.len();
            let per = |c: usize, r: std::ops::Range<usize>| r.map(|i| rows[i][c - 1]).collect::<Vec<f64>>();
            let d1 = self.sensors.iter().map(|&c| per(c, 0..q1)).collect();
            let d2 = self.sensors.iter().map(|&c| per(c, q1..times.len())).collect();
            self.cache.insert(key.clone(), (d1, d2));
        }
        Ok(&self.cache[&key])
    }
}

/// Emulators for every sensor zone of one (a, b): LHS initial design, λ MPE
/// on the stage-1 outputs, sequential augmentation by maximum c** with λ
/// fixed, then both stage fits.
pub fn train_pair(net: &BuildingNetwork, campaign: &Campaign, a: usize, b: usize) -> Vec<Result<EmulatorModel>> {
    let prepared = (|| -> Result<_> {
        campaign.validate(net)?;
        let bounds = campaign.bounds(net)?.theta_bounds(a, b);
        let sim = Simulator::new(&net.with_cfd_zone(Some(b)), campaign.dt)?;
        Ok((bounds, sim))
    })();
    let (bounds, sim) = match prepared {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            return campaign.sensors.iter().map(|_| Err(Error::Invalid(msg.clone()))).collect();
        }
    };
    let grid = campaign.grid();
    let hash = campaign.hash(net);
    let seed = campaign.pair_seed(a, b);
    let dim = 2 * a + 2;
    let mut ps =
        PairSimulator { sim, design_bounds: bounds.clone(), grid: &grid, sensors: &campaign.sensors, zone: b, cache: HashMap::new() };
    let initial = lhs_design(campaign.n_initial, dim, seed);
    let pool = lhs_design(campaign.candidates, dim, seed ^ 0xa076_1d64_78bd_642f);
    for p in &initial {
        if let Err(e) = ps.run(p) {
            let msg = e.to_string();
            return campaign.sensors.iter().map(|_| Err(Error::Invalid(msg.clone()))).collect();
        }
    }
    let mut out = Vec::with_capacity(campaign.sensors.len());
    for (k, &c) in campaign.sensors.iter().enumerate() {
        let res = (|| -> Result<EmulatorModel> {
            let mut points = initial.clone();
            let rows1 = |ps: &mut PairSimulator, pts: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
                pts.iter().map(|p| Ok(ps.run(p)?.0[k].clone())).collect()
            };
            let d1 = rows1(&mut ps, &points)?;
            let to_m = |rows: &[Vec<f64>]| DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
            let search =
                LambdaSearch { restarts: campaign.lambda_restarts, seed: seed.wrapping_add(c as u64), ..Default::default() };
            let lambda = estimate_lambda_mpe(&points, &to_m(&d1), &search)?;
            let mut used = vec![false; pool.len()];
            for _ in 0..campaign.n_added {
                // GLS estimates are refreshed on the grown design; c** itself
                // depends only on the design and λ
                let d1 = rows1(&mut ps, &points)?;
                let fit = fit_gls(&points, &to_m(&d1), &lambda)?;
                let avail: Vec<usize> = (0..pool.len()).filter(|i| !used[*i]).collect();
                let cands: Vec<Vec<f64>> = avail.iter().map(|&i| pool[i].clone()).collect();
                let (j, cmax) = select_next_design(&fit, &cands)?;
                if cmax <= campaign.tolerance {
                    break;
                }
                used[avail[j]] = true;
                points.push(cands[j].clone());
            }
            let d1 = rows1(&mut ps, &points)?;
            let d2: Vec<Vec<f64>> = points.iter().map(|p| Ok(ps.run(p)?.1[k].clone())).collect::<Result<_>>()?;
            let design = DesignSet::new(points, bounds.clone())?;
            let idx = EmulatorIndex { sources: a, zone: b, observed: c };
            EmulatorModel::fit(idx, design, grid.clone(), d1, d2, &lambda, hash.clone(), seed)
        })();
        out.push(res);
    }
    out
}

/// Every (a, b, c) of the campaign, (a, b) pairs spread over
/// [`worker_count`] threads. Failures are collected, not fatal.
pub fn train_campaign(net: &BuildingNetwork, campaign: &Campaign) -> Result<CampaignResult> {
    campaign.validate(net)?;
    let pairs: Vec<(usize, usize)> =
        campaign.source_counts.iter().flat_map(|&a| campaign.zones.iter().map(move |&b| (a, b))).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Vec<Result<EmulatorModel>>)>> = Mutex::new(Vec::new());
    let workers = worker_count().min(pairs.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(a, b)) = pairs.get(i) else { break };
                let r = train_pair(net, campaign, a, b);
                results.lock().expect("worker panicked").push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("worker panicked");
    results.sort_by_key(|(i, _)| *i);
    let mut models = Vec::new();
    let mut failures = Vec::new();
    for (i, rs) in results {
        let (a, b) = pairs[i];
        for (r, &c) in rs.into_iter().zip(&campaign.sensors) {
            match r {
                Ok(m) => models.push(m),
                Err(e) => {
                    log::warn!("emulator (a={a}, b={b}, c={c}) failed: {e}");
                    failures.push(CampaignFailure { sources: a, zone: b, observed: Some(c), error: e.to_string() })
                }
            }
        }
    }
    Ok(CampaignResult { models, failures, config_hash: campaign.hash(net), campaign: campaign.clone() })
}
