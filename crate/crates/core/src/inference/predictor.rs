use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::emulator::{EmulatorIndex, EmulatorModel};
use crate::error::{Error, Result};
use crate::netflow::BuildingNetwork;
use crate::scenario::SourceScenario;
use crate::simulator::Simulator;

/// Forward model seen by the posterior: concentrations (g/kg) for a source
/// hypothesis with `a` active sources, as `[zone][time]`.
pub trait Predictor: Sync {
    fn predict(&self, a: usize, sc: &SourceScenario, zones: &[usize], times: &[f64]) -> Result<Vec<Vec<f64>>>;

    /// Predictive variance, when the backend has one.
    fn predict_variance(
        &self,
        _a: usize,
        _sc: &SourceScenario,
        _zones: &[usize],
        _times: &[f64],
    ) -> Result<Option<Vec<Vec<f64>>>> {
        Ok(None)
    }

    fn name(&self) -> &'static str;
}

/// Runs the simulator, resolving the hypothesized source zone on the grid.
/// One simulator (flow field and step operators) is built lazily per zone.
pub struct DirectPredictor {
    base: BuildingNetwork,
    dt: f64,
    sims: Vec<OnceLock<std::result::Result<Simulator, String>>>,
}

impl DirectPredictor {
    pub fn new(net: &BuildingNetwork, dt: f64) -> Self {
        let sims = (0..net.zones.len()).map(|_| OnceLock::new()).collect();
        Self { base: net.clone(), dt, sims }
    }

    pub fn simulator(&self, zone: usize) -> Result<&Simulator> {
        let cell = self.sims.get(zone).ok_or_else(|| Error::Invalid(format!("zone {zone} does not exist")))?;
        cell.get_or_init(|| Simulator::new(&self.base.with_cfd_zone(Some(zone)), self.dt).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Invalid(e.clone()))
    }
}

impl Predictor for DirectPredictor {
    fn predict(&self, a: usize, sc: &SourceScenario, zones: &[usize], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut sc = sc.clone();
        sc.locations.truncate(a);
        let sim = self.simulator(sc.zone)?;
        let rows = sim.concentrations_at(&sc, times)?;
        Ok(zones.iter().map(|&z| rows.iter().map(|r| r[z - 1]).collect()).collect())
    }

    fn name(&self) -> &'static str {
        "direct"
    }
}

/// Emulator means m** reconstructed in time; zero before activation and held
/// at the end of the emulated window beyond it.
#[derive(Default)]
pub struct EmulatorPredictor {
    pub models: BTreeMap<EmulatorIndex, EmulatorModel>,
}

impl EmulatorPredictor {
    pub fn new(models: impl IntoIterator<Item = EmulatorModel>) -> Self {
        Self { models: models.into_iter().map(|m| (m.index, m)).collect() }
    }

    pub fn model(&self, a: usize, b: usize, c: usize) -> Result<&EmulatorModel> {
        let idx = EmulatorIndex { sources: a, zone: b, observed: c };
        self.models.get(&idx).ok_or_else(|| Error::MissingArtifact {
            path: idx.file_name(),
            hint: format!("train emulators for zone {b} with {a} source(s)"),
        })
    }

    fn physical(a: usize, sc: &SourceScenario) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * a + 2);
        for &(px, py) in sc.locations.iter().take(a) {
            x.push(px);
            x.push(py);
        }
        x.push(sc.amount);
        x.push(sc.start);
        x
    }

    fn run(
        &self,
        a: usize,
        sc: &SourceScenario,
        zones: &[usize],
        times: &[f64],
        variance: bool,
    ) -> Result<Vec<Vec<f64>>> {
        let phys = Self::physical(a, sc);
        let mut out = Vec::with_capacity(zones.len());
        for &c in zones {
            let m = self.model(a, sc.zone, c)?;
            let theta = m.design.normalize(&phys);
            let (mu1, mu2) = m.predict_knots(&theta);
            let scale = if variance { m.stage1.predict(&theta).cov_scale } else { 0.0 };
            let (_, hi) = m.grid.range();
            let mut row = Vec::with_capacity(times.len());
            for &t in times {
                let tau = t - sc.start;
                if tau <= 0.0 {
                    row.push(0.0);
                    continue;
                }
                let (mu, nu) = m.temporal.reconstruct(&mu1, &mu2, tau.min(hi))?;
                if variance {
                    let stage = if m.temporal.owns_stage1(tau) { &m.stage1 } else { &m.stage2 };
                    let s = stage.sigma_hat();
                    let mean_diag = (0..s.nrows()).map(|i| s[(i, i)]).sum::<f64>() / s.nrows() as f64;
                    row.push(scale * mean_diag + nu);
                } else {
                    row.push(mu);
                }
            }
            out.push(row);
        }
        Ok(out)
    }
}

impl Predictor for EmulatorPredictor {
    fn predict(&self, a: usize, sc: &SourceScenario, zones: &[usize], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.run(a, sc, zones, times, false)
    }

    fn predict_variance(
        &self,
        a: usize,
        sc: &SourceScenario,
        zones: &[usize],
        times: &[f64],
    ) -> Result<Option<Vec<Vec<f64>>>> {
        self.run(a, sc, zones, times, true).map(Some)
    }

    fn name(&self) -> &'static str {
        "emulator"
    }
}
