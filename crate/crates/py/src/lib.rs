//! Python bindings: buildings, forward simulation, synthetic observations,
//! emulator campaigns and posterior sampling.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use zonegp::emulator::{estimate_lambda_mpe, fit_gls, GlsFit, LambdaSearch};
use zonegp::harness::{self, Campaign, CampaignResult};
use zonegp::inference::{
    posterior_summaries, DirectPredictor, DiscrepancyConfig, EmulatorPredictor, McmcOptions, Observation,
    ObservationSet, PhiPrior, Posterior, Predictor,
};
use zonegp::netflow::BuildingNetwork;
use zonegp::scenario::SourceScenario;
use zonegp::sensornet::{detect, SensorDeployment};
use zonegp::simulator::Simulator;
use zonegp::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::MissingArtifact { .. } => PyFileNotFoundError::new_err(e.to_string()),
        Error::Invalid(_) | Error::Config(_) | Error::OutOfRange(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A multizone building network.
#[pyclass(name = "Building", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBuilding {
    net: BuildingNetwork,
}

#[pymethods]
impl PyBuilding {
    /// The shipped seven-room building.
    #[staticmethod]
    fn seven_room() -> Self {
        Self { net: BuildingNetwork::seven_room() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        BuildingNetwork::from_toml(text).map(|net| Self { net }).map_err(err)
    }

    #[getter]
    fn n_zones(&self) -> usize {
        self.net.n_zones()
    }

    fn zone_names(&self) -> Vec<String> {
        self.net.interior_ids().map(|z| self.net.zone(z).name.clone()).collect()
    }

    /// Floor (width, depth) of a zone, m.
    fn zone_dims(&self, zone: usize) -> PyResult<(f64, f64)> {
        if zone == 0 || zone > self.net.n_zones() {
            return Err(PyValueError::new_err(format!("no zone {zone}")));
        }
        let d = self.net.zone(zone).floor_dims;
        Ok((d[0], d[1]))
    }

    fn adjacent(&self, zone: usize) -> Vec<usize> {
        self.net.adjacent(zone)
    }
}

/// Sources sharing one zone, release rate (g/s each) and start (min).
#[pyclass(name = "Scenario", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    sc: SourceScenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    fn new(zone: usize, amount: f64, start: f64, locations: Vec<(f64, f64)>) -> Self {
        Self { sc: SourceScenario { zone, amount, start, locations } }
    }

    /// Two hallway sources at 0.09 g/s from minute 18.
    #[staticmethod]
    fn reference() -> Self {
        Self { sc: SourceScenario::reference() }
    }

    #[getter]
    fn zone(&self) -> usize {
        self.sc.zone
    }
    #[getter]
    fn amount(&self) -> f64 {
        self.sc.amount
    }
    #[getter]
    fn start(&self) -> f64 {
        self.sc.start
    }
    #[getter]
    fn locations(&self) -> Vec<(f64, f64)> {
        self.sc.locations.clone()
    }

    fn __repr__(&self) -> String {
        format!("Scenario(zone={}, amount={}, start={}, locations={:?})", self.sc.zone, self.sc.amount, self.sc.start, self.sc.locations)
    }
}

/// Simulates `scenario` and returns (minutes, concentrations[time][zone])
/// in g/kg. The grid-resolved zone defaults to the source zone.
#[pyfunction]
#[pyo3(signature = (building, scenario, horizon, dt = 1.0, cfd_zone = None))]
fn simulate(
    py: Python<'_>,
    building: &PyBuilding,
    scenario: &PyScenario,
    horizon: f64,
    dt: f64,
    cfd_zone: Option<usize>,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let net = building.net.with_cfd_zone(Some(cfd_zone.unwrap_or(scenario.sc.zone)));
    py.detach(|| {
        let tr = Simulator::new(&net, dt)?.trace(&scenario.sc, horizon)?;
        Ok((tr.times, tr.concentrations))
    })
    .map_err(err)
}

/// Noisy readings in `sensors` every minute over [0, horizon]; returns
/// (records as (zone, minute, value, noise_sd), (detect zone, detect minute)).
#[pyfunction]
#[pyo3(signature = (building, scenario, sensors, horizon = 40.0, seed = 0, noise = true, noise_fraction = 0.01, noise_floor = 1e-5))]
#[allow(clippy::too_many_arguments)]
fn make_observations(
    py: Python<'_>,
    building: &PyBuilding,
    scenario: &PyScenario,
    sensors: Vec<usize>,
    horizon: f64,
    seed: u64,
    noise: bool,
    noise_fraction: f64,
    noise_floor: f64,
) -> PyResult<(Vec<(usize, f64, f64, f64)>, (usize, f64))> {
    py.detach(|| {
        let dep = SensorDeployment::new(sensors, noise_fraction, noise_floor)?;
        let data = harness::make_observations(&building.net, &scenario.sc, &dep, horizon, None, noise, seed)?;
        let det = detect(&data.sensed, &dep)?;
        let recs = data.observations.records.iter().map(|r| (r.zone, r.time, r.value, r.noise_sd)).collect();
        Ok((recs, (det.zone, det.time)))
    })
    .map_err(err)
}

/// A trained set of emulators, one per (source count, zone, sensor zone).
#[pyclass(name = "Emulators", frozen)]
struct PyEmulators {
    result: CampaignResult,
    predictor: EmulatorPredictor,
}

impl PyEmulators {
    fn wrap(result: CampaignResult) -> Self {
        let predictor = EmulatorPredictor::new(result.models.clone());
        Self { result, predictor }
    }
}

#[pymethods]
impl PyEmulators {
    /// Trains a campaign; unspecified settings use the desk-scale defaults.
    #[staticmethod]
    #[pyo3(signature = (building, zones = None, source_counts = None, sensors = None, n_initial = None, n_added = None, seed = 0))]
    fn train(
        py: Python<'_>,
        building: &PyBuilding,
        zones: Option<Vec<usize>>,
        source_counts: Option<Vec<usize>>,
        sensors: Option<Vec<usize>>,
        n_initial: Option<usize>,
        n_added: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let d = Campaign::default();
        let c = Campaign {
            zones: zones.unwrap_or(d.zones.clone()),
            source_counts: source_counts.unwrap_or(d.source_counts.clone()),
            sensors: sensors.unwrap_or(d.sensors.clone()),
            n_initial: n_initial.unwrap_or(d.n_initial),
            n_added: n_added.unwrap_or(d.n_added),
            seed,
            ..d
        };
        py.detach(|| harness::train_campaign(&building.net, &c)).map(Self::wrap).map_err(err)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        CampaignResult::load(&dir).map(Self::wrap).map_err(err)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.result.save(&dir).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.result.models.len()
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.result.config_hash.clone()
    }

    /// (max |interpolation error|, max c**) over every emulator's design.
    fn interpolation_error(&self) -> (f64, f64) {
        self.result
            .models
            .iter()
            .map(|m| m.interpolation_error())
            .fold((0.0, 0.0), |(a, b), (e, c)| (f64::max(a, e), f64::max(b, c)))
    }

    /// Predicted concentrations[zone][time] (g/kg).
    fn predict(&self, scenario: &PyScenario, zones: Vec<usize>, times: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.predictor.predict(scenario.sc.count(), &scenario.sc, &zones, &times).map_err(err)
    }
}

/// Samples the source posterior given observation records
/// (zone, minute, value, noise_sd). Uses `emulators` unless `direct` is set.
/// Returns a dict with p_zone, p_sources, S_a/S_t moments and acceptance.
#[pyfunction]
#[pyo3(signature = (building, observations, emulators = None, samples = 6000, burn = 3000, seed = 0, direct = false, discrepancy = 0.02))]
#[allow(clippy::too_many_arguments)]
fn infer<'py>(
    py: Python<'py>,
    building: &PyBuilding,
    observations: Vec<(usize, f64, f64, f64)>,
    emulators: Option<&PyEmulators>,
    samples: usize,
    burn: usize,
    seed: u64,
    direct: bool,
    discrepancy: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let recs = observations.into_iter().map(|(zone, time, value, noise_sd)| Observation { zone, time, value, noise_sd }).collect();
    let obs = ObservationSet::new(recs).map_err(err)?;
    let campaign = emulators.map_or_else(Campaign::default, |e| e.result.campaign.clone());
    let direct_pred;
    let predictor: &dyn Predictor = match (direct, emulators) {
        (false, Some(e)) => &e.predictor,
        (false, None) => return Err(PyValueError::new_err("pass emulators or direct=True")),
        (true, _) => {
            direct_pred = DirectPredictor::new(&building.net, campaign.dt);
            &direct_pred
        }
    };
    let (sum, acc) = py
        .detach(|| -> zonegp::Result<_> {
            let bounds = campaign.bounds(&building.net)?;
            let disc = DiscrepancyConfig::from_peaks(&obs, discrepancy);
            let post = Posterior::new(bounds.clone(), &obs, &disc, PhiPrior::Uniform, predictor)?;
            let chain = post.sample(&McmcOptions::new(bounds.phi_dim(), burn + samples, burn, seed), 200, &[])?;
            Ok((posterior_summaries(&chain, &bounds), chain.acceptance_rate))
        })
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("p_zone", sum.zone.clone())?;
    d.set_item("p_sources", sum.sources.clone())?;
    d.set_item("amount_mean", sum.amount_mean)?;
    d.set_item("amount_sd", sum.amount_sd)?;
    d.set_item("start_mean", sum.start_mean)?;
    d.set_item("start_sd", sum.start_sd)?;
    d.set_item("acceptance_rate", acc)?;
    Ok(d)
}

/// A multi-output GP fitted for fixed correlation parameters.
#[pyclass(name = "GaussianProcess", frozen)]
struct PyGp {
    fit: GlsFit,
}

#[pymethods]
impl PyGp {
    /// `outputs[i]` holds the q outputs at `points[i]`. λ defaults to the
    /// maximum-posterior estimate.
    #[new]
    #[pyo3(signature = (points, outputs, correlation = None))]
    fn new(points: Vec<Vec<f64>>, outputs: Vec<Vec<f64>>, correlation: Option<Vec<f64>>) -> PyResult<Self> {
        let q = outputs.first().map_or(0, |r| r.len());
        if outputs.len() != points.len() || outputs.iter().any(|r| r.len() != q) {
            return Err(PyValueError::new_err("outputs must be an n × q table matching points"));
        }
        let d = nalgebra::DMatrix::from_fn(outputs.len(), q, |i, j| outputs[i][j]);
        let lambda = match correlation {
            Some(l) => l,
            None => estimate_lambda_mpe(&points, &d, &LambdaSearch::default()).map_err(err)?,
        };
        fit_gls(&points, &d, &lambda).map(|fit| Self { fit }).map_err(err)
    }

    #[getter]
    fn correlation(&self) -> Vec<f64> {
        self.fit.lambda.clone()
    }

    /// (mean, c**) at θ.
    fn predict(&self, theta: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
        if theta.len() != self.fit.lambda.len() {
            return Err(PyValueError::new_err("θ has the wrong dimension"));
        }
        let p = self.fit.predict(&theta);
        Ok((p.mean, p.cov_scale))
    }
}

#[pymodule]
fn zonegp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBuilding>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyEmulators>()?;
    m.add_class::<PyGp>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(make_observations, m)?)?;
    m.add_function(wrap_pyfunction!(infer, m)?)?;
    Ok(())
}
