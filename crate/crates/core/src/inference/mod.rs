//! Bayesian source characterization: the posterior over source count, zone,
//! coordinates, release rate and activation time, sampled by
//! Metropolis–Hastings in a normalized parameter space.

mod mcmc;
mod predictor;
mod summary;

pub use crate::scenario::SourceScenario;
pub use mcmc::{mh_sample, McmcOptions, PosteriorChain};
pub use predictor::{DirectPredictor, EmulatorPredictor, Predictor};
pub use summary::{
    continuous_marginals, ks_statistic, posterior_summaries, total_variation, Histogram, LocationDensity, PosteriorSummary,
};

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Chol;
use crate::netflow::BuildingNetwork;

/// One sensor reading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub zone: usize,
    /// min
    pub time: f64,
    /// g/kg
    pub value: f64,
    pub noise_sd: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub records: Vec<Observation>,
}

impl ObservationSet {
    pub fn new(records: Vec<Observation>) -> Result<Self> {
        let s = Self { records };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            if !(r.noise_sd > 0.0) {
                return invalid(format!("noise sd must be positive (zone {}, t = {})", r.zone, r.time));
            }
            if (r.time - r.time.round()).abs() > 1e-9 {
                return invalid(format!("observation time {} is off the 1-min grid", r.time));
            }
            if !r.value.is_finite() {
                return invalid("non-finite observation");
            }
        }
        Ok(())
    }

    /// Sensor zones in ascending order.
    pub fn sensor_zones(&self) -> Vec<usize> {
        let mut z: Vec<usize> = self.records.iter().map(|r| r.zone).collect();
        z.sort_unstable();
        z.dedup();
        z
    }

    /// Distinct observation times in ascending order.
    pub fn times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.records.iter().map(|r| r.time).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    /// Records of one zone sorted by time.
    pub fn zone_records(&self, zone: usize) -> Vec<Observation> {
        let mut r: Vec<Observation> = self.records.iter().filter(|r| r.zone == zone).copied().collect();
        r.sort_by(|a, b| a.time.total_cmp(&b.time));
        r
    }

    pub fn filter(&self, keep: impl Fn(&Observation) -> bool) -> Self {
        Self { records: self.records.iter().filter(|r| keep(r)).copied().collect() }
    }

    pub fn is_all_zero(&self) -> bool {
        self.records.iter().all(|r| r.value == 0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("zone,time_min,value,noise_sd\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{}\n", r.zone, r.time, r.value, r.noise_sd));
        }
        s
    }

    /// Parses the CSV written by [`ObservationSet::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            zone: usize,
            time_min: f64,
            value: f64,
            noise_sd: f64,
        }
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut records = Vec::new();
        for row in rd.deserialize::<Row>() {
            let r = row.map_err(|e| Error::Config(format!("observation CSV: {e}")))?;
            records.push(Observation { zone: r.zone, time: r.time_min, value: r.value, noise_sd: r.noise_sd });
        }
        Self::new(records)
    }
}

/// Fixed discrepancy GP per sensor zone: σ²_δ exp(−λ (t − t')²).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneDiscrepancy {
    pub sigma2: f64,
    /// 1/min²
    pub lambda: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyConfig {
    pub zones: BTreeMap<usize, ZoneDiscrepancy>,
}

impl DiscrepancyConfig {
    /// σ_δ = `fraction` of each zone's peak observed value, λ = 1/25 min⁻².
    pub fn from_peaks(obs: &ObservationSet, fraction: f64) -> Self {
        let zones = obs
            .sensor_zones()
            .into_iter()
            .map(|z| {
                let peak = obs.zone_records(z).iter().fold(0.0f64, |m, r| m.max(r.value.abs()));
                (z, ZoneDiscrepancy { sigma2: (fraction * peak).powi(2), lambda: 1.0 / 25.0 })
            })
            .collect();
        Self { zones }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn get(&self, zone: usize) -> ZoneDiscrepancy {
        self.zones.get(&zone).copied().unwrap_or(ZoneDiscrepancy { sigma2: 0.0, lambda: 1.0 / 25.0 })
    }

    /// Σ_δ + diag(σ_e²) over one zone's records.
    pub fn covariance(&self, zone: usize, records: &[Observation]) -> DMatrix<f64> {
        let d = self.get(zone);
        let n = records.len();
        DMatrix::from_fn(n, n, |i, j| {
            let dt = records[i].time - records[j].time;
            let mut v = d.sigma2 * (-d.lambda * dt * dt).exp();
            if i == j {
                v += records[i].noise_sd * records[i].noise_sd;
            }
            v
        })
    }
}

/// Observations with their per-zone covariance factorizations, which do not
/// depend on θ.
#[derive(Clone, Debug)]
pub struct Likelihood {
    pub obs: ObservationSet,
    pub zones: Vec<usize>,
    pub times: Vec<f64>,
    blocks: Vec<(Vec<Observation>, Chol)>,
}

impl Likelihood {
    pub fn new(obs: &ObservationSet, disc: &DiscrepancyConfig) -> Result<Self> {
        obs.validate()?;
        let zones = obs.sensor_zones();
        let mut blocks = Vec::with_capacity(zones.len());
        for &z in &zones {
            let recs = obs.zone_records(z);
            let c = Chol::new(&disc.covariance(z, &recs)).map_err(|_| Error::IllConditioned(f64::INFINITY))?;
            blocks.push((recs, c));
        }
        Ok(Self { obs: obs.clone(), zones, times: obs.times(), blocks })
    }

    /// `predicted[k][i]`: concentration of `self.zones[k]` at `self.times[i]`.
    pub fn evaluate(&self, predicted: &[Vec<f64>]) -> f64 {
        let mut ll = 0.0;
        for (k, (recs, chol)) in self.blocks.iter().enumerate() {
            let mut d: Vec<f64> = recs
                .iter()
                .map(|r| {
                    let i = self.times.partition_point(|t| *t < r.time);
                    r.value - predicted[k][i]
                })
                .collect();
            chol.forward(&mut d);
            let quad: f64 = d.iter().map(|v| v * v).sum();
            ll += -0.5 * chol.log_det() - 0.5 * quad;
        }
        ll
    }
}

/// Σ_j [−½ ln|Σ_j| − ½ d_jᵀ Σ_j⁻¹ d_j] with d_j = y_e − prediction, summed
/// over sensor zones (ascending id); `predicted` is indexed as in
/// [`Likelihood::evaluate`].
pub fn log_likelihood(obs: &ObservationSet, predicted: &[Vec<f64>], disc: &DiscrepancyConfig) -> Result<f64> {
    let lk = Likelihood::new(obs, disc)?;
    if predicted.len() != lk.zones.len() || predicted.iter().any(|p| p.len() != lk.times.len()) {
        return invalid("prediction does not cover every observation");
    }
    Ok(lk.evaluate(predicted))
}

/// Physical ranges of the uncertain parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds {
    /// N_s
    pub max_sources: usize,
    /// Candidate source zones, in r_z order.
    pub zones: Vec<usize>,
    /// Floor dimensions (w, d) of each candidate zone.
    pub zone_dims: Vec<(f64, f64)>,
    /// I_a, g/s per source
    pub amount: (f64, f64),
    /// I_t, min
    pub start: (f64, f64),
}

impl ParameterBounds {
    pub fn new(net: &BuildingNetwork, max_sources: usize, amount: (f64, f64), start: (f64, f64)) -> Result<Self> {
        if max_sources == 0 {
            return invalid("at least one source must be allowed");
        }
        if !(amount.1 > amount.0) || !(start.1 > start.0) {
            return invalid("parameter ranges must have positive width");
        }
        let zones: Vec<usize> = net.interior_ids().collect();
        let zone_dims = zones.iter().map(|&z| (net.zone(z).floor_dims[0], net.zone(z).floor_dims[1])).collect();
        Ok(Self { max_sources, zones, zone_dims, amount, start })
    }

    pub fn n_zones(&self) -> usize {
        self.zones.len()
    }

    /// Length of φ: r_s, r_z, N_s location pairs, S_a, S_t.
    pub fn phi_dim(&self) -> usize {
        4 + 2 * self.max_sources
    }

    pub fn zone_area(&self, zone: usize) -> Option<f64> {
        self.zones.iter().position(|z| *z == zone).map(|k| self.zone_dims[k].0 * self.zone_dims[k].1)
    }

    /// Unit-box emulator input for `a` sources: location pairs normalized to
    /// the zone box, then S_a, then S_t.
    pub fn theta(&self, a: usize, sc: &SourceScenario) -> Vec<f64> {
        let k = self.zones.iter().position(|z| *z == sc.zone).unwrap_or(0);
        let (w, d) = self.zone_dims[k];
        let mut th = Vec::with_capacity(2 * a + 2);
        for &(x, y) in sc.locations.iter().take(a) {
            th.push(x / w);
            th.push(y / d);
        }
        th.push((sc.amount - self.amount.0) / (self.amount.1 - self.amount.0));
        th.push((sc.start - self.start.0) / (self.start.1 - self.start.0));
        th
    }

    /// Physical bounds matching [`ParameterBounds::theta`].
    pub fn theta_bounds(&self, a: usize, zone: usize) -> Vec<(f64, f64)> {
        let k = self.zones.iter().position(|z| *z == zone).unwrap_or(0);
        let (w, d) = self.zone_dims[k];
        let mut b = Vec::with_capacity(2 * a + 2);
        for _ in 0..a {
            b.push((0.0, w));
            b.push((0.0, d));
        }
        b.push(self.amount);
        b.push(self.start);
        b
    }
}

fn index_of(u: f64, n: usize) -> usize {
    // int(u·n + 1), with u = 1 clamped into the last class
    ((u * n as f64 + 1.0).floor() as usize).clamp(1, n)
}

/// (a, b, scenario) from φ ∈ [0, 1]^dim. Location pairs beyond the a-th are
/// ignored.
pub fn decode(phi: &[f64], bounds: &ParameterBounds) -> (usize, usize, SourceScenario) {
    let ns = bounds.max_sources;
    let a = index_of(phi[0], ns);
    let k = index_of(phi[1], bounds.n_zones()) - 1;
    let zone = bounds.zones[k];
    let (w, d) = bounds.zone_dims[k];
    let locations = (0..a).map(|i| (phi[2 + 2 * i] * w, phi[3 + 2 * i] * d)).collect();
    let amount = bounds.amount.0 + phi[2 + 2 * ns] * (bounds.amount.1 - bounds.amount.0);
    let start = bounds.start.0 + phi[3 + 2 * ns] * (bounds.start.1 - bounds.start.0);
    (a, zone, SourceScenario { zone, amount, start, locations })
}

/// Inverse of [`decode`] for the active components; inert pairs are set to
/// the zone centre.
pub fn encode(sc: &SourceScenario, bounds: &ParameterBounds) -> Result<Vec<f64>> {
    let ns = bounds.max_sources;
    let a = sc.count();
    let Some(k) = bounds.zones.iter().position(|z| *z == sc.zone) else {
        return invalid(format!("zone {} is not a candidate source zone", sc.zone));
    };
    if a == 0 || a > ns {
        return invalid("source count out of range");
    }
    let (w, d) = bounds.zone_dims[k];
    let mut phi = vec![0.5; bounds.phi_dim()];
    phi[0] = (a as f64 - 0.5) / ns as f64;
    phi[1] = (k as f64 + 0.5) / bounds.n_zones() as f64;
    for (i, &(x, y)) in sc.locations.iter().enumerate() {
        phi[2 + 2 * i] = x / w;
        phi[3 + 2 * i] = y / d;
    }
    phi[2 + 2 * ns] = (sc.amount - bounds.amount.0) / (bounds.amount.1 - bounds.amount.0);
    phi[3 + 2 * ns] = (sc.start - bounds.start.0) / (bounds.start.1 - bounds.start.0);
    Ok(phi)
}

/// ln p(θ): uniform source count, uniform zone, uniform location over the
/// zone floor per active source, uniform S_a and S_t; −∞ off support.
pub fn log_prior(a: usize, sc: &SourceScenario, bounds: &ParameterBounds) -> f64 {
    let Some(area) = bounds.zone_area(sc.zone) else {
        return f64::NEG_INFINITY;
    };
    let k = bounds.zones.iter().position(|z| *z == sc.zone).unwrap();
    let (w, d) = bounds.zone_dims[k];
    let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
    if a == 0
        || a > bounds.max_sources
        || sc.count() != a
        || !inside(sc.amount, bounds.amount)
        || !inside(sc.start, bounds.start)
        || sc.locations.iter().any(|&(x, y)| !inside(x, (0.0, w)) || !inside(y, (0.0, d)))
    {
        return f64::NEG_INFINITY;
    }
    let ia = bounds.amount.1 - bounds.amount.0;
    let it = bounds.start.1 - bounds.start.0;
    -(bounds.max_sources as f64).ln() - (bounds.n_zones() as f64).ln() - a as f64 * area.ln() - (ia * it).ln()
}

/// ln of the Jacobian |∂θ/∂φ| of the decode map on the cell containing θ,
/// so that ln p(θ) + ln J is the prior density over φ.
pub fn log_jacobian(a: usize, sc: &SourceScenario, bounds: &ParameterBounds) -> f64 {
    let area = bounds.zone_area(sc.zone).unwrap_or(f64::NAN);
    let ia = bounds.amount.1 - bounds.amount.0;
    let it = bounds.start.1 - bounds.start.0;
    (bounds.max_sources as f64).ln() + (bounds.n_zones() as f64).ln() + a as f64 * area.ln() + (ia * it).ln()
}

/// Prior over φ used by the sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PhiPrior {
    /// The uniform prior over θ carried to φ.
    Uniform,
    /// Independent empirical marginals from an earlier posterior.
    Empirical(EmpiricalPrior),
}

/// Piecewise-constant density on [0, 1]: equal-width bins over [lo, hi] and
/// the floor value outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedDensity {
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
    pub outside: f64,
}

impl BinnedDensity {
    /// Histogram of `xs` over their range padded by a quarter of the span on
    /// each side (clamped to [0, 1]), so the bins resolve the samples rather
    /// than the whole prior box. Bin densities are floored at `floor` and the
    /// whole is normalized over [0, 1].
    pub fn from_samples(xs: &[f64], bins: usize, floor: f64) -> Self {
        let (min, max) = xs.iter().fold((1.0f64, 0.0f64), |(a, b), x| (a.min(*x), b.max(*x)));
        let (min, max) = if min > max { (0.0, 1.0) } else { (min, max) };
        let pad = (0.25 * (max - min)).max(1e-3);
        let (lo, hi) = ((min - pad).max(0.0), (max + pad).min(1.0));
        let width = (hi - lo) / bins as f64;
        let mut h = vec![0.0; bins];
        for x in xs {
            h[(((x - lo) / width) as usize).min(bins - 1)] += 1.0;
        }
        let n = xs.len().max(1) as f64;
        let mut values: Vec<f64> = h.iter().map(|c| (c / (n * width)).max(floor)).collect();
        let z = values.iter().sum::<f64>() * width + floor * (1.0 - (hi - lo));
        values.iter_mut().for_each(|d| *d /= z);
        Self { lo, hi, values, outside: floor / z }
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return self.outside;
        }
        let bins = self.values.len();
        self.values[(((x - self.lo) / (self.hi - self.lo) * bins as f64) as usize).min(bins - 1)]
    }
}

/// Categorical priors on a and b and piecewise-constant densities on every
/// continuous φ component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPrior {
    /// p(a = k + 1)
    pub sources: Vec<f64>,
    /// p(b = zones[k])
    pub zones: Vec<f64>,
    /// Densities for φ components 2..
    pub densities: Vec<BinnedDensity>,
}

impl EmpiricalPrior {
    /// Categorical smoothing `alpha`, `bins` histogram bins, density floor
    /// `floor`, all from the retained samples of a chain.
    pub fn from_chain(chain: &PosteriorChain, bounds: &ParameterBounds, alpha: f64, bins: usize, floor: f64) -> Self {
        let n = chain.samples.len().max(1) as f64;
        let cat = |k: usize, f: &dyn Fn(&[f64]) -> usize| {
            let mut c = vec![0.0; k];
            for s in &chain.samples {
                c[f(s) - 1] += 1.0;
            }
            let tot = n + alpha * k as f64;
            c.iter().map(|v| (v + alpha) / tot).collect::<Vec<f64>>()
        };
        let sources = cat(bounds.max_sources, &|s| index_of(s[0], bounds.max_sources));
        let zones = cat(bounds.n_zones(), &|s| index_of(s[1], bounds.n_zones()));
        let densities = (2..bounds.phi_dim())
            .map(|j| BinnedDensity::from_samples(&chain.samples.iter().map(|s| s[j]).collect::<Vec<_>>(), bins, floor))
            .collect();
        Self { sources, zones, densities }
    }

    pub fn log_density(&self, phi: &[f64]) -> f64 {
        let ns = self.sources.len();
        let nz = self.zones.len();
        let mut lp = (self.sources[index_of(phi[0], ns) - 1] * ns as f64).ln()
            + (self.zones[index_of(phi[1], nz) - 1] * nz as f64).ln();
        for (j, d) in self.densities.iter().enumerate() {
            lp += d.density(phi[j + 2]).ln();
        }
        lp
    }
}

impl PhiPrior {
    /// ln p(φ); −∞ outside the unit box.
    pub fn log_density(&self, phi: &[f64]) -> f64 {
        if phi.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return f64::NEG_INFINITY;
        }
        match self {
            PhiPrior::Uniform => 0.0,
            PhiPrior::Empirical(e) => e.log_density(phi),
        }
    }
}

/// Components of one posterior evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorEval {
    pub log_likelihood: f64,
    pub log_prior: f64,
    pub log_posterior: f64,
}

/// Unnormalized posterior over φ for one observation set and predictor.
pub struct Posterior<'a> {
    pub bounds: ParameterBounds,
    pub likelihood: Likelihood,
    pub prior: PhiPrior,
    pub predictor: &'a dyn Predictor,
}

impl<'a> Posterior<'a> {
    pub fn new(
        bounds: ParameterBounds,
        obs: &ObservationSet,
        disc: &DiscrepancyConfig,
        prior: PhiPrior,
        predictor: &'a dyn Predictor,
    ) -> Result<Self> {
        if obs.records.is_empty() || obs.is_all_zero() {
            return Err(Error::NoDetection);
        }
        Ok(Self { likelihood: Likelihood::new(obs, disc)?, bounds, prior, predictor })
    }

    pub fn evaluate(&self, phi: &[f64]) -> PosteriorEval {
        let log_prior = self.prior.log_density(phi);
        if log_prior == f64::NEG_INFINITY {
            return PosteriorEval { log_likelihood: f64::NAN, log_prior, log_posterior: f64::NEG_INFINITY };
        }
        let (a, _, sc) = decode(phi, &self.bounds);
        let log_likelihood = match self.predictor.predict(a, &sc, &self.likelihood.zones, &self.likelihood.times) {
            Ok(p) => self.likelihood.evaluate(&p),
            Err(e) => {
                log::debug!("prediction failed at {phi:?}: {e}");
                f64::NEG_INFINITY
            }
        };
        let log_posterior = if log_likelihood.is_finite() { log_likelihood + log_prior } else { f64::NEG_INFINITY };
        PosteriorEval { log_likelihood, log_prior, log_posterior }
    }

    pub fn log_posterior(&self, phi: &[f64]) -> f64 {
        self.evaluate(phi).log_posterior
    }
}
