//! Transient contaminant transport over the coupled flow field.
//!
//! The flow field is steady (boundary conditions do not change during a run),
//! so it is solved once and every reporting step reuses it. Transport is
//! implicit Euler with a fixed internal step anchored at the activation time;
//! a reporting time that falls between internal steps is reached by a partial
//! step branching off the main sequence, so a trace depends on `t − S_t` only.

use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

use crate::cfdzone::{assemble_concentration, couple, CoupledFlow};
use crate::error::{invalid, Result};
use crate::linalg::BandMatrix;
use crate::netflow::{solve_pressures, BuildingNetwork, PressureSolution, WellMixedOperator, AMBIENT};
use crate::scenario::SourceScenario;

/// Per-zone concentration time series, g contaminant / kg air.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransientTrace {
    /// Minutes since simulation start.
    pub times: Vec<f64>,
    /// `concentrations[t][j - 1]` for zone id j.
    pub concentrations: Vec<Vec<f64>>,
}

impl TransientTrace {
    pub fn n_zones(&self) -> usize {
        self.concentrations.first().map_or(0, |r| r.len())
    }

    pub fn zone(&self, id: usize) -> Vec<f64> {
        self.concentrations.iter().map(|r| r[id - 1]).collect()
    }

    pub fn at(&self, minute: f64, zone: usize) -> Option<f64> {
        self.times.iter().position(|t| (t - minute).abs() < 1e-9).map(|i| self.concentrations[i][zone - 1])
    }

    /// CSV with header `time_min,zone_1,...`; values in g/m³ (g/kg × ρ_air).
    pub fn to_csv(&self, density: f64) -> String {
        let mut s = String::from("time_min");
        for j in 1..=self.n_zones() {
            s.push_str(&format!(",zone_{j}"));
        }
        s.push('\n');
        for (t, row) in self.times.iter().zip(&self.concentrations) {
            s.push_str(&format!("{t}"));
            for c in row {
                s.push_str(&format!(",{:.9e}", c * density));
            }
            s.push('\n');
        }
        s
    }
}

/// Steady flow field of a building with its optional grid zone.
#[derive(Clone, Debug)]
pub struct FlowField {
    pub net: BuildingNetwork,
    pub network: PressureSolution,
    /// Flows used for transport (grid-side flows on grid-zone openings).
    pub flows: Vec<f64>,
    pub cfd: Option<CoupledFlow>,
}

impl FlowField {
    pub fn new(net: &BuildingNetwork) -> Result<Self> {
        net.validate()?;
        if net.cfd_zone().is_some() {
            let cf = couple(net)?;
            Ok(Self { net: net.clone(), network: cf.network.clone(), flows: cf.transport_flows(), cfd: Some(cf) })
        } else {
            let sol = solve_pressures(net)?;
            Ok(Self { net: net.clone(), flows: sol.path_flows.clone(), network: sol, cfd: None })
        }
    }
}

/// Transport state: zone concentrations by id (ambient entry 0) and, with a
/// grid zone, the cell field.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub zones: Vec<f64>,
    pub cells: Vec<f64>,
}

enum Operator {
    Mixed(WellMixedOperator),
    Coupled(Box<CoupledOperator>),
}

struct CoupledOperator {
    cfd: usize,
    /// zone id → position among the well-mixed unknowns
    widx: Vec<usize>,
    wids: Vec<usize>,
    g: BandMatrix,
    /// G⁻¹B, ng × nw
    x: DMatrix<f64>,
    /// (w row, cell, entry)
    c: Vec<(usize, usize, f64)>,
    schur: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    zone_mass_dt: Vec<f64>,
    cell_mass_dt: f64,
    zone_exhaust: Vec<f64>,
    cell_export: Vec<(usize, f64)>,
}

struct StepOperator {
    op: Operator,
}

impl StepOperator {
    fn new(field: &FlowField, dt: f64) -> Result<Self> {
        let net = &field.net;
        let Some(cf) = &field.cfd else {
            let sol = PressureSolution { path_flows: field.flows.clone(), ..field.network.clone() };
            return Ok(Self { op: Operator::Mixed(WellMixedOperator::new(net, &sol, dt)) });
        };
        let cfd = cf.grid.zone;
        let n = net.n_zones();
        let wids: Vec<usize> = (1..=n).filter(|&j| j != cfd).collect();
        let mut widx = vec![usize::MAX; n + 1];
        for (w, &j) in wids.iter().enumerate() {
            widx[j] = w;
        }
        let nw = wids.len();
        let rows = assemble_concentration(&cf.grid, &cf.couplings, Some(dt));
        let ng = cf.grid.n_cells();

        let mut z = DMatrix::<f64>::zeros(nw, nw);
        let mut zone_mass_dt = vec![0.0; n + 1];
        let mut zone_exhaust = vec![0.0; n + 1];
        for &j in &wids {
            zone_mass_dt[j] = net.air_density * net.zones[j].volume / dt;
            z[(widx[j], widx[j])] += zone_mass_dt[j];
            let f = net.air_sources[j];
            if f < 0.0 {
                z[(widx[j], widx[j])] -= f;
                zone_exhaust[j] -= f;
            }
        }
        for (p, &f) in net.paths.iter().zip(&field.flows) {
            if p.touches(cfd) || f == 0.0 {
                continue;
            }
            let (up, down, q) = if f > 0.0 { (p.from, p.to, f) } else { (p.to, p.from, -f) };
            if up == AMBIENT {
                continue;
            }
            z[(widx[up], widx[up])] += q;
            if down == AMBIENT {
                zone_exhaust[up] += q;
            } else {
                z[(widx[down], widx[up])] -= q;
            }
        }
        for &(i, v) in &rows.zone_diag {
            z[(widx[i], widx[i])] += v;
        }
        let mut b = DMatrix::<f64>::zeros(ng, nw);
        for &(p, i, v) in &rows.grid_from_zone {
            b[(p, widx[i])] += v;
        }
        let c: Vec<(usize, usize, f64)> = rows.zone_from_grid.iter().map(|&(i, p, v)| (widx[i], p, v)).collect();
        let mut g = rows.grid;
        g.factorize()?;
        let mut x = b;
        for col in 0..nw {
            let mut v: Vec<f64> = x.column(col).iter().copied().collect();
            g.solve_in_place(&mut v);
            for (r, val) in v.into_iter().enumerate() {
                x[(r, col)] = val;
            }
        }
        let mut s = z;
        for &(w, p, v) in &c {
            for col in 0..nw {
                s[(w, col)] -= v * x[(p, col)];
            }
        }
        Ok(Self {
            op: Operator::Coupled(Box::new(CoupledOperator {
                cfd,
                widx,
                wids,
                g,
                x,
                c,
                schur: s.lu(),
                zone_mass_dt,
                cell_mass_dt: cf.grid.cell_mass() / dt,
                zone_exhaust,
                cell_export: rows.export,
            })),
        })
    }

    /// Advances `state` by one step with zone sources `zs` (g/s by zone id)
    /// and cell sources `cs` (g/s by cell).
    fn step(&self, state: &State, zs: &[f64], cs: &[f64]) -> State {
        match &self.op {
            Operator::Mixed(op) => State { zones: op.apply(&state.zones, zs), cells: Vec::new() },
            Operator::Coupled(op) => op.step(state, zs, cs),
        }
    }

    fn export_rate(&self, state: &State) -> f64 {
        match &self.op {
            Operator::Mixed(op) => op.export_rate(&state.zones),
            Operator::Coupled(op) => {
                let zones: f64 = op.zone_exhaust.iter().zip(&state.zones).map(|(q, c)| q * c).sum();
                let cells: f64 = op.cell_export.iter().map(|&(p, q)| q * state.cells[p]).sum();
                zones + cells
            }
        }
    }
}

impl CoupledOperator {
    fn step(&self, state: &State, zs: &[f64], cs: &[f64]) -> State {
        let nw = self.wids.len();
        let mut y: Vec<f64> = state.cells.iter().zip(cs).map(|(u, s)| self.cell_mass_dt * u + s).collect();
        self.g.solve_in_place(&mut y);
        let mut rz = DVector::from_iterator(nw, self.wids.iter().map(|&j| self.zone_mass_dt[j] * state.zones[j] + zs[j]));
        for &(w, p, v) in &self.c {
            rz[w] -= v * y[p];
        }
        let zsol = self.schur.solve(&rz).expect("transport Schur complement is nonsingular");
        for (p, yp) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for col in 0..nw {
                s += self.x[(p, col)] * zsol[col];
            }
            *yp = (*yp - s).max(0.0);
        }
        let mut zones = vec![0.0; state.zones.len()];
        for &j in &self.wids {
            zones[j] = zsol[self.widx[j]].max(0.0);
        }
        zones[self.cfd] = y.iter().sum::<f64>() / y.len() as f64;
        State { zones, cells: y }
    }
}

/// Contaminant bookkeeping over a run, grams.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassAudit {
    pub injected: f64,
    pub exported: f64,
    pub stored: f64,
}

impl MassAudit {
    /// |injected − exported − stored| / injected.
    pub fn relative_closure(&self) -> f64 {
        (self.injected - self.exported - self.stored).abs() / self.injected.max(1e-300)
    }
}

/// A building's flow field with the unit-step transport operator factorized.
pub struct Simulator {
    pub field: FlowField,
    dt: f64,
    unit: StepOperator,
}

impl Simulator {
    pub fn new(net: &BuildingNetwork, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return invalid("dt must be positive");
        }
        let field = FlowField::new(net)?;
        let unit = StepOperator::new(&field, dt)?;
        Ok(Self { field, dt, unit })
    }

    pub fn net(&self) -> &BuildingNetwork {
        &self.field.net
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn zero_state(&self) -> State {
        let n = self.field.net.zones.len();
        let cells = self.field.cfd.as_ref().map_or(0, |c| c.grid.n_cells());
        State { zones: vec![0.0; n], cells: vec![0.0; cells] }
    }

    fn sources(&self, sc: &SourceScenario) -> (Vec<f64>, Vec<f64>) {
        let (mut zs, mut cs) = (vec![0.0; self.field.net.zones.len()], Vec::new());
        match &self.field.cfd {
            Some(cf) if cf.grid.zone == sc.zone => {
                cs = vec![0.0; cf.grid.n_cells()];
                for &(x, y) in &sc.locations {
                    cs[cf.grid.cell_of(x, y)] += sc.amount;
                }
            }
            other => {
                zs[sc.zone] = sc.total_rate();
                if let Some(cf) = other {
                    cs = vec![0.0; cf.grid.n_cells()];
                }
            }
        }
        (zs, cs)
    }

    fn state_mass(&self, s: &State) -> f64 {
        let net = &self.field.net;
        let mut m = 0.0;
        for j in 1..=net.n_zones() {
            if Some(j) == self.field.cfd.as_ref().map(|c| c.grid.zone) {
                continue;
            }
            m += net.air_density * net.zones[j].volume * s.zones[j];
        }
        if let Some(cf) = &self.field.cfd {
            m += cf.grid.cell_mass() * s.cells.iter().sum::<f64>();
        }
        m
    }

    /// Zone concentrations (row per requested time, column per zone id 1..N)
    /// at arbitrary ascending times in minutes. The optional callback sees the
    /// full state at each requested time.
    pub fn run_with(
        &self,
        sc: &SourceScenario,
        times: &[f64],
        mut on_state: impl FnMut(f64, &State),
    ) -> Result<Vec<Vec<f64>>> {
        sc.validate(&self.field.net)?;
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("requested times must be strictly increasing");
        }
        let n = self.field.net.n_zones();
        let (zs, cs) = self.sources(sc);
        let mut state = self.zero_state();
        let mut steps = 0usize;
        let mut partial: Option<(u64, StepOperator)> = None;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            let tau = (t - sc.start) * 60.0;
            if tau <= 0.0 || sc.amount == 0.0 {
                let zero = self.zero_state();
                on_state(t, &zero);
                out.push(vec![0.0; n]);
                continue;
            }
            let mut k = (tau / self.dt).floor() as usize;
            let mut f = tau - k as f64 * self.dt;
            if f < 1e-9 * self.dt {
                f = 0.0;
            } else if self.dt - f < 1e-9 * self.dt {
                k += 1;
                f = 0.0;
            }
            while steps < k {
                state = self.unit.step(&state, &zs, &cs);
                steps += 1;
            }
            let s = if f > 0.0 {
                let key = f.to_bits();
                if partial.as_ref().is_none_or(|(b, _)| *b != key) {
                    partial = Some((key, StepOperator::new(&self.field, f)?));
                }
                partial.as_ref().unwrap().1.step(&state, &zs, &cs)
            } else {
                state.clone()
            };
            on_state(t, &s);
            out.push(s.zones[1..].to_vec());
        }
        Ok(out)
    }

    pub fn concentrations_at(&self, sc: &SourceScenario, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.run_with(sc, times, |_, _| {})
    }

    /// Trace at 1-minute resolution over [0, horizon].
    pub fn trace(&self, sc: &SourceScenario, horizon: f64) -> Result<TransientTrace> {
        if !(horizon > sc.start) {
            return invalid("horizon must exceed the activation time");
        }
        let times: Vec<f64> = (0..=horizon.floor() as usize).map(|m| m as f64).collect();
        let concentrations = self.concentrations_at(sc, &times)?;
        Ok(TransientTrace { times, concentrations })
    }

    /// Grid rasters (CSV text) at each reporting minute, when a grid zone exists.
    pub fn grid_snapshots(&self, sc: &SourceScenario, horizon: f64) -> Result<Vec<(f64, String)>> {
        let Some(cf) = &self.field.cfd else {
            return Ok(Vec::new());
        };
        let times: Vec<f64> = (0..=horizon.floor() as usize).map(|m| m as f64).collect();
        let mut grid = cf.grid.clone();
        let mut snaps = Vec::new();
        self.run_with(sc, &times, |t, s| {
            grid.conc_field = s.cells.clone();
            snaps.push((t, grid.raster_csv()));
        })?;
        Ok(snaps)
    }

    /// Mass bookkeeping over `duration_min` of full internal steps after
    /// activation.
    pub fn audit(&self, sc: &SourceScenario, duration_min: f64) -> Result<MassAudit> {
        sc.validate(&self.field.net)?;
        let (zs, cs) = self.sources(sc);
        let steps = (duration_min * 60.0 / self.dt).round() as usize;
        let mut state = self.zero_state();
        let mut exported = 0.0;
        for _ in 0..steps {
            state = self.unit.step(&state, &zs, &cs);
            exported += self.unit.export_rate(&state) * self.dt;
        }
        Ok(MassAudit {
            injected: sc.total_rate() * self.dt * steps as f64,
            exported,
            stored: self.state_mass(&state),
        })
    }

    /// Stored building mass (g) after each internal step, for `steps` steps.
    pub fn stored_mass_series(&self, sc: &SourceScenario, steps: usize) -> Result<Vec<f64>> {
        sc.validate(&self.field.net)?;
        let (zs, cs) = self.sources(sc);
        let mut state = self.zero_state();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            state = self.unit.step(&state, &zs, &cs);
            out.push(self.state_mass(&state));
        }
        Ok(out)
    }
}

/// Trace of `scenario` on `net` over [0, horizon] minutes with internal step
/// `dt` seconds. If the source zone is the network's grid zone the sources
/// deposit into their grid cells; otherwise they act as a well-mixed term.
pub fn simulate(net: &BuildingNetwork, scenario: &SourceScenario, horizon: f64, dt: f64) -> Result<TransientTrace> {
    Simulator::new(net, dt)?.trace(scenario, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amount_gives_zero_trace() {
        let net = BuildingNetwork::seven_room();
        let sc = SourceScenario { amount: 0.0, ..SourceScenario::reference() };
        let tr = simulate(&net, &sc, 30.0, 1.0).unwrap();
        assert!(tr.concentrations.iter().flatten().all(|c| *c == 0.0));
    }

    #[test]
    fn reference_spreads_everywhere() {
        let net = BuildingNetwork::seven_room().with_cfd_zone(Some(1));
        let sc = SourceScenario::reference();
        let tr = simulate(&net, &sc, 40.0, 1.0).unwrap();
        for t in 0..=18 {
            assert!(tr.concentrations[t].iter().all(|c| *c == 0.0));
        }
        assert!(tr.concentrations[23].iter().all(|c| *c > 0.0), "{:?}", tr.concentrations[23]);
    }

    #[test]
    fn linear_in_amount() {
        let net = BuildingNetwork::seven_room();
        let sc = SourceScenario::reference();
        let a = simulate(&net, &sc, 30.0, 1.0).unwrap();
        let b = simulate(&net, &SourceScenario { amount: 0.18, ..sc }, 30.0, 1.0).unwrap();
        for (ra, rb) in a.concentrations.iter().zip(&b.concentrations) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn coupled_mass_closes() {
        let sim = Simulator::new(&BuildingNetwork::seven_room().with_cfd_zone(Some(1)), 1.0).unwrap();
        let audit = sim.audit(&SourceScenario::reference(), 60.0).unwrap();
        assert!(audit.relative_closure() <= 1e-6, "{audit:?}");
        let series = sim.stored_mass_series(&SourceScenario::reference(), 600).unwrap();
        assert!(series.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn time_shift_invariance() {
        let sim = Simulator::new(&BuildingNetwork::seven_room().with_cfd_zone(Some(1)), 1.0).unwrap();
        let sc = SourceScenario { start: 17.3, ..SourceScenario::reference() };
        let a = sim.concentrations_at(&sc, &[20.0, 21.0]).unwrap();
        let sc2 = SourceScenario { start: 10.3, ..sc };
        let b = sim.concentrations_at(&sc2, &[13.0, 14.0]).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() <= 1e-12 * x.abs());
            }
        }
    }
}
