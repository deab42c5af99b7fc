use super::{build_couplings, opening_pressure, solve_grid_flow, CfdGrid, PathCoupling};
use crate::error::{invalid, Error, Result};
use crate::netflow::{solve_pressures_with, BuildingNetwork, PressureSolution, SolverOptions, AMBIENT};

/// Consistent macroscopic and grid flow fields.
#[derive(Clone, Debug)]
pub struct CoupledFlow {
    /// Network solution including the converged per-path offsets.
    pub network: PressureSolution,
    pub grid: CfdGrid,
    pub couplings: Vec<PathCoupling>,
    /// Σ_k |F^M_k − F^C_k| after each outer iteration, kg/s.
    pub mismatch_history: Vec<f64>,
    /// Per-path pressure offsets handed to the network solver, Pa.
    pub offsets: Vec<f64>,
}

impl CoupledFlow {
    pub fn mismatch(&self) -> f64 {
        *self.mismatch_history.last().unwrap_or(&f64::INFINITY)
    }

    /// Path flows with every grid-zone opening replaced by its grid-side
    /// value, so the two sides of each opening carry the same flux.
    pub fn transport_flows(&self) -> Vec<f64> {
        let mut f = self.network.path_flows.clone();
        for c in &self.couplings {
            f[c.path] = c.into_sign * c.grid_flow();
        }
        f
    }
}

/// Fixed-point coupling of the network and the grid zone: the network sees
/// each grid opening through an extra pressure offset equal to the grid's
/// opening pressure relative to its mean; the grid sees each opening through
/// the secant coefficient of the network path. Offsets are under-relaxed.
pub fn couple(net: &BuildingNetwork) -> Result<CoupledFlow> {
    let Some(zone) = net.cfd_zone() else {
        return invalid("network has no cfd zone");
    };
    let settings = &net.cfd;
    let mut grid = CfdGrid::new(net.zone(zone), settings, net.air_density)?;
    grid.air_source = net.air_sources[zone];
    let mut couplings = build_couplings(net, &grid, settings)?;
    let opts = SolverOptions::default();
    let mut offsets = vec![0.0; net.paths.len()];
    // offsets in the grid zone's frame (added to the zone pressure)
    let mut zone_off = vec![0.0; couplings.len()];
    let mut history = Vec::new();
    for it in 1..=settings.max_outer {
        for (c, &o) in couplings.iter().zip(&zone_off) {
            // ΔP_from→to gains +o when the grid zone is `from`, −o when `to`
            offsets[c.path] = -c.into_sign * o;
        }
        let sol = solve_pressures_with(net, &opts, Some(&offsets))?;
        let mut macro_in = Vec::with_capacity(couplings.len());
        for (c, &o) in couplings.iter_mut().zip(&zone_off) {
            let p = &net.paths[c.path];
            let far = if c.neighbour == AMBIENT { net.ambient_pressure(p) } else { sol.pressures[c.neighbour] };
            let f_in = c.into_sign * sol.path_flows[c.path];
            let dp_in = far - (sol.pressures[zone] + o);
            let cl = if dp_in.abs() > opts.dp_lin {
                f_in / dp_in
            } else {
                p.flow_coeff * opts.dp_lin.powf(p.flow_exp - 1.0)
            };
            c.linear_coeff_macroscopic = cl;
            c.downwind_pressure = far;
            macro_in.push(f_in);
        }
        solve_grid_flow(&mut grid, &mut couplings, settings.inner_tolerance)?;
        let mismatch: f64 = couplings.iter().zip(&macro_in).map(|(c, m)| (m - c.grid_flow()).abs()).sum();
        history.push(mismatch);
        if !mismatch.is_finite() {
            return Err(Error::CouplingDiverged { iteration: it, mismatch });
        }
        if mismatch <= settings.tolerance {
            return Ok(CoupledFlow { network: sol, grid, couplings, mismatch_history: history, offsets });
        }
        let mean = grid.cell_pressures.iter().sum::<f64>() / grid.n_cells() as f64;
        for (c, o) in couplings.iter().zip(zone_off.iter_mut()) {
            let target = opening_pressure(&grid, c) - mean;
            *o += settings.damping * (target - *o);
        }
    }
    Err(Error::CouplingDiverged { iteration: settings.max_outer, mismatch: *history.last().unwrap() })
}
