//! Grid-resolved zone: a 2D finite-volume pressure/concentration model of one
//! zone, coupled to the multizone network through its openings.
//!
//! The velocity field is pressure-driven and incompressible: face mass flux is
//! K·(P_p − P_q) with K = κ·(face area)/(cell spacing), and every cell balances
//! its faces plus any opening flow. Openings are Robin boundaries,
//! f_p = c_{L,p}·(P_o − P_p), with the macroscopic path's linearized coefficient
//! spread evenly over the opening's border cells.

mod concentration;
mod coupling;

pub use concentration::{assemble_concentration, solve_cfd_zone, ConcentrationRows};
pub use coupling::{couple, CoupledFlow};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::BandMatrix;
use crate::netflow::{BuildingNetwork, CfdSettings, Zone, AMBIENT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfdGrid {
    pub zone: usize,
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub height: f64,
    pub density: f64,
    /// Γ_u, kg/(m·s)
    pub diffusivity: f64,
    /// κ, kg/(s·Pa·m)
    pub permeability: f64,
    pub cell_pressures: Vec<f64>,
    /// Mass flux through x-faces, (nx+1)·ny entries, positive towards +x, kg/s.
    pub flux_x: Vec<f64>,
    /// Mass flux through y-faces, nx·(ny+1) entries, positive towards +y, kg/s.
    pub flux_y: Vec<f64>,
    pub conc_field: Vec<f64>,
    /// Uniformly distributed air source of the zone, kg/s.
    pub air_source: f64,
}

impl CfdGrid {
    pub fn new(zone: &Zone, settings: &CfdSettings, density: f64) -> Result<Self> {
        if settings.nx < 8 || settings.ny < 8 {
            return invalid("cfd grid needs at least 8 cells per side");
        }
        let [w, d] = zone.floor_dims;
        let l = w.max(d);
        let diffusivity = settings.diffusivity.unwrap_or(density * l * l / settings.diffusion_time_s);
        if !(diffusivity >= 0.0) {
            return invalid("cfd diffusivity must be nonnegative");
        }
        let n = settings.nx * settings.ny;
        Ok(Self {
            zone: zone.id,
            nx: settings.nx,
            ny: settings.ny,
            dx: w / settings.nx as f64,
            dy: d / settings.ny as f64,
            height: zone.height,
            density,
            diffusivity,
            permeability: settings.permeability,
            cell_pressures: vec![0.0; n],
            flux_x: vec![0.0; (settings.nx + 1) * settings.ny],
            flux_y: vec![0.0; settings.nx * (settings.ny + 1)],
            conc_field: vec![0.0; n],
            air_source: 0.0,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn cell(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    /// Cell containing a zone-local point (points on the far edges go to the
    /// last cell).
    pub fn cell_of(&self, x: f64, y: f64) -> usize {
        let ix = ((x / self.dx).floor().max(0.0) as usize).min(self.nx - 1);
        let iy = ((y / self.dy).floor().max(0.0) as usize).min(self.ny - 1);
        self.cell(ix, iy)
    }

    pub fn cell_mass(&self) -> f64 {
        self.density * self.dx * self.dy * self.height
    }

    /// K for x-faces and y-faces.
    pub fn face_conductance(&self) -> (f64, f64) {
        (
            self.permeability * self.height * self.dy / self.dx,
            self.permeability * self.height * self.dx / self.dy,
        )
    }

    /// Diffusive conductance Γ·A/δ for x-faces and y-faces, kg/s.
    pub fn face_diffusion(&self) -> (f64, f64) {
        (
            self.diffusivity * self.height * self.dy / self.dx,
            self.diffusivity * self.height * self.dx / self.dy,
        )
    }

    /// Face-normal velocity through x-face (ix, iy), m/s.
    pub fn velocity_x(&self, ix: usize, iy: usize) -> f64 {
        self.flux_x[iy * (self.nx + 1) + ix] / (self.density * self.height * self.dy)
    }

    pub fn velocity_y(&self, ix: usize, iy: usize) -> f64 {
        self.flux_y[iy * self.nx + ix] / (self.density * self.height * self.dx)
    }

    pub fn mean_concentration(&self) -> f64 {
        self.conc_field.iter().sum::<f64>() / self.n_cells() as f64
    }

    /// Cell concentrations as rows of text, north row first.
    pub fn raster_csv(&self) -> String {
        let mut s = String::new();
        for iy in (0..self.ny).rev() {
            let row: Vec<String> =
                (0..self.nx).map(|ix| format!("{:.6e}", self.conc_field[self.cell(ix, iy)])).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Wall {
    West,
    East,
    South,
    North,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathCoupling {
    pub path: usize,
    /// Zone on the far side of the opening.
    pub neighbour: usize,
    /// +1 when a positive path flow enters the grid zone.
    pub into_sign: f64,
    pub wall: Wall,
    pub cells: Vec<usize>,
    /// c_{L,p}, kg/(s·Pa)
    pub cell_flow_coeffs: Vec<f64>,
    /// Diffusive exchange conductance per opening cell, kg/s.
    pub cell_exchange: Vec<f64>,
    /// d_ic: wind pressure on the far side of an exterior opening, Pa.
    pub pressure_offset: f64,
    /// c_{L,ic}: secant coefficient of the macroscopic path, kg/(s·Pa).
    pub linear_coeff_macroscopic: f64,
    /// P_{d,ic}: pressure on the far side of the opening, Pa.
    pub downwind_pressure: f64,
    /// f_p, positive into the grid, kg/s.
    pub cell_flows: Vec<f64>,
}

impl PathCoupling {
    /// F^C: total flow into the grid through this opening.
    pub fn grid_flow(&self) -> f64 {
        self.cell_flows.iter().sum()
    }
}

/// Locates every opening of the grid zone on its border.
pub fn build_couplings(net: &BuildingNetwork, grid: &CfdGrid, settings: &CfdSettings) -> Result<Vec<PathCoupling>> {
    let zone = net.zone(grid.zone);
    let [w, d] = zone.floor_dims;
    let mut out = Vec::new();
    for (k, p) in net.paths.iter().enumerate() {
        if !p.touches(grid.zone) {
            continue;
        }
        let lx = p.center[0] - zone.origin[0];
        let ly = p.center[1] - zone.origin[1];
        let dists = [
            (lx.abs(), Wall::West),
            ((lx - w).abs(), Wall::East),
            (ly.abs(), Wall::South),
            ((ly - d).abs(), Wall::North),
        ];
        let wall = dists.iter().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap().1;
        let (along, n_along, h_along, normal) = match wall {
            Wall::West | Wall::East => (ly, grid.ny, grid.dy, grid.dx),
            Wall::South | Wall::North => (lx, grid.nx, grid.dx, grid.dy),
        };
        let lo = along - 0.5 * p.width;
        let hi = along + 0.5 * p.width;
        let mut idx = Vec::new();
        let mut overlap = Vec::new();
        for i in 0..n_along {
            let a = i as f64 * h_along;
            let b = a + h_along;
            let ov = hi.min(b) - lo.max(a);
            if ov > 1e-12 {
                idx.push(i);
                overlap.push(ov);
            }
        }
        if idx.is_empty() {
            let i = ((along / h_along).floor().max(0.0) as usize).min(n_along - 1);
            idx.push(i);
            overlap.push(p.width.min(h_along));
        }
        let cells: Vec<usize> = idx
            .iter()
            .map(|&i| match wall {
                Wall::West => grid.cell(0, i),
                Wall::East => grid.cell(grid.nx - 1, i),
                Wall::South => grid.cell(i, 0),
                Wall::North => grid.cell(i, grid.ny - 1),
            })
            .collect();
        let open_h = p.height.min(grid.height);
        let cell_exchange: Vec<f64> =
            overlap.iter().map(|ov| settings.opening_diffusivity * ov * open_h / normal).collect();
        let neighbour = p.other(grid.zone);
        let pressure_offset = if neighbour == AMBIENT { net.ambient_pressure(p) } else { 0.0 };
        let ng = cells.len();
        out.push(PathCoupling {
            path: k,
            neighbour,
            into_sign: if p.to == grid.zone { 1.0 } else { -1.0 },
            wall,
            cell_flow_coeffs: vec![0.0; ng],
            cell_flows: vec![0.0; ng],
            cells,
            cell_exchange,
            pressure_offset,
            linear_coeff_macroscopic: 0.0,
            downwind_pressure: 0.0,
        });
    }
    if out.is_empty() {
        return invalid("cfd zone has no openings");
    }
    Ok(out)
}

/// Solves the grid pressure field for the current opening coefficients and
/// far-side pressures; updates face fluxes and per-cell opening flows.
pub fn solve_grid_flow(grid: &mut CfdGrid, couplings: &mut [PathCoupling], inner_tol: f64) -> Result<()> {
    let (nx, ny) = (grid.nx, grid.ny);
    let n = grid.n_cells();
    let (kx, ky) = grid.face_conductance();
    let open: f64 = couplings.iter().map(|c| c.linear_coeff_macroscopic).sum();
    if open <= 0.0 && grid.air_source == 0.0 {
        // no driving: pressure level is arbitrary, the field is at rest
        grid.cell_pressures = vec![0.0; n];
        grid.flux_x.iter_mut().for_each(|f| *f = 0.0);
        grid.flux_y.iter_mut().for_each(|f| *f = 0.0);
        for c in couplings.iter_mut() {
            c.cell_flow_coeffs.iter_mut().for_each(|v| *v = 0.0);
            c.cell_flows.iter_mut().for_each(|v| *v = 0.0);
        }
        return Ok(());
    }
    let mut a = BandMatrix::zeros(n, nx);
    let mut rhs = vec![grid.air_source / n as f64; n];
    for iy in 0..ny {
        for ix in 0..nx {
            let p = grid.cell(ix, iy);
            if ix + 1 < nx {
                let q = p + 1;
                a.add(p, p, kx);
                a.add(q, q, kx);
                a.add(p, q, -kx);
                a.add(q, p, -kx);
            }
            if iy + 1 < ny {
                let q = p + nx;
                a.add(p, p, ky);
                a.add(q, q, ky);
                a.add(p, q, -ky);
                a.add(q, p, -ky);
            }
        }
    }
    for c in couplings.iter_mut() {
        let share = c.linear_coeff_macroscopic / c.cells.len() as f64;
        for (i, &p) in c.cells.iter().enumerate() {
            c.cell_flow_coeffs[i] = share;
            a.add(p, p, share);
            rhs[p] += share * c.downwind_pressure;
        }
    }
    let check = a.clone();
    a.factorize()?;
    let mut pr = rhs.clone();
    a.solve_in_place(&mut pr);
    let res = check.mul_vec(&pr);
    let scale = rhs.iter().fold(1e-30f64, |m, v| m.max(v.abs()));
    let rn = res.iter().zip(&rhs).fold(0.0f64, |m, (r, b)| m.max((r - b).abs()));
    if !(rn <= inner_tol * scale.max(1.0)) {
        return Err(Error::InnerNonConvergence(1));
    }
    for iy in 0..ny {
        for ix in 0..=nx {
            let f = if ix == 0 || ix == nx {
                0.0
            } else {
                kx * (pr[grid.cell(ix - 1, iy)] - pr[grid.cell(ix, iy)])
            };
            grid.flux_x[iy * (nx + 1) + ix] = f;
        }
    }
    for iy in 0..=ny {
        for ix in 0..nx {
            let f = if iy == 0 || iy == ny {
                0.0
            } else {
                ky * (pr[grid.cell(ix, iy - 1)] - pr[grid.cell(ix, iy)])
            };
            grid.flux_y[iy * nx + ix] = f;
        }
    }
    for c in couplings.iter_mut() {
        for (i, &p) in c.cells.iter().enumerate() {
            c.cell_flows[i] = c.cell_flow_coeffs[i] * (c.downwind_pressure - pr[p]);
        }
    }
    grid.cell_pressures = pr;
    Ok(())
}

/// Mean grid pressure over an opening's cells.
pub(crate) fn opening_pressure(grid: &CfdGrid, c: &PathCoupling) -> f64 {
    c.cells.iter().map(|&p| grid.cell_pressures[p]).sum::<f64>() / c.cells.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn openings_on_border() {
        let net = BuildingNetwork::seven_room();
        let grid = CfdGrid::new(net.zone(1), &net.cfd, net.air_density).unwrap();
        let cs = build_couplings(&net, &grid, &net.cfd).unwrap();
        assert_eq!(cs.len(), 7);
        let main = &cs[0];
        assert_eq!(main.wall, Wall::West);
        assert!(main.cells.iter().all(|&p| p % grid.nx == 0));
        for c in &cs {
            for &p in &c.cells {
                let (ix, iy) = (p % grid.nx, p / grid.nx);
                assert!(ix == 0 || iy == 0 || ix == grid.nx - 1 || iy == grid.ny - 1);
            }
        }
        assert_eq!(grid.cell_of(4.0, 1.36), grid.cell(6, 6));
    }

    #[test]
    fn uniform_pressure_gives_no_flow() {
        let net = BuildingNetwork::seven_room();
        let mut grid = CfdGrid::new(net.zone(1), &net.cfd, net.air_density).unwrap();
        let mut cs = build_couplings(&net, &grid, &net.cfd).unwrap();
        for c in cs.iter_mut() {
            c.linear_coeff_macroscopic = 0.7;
            c.downwind_pressure = 1.5;
        }
        solve_grid_flow(&mut grid, &mut cs, 1e-8).unwrap();
        for c in &cs {
            assert!(c.grid_flow().abs() < 1e-12);
        }
        assert!(grid.flux_x.iter().all(|f| f.abs() < 1e-12));
    }
}
