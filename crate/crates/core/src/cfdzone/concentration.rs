use super::{solve_grid_flow, CfdGrid, PathCoupling};
use crate::error::{invalid, Error, Result};
use crate::linalg::BandMatrix;
use crate::netflow::AMBIENT;

/// Rows of the grid concentration balance, plus the terms it contributes to
/// the well-mixed neighbour zones. Advection is upwind, diffusion central.
pub struct ConcentrationRows {
    /// Grid–grid block (with m/dt on the diagonal for transient steps).
    pub grid: BandMatrix,
    /// (cell, zone, entry): coefficient on the neighbour zone's concentration
    /// in a grid row.
    pub grid_from_zone: Vec<(usize, usize, f64)>,
    /// (zone, cell, entry): coefficient on a grid cell in a zone row.
    pub zone_from_grid: Vec<(usize, usize, f64)>,
    /// (zone, entry): diagonal additions to zone rows.
    pub zone_diag: Vec<(usize, f64)>,
    /// (cell, rate): air or exchange leaving a cell to the outside, kg/s.
    pub export: Vec<(usize, f64)>,
}

pub fn assemble_concentration(grid: &CfdGrid, couplings: &[PathCoupling], dt: Option<f64>) -> ConcentrationRows {
    let (nx, ny) = (grid.nx, grid.ny);
    let n = grid.n_cells();
    let mut g = BandMatrix::zeros(n, nx);
    let (dfx, dfy) = grid.face_diffusion();
    let face = |g: &mut BandMatrix, p: usize, q: usize, f: f64, d: f64| {
        // f > 0 flows p → q
        if f > 0.0 {
            g.add(p, p, f);
            g.add(q, p, -f);
        } else if f < 0.0 {
            g.add(q, q, -f);
            g.add(p, q, f);
        }
        g.add(p, p, d);
        g.add(q, q, d);
        g.add(p, q, -d);
        g.add(q, p, -d);
    };
    for iy in 0..ny {
        for ix in 0..nx {
            let p = grid.cell(ix, iy);
            if ix + 1 < nx {
                face(&mut g, p, p + 1, grid.flux_x[iy * (nx + 1) + ix + 1], dfx);
            }
            if iy + 1 < ny {
                face(&mut g, p, p + nx, grid.flux_y[(iy + 1) * nx + ix], dfy);
            }
        }
    }
    if let Some(dt) = dt {
        let m = grid.cell_mass() / dt;
        for p in 0..n {
            g.add(p, p, m);
        }
    }
    if grid.air_source < 0.0 {
        let e = -grid.air_source / n as f64;
        for p in 0..n {
            g.add(p, p, e);
        }
    }
    let mut rows = ConcentrationRows {
        grid: g,
        grid_from_zone: Vec::new(),
        zone_from_grid: Vec::new(),
        zone_diag: Vec::new(),
        export: Vec::new(),
    };
    if grid.air_source < 0.0 {
        let e = -grid.air_source / n as f64;
        rows.export.extend((0..n).map(|p| (p, e)));
    }
    for c in couplings {
        let i = c.neighbour;
        for ((&p, &f), &x) in c.cells.iter().zip(&c.cell_flows).zip(&c.cell_exchange) {
            if f > 0.0 {
                if i != AMBIENT {
                    rows.grid_from_zone.push((p, i, -f));
                    rows.zone_diag.push((i, f));
                }
            } else if f < 0.0 {
                rows.grid.add(p, p, -f);
                if i != AMBIENT {
                    rows.zone_from_grid.push((i, p, f));
                } else {
                    rows.export.push((p, -f));
                }
            }
            if x > 0.0 {
                rows.grid.add(p, p, x);
                if i != AMBIENT {
                    rows.grid_from_zone.push((p, i, -x));
                    rows.zone_diag.push((i, x));
                    rows.zone_from_grid.push((i, p, -x));
                } else {
                    rows.export.push((p, x));
                }
            }
        }
    }
    rows
}

/// Steady flow and concentration solve of the grid zone for fixed opening
/// coefficients and far-side pressures. `neighbour_conc` is indexed by zone
/// id; sources are (x, y, g/s) in zone-local coordinates. Returns the cell
/// concentrations and F^C per coupling.
pub fn solve_cfd_zone(
    grid: &mut CfdGrid,
    couplings: &mut [PathCoupling],
    neighbour_conc: &[f64],
    sources: &[(f64, f64, f64)],
    inner_tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = grid.dx * grid.nx as f64;
    let d = grid.dy * grid.ny as f64;
    for &(x, y, _) in sources {
        if !(0.0..=w).contains(&x) || !(0.0..=d).contains(&y) {
            return invalid(format!("source ({x}, {y}) outside the grid zone"));
        }
    }
    solve_grid_flow(grid, couplings, inner_tol)?;
    let rows = assemble_concentration(grid, couplings, None);
    let n = grid.n_cells();
    let mut rhs = vec![0.0; n];
    for &(x, y, s) in sources {
        rhs[grid.cell_of(x, y)] += s;
    }
    for &(p, i, a) in &rows.grid_from_zone {
        rhs[p] -= a * neighbour_conc[i];
    }
    let check = rows.grid.clone();
    let mut lu = rows.grid;
    lu.factorize()?;
    let mut u = rhs.clone();
    lu.solve_in_place(&mut u);
    let res = check.mul_vec(&u);
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rn = res.iter().zip(&rhs).fold(0.0f64, |m, (r, b)| m.max((r - b).abs()));
    if rn > 1e-8 * scale.max(1e-300) && rn > 1e-30 {
        return Err(Error::InnerNonConvergence(1));
    }
    for v in u.iter_mut() {
        *v = v.max(0.0);
    }
    grid.conc_field = u.clone();
    let flows = couplings.iter().map(|c| c.grid_flow()).collect();
    Ok((u, flows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfdzone::build_couplings;
    use crate::linalg::lu_solve;
    use crate::netflow::{BuildingNetwork, CfdSettings, FlowPath, Wind, Zone, ZoneKind};
    use nalgebra::DMatrix;

    fn box_net() -> BuildingNetwork {
        let z = Zone {
            id: 1,
            name: "box".into(),
            kind: ZoneKind::Cfd,
            origin: [0.0, 0.0],
            floor_dims: [4.0, 4.0],
            height: 3.0,
            volume: 48.0,
        };
        let door = |x: f64, facing| FlowPath {
            name: String::new(),
            from: 0,
            to: 1,
            flow_coeff: 0.5,
            flow_exp: 0.5,
            center: [x, 2.0],
            width: 1.0,
            height: 2.0,
            facing: Some(facing),
        };
        let mut net = BuildingNetwork::new(
            vec![z],
            vec![door(0.0, crate::netflow::Facing::West), door(4.0, crate::netflow::Facing::East)],
            Wind::default(),
        )
        .unwrap();
        net.cfd = CfdSettings { nx: 8, ny: 8, ..CfdSettings::default() };
        net
    }

    #[test]
    fn no_source_stays_clean() {
        let net = box_net();
        let mut grid = CfdGrid::new(net.zone(1), &net.cfd, net.air_density).unwrap();
        let mut cs = build_couplings(&net, &grid, &net.cfd).unwrap();
        let (u, f) = solve_cfd_zone(&mut grid, &mut cs, &[0.0, 0.0], &[], 1e-8).unwrap();
        assert!(u.iter().all(|v| *v == 0.0));
        assert!(f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pure_diffusion_matches_dense_oracle() {
        let net = box_net();
        let mut grid = CfdGrid::new(net.zone(1), &net.cfd, net.air_density).unwrap();
        let mut cs = build_couplings(&net, &grid, &net.cfd).unwrap();
        let src = [(1.3, 2.9, 0.02)];
        let (u, _) = solve_cfd_zone(&mut grid, &mut cs, &[0.0, 0.0], &src, 1e-8).unwrap();

        // independent dense 5-point Laplacian with exchange to clean outside air
        let n = 64;
        let h = 0.5;
        let gamma = grid.diffusivity;
        let d = gamma * 3.0 * h / h;
        let mut a = DMatrix::<f64>::zeros(n, n);
        for iy in 0..8usize {
            for ix in 0..8usize {
                let p = iy * 8 + ix;
                let nbrs = [
                    (ix > 0).then(|| p - 1),
                    (ix < 7).then(|| p + 1),
                    (iy > 0).then(|| p - 8),
                    (iy < 7).then(|| p + 8),
                ];
                for q in nbrs.into_iter().flatten() {
                    a[(p, p)] += d;
                    a[(p, q)] -= d;
                }
            }
        }
        // door cells: rows 3 and 4 on the west and east walls, 0.5 m overlap each
        let x = net.cfd.opening_diffusivity * 0.5 * 2.0 / h;
        for iy in [3usize, 4] {
            a[(iy * 8, iy * 8)] += x;
            a[(iy * 8 + 7, iy * 8 + 7)] += x;
        }
        let mut b = vec![0.0; n];
        b[5 * 8 + 2] = 0.02;
        let expect = lu_solve(a, &b).unwrap();
        for (p, q) in u.iter().zip(&expect) {
            assert!((p - q).abs() <= 1e-10 * q.abs().max(1.0), "{p} vs {q}");
        }
        // maximum principle: nothing exceeds the source cell
        let max = u.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, u[5 * 8 + 2]);
    }
}
