use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{BuildingNetwork, FlowPath, AMBIENT};
use crate::error::{Error, Result};
use crate::linalg::lu_solve;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Mass-balance tolerance per zone, kg/s.
    pub tol_flow: f64,
    pub max_iter: usize,
    /// Half-width of the linearized band around ΔP = 0, Pa.
    pub dp_lin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol_flow: 1e-8, max_iter: 200, dp_lin: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PressureSolution {
    /// P_j relative to ambient, indexed by zone id (entry 0 is ambient = 0).
    pub pressures: Vec<f64>,
    /// Signed flow per path, positive from `from` to `to`, kg/s.
    pub path_flows: Vec<f64>,
    /// Largest zone mass imbalance, kg/s.
    pub residual_norm: f64,
    pub iterations: usize,
}

impl PressureSolution {
    /// Flow through path `k` seen as leaving `zone` (F_ij with i = zone).
    pub fn flow_from(&self, net: &BuildingNetwork, k: usize, zone: usize) -> f64 {
        if net.paths[k].from == zone {
            self.path_flows[k]
        } else {
            -self.path_flows[k]
        }
    }

    /// Σ_i F_ij + F_j for every zone (index 0 unused).
    pub fn zone_residuals(&self, net: &BuildingNetwork) -> Vec<f64> {
        residuals(net, &self.path_flows)
    }
}

/// Power-law flow with a linear band of half-width `dp_lin` around zero.
#[inline]
pub fn power_law(c: f64, n: f64, dp: f64, dp_lin: f64) -> f64 {
    let a = dp.abs();
    if a < dp_lin {
        c * dp_lin.powf(n - 1.0) * dp
    } else {
        c * a.powf(n) * dp.signum()
    }
}

#[inline]
fn power_law_slope(c: f64, n: f64, dp: f64, dp_lin: f64) -> f64 {
    let a = dp.abs();
    if a < dp_lin {
        c * dp_lin.powf(n - 1.0)
    } else {
        n * c * a.powf(n - 1.0)
    }
}

/// Pressure difference driving path `p`, including wind on an ambient end and
/// an optional extra offset.
fn path_dp(net: &BuildingNetwork, p: &FlowPath, pressures: &[f64], offset: f64) -> f64 {
    let end = |z: usize| {
        if z == AMBIENT {
            net.ambient_pressure(p)
        } else {
            pressures[z]
        }
    };
    end(p.from) - end(p.to) + offset
}

fn residuals(net: &BuildingNetwork, flows: &[f64]) -> Vec<f64> {
    let mut r = net.air_sources.clone();
    r[AMBIENT] = 0.0;
    for (p, &f) in net.paths.iter().zip(flows) {
        if p.from != AMBIENT {
            r[p.from] -= f;
        }
        if p.to != AMBIENT {
            r[p.to] += f;
        }
    }
    r
}

fn max_abs(r: &[f64]) -> f64 {
    r.iter().skip(1).fold(0.0, |m, v| m.max(v.abs()))
}

pub fn solve_pressures(net: &BuildingNetwork) -> Result<PressureSolution> {
    solve_pressures_with(net, &SolverOptions::default(), None)
}

/// Newton solve of the zone mass balances. `offsets[k]`, when given, is added
/// to the pressure difference of path k (used by the grid-zone coupling).
pub fn solve_pressures_with(
    net: &BuildingNetwork,
    opts: &SolverOptions,
    offsets: Option<&[f64]>,
) -> Result<PressureSolution> {
    let nz = net.zones.len();
    let n = nz - 1;
    let off = |k: usize| offsets.map_or(0.0, |o| o[k]);

    let flows_at = |pr: &[f64]| -> Vec<f64> {
        net.paths
            .iter()
            .enumerate()
            .map(|(k, p)| power_law(p.flow_coeff, p.flow_exp, path_dp(net, p, pr, off(k)), opts.dp_lin))
            .collect()
    };

    // Jacobian of the residual with respect to P_1..P_N given per-path slopes.
    let assemble = |slopes: &[f64]| -> DMatrix<f64> {
        let mut j = DMatrix::<f64>::zeros(n, n);
        for (p, &g) in net.paths.iter().zip(slopes) {
            // r_from -= F, r_to += F, dF/dP_from = g, dF/dP_to = -g
            for (row, sign) in [(p.from, -1.0), (p.to, 1.0)] {
                if row == AMBIENT {
                    continue;
                }
                if p.from != AMBIENT {
                    j[(row - 1, p.from - 1)] += sign * g;
                }
                if p.to != AMBIENT {
                    j[(row - 1, p.to - 1)] -= sign * g;
                }
            }
        }
        j
    };

    // initial guess: every path linear with conductance c
    let mut pressures = vec![0.0; nz];
    {
        let slopes: Vec<f64> = net.paths.iter().map(|p| p.flow_coeff).collect();
        let jac = assemble(&slopes);
        let lin_flows: Vec<f64> = net
            .paths
            .iter()
            .enumerate()
            .map(|(k, p)| p.flow_coeff * path_dp(net, p, &pressures, off(k)))
            .collect();
        let r = residuals(net, &lin_flows);
        let rhs: Vec<f64> = r[1..].iter().map(|v| -v).collect();
        let delta = lu_solve(jac, &rhs).ok_or(Error::SingularJacobian)?;
        for i in 0..n {
            pressures[i + 1] = delta[i];
        }
    }

    let mut flows = flows_at(&pressures);
    let mut r = residuals(net, &flows);
    let mut norm = max_abs(&r);
    let target = opts.tol_flow * 1e-4;
    let mut iterations = 0;
    while norm > target && iterations < opts.max_iter {
        iterations += 1;
        let slopes: Vec<f64> = net
            .paths
            .iter()
            .enumerate()
            .map(|(k, p)| {
                power_law_slope(p.flow_coeff, p.flow_exp, path_dp(net, p, &pressures, off(k)), opts.dp_lin)
            })
            .collect();
        let jac = assemble(&slopes);
        let rhs: Vec<f64> = r[1..].iter().map(|v| -v).collect();
        let delta = lu_solve(jac, &rhs).ok_or(Error::SingularJacobian)?;
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::SingularJacobian);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = std::iter::once(0.0)
                .chain((0..n).map(|i| pressures[i + 1] + step * delta[i]))
                .collect();
            let tf = flows_at(&trial);
            let tr = residuals(net, &tf);
            let tn = max_abs(&tr);
            if tn < norm {
                pressures = trial;
                flows = tf;
                r = tr;
                norm = tn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // round-off floor reached
            break;
        }
    }
    if norm > opts.tol_flow {
        return Err(Error::NonConvergence { iterations, residual: norm });
    }
    Ok(PressureSolution { pressures, path_flows: flows, residual_norm: norm, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netflow::{Wind, Zone, ZoneKind};

    fn zone(id: usize) -> Zone {
        Zone {
            id,
            name: format!("z{id}"),
            kind: ZoneKind::Interior,
            origin: [0.0, 0.0],
            floor_dims: [3.0, 3.0],
            height: 3.0,
            volume: 27.0,
        }
    }

    fn path(from: usize, to: usize, c: f64, n: f64) -> FlowPath {
        FlowPath {
            name: format!("{from}-{to}"),
            from,
            to,
            flow_coeff: c,
            flow_exp: n,
            center: [0.0, 0.0],
            width: 1.0,
            height: 1.0,
            facing: None,
        }
    }

    #[test]
    fn two_zone_injection_inverts_power_law() {
        // a weak leak to ambient from each zone keeps the system grounded
        let mut net = BuildingNetwork::new(
            vec![zone(1), zone(2)],
            vec![path(1, 2, 0.001, 0.65), path(0, 1, 1e-12, 0.5), path(0, 2, 1e-12, 0.5)],
            Wind::default(),
        )
        .unwrap();
        net.air_sources = vec![0.0, 0.001, -0.001];
        let sol = solve_pressures(&net).unwrap();
        let dp = sol.pressures[1] - sol.pressures[2];
        assert!((dp - 1.0).abs() < 1e-6, "dp = {dp}");
        assert!(sol.residual_norm <= 1e-8);
    }

    #[test]
    fn symmetric_zones_balance() {
        let net = BuildingNetwork::new(
            vec![zone(1), zone(2)],
            vec![path(1, 2, 0.05, 0.5), path(0, 1, 0.02, 0.65), path(0, 2, 0.02, 0.65)],
            Wind::default(),
        )
        .unwrap();
        let sol = solve_pressures(&net).unwrap();
        assert_eq!(sol.pressures[1], sol.pressures[2]);
        assert_eq!(sol.path_flows[0], 0.0);
    }

    #[test]
    fn seven_room_balances() {
        let net = BuildingNetwork::seven_room();
        let sol = solve_pressures(&net).unwrap();
        assert!(sol.residual_norm <= 1e-8);
        for r in sol.zone_residuals(&net).iter().skip(1) {
            assert!(r.abs() <= 1e-8);
        }
        for (k, p) in net.paths.iter().enumerate() {
            let dp = path_dp(&net, p, &sol.pressures, 0.0);
            let f = sol.path_flows[k];
            assert_eq!(f.signum(), dp.signum());
            let expect = p.flow_coeff * dp.abs().powf(p.flow_exp);
            assert!((f.abs() - expect).abs() <= 1e-12 * expect);
            assert_eq!(sol.flow_from(&net, k, p.from), -sol.flow_from(&net, k, p.to));
        }
        // the hallway is pressurised by the windward door
        assert!(sol.pressures[1] > 0.0);
    }

    #[test]
    fn deterministic() {
        let net = BuildingNetwork::seven_room();
        let a = solve_pressures(&net).unwrap();
        let b = solve_pressures(&net).unwrap();
        assert_eq!(a, b);
    }
}
