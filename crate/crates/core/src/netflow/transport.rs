use nalgebra::{DMatrix, DVector, LU};

use super::{BuildingNetwork, PressureSolution, AMBIENT};
use crate::error::{invalid, Result};

/// S_j per zone id (index 0 ignored), g/s.
pub type ZoneSources = Vec<f64>;

/// Implicit-Euler operator for the well-mixed zone balances at a fixed flow
/// field and step, factorized once.
///
///   (M_j/dt + out_j) C_j' − Σ_{i→j} F_ij C_i' = M_j C_j / dt + S_j
///
/// with M_j = ρ V_j and out_j the total outflow of zone j. Flows carry the
/// upwind-zone concentration; the ambient is clean.
pub struct WellMixedOperator {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    mass_over_dt: Vec<f64>,
    /// Per zone, the rate at which air leaves to the outside (kg/s).
    exhaust: Vec<f64>,
}

impl WellMixedOperator {
    pub fn new(net: &BuildingNetwork, sol: &PressureSolution, dt: f64) -> Self {
        let n = net.n_zones();
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut mass_over_dt = vec![0.0; n + 1];
        let mut exhaust = vec![0.0; n + 1];
        for j in 1..=n {
            mass_over_dt[j] = net.air_density * net.zones[j].volume / dt;
            a[(j - 1, j - 1)] += mass_over_dt[j];
            let f = net.air_sources[j];
            if f < 0.0 {
                a[(j - 1, j - 1)] -= f;
                exhaust[j] -= f;
            }
        }
        for (p, &f) in net.paths.iter().zip(&sol.path_flows) {
            if f == 0.0 {
                continue;
            }
            let (up, down, q) = if f > 0.0 { (p.from, p.to, f) } else { (p.to, p.from, -f) };
            if up != AMBIENT {
                a[(up - 1, up - 1)] += q;
                if down != AMBIENT {
                    a[(down - 1, up - 1)] -= q;
                } else {
                    exhaust[up] += q;
                }
            }
        }
        Self { lu: a.lu(), mass_over_dt, exhaust }
    }

    pub fn apply(&self, conc: &[f64], sources: &[f64]) -> Vec<f64> {
        let n = conc.len() - 1;
        let rhs = DVector::from_iterator(
            n,
            (1..=n).map(|j| self.mass_over_dt[j] * conc[j] + sources.get(j).copied().unwrap_or(0.0)),
        );
        let x = self.lu.solve(&rhs).expect("transport operator is an M-matrix");
        std::iter::once(0.0).chain(x.iter().map(|v| v.max(0.0))).collect()
    }

    /// Rate of contaminant leaving the building at concentrations `conc`, g/s.
    pub fn export_rate(&self, conc: &[f64]) -> f64 {
        self.exhaust.iter().zip(conc).skip(1).map(|(q, c)| q * c).sum()
    }
}

/// One implicit-Euler step of the well-mixed balances. `conc` and `sources`
/// are indexed by zone id; the returned vector has ambient entry 0.
pub fn step_transport(
    net: &BuildingNetwork,
    sol: &PressureSolution,
    conc: &[f64],
    sources: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return invalid("dt must be positive");
    }
    if conc.len() != net.zones.len() || sources.len() != net.zones.len() {
        return invalid("concentration and source vectors need one entry per zone");
    }
    if conc.iter().any(|c| !(*c >= 0.0)) {
        return invalid("concentrations must be nonnegative");
    }
    Ok(WellMixedOperator::new(net, sol, dt).apply(conc, sources))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netflow::{solve_pressures, FlowPath, Wind, Zone, ZoneKind, AIR_DENSITY};

    fn zone(id: usize, volume: f64) -> Zone {
        Zone {
            id,
            name: format!("z{id}"),
            kind: ZoneKind::Interior,
            origin: [0.0, 0.0],
            floor_dims: [2.0, 2.0],
            height: volume / 4.0,
            volume,
        }
    }

    #[test]
    fn isolated_zone_accumulates() {
        let net = BuildingNetwork {
            zones: vec![zone(0, 1.0), zone(1, 30.0)],
            paths: vec![],
            wind: Wind::default(),
            outdoor_temp: 20.0,
            air_density: AIR_DENSITY,
            air_sources: vec![0.0, 0.0],
            cfd: Default::default(),
        };
        let sol = PressureSolution { pressures: vec![0.0; 2], path_flows: vec![], residual_norm: 0.0, iterations: 0 };
        let out = step_transport(&net, &sol, &[0.0, 0.0], &[0.0, 0.5], 2.0).unwrap();
        let expect = 0.5 * 2.0 / (AIR_DENSITY * 30.0);
        assert!((out[1] - expect).abs() < 1e-15);
        let zero = step_transport(&net, &sol, &[0.0, 0.0], &[0.0, 0.0], 2.0).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
    }

    #[test]
    fn closed_loop_conserves_mass() {
        let p = |from, to| FlowPath {
            name: String::new(),
            from,
            to,
            flow_coeff: 0.05,
            flow_exp: 0.5,
            center: [0.0, 0.0],
            width: 1.0,
            height: 1.0,
            facing: None,
        };
        let net = BuildingNetwork {
            zones: vec![zone(0, 1.0), zone(1, 20.0), zone(2, 45.0)],
            paths: vec![p(1, 2), p(2, 1)],
            wind: Wind::default(),
            outdoor_temp: 20.0,
            air_density: AIR_DENSITY,
            air_sources: vec![0.0; 3],
            cfd: Default::default(),
        };
        let sol = PressureSolution {
            pressures: vec![0.0; 3],
            path_flows: vec![0.3, 0.3],
            residual_norm: 0.0,
            iterations: 0,
        };
        let mass = |c: &[f64]| AIR_DENSITY * (20.0 * c[1] + 45.0 * c[2]);
        let mut c = vec![0.0, 1.0, 0.0];
        let m0 = mass(&c);
        for _ in 0..50 {
            c = step_transport(&net, &sol, &c, &[0.0; 3], 1.0).unwrap();
            assert!((mass(&c) - m0).abs() <= 1e-10 * m0);
        }
        assert!(c[2] > 0.0);
    }

    #[test]
    fn seven_room_positive() {
        let net = BuildingNetwork::seven_room();
        let sol = solve_pressures(&net).unwrap();
        let mut src = vec![0.0; 8];
        src[1] = 0.18;
        let mut c = vec![0.0; 8];
        for _ in 0..300 {
            c = step_transport(&net, &sol, &c, &src, 1.0).unwrap();
        }
        assert!(c.iter().skip(1).all(|v| *v > 0.0), "{c:?}");
    }
}
