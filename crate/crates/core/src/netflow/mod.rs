//! Multizone airflow network: zones, flow paths, steady pressure solution and
//! well-mixed contaminant transport.

mod config;
mod solve;
mod transport;

pub use config::{BuildingFile, SEVEN_ROOM_TOML};
pub use solve::{solve_pressures, solve_pressures_with, PressureSolution, SolverOptions};
pub use transport::{step_transport, WellMixedOperator, ZoneSources};
pub use crate::simulator::{simulate, TransientTrace};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Zone id reserved for the outdoor environment.
pub const AMBIENT: usize = 0;

/// Air density at 20 °C, kg/m³.
pub const AIR_DENSITY: f64 = 1.204;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZoneKind {
    Interior,
    Ambient,
    Cfd,
}

/// Outward normal of an exterior opening.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facing {
    North,
    East,
    South,
    West,
}

impl Facing {
    pub fn azimuth_deg(self) -> f64 {
        match self {
            Facing::North => 0.0,
            Facing::East => 90.0,
            Facing::South => 180.0,
            Facing::West => 270.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: usize,
    pub name: String,
    pub kind: ZoneKind,
    /// Plan position of the zone's south-west corner, m.
    pub origin: [f64; 2],
    /// (width along x, depth along y), m.
    pub floor_dims: [f64; 2],
    pub height: f64,
    pub volume: f64,
}

impl Zone {
    pub fn area(&self) -> f64 {
        self.floor_dims[0] * self.floor_dims[1]
    }

    /// Whether a zone-local coordinate lies inside the footprint.
    pub fn contains_local(&self, x: f64, y: f64) -> bool {
        (0.0..=self.floor_dims[0]).contains(&x) && (0.0..=self.floor_dims[1]).contains(&y)
    }

    pub fn air_mass(&self, density: f64) -> f64 {
        density * self.volume
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowPath {
    pub name: String,
    pub from: usize,
    pub to: usize,
    /// c_ij, kg/(s·Pa^n)
    pub flow_coeff: f64,
    /// n_ij
    pub flow_exp: f64,
    /// Plan position of the opening centre, m.
    pub center: [f64; 2],
    pub width: f64,
    pub height: f64,
    /// Required when one end is the ambient zone.
    pub facing: Option<Facing>,
}

impl FlowPath {
    pub fn touches(&self, zone: usize) -> bool {
        self.from == zone || self.to == zone
    }

    pub fn other(&self, zone: usize) -> usize {
        if self.from == zone {
            self.to
        } else {
            self.from
        }
    }

    pub fn is_exterior(&self) -> bool {
        self.from == AMBIENT || self.to == AMBIENT
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wind {
    pub speed: f64,
    /// Direction the wind blows from, degrees clockwise from north.
    pub direction_deg: f64,
    pub cp_windward: f64,
    pub cp_leeward: f64,
    pub cp_side: f64,
}

impl Default for Wind {
    fn default() -> Self {
        Self { speed: 0.0, direction_deg: 0.0, cp_windward: 0.6, cp_leeward: -0.3, cp_side: 0.0 }
    }
}

impl Wind {
    pub fn pressure_coefficient(&self, facing: Facing) -> f64 {
        let mut diff = (facing.azimuth_deg() - self.direction_deg).rem_euclid(360.0);
        if diff > 180.0 {
            diff = 360.0 - diff;
        }
        if diff <= 45.0 {
            self.cp_windward
        } else if diff >= 135.0 {
            self.cp_leeward
        } else {
            self.cp_side
        }
    }

    pub fn surface_pressure(&self, facing: Facing, density: f64) -> f64 {
        0.5 * density * self.speed * self.speed * self.pressure_coefficient(facing)
    }
}

/// Parameters of the grid-resolved zone model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfdSettings {
    pub nx: usize,
    pub ny: usize,
    /// Γ_u in kg/(m·s); when absent it is derived from `diffusion_time_s`.
    pub diffusivity: Option<f64>,
    /// Target diffusive time across the zone's longer side, s.
    pub diffusion_time_s: f64,
    /// Face conductance per unit face area and inverse spacing, kg/(s·Pa·m).
    pub permeability: f64,
    /// Diffusive exchange coefficient across openings, kg/(m·s).
    pub opening_diffusivity: f64,
    pub damping: f64,
    /// ε of the coupling criterion, kg/s.
    pub tolerance: f64,
    pub max_outer: usize,
    pub inner_tolerance: f64,
}

impl Default for CfdSettings {
    fn default() -> Self {
        Self {
            nx: 20,
            ny: 20,
            diffusivity: None,
            diffusion_time_s: 300.0,
            permeability: 20.0,
            opening_diffusivity: 0.001,
            damping: 0.5,
            tolerance: 1e-6,
            max_outer: 50,
            inner_tolerance: 1e-8,
        }
    }
}

/// The static building description: zones (index = id, index 0 is ambient),
/// paths, boundary conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildingNetwork {
    pub zones: Vec<Zone>,
    pub paths: Vec<FlowPath>,
    pub wind: Wind,
    pub outdoor_temp: f64,
    pub air_density: f64,
    /// F_j per zone id (index 0 unused), kg/s.
    pub air_sources: Vec<f64>,
    pub cfd: CfdSettings,
}

impl BuildingNetwork {
    /// Builds and validates a network from interior zones and paths.
    pub fn new(interior: Vec<Zone>, paths: Vec<FlowPath>, wind: Wind) -> Result<Self> {
        let n = interior.len();
        let mut zones = Vec::with_capacity(n + 1);
        zones.push(Zone {
            id: AMBIENT,
            name: "Ambient".into(),
            kind: ZoneKind::Ambient,
            origin: [0.0, 0.0],
            floor_dims: [0.0, 0.0],
            height: 0.0,
            volume: f64::INFINITY,
        });
        zones.extend(interior);
        let net = Self {
            zones,
            paths,
            wind,
            outdoor_temp: 20.0,
            air_density: AIR_DENSITY,
            air_sources: vec![0.0; n + 1],
            cfd: CfdSettings::default(),
        };
        net.validate()?;
        Ok(net)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        BuildingFile::parse(text)?.into_network()
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The shipped seven-room case-study building.
    pub fn seven_room() -> Self {
        Self::from_toml(SEVEN_ROOM_TOML).expect("shipped building config is valid")
    }

    /// Number of non-ambient zones.
    pub fn n_zones(&self) -> usize {
        self.zones.len() - 1
    }

    pub fn zone(&self, id: usize) -> &Zone {
        &self.zones[id]
    }

    pub fn interior_ids(&self) -> impl Iterator<Item = usize> {
        1..self.zones.len()
    }

    pub fn cfd_zone(&self) -> Option<usize> {
        self.zones.iter().position(|z| z.kind == ZoneKind::Cfd)
    }

    /// Copy of the network with `zone` as the single grid-resolved zone
    /// (`None` makes every zone well mixed).
    pub fn with_cfd_zone(&self, zone: Option<usize>) -> Self {
        let mut net = self.clone();
        for z in net.zones.iter_mut().skip(1) {
            z.kind = if Some(z.id) == zone { ZoneKind::Cfd } else { ZoneKind::Interior };
        }
        net
    }

    /// Wind pressure acting on the ambient end of an exterior path.
    pub fn ambient_pressure(&self, path: &FlowPath) -> f64 {
        match path.facing {
            Some(f) => self.wind.surface_pressure(f, self.air_density),
            None => 0.0,
        }
    }

    /// Zones joined to `zone` by at least one interior path, ascending.
    pub fn adjacent(&self, zone: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .paths
            .iter()
            .filter(|p| p.touches(zone) && !p.is_exterior())
            .map(|p| p.other(zone))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.zones.len() < 2 {
            return invalid("network needs at least one interior zone");
        }
        if self.zones[0].kind != ZoneKind::Ambient {
            return invalid("zone 0 must be the ambient zone");
        }
        let mut cfd = 0;
        for (i, z) in self.zones.iter().enumerate().skip(1) {
            if z.id != i {
                return invalid(format!("zone ids must be 1..N in order, found {} at position {i}", z.id));
            }
            match z.kind {
                ZoneKind::Ambient => return invalid("exactly one ambient zone is allowed"),
                ZoneKind::Cfd => cfd += 1,
                ZoneKind::Interior => {}
            }
            if !(z.volume > 0.0 && z.volume.is_finite()) {
                return invalid(format!("zone {i} volume must be positive"));
            }
            if !(z.floor_dims[0] > 0.0 && z.floor_dims[1] > 0.0 && z.height > 0.0) {
                return invalid(format!("zone {i} dimensions must be positive"));
            }
        }
        if cfd > 1 {
            return invalid("at most one cfd zone is allowed");
        }
        if self.air_sources.len() != self.zones.len() {
            return invalid("air_sources must have one entry per zone");
        }
        for (k, p) in self.paths.iter().enumerate() {
            if p.from >= self.zones.len() || p.to >= self.zones.len() {
                return invalid(format!("path {k} references a missing zone"));
            }
            if p.from == p.to {
                return invalid(format!("path {k} connects zone {} to itself", p.from));
            }
            if !(p.flow_coeff > 0.0) {
                return invalid(format!("path {k} flow coefficient must be positive"));
            }
            if !(0.5..=1.0).contains(&p.flow_exp) {
                return invalid(format!("path {k} flow exponent must lie in [0.5, 1]"));
            }
            if p.is_exterior() && p.facing.is_none() && self.wind.speed != 0.0 {
                return invalid(format!("exterior path {k} needs a facing"));
            }
        }
        // connectivity of interior zones plus ambient
        let n = self.zones.len();
        let mut seen = vec![false; n];
        let mut stack = vec![AMBIENT];
        seen[AMBIENT] = true;
        while let Some(z) = stack.pop() {
            for p in self.paths.iter().filter(|p| p.touches(z)) {
                let o = p.other(z);
                if !seen[o] {
                    seen[o] = true;
                    stack.push(o);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return invalid(format!("zone {i} is not connected to the network"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wind_sides() {
        let w = Wind { speed: 3.0, direction_deg: 270.0, ..Wind::default() };
        assert_eq!(w.pressure_coefficient(Facing::West), 0.6);
        assert_eq!(w.pressure_coefficient(Facing::East), -0.3);
        assert_eq!(w.pressure_coefficient(Facing::North), 0.0);
        let p = w.surface_pressure(Facing::West, AIR_DENSITY);
        assert!((p - 0.5 * 1.204 * 9.0 * 0.6).abs() < 1e-12);
    }

    #[test]
    fn seven_room_is_valid() {
        let net = BuildingNetwork::seven_room();
        assert_eq!(net.n_zones(), 7);
        assert_eq!(net.adjacent(1), vec![2, 3, 4, 5, 6, 7]);
        assert_eq!(net.adjacent(4), vec![1]);
        assert!(net.cfd_zone().is_none());
        assert_eq!(net.with_cfd_zone(Some(1)).cfd_zone(), Some(1));
    }
}
