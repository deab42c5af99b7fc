//! TOML building description. See `data/seven_room.toml` for a commented example.

use serde::{Deserialize, Serialize};

use super::{BuildingNetwork, CfdSettings, Facing, FlowPath, Wind, Zone, ZoneKind, AMBIENT};
use crate::error::{Error, Result};

pub const SEVEN_ROOM_TOML: &str = include_str!("../../data/seven_room.toml");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingFile {
    pub ambient: AmbientSection,
    #[serde(default)]
    pub wind: WindSection,
    pub zones: Vec<ZoneSection>,
    pub paths: Vec<PathSection>,
    #[serde(default)]
    pub cfd: CfdSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientSection {
    #[serde(default = "default_temp")]
    pub temperature_c: f64,
    #[serde(default = "default_density")]
    pub air_density: f64,
}

fn default_temp() -> f64 {
    20.0
}
fn default_density() -> f64 {
    super::AIR_DENSITY
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindSection {
    pub speed: f64,
    pub direction_deg: f64,
    #[serde(default = "cp_w")]
    pub cp_windward: f64,
    #[serde(default = "cp_l")]
    pub cp_leeward: f64,
    #[serde(default)]
    pub cp_side: f64,
}

fn cp_w() -> f64 {
    0.6
}
fn cp_l() -> f64 {
    -0.3
}

impl Default for WindSection {
    fn default() -> Self {
        let w = Wind::default();
        Self {
            speed: w.speed,
            direction_deg: w.direction_deg,
            cp_windward: w.cp_windward,
            cp_leeward: w.cp_leeward,
            cp_side: w.cp_side,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneSection {
    pub id: usize,
    pub name: String,
    #[serde(default = "interior")]
    pub kind: ZoneKind,
    pub origin: [f64; 2],
    pub floor_dims: [f64; 2],
    pub height: f64,
    /// Defaults to floor area × height.
    pub volume: Option<f64>,
    /// F_j, kg/s
    #[serde(default)]
    pub air_source: f64,
}

fn interior() -> ZoneKind {
    ZoneKind::Interior
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpeningKind {
    Door,
    Window,
    Leak,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    pub name: String,
    pub kind: OpeningKind,
    pub from: usize,
    pub to: usize,
    pub center: [f64; 2],
    pub width: f64,
    pub height: f64,
    pub facing: Option<Facing>,
    /// Discharge fraction of the geometric area for doors/windows.
    #[serde(default = "discharge")]
    pub discharge: f64,
    pub flow_coeff: Option<f64>,
    pub flow_exp: Option<f64>,
}

fn discharge() -> f64 {
    0.6
}

impl BuildingFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn into_network(self) -> Result<BuildingNetwork> {
        let rho = self.ambient.air_density;
        let mut zones = Vec::with_capacity(self.zones.len());
        let mut sources = vec![0.0];
        let mut sorted = self.zones;
        sorted.sort_by_key(|z| z.id);
        for z in sorted {
            if z.kind == ZoneKind::Ambient || z.id == AMBIENT {
                return Err(Error::Config("ambient zone is implicit (id 0); do not list it".into()));
            }
            sources.push(z.air_source);
            zones.push(Zone {
                id: z.id,
                name: z.name,
                kind: z.kind,
                origin: z.origin,
                volume: z.volume.unwrap_or(z.floor_dims[0] * z.floor_dims[1] * z.height),
                floor_dims: z.floor_dims,
                height: z.height,
            });
        }
        let mut paths = Vec::with_capacity(self.paths.len());
        for p in self.paths {
            let area = p.width * p.height;
            let (c, n) = match p.kind {
                OpeningKind::Door | OpeningKind::Window => (
                    p.flow_coeff.unwrap_or(p.discharge * area * (2.0 * rho).sqrt()),
                    p.flow_exp.unwrap_or(0.5),
                ),
                OpeningKind::Leak => (
                    p.flow_coeff.ok_or_else(|| {
                        Error::Config(format!("leak `{}` needs an explicit flow_coeff", p.name))
                    })?,
                    p.flow_exp.unwrap_or(0.65),
                ),
            };
            paths.push(FlowPath {
                name: p.name,
                from: p.from,
                to: p.to,
                flow_coeff: c,
                flow_exp: n,
                center: p.center,
                width: p.width,
                height: p.height,
                facing: p.facing,
            });
        }
        let wind = Wind {
            speed: self.wind.speed,
            direction_deg: self.wind.direction_deg,
            cp_windward: self.wind.cp_windward,
            cp_leeward: self.wind.cp_leeward,
            cp_side: self.wind.cp_side,
        };
        let mut net = BuildingNetwork::new(zones, paths, wind)?;
        net.outdoor_temp = self.ambient.temperature_c;
        net.air_density = rho;
        net.air_sources = sources;
        net.cfd = self.cfd;
        net.validate()?;
        Ok(net)
    }
}
