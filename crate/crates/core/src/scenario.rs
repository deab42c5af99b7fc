use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::netflow::BuildingNetwork;

/// θ = [S_N, Z, S_a, S_t, {(x_i, y_i)}]. All sources share one release rate
/// and activation time; coordinates are local to the zone (south-west corner
/// at the origin).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceScenario {
    pub zone: usize,
    /// Release rate per source, g/s.
    pub amount: f64,
    /// Activation time, min.
    pub start: f64,
    pub locations: Vec<(f64, f64)>,
}

impl SourceScenario {
    pub fn count(&self) -> usize {
        self.locations.len()
    }

    /// Total release rate, g/s.
    pub fn total_rate(&self) -> f64 {
        self.amount * self.count() as f64
    }

    pub fn validate(&self, net: &BuildingNetwork) -> Result<()> {
        if self.zone == 0 || self.zone > net.n_zones() {
            return invalid(format!("source zone {} does not exist", self.zone));
        }
        if self.locations.is_empty() {
            return invalid("scenario needs at least one source");
        }
        if !(self.amount >= 0.0 && self.amount.is_finite()) {
            return invalid("release rate must be finite and nonnegative");
        }
        if !self.start.is_finite() {
            return invalid("activation time must be finite");
        }
        let z = net.zone(self.zone);
        for &(x, y) in &self.locations {
            if !z.contains_local(x, y) {
                return invalid(format!("source ({x}, {y}) lies outside zone {}", self.zone));
            }
        }
        Ok(())
    }

    /// Reference case: two hallway sources at 0.09 g/s each from minute 18.
    pub fn reference() -> Self {
        Self { zone: 1, amount: 0.09, start: 18.0, locations: vec![(4.0, 1.36), (1.44, 3.6)] }
    }
}
