//! Reconstruction of a full transient from the two knot grids.
//!
//! Knot values are conditioned on with a squared-exponential process in time,
//! one per stage, with length scale twice the knot spacing and variance taken
//! from the stage's output covariance. The process has an unknown constant
//! level estimated from the knots (so a flat transient is reproduced exactly
//! between knots). Stages do not share covariance, so each query time is
//! served by the stage that owns it; a zero-valued knot at the activation time
//! anchors stage 1.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Chol;

const TIME_JITTER: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotGrid {
    /// Stage-1 instants relative to activation, min (excluding the zero knot).
    pub stage1: Vec<f64>,
    pub stage2: Vec<f64>,
}

impl KnotGrid {
    /// q_1 instants at 1-min spacing from 1 min after activation, then q_2 at
    /// 4-min spacing starting one minute after the last stage-1 instant.
    pub fn standard(q1: usize, q2: usize) -> Self {
        let stage1: Vec<f64> = (1..=q1).map(|k| k as f64).collect();
        let start = q1 as f64 + 1.0;
        let stage2 = (0..q2).map(|k| start + 4.0 * k as f64).collect();
        Self { stage1, stage2 }
    }

    pub fn spacing(knots: &[f64]) -> f64 {
        if knots.len() < 2 {
            1.0
        } else {
            (knots[knots.len() - 1] - knots[0]) / (knots.len() - 1) as f64
        }
    }

    /// Valid reconstruction range [0, last stage-2 knot + one spacing].
    pub fn range(&self) -> (f64, f64) {
        let last = *self.stage2.last().or(self.stage1.last()).unwrap_or(&0.0);
        let sp = if self.stage2.is_empty() { Self::spacing(&self.stage1) } else { Self::spacing(&self.stage2) };
        (0.0, last + sp)
    }
}

#[derive(Clone, Debug)]
struct StageKernel {
    knots: Vec<f64>,
    ell: f64,
    var: f64,
    chol: Chol,
    /// K⁻¹1 and 1ᵀK⁻¹1
    ai1: Vec<f64>,
    s11: f64,
}

impl StageKernel {
    fn new(knots: Vec<f64>, spacing: f64, var: f64) -> Result<Self> {
        let ell = 2.0 * spacing;
        let n = knots.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            let d = knots[i] - knots[j];
            (-(d * d) / (ell * ell)).exp() + if i == j { TIME_JITTER } else { 0.0 }
        });
        let var = if var > 0.0 && var.is_finite() { var } else { 0.0 };
        let chol = Chol::new(&k)?;
        let ai1 = chol.solve_vec(&vec![1.0; n]);
        let s11 = ai1.iter().sum();
        Ok(Self { chol, knots, ell, var, ai1, s11 })
    }

    /// (μ*, ν*) at `t` given knot values `mu`.
    fn condition(&self, mu: &[f64], t: f64) -> (f64, f64) {
        let r: Vec<f64> = self.knots.iter().map(|k| (-((t - k) * (t - k)) / (self.ell * self.ell)).exp()).collect();
        let w = self.chol.solve_vec(&r);
        let level = self.ai1.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>() / self.s11;
        let mean = level + w.iter().zip(mu).map(|(a, b)| a * (b - level)).sum::<f64>();
        let explained: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
        let lack = 1.0 - w.iter().sum::<f64>();
        (mean, (self.var * (1.0 - explained + lack * lack / self.s11)).max(0.0))
    }
}

/// Precomputed temporal covariance for one emulator.
#[derive(Clone, Debug)]
pub struct TemporalModel {
    pub grid: KnotGrid,
    s1: StageKernel,
    s2: StageKernel,
}

impl TemporalModel {
    /// `var1`, `var2`: temporal variance of each stage.
    pub fn new(grid: KnotGrid, var1: f64, var2: f64) -> Result<Self> {
        if grid.stage1.is_empty() || grid.stage2.is_empty() {
            return invalid("both stages need at least one knot");
        }
        let mut k1 = vec![0.0];
        k1.extend(&grid.stage1);
        let s1 = StageKernel::new(k1, KnotGrid::spacing(&grid.stage1), var1)?;
        let s2 = StageKernel::new(grid.stage2.clone(), KnotGrid::spacing(&grid.stage2), var2)?;
        Ok(Self { grid, s1, s2 })
    }

    /// (μ*, ν*) at `tau` minutes after activation from stage-1 knot means
    /// `mu1` and stage-2 knot means `mu2`.
    pub fn reconstruct(&self, mu1: &[f64], mu2: &[f64], tau: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.grid.range();
        if !(tau >= lo && tau <= hi) {
            return Err(Error::OutOfRange(tau));
        }
        if self.owns_stage1(tau) {
            let mut knots = Vec::with_capacity(mu1.len() + 1);
            knots.push(0.0);
            knots.extend_from_slice(mu1);
            Ok(self.s1.condition(&knots, tau))
        } else {
            Ok(self.s2.condition(mu2, tau))
        }
    }

    pub fn owns_stage1(&self, tau: f64) -> bool {
        tau <= *self.grid.stage1.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knots_are_interpolated() {
        let tm = TemporalModel::new(KnotGrid::standard(5, 5), 2.0, 3.0).unwrap();
        let mu1 = [0.1, 0.3, 0.5, 0.6, 0.65];
        let mu2 = [0.7, 0.8, 0.85, 0.87, 0.88];
        for (k, v) in tm.grid.stage1.clone().iter().zip(mu1) {
            let (m, nu) = tm.reconstruct(&mu1, &mu2, *k).unwrap();
            assert!((m - v).abs() < 1e-8 && nu < 1e-8);
        }
        for (k, v) in tm.grid.stage2.clone().iter().zip(mu2) {
            let (m, nu) = tm.reconstruct(&mu1, &mu2, *k).unwrap();
            assert!((m - v).abs() < 1e-8 && nu < 1e-8);
        }
        assert_eq!(tm.reconstruct(&mu1, &mu2, 0.0).unwrap().0.abs() < 1e-9, true);
        assert!(matches!(tm.reconstruct(&mu1, &mu2, 26.5), Err(Error::OutOfRange(_))));
        assert!(tm.reconstruct(&mu1, &mu2, 26.0).is_ok());
        assert!(matches!(tm.reconstruct(&mu1, &mu2, -0.1), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn flat_segment_midpoint() {
        let tm = TemporalModel::new(KnotGrid::standard(5, 5), 1.0, 1.0).unwrap();
        let v = 0.42;
        let (m, nu) = tm.reconstruct(&[0.1; 5], &[v; 5], 12.0).unwrap();
        assert!((m - v).abs() < 1e-6, "{m}");
        assert!(nu >= 0.0);
    }

    #[test]
    fn standard_grid() {
        let g = KnotGrid::standard(5, 5);
        assert_eq!(g.stage1, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(g.stage2, vec![6.0, 10.0, 14.0, 18.0, 22.0]);
        assert_eq!(g.range(), (0.0, 26.0));
    }
}
