use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::gp::{DesignSet, GpStage, OutputMatrix};
use super::temporal::{KnotGrid, TemporalModel};
use crate::error::{invalid, Error, Result};

pub const ARCHIVE_VERSION: u32 = 1;

/// (a, b, c): source count, source zone, observed zone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EmulatorIndex {
    pub sources: usize,
    pub zone: usize,
    pub observed: usize,
}

impl EmulatorIndex {
    pub fn file_name(&self) -> String {
        format!("gpe_a{}_b{}_c{}.json", self.sources, self.zone, self.observed)
    }
}

/// Trained two-stage emulator of one zone's concentration transient. The
/// design's last coordinate is the activation time; knot times are relative
/// to it.
#[derive(Clone, Debug)]
pub struct EmulatorModel {
    pub index: EmulatorIndex,
    pub design: DesignSet,
    pub grid: KnotGrid,
    pub stage1: GpStage,
    pub stage2: GpStage,
    pub temporal: TemporalModel,
    pub config_hash: String,
    pub seed: u64,
}

impl EmulatorModel {
    /// GLS fits of both stages with a shared λ.
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        index: EmulatorIndex,
        design: DesignSet,
        grid: KnotGrid,
        d1: Vec<Vec<f64>>,
        d2: Vec<Vec<f64>>,
        lambda: &[f64],
        config_hash: String,
        seed: u64,
    ) -> Result<Self> {
        if d1.len() != design.n() || d2.len() != design.n() {
            return invalid("output rows must match the design");
        }
        if d1.iter().any(|r| r.len() != grid.stage1.len()) || d2.iter().any(|r| r.len() != grid.stage2.len()) {
            return invalid("output columns must match the knot grid");
        }
        if d1.iter().chain(&d2).flatten().any(|v| !v.is_finite()) {
            return invalid("non-finite simulator output");
        }
        let stage1 = GpStage::fit(&design.points, OutputMatrix { rows: d1, times: grid.stage1.clone() }, lambda)?;
        let stage2 = GpStage::fit(&design.points, OutputMatrix { rows: d2, times: grid.stage2.clone() }, lambda)?;
        let mean_diag = |s: &DMatrix<f64>| (0..s.nrows()).map(|i| s[(i, i)]).sum::<f64>() / s.nrows() as f64;
        let temporal = TemporalModel::new(grid.clone(), mean_diag(&stage1.sigma_hat()), mean_diag(&stage2.sigma_hat()))?;
        Ok(Self { index, design, grid, stage1, stage2, temporal, config_hash, seed })
    }

    pub fn lambda(&self) -> &[f64] {
        self.stage1.lambda()
    }

    /// Activation time (min) encoded by unit-box θ.
    pub fn start_time(&self, theta: &[f64]) -> f64 {
        let d = self.design.dim() - 1;
        let (lo, hi) = self.design.bounds[d];
        lo + theta[d] * (hi - lo)
    }

    /// Knot means of both stages.
    pub fn predict_knots(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.stage1.predict_mean(theta), self.stage2.predict_mean(theta))
    }

    /// (μ*, ν*) at `tau` minutes after activation.
    pub fn reconstruct(&self, theta: &[f64], tau: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.grid.range();
        if !(tau >= lo && tau <= hi) {
            return Err(Error::OutOfRange(tau));
        }
        let mu = if self.temporal.owns_stage1(tau) {
            (self.stage1.predict_mean(theta), Vec::new())
        } else {
            (Vec::new(), self.stage2.predict_mean(theta))
        };
        let pad1 = if mu.0.is_empty() { vec![0.0; self.grid.stage1.len()] } else { mu.0 };
        let pad2 = if mu.1.is_empty() { vec![0.0; self.grid.stage2.len()] } else { mu.1 };
        self.temporal.reconstruct(&pad1, &pad2, tau)
    }

    /// Largest |mean − D| and largest c** over the design points.
    pub fn interpolation_error(&self) -> (f64, f64) {
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for (stage, rows) in [(&self.stage1, &self.stage1.outputs.rows), (&self.stage2, &self.stage2.outputs.rows)] {
            for (p, row) in self.design.points.iter().zip(rows) {
                let pr = stage.predict(p);
                for (a, b) in pr.mean.iter().zip(row) {
                    err = err.max((a - b).abs());
                }
                scale = scale.max(pr.cov_scale);
            }
        }
        (err, scale)
    }

    pub fn to_archive(&self) -> EmulatorArchive {
        let m = |x: DMatrix<f64>| x.row_iter().map(|r| r.iter().copied().collect()).collect();
        EmulatorArchive {
            version: ARCHIVE_VERSION,
            index: self.index,
            design: self.design.clone(),
            grid: self.grid.clone(),
            lambda: self.lambda().to_vec(),
            d1: self.stage1.outputs.rows.clone(),
            d2: self.stage2.outputs.rows.clone(),
            b_hat1: m(self.stage1.b_hat()),
            sigma_hat1: m(self.stage1.sigma_hat()),
            b_hat2: m(self.stage2.b_hat()),
            sigma_hat2: m(self.stage2.sigma_hat()),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        }
    }

    /// Refits from the archived design, outputs and λ; the fit is
    /// deterministic so predictions match the saved model bit for bit.
    pub fn from_archive(ar: EmulatorArchive) -> Result<Self> {
        if ar.version != ARCHIVE_VERSION {
            return invalid(format!("archive version {} (expected {ARCHIVE_VERSION})", ar.version));
        }
        let model = Self::fit(ar.index, ar.design, ar.grid, ar.d1, ar.d2, &ar.lambda, ar.config_hash, ar.seed)?;
        let again = model.to_archive();
        if again.b_hat1 != ar.b_hat1 || again.b_hat2 != ar.b_hat2 {
            return invalid("archived regression coefficients do not match the refit");
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_archive())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.display().to_string(),
                hint: "train it with `zonegp train-emulator`".into(),
            },
            _ => Error::Io(e),
        })?;
        Self::from_archive(serde_json::from_str(&text)?)
    }
}

/// Structured-text form of an emulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmulatorArchive {
    pub version: u32,
    pub index: EmulatorIndex,
    pub design: DesignSet,
    pub grid: KnotGrid,
    pub lambda: Vec<f64>,
    pub d1: Vec<Vec<f64>>,
    pub d2: Vec<Vec<f64>>,
    pub b_hat1: Vec<Vec<f64>>,
    pub sigma_hat1: Vec<Vec<f64>>,
    pub b_hat2: Vec<Vec<f64>>,
    pub sigma_hat2: Vec<Vec<f64>>,
    pub config_hash: String,
    pub seed: u64,
}

/// (μ*, ν*) at absolute time `t` (min) for unit-box θ.
pub fn reconstruct_transient(model: &EmulatorModel, theta: &[f64], t: f64) -> Result<(f64, f64)> {
    model.reconstruct(theta, t - model.start_time(theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> EmulatorModel {
        let pts: Vec<Vec<f64>> = (0..8).map(|i| vec![(i as f64 + 0.5) / 8.0, ((i * 5 % 8) as f64 + 0.5) / 8.0]).collect();
        let grid = KnotGrid::standard(5, 5);
        let f = |p: &[f64], t: f64| (1.0 + p[0]) * (1.0 - (-t / 3.0).exp());
        let d1 = pts.iter().map(|p| grid.stage1.iter().map(|t| f(p, *t)).collect()).collect();
        let d2 = pts.iter().map(|p| grid.stage2.iter().map(|t| f(p, *t)).collect()).collect();
        let design = DesignSet::new(pts, vec![(0.0, 1.0), (10.0, 20.0)]).unwrap();
        let idx = EmulatorIndex { sources: 1, zone: 1, observed: 2 };
        EmulatorModel::fit(idx, design, grid, d1, d2, &[2.0, 0.5], "h".into(), 7).unwrap()
    }

    #[test]
    fn archive_roundtrip_is_bitwise() {
        let m = toy();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(m.index.file_name());
        m.save(&p).unwrap();
        let back = EmulatorModel::load(&p).unwrap();
        for th in [[0.3, 0.7], [0.91, 0.05]] {
            assert_eq!(m.predict_knots(&th), back.predict_knots(&th));
            for tau in [0.5, 3.3, 11.0] {
                assert_eq!(m.reconstruct(&th, tau).unwrap(), back.reconstruct(&th, tau).unwrap());
            }
        }
        let (e, s) = back.interpolation_error();
        assert!(e <= 1e-8 && s <= 1e-8);
    }

    #[test]
    fn absolute_time_uses_design_start() {
        let m = toy();
        let th = [0.4, 0.5];
        assert_eq!(m.start_time(&th), 15.0);
        assert!(matches!(reconstruct_transient(&m, &th, 14.0), Err(Error::OutOfRange(_))));
        let (mu, _) = reconstruct_transient(&m, &th, 17.0).unwrap();
        assert!((mu - m.predict_knots(&th).0[1]).abs() < 1e-8);
    }

    #[test]
    fn missing_archive_has_hint() {
        let r = EmulatorModel::load(Path::new("/nonexistent/gpe.json"));
        assert!(matches!(r, Err(Error::MissingArtifact { .. })));
    }
}
