//! Gaussian-process emulation of transient simulator outputs.

mod gp;
mod model;
pub(crate) mod optim;
mod temporal;

pub use gp::{
    correlation, correlation_matrix, fit_gls, lambda_log_posterior, DesignSet, GlsFit, GpStage, OutputMatrix,
    Prediction, JITTER,
};
pub use model::{reconstruct_transient, EmulatorArchive, EmulatorIndex, EmulatorModel, ARCHIVE_VERSION};
pub use optim::NelderMead;
pub use temporal::{KnotGrid, TemporalModel};

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Search box for λ, per dimension.
pub const LAMBDA_RANGE: (f64, f64) = (1e-3, 1e3);

#[derive(Clone, Copy, Debug)]
pub struct LambdaSearch {
    pub restarts: usize,
    pub seed: u64,
    pub optimizer: NelderMead,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        Self { restarts: 10, seed: 0, optimizer: NelderMead::default() }
    }
}

/// Maximum-posterior λ for outputs `d` at unit-box `points` under a flat
/// prior, searched in log λ. Outputs are standardized first, which shifts the
/// objective by a constant only.
pub fn estimate_lambda_mpe(points: &[Vec<f64>], d: &DMatrix<f64>, search: &LambdaSearch) -> Result<Vec<f64>> {
    let dim = points.first().map_or(0, |p| p.len());
    if dim == 0 {
        return invalid("design has no dimensions");
    }
    let (z, _, _, active) = gp::standardize(d);
    let (lo, hi) = (vec![LAMBDA_RANGE.0.ln(); dim], vec![LAMBDA_RANGE.1.ln(); dim]);
    let mut f = |x: &[f64]| {
        let lambda: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        gp::standardized_objective(points, &z, &active, &lambda)
    };
    let (x, _) = search.optimizer.maximize_multistart(&mut f, &vec![0.0; dim], &lo, &hi, search.restarts, search.seed)?;
    Ok(x.iter().map(|v| v.exp()).collect())
}

/// Candidate with the largest predictive scale c**(θ, θ), with its value.
pub fn select_next_design(fit: &GlsFit, pool: &[Vec<f64>]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in pool.iter().enumerate() {
        let c = fit.predict_scale(p);
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((i, c));
        }
    }
    best.ok_or_else(|| crate::Error::Invalid("candidate pool is empty".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_gap_is_chosen() {
        let pts: Vec<Vec<f64>> = [0.0, 0.1, 0.2, 0.3, 0.9, 1.0].iter().map(|x| vec![*x]).collect();
        let d = DMatrix::from_fn(6, 1, |i, _| (3.0 * pts[i][0]).sin());
        let fit = fit_gls(&pts, &d, &[10.0]).unwrap();
        let pool: Vec<Vec<f64>> = (0..=1000).map(|k| vec![k as f64 / 1000.0]).collect();
        let (i, c) = select_next_design(&fit, &pool).unwrap();
        assert!(pool[i][0] > 0.3 && pool[i][0] < 0.9, "{:?}", pool[i]);
        assert!(c > 0.1);
        // a design point in the pool is never chosen
        let pool2 = vec![vec![0.1], vec![0.6]];
        assert_eq!(select_next_design(&fit, &pool2).unwrap().0, 1);
    }
}
