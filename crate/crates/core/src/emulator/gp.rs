//! Multivariate GP with squared-exponential correlation, linear mean basis
//! h(θ) = [1, θ] and an across-output covariance Σ.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Chol;

/// Diagonal nugget added to the correlation matrix. It is part of the kernel
/// (a white term on coincident points), so design points are interpolated.
pub const JITTER: f64 = 1e-8;

/// exp(−(θ1−θ2)ᵀ diag(λ) (θ1−θ2))
pub fn correlation(t1: &[f64], t2: &[f64], lambda: &[f64]) -> f64 {
    debug_assert_eq!(t1.len(), t2.len());
    debug_assert_eq!(t1.len(), lambda.len());
    let mut s = 0.0;
    for ((a, b), l) in t1.iter().zip(t2).zip(lambda) {
        let d = a - b;
        s += l * d * d;
    }
    (-s).exp()
}

fn kernel(t1: &[f64], t2: &[f64], lambda: &[f64]) -> f64 {
    let c = correlation(t1, t2, lambda);
    if t1 == t2 {
        c + JITTER
    } else {
        c
    }
}

/// Design points in the unit box plus the physical ranges they map to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSet {
    pub points: Vec<Vec<f64>>,
    pub bounds: Vec<(f64, f64)>,
}

impl DesignSet {
    pub fn new(points: Vec<Vec<f64>>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let d = bounds.len();
        if points.iter().any(|p| p.len() != d) {
            return invalid("design points must match the number of bounds");
        }
        for (i, p) in points.iter().enumerate() {
            if points[..i].iter().any(|q| q == p) {
                return invalid(format!("design point {i} duplicates an earlier point"));
            }
        }
        Ok(Self { points, bounds })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.bounds).map(|(v, (lo, hi))| lo + v * (hi - lo)).collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bounds).map(|(v, (lo, hi))| (v - lo) / (hi - lo)).collect()
    }
}

/// n × q simulator outputs at q fixed time instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputMatrix {
    pub rows: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

impl OutputMatrix {
    pub fn q(&self) -> usize {
        self.times.len()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.rows.len();
        DMatrix::from_fn(n, self.q(), |i, j| self.rows[i][j])
    }
}

pub(crate) fn basis(theta: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(theta.iter().copied()).collect()
}

fn h_matrix(points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.len();
    let m = points.first().map_or(1, |p| p.len() + 1);
    DMatrix::from_fn(n, m, |i, j| if j == 0 { 1.0 } else { points[i][j - 1] })
}

pub fn correlation_matrix(points: &[Vec<f64>], lambda: &[f64]) -> DMatrix<f64> {
    let n = points.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = 1.0 + JITTER;
        for j in 0..i {
            let v = kernel(&points[i], &points[j], lambda);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// GLS solution for fixed λ with the factorizations prediction needs.
#[derive(Clone, Debug)]
pub struct GlsFit {
    pub lambda: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub a: Chol,
    pub h: DMatrix<f64>,
    /// A⁻¹H
    pub ai_h: DMatrix<f64>,
    /// HᵀA⁻¹H
    pub hah: Chol,
    /// B̂, m × q
    pub b_hat: DMatrix<f64>,
    /// Σ̂, q × q
    pub sigma_hat: DMatrix<f64>,
    /// A⁻¹(D − HB̂), n × q
    pub ai_resid: DMatrix<f64>,
    /// (D − HB̂)ᵀA⁻¹(D − HB̂) = DᵀGD
    pub dgd: DMatrix<f64>,
}

/// B̂ = (HᵀA⁻¹H)⁻¹HᵀA⁻¹D and Σ̂ = (D−HB̂)ᵀA⁻¹(D−HB̂)/(n−m).
pub fn fit_gls(points: &[Vec<f64>], d: &DMatrix<f64>, lambda: &[f64]) -> Result<GlsFit> {
    let n = points.len();
    let dim = lambda.len();
    let m = dim + 1;
    if n <= m {
        return invalid(format!("need more than {m} design points, got {n}"));
    }
    if d.nrows() != n {
        return invalid("output rows must match design points");
    }
    if lambda.iter().any(|l| !(*l > 0.0)) {
        return invalid("correlation parameters must be positive");
    }
    let a = Chol::new(&correlation_matrix(points, lambda))?;
    let h = h_matrix(points);
    let ai_h = a.solve_mat(&h);
    let hah = Chol::new(&(h.transpose() * &ai_h))?;
    let ai_d = a.solve_mat(d);
    let b_hat = hah.solve_mat(&(h.transpose() * &ai_d));
    let resid = d - &h * &b_hat;
    let ai_resid = a.solve_mat(&resid);
    let dgd = resid.transpose() * &ai_resid;
    let dgd = (&dgd + dgd.transpose()) * 0.5;
    let sigma_hat = &dgd / (n - m) as f64;
    Ok(GlsFit { lambda: lambda.to_vec(), points: points.to_vec(), a, h, ai_h, hah, b_hat, sigma_hat, ai_resid, dgd })
}

impl GlsFit {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn m(&self) -> usize {
        self.h.ncols()
    }

    /// ln of the marginal posterior of λ (flat prior), up to a constant:
    /// −(q/2)ln|A| − (q/2)ln|HᵀA⁻¹H| − ((n−m)/2)ln|DᵀGD|, with the last term
    /// restricted to `active` output columns when given.
    pub fn log_posterior(&self, active: Option<&[usize]>) -> Result<f64> {
        let cols: Vec<usize> = match active {
            Some(a) => a.to_vec(),
            None => (0..self.dgd.ncols()).collect(),
        };
        let q = cols.len() as f64;
        let sub = DMatrix::from_fn(cols.len(), cols.len(), |i, j| self.dgd[(cols[i], cols[j])]);
        let dgd = Chol::new(&sub)?;
        Ok(-0.5 * q * self.a.log_det() - 0.5 * q * self.hah.log_det()
            - 0.5 * (self.n() - self.m()) as f64 * dgd.log_det())
    }

    fn r(&self, theta: &[f64]) -> Vec<f64> {
        self.points.iter().map(|p| kernel(theta, p, &self.lambda)).collect()
    }

    /// m**(θ) only.
    pub fn predict_mean(&self, theta: &[f64]) -> Vec<f64> {
        let h = basis(theta);
        let q = self.b_hat.ncols();
        let mut out = vec![0.0; q];
        for (j, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (k, hk) in h.iter().enumerate() {
                s += self.b_hat[(k, j)] * hk;
            }
            *o = s;
        }
        let lambda = &self.lambda;
        for (i, p) in self.points.iter().enumerate() {
            let ri = kernel(theta, p, lambda);
            if ri == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.ai_resid[(i, j)] * ri;
            }
        }
        out
    }

    /// c**(θ, θ) = 1 + ε − rᵀA⁻¹r + uᵀ(HᵀA⁻¹H)⁻¹u with u = h − HᵀA⁻¹r.
    pub fn predict_scale(&self, theta: &[f64]) -> f64 {
        let r = self.r(theta);
        let ai_r = self.a.solve_vec(&r);
        let rar: f64 = r.iter().zip(&ai_r).map(|(a, b)| a * b).sum();
        let h = basis(theta);
        let u: Vec<f64> =
            (0..self.m()).map(|k| h[k] - (0..self.n()).map(|i| self.h[(i, k)] * ai_r[i]).sum::<f64>()).collect();
        let hu = self.hah.solve_vec(&u);
        let reg: f64 = u.iter().zip(&hu).map(|(a, b)| a * b).sum();
        let self_corr = 1.0 + JITTER;
        (self_corr - rar + reg).max(0.0)
    }

    pub fn predict(&self, theta: &[f64]) -> Prediction {
        Prediction { mean: self.predict_mean(theta), cov_scale: self.predict_scale(theta), sigma: self.sigma_hat.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub cov_scale: f64,
    pub sigma: DMatrix<f64>,
}

/// ln p(λ | D) of the raw outputs.
pub fn lambda_log_posterior(points: &[Vec<f64>], d: &DMatrix<f64>, lambda: &[f64]) -> Result<f64> {
    fit_gls(points, d, lambda)?.log_posterior(None)
}

/// One GP over θ fitted to standardized outputs. Constant output columns are
/// kept (they are reproduced exactly by the intercept) but excluded from the
/// λ objective.
#[derive(Clone, Debug)]
pub struct GpStage {
    pub outputs: OutputMatrix,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub active: Vec<usize>,
    pub fit: GlsFit,
}

pub(crate) fn standardize(d: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, Vec<f64>, Vec<usize>) {
    let (n, q) = d.shape();
    let mut center = vec![0.0; q];
    let mut scale = vec![1.0; q];
    let mut active = Vec::new();
    for j in 0..q {
        let col = d.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        center[j] = mean;
        let mag = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if var.sqrt() > 1e-12 * mag.max(1e-300) && var > 0.0 {
            scale[j] = var.sqrt();
            active.push(j);
        }
    }
    let z = DMatrix::from_fn(n, q, |i, j| (d[(i, j)] - center[j]) / scale[j]);
    (z, center, scale, active)
}

impl GpStage {
    pub fn fit(points: &[Vec<f64>], outputs: OutputMatrix, lambda: &[f64]) -> Result<Self> {
        let raw = outputs.to_matrix();
        let (z, center, scale, active) = standardize(&raw);
        let fit = fit_gls(points, &z, lambda)?;
        Ok(Self { outputs, center, scale, active, fit })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.fit.lambda
    }

    pub fn q(&self) -> usize {
        self.center.len()
    }

    pub fn predict_mean(&self, theta: &[f64]) -> Vec<f64> {
        let mut m = self.fit.predict_mean(theta);
        for (j, v) in m.iter_mut().enumerate() {
            *v = self.center[j] + self.scale[j] * *v;
        }
        m
    }

    pub fn predict(&self, theta: &[f64]) -> Prediction {
        let p = self.fit.predict(theta);
        Prediction { mean: self.predict_mean(theta), cov_scale: p.cov_scale, sigma: self.sigma_hat() }
    }

    /// Σ̂ in output units.
    pub fn sigma_hat(&self) -> DMatrix<f64> {
        let q = self.q();
        DMatrix::from_fn(q, q, |i, j| self.fit.sigma_hat[(i, j)] * self.scale[i] * self.scale[j])
    }

    /// B̂ in output units.
    pub fn b_hat(&self) -> DMatrix<f64> {
        let b = &self.fit.b_hat;
        DMatrix::from_fn(b.nrows(), b.ncols(), |k, j| {
            let v = b[(k, j)] * self.scale[j];
            if k == 0 {
                v + self.center[j]
            } else {
                v
            }
        })
    }
}

/// ln p(λ | D) on standardized outputs, active columns only; −∞ when any
/// factorization fails.
pub(crate) fn standardized_objective(points: &[Vec<f64>], z: &DMatrix<f64>, active: &[usize], lambda: &[f64]) -> f64 {
    if active.is_empty() {
        // nothing to explain: λ only enters through |A| and |HᵀA⁻¹H|
        return match fit_gls(points, z, lambda) {
            Ok(f) => -0.5 * f.a.log_det() - 0.5 * f.hah.log_det(),
            Err(_) => f64::NEG_INFINITY,
        };
    }
    match fit_gls(points, z, lambda).and_then(|f| f.log_posterior(Some(active))) {
        Ok(v) if v.is_finite() => v,
        _ => f64::NEG_INFINITY,
    }
}
