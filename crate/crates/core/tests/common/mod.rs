//! Oracles shared by the per-topic tests and the acceptance summary.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zonegp::emulator::{fit_gls, lambda_log_posterior, JITTER};

struct Dense {
    b: DMatrix<f64>,
    sigma: DMatrix<f64>,
    logpost: f64,
    ai: DMatrix<f64>,
    h: DMatrix<f64>,
    d: DMatrix<f64>,
    lambda: Vec<f64>,
    points: Vec<Vec<f64>>,
}

fn k(a: &[f64], b: &[f64], l: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).zip(l).map(|((x, y), w)| w * (x - y) * (x - y)).sum();
    (-s).exp() + if a == b { JITTER } else { 0.0 }
}

fn dense(points: &[Vec<f64>], d: &DMatrix<f64>, lambda: &[f64]) -> Dense {
    let n = points.len();
    let m = points[0].len() + 1;
    let q = d.ncols() as f64;
    let a = DMatrix::from_fn(n, n, |i, j| k(&points[i], &points[j], lambda));
    let h = DMatrix::from_fn(n, m, |i, j| if j == 0 { 1.0 } else { points[i][j - 1] });
    let ai = a.clone().try_inverse().unwrap();
    let hah = h.transpose() * &ai * &h;
    let hah_i = hah.clone().try_inverse().unwrap();
    let b = &hah_i * h.transpose() * &ai * d;
    let g = &ai - &ai * &h * &hah_i * h.transpose() * &ai;
    let dgd = d.transpose() * &g * d;
    let sigma = &dgd / (n - m) as f64;
    let logpost = -0.5 * q * a.determinant().ln() - 0.5 * q * hah.determinant().ln()
        - 0.5 * (n - m) as f64 * dgd.determinant().ln();
    Dense { b, sigma, logpost, ai, h, d: d.clone(), lambda: lambda.to_vec(), points: points.to_vec() }
}

impl Dense {
    fn predict(&self, t: &[f64]) -> (Vec<f64>, f64) {
        let r = DVector::from_iterator(self.points.len(), self.points.iter().map(|p| k(t, p, &self.lambda)));
        let hv = DVector::from_iterator(t.len() + 1, std::iter::once(1.0).chain(t.iter().copied()));
        let resid = &self.d - &self.h * &self.b;
        let mean = self.b.transpose() * &hv + resid.transpose() * &self.ai * &r;
        let u = &hv - self.h.transpose() * &self.ai * &r;
        let hah_i = (self.h.transpose() * &self.ai * &self.h).try_inverse().unwrap();
        let c = 1.0 + JITTER - (r.transpose() * &self.ai * &r)[0] + (u.transpose() * hah_i * &u)[0];
        (mean.iter().copied().collect(), c)
    }
}

fn cond(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    sv.max() / sv.min()
}


/// Largest absolute disagreement over 50 random instances (n ≤ 5, d ≤ 2,
/// q ≤ 2) and the wall time taken.
pub fn gp_oracle_max_error() -> (f64, f64) {
    let t0 = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut done = 0;
    let mut worst = 0.0f64;
    while done < 50 {
        let dim = rng.random_range(1..=2usize);
        let m = dim + 1;
        let n = rng.random_range(m + 1..=5usize);
        let q = rng.random_range(1..=2usize).min(n - m);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        let lambda: Vec<f64> = (0..dim).map(|_| rng.random_range(1.0..10.0)).collect();
        let d = DMatrix::from_fn(n, q, |_, _| rng.random_range(-2.0..2.0));
        // the oracle's explicit inverses are only trustworthy to 1e-10 on
        // well-conditioned instances
        let a = DMatrix::from_fn(n, n, |i, j| k(&points[i], &points[j], &lambda));
        let h = DMatrix::from_fn(n, m, |i, j| if j == 0 { 1.0 } else { points[i][j - 1] });
        let hah = h.transpose() * a.clone().try_inverse().unwrap() * &h;
        if cond(&a) > 1e3 || cond(&hah) > 1e3 {
            continue;
        }
        let oracle = dense(&points, &d, &lambda);
        let fit = fit_gls(&points, &d, &lambda).unwrap();
        for (x, y) in fit.b_hat.iter().zip(oracle.b.iter()) {
            worst = worst.max((x - y).abs());
        }
        for (x, y) in fit.sigma_hat.iter().zip(oracle.sigma.iter()) {
            worst = worst.max((x - y).abs());
        }
        worst = worst.max((lambda_log_posterior(&points, &d, &lambda).unwrap() - oracle.logpost).abs());
        let probes: Vec<Vec<f64>> =
            points.iter().cloned().chain((0..3).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())).collect();
        for t in &probes {
            let p = fit.predict(t);
            let (mean, c) = oracle.predict(t);
            for (x, y) in p.mean.iter().zip(&mean) {
                worst = worst.max((x - y).abs());
            }
            worst = worst.max((p.cov_scale - c.max(0.0)).abs());
        }
        done += 1;
    }
    (worst, t0.elapsed().as_secs_f64())
}

/// Synthetic GP draws with known λ: over `trials` seeds, the worst ratio
/// max(λ̂/λ, λ/λ̂) and the fraction of trials whose MPE beat 100 random λ.
pub fn lambda_recovery(trials: u64) -> (f64, f64) {
    use rand_distr::{Distribution, StandardNormal};
    use zonegp::emulator::{estimate_lambda_mpe, LambdaSearch, LAMBDA_RANGE};
    let truth = [2.0, 8.0];
    let (n, q) = (40, 3);
    let mut worst = 1.0f64;
    let mut wins = 0;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let points = zonegp::harness::lhs_design(n, 2, seed);
        let a = DMatrix::from_fn(n, n, |i, j| k(&points[i], &points[j], &truth));
        let l = a.cholesky().unwrap().l();
        let z = DMatrix::from_fn(n, q, |_, _| StandardNormal.sample(&mut rng));
        let scale = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 2.0]));
        let h = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { points[i][j - 1] });
        let b = DMatrix::from_fn(3, q, |_, _| rng.random_range(-1.0..1.0));
        let d = &h * b + l * z * scale;
        let search = LambdaSearch { seed, ..LambdaSearch::default() };
        let est = estimate_lambda_mpe(&points, &d, &search).unwrap();
        for (e, t) in est.iter().zip(&truth) {
            worst = worst.max((e / t).max(t / e));
        }
        let best = lambda_log_posterior(&points, &d, &est).unwrap();
        let (lo, hi) = (LAMBDA_RANGE.0.ln(), LAMBDA_RANGE.1.ln());
        let beaten = (0..100).all(|_| {
            let lam: Vec<f64> = (0..2).map(|_| rng.random_range(lo..hi).exp()).collect();
            lambda_log_posterior(&points, &d, &lam).map_or(true, |v| best >= v)
        });
        wins += beaten as usize;
    }
    (worst, wins as f64 / trials as f64)
}

pub const FIVE_STATE: [f64; 5] = [0.1, 0.2, 0.3, 0.25, 0.15];

/// TV between the 5-state target and a seeded chain of `samples` retained
/// draws, and the acceptance rate on a flat target.
pub fn mh_five_state(samples: usize) -> (f64, f64) {
    use zonegp::inference::{mh_sample, total_variation, McmcOptions};
    let state = |u: f64| ((u * 5.0) as usize).min(4);
    let mut target = |x: &[f64]| FIVE_STATE[state(x[0])].ln();
    let burn = 5000;
    let opts = McmcOptions::new(1, samples + burn, burn, 12345);
    let chain = mh_sample(&mut target, &[0.5], &opts).unwrap();
    let mut freq = [0.0; 5];
    for s in &chain.samples {
        freq[state(s[0])] += 1.0 / chain.samples.len() as f64;
    }
    let tv = total_variation(&freq, &FIVE_STATE);
    let flat = mh_sample(&mut |_| 0.0, &[0.3, 0.7], &McmcOptions::new(2, 20_000, 2000, 7)).unwrap();
    (tv, flat.acceptance_rate)
}
