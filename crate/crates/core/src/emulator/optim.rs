//! Derivative-free box-constrained maximization: Nelder–Mead with every
//! vertex projected into the box, restarted from random points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
    /// Initial simplex edge as a fraction of the box width.
    pub step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self { max_evals: 2000, f_tol: 1e-9, x_tol: 1e-7, step: 0.15 }
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

impl NelderMead {
    /// Maximizes `f` from `x0`. Non-finite values count as −∞.
    pub fn maximize(&self, f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, f64) {
        let d = x0.len();
        let eval = |f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]| {
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::NEG_INFINITY
            }
        };
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
        let mut start = x0.to_vec();
        project(&mut start, lo, hi);
        simplex.push(start.clone());
        for i in 0..d {
            let mut v = start.clone();
            let w = (hi[i] - lo[i]) * self.step;
            v[i] = if v[i] + w <= hi[i] { v[i] + w } else { v[i] - w };
            simplex.push(v);
        }
        let mut vals: Vec<f64> = simplex.iter().map(|x| eval(f, x)).collect();
        let mut evals = d + 1;
        while evals < self.max_evals {
            // sort descending (best first)
            let mut order: Vec<usize> = (0..=d).collect();
            order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            vals = order.iter().map(|&i| vals[i]).collect();
            let spread = vals[0] - vals[d];
            let diam = simplex
                .iter()
                .skip(1)
                .map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if (spread.is_finite() && spread.abs() <= self.f_tol * (1.0 + vals[0].abs())) || diam <= self.x_tol {
                break;
            }
            let centroid: Vec<f64> = (0..d).map(|k| simplex[..d].iter().map(|x| x[k]).sum::<f64>() / d as f64).collect();
            let along = |t: f64| -> Vec<f64> {
                let mut x: Vec<f64> = (0..d).map(|k| centroid[k] + t * (simplex[d][k] - centroid[k])).collect();
                project(&mut x, lo, hi);
                x
            };
            let xr = along(-1.0);
            let fr = eval(f, &xr);
            evals += 1;
            if fr > vals[0] {
                let xe = along(-2.0);
                let fe = eval(f, &xe);
                evals += 1;
                if fe > fr {
                    simplex[d] = xe;
                    vals[d] = fe;
                } else {
                    simplex[d] = xr;
                    vals[d] = fr;
                }
                continue;
            }
            if fr > vals[d - 1] {
                simplex[d] = xr;
                vals[d] = fr;
                continue;
            }
            let (xc, fc) = if fr > vals[d] {
                let x = along(-0.5);
                let v = eval(f, &x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(f, &x);
                (x, v)
            };
            evals += 1;
            if fc > vals[d].max(fr) {
                simplex[d] = xc;
                vals[d] = fc;
                continue;
            }
            // shrink towards the best vertex
            for i in 1..=d {
                for k in 0..d {
                    simplex[i][k] = simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k]);
                }
                vals[i] = eval(f, &simplex[i]);
            }
            evals += d;
        }
        let best = (0..=d).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        (simplex[best].clone(), vals[best])
    }

    /// Best of `restarts` runs: the first from `x0`, the rest from uniform
    /// random points in the box.
    pub fn maximize_multistart(
        &self,
        f: &mut dyn FnMut(&[f64]) -> f64,
        x0: &[f64],
        lo: &[f64],
        hi: &[f64],
        restarts: usize,
        seed: u64,
    ) -> Result<(Vec<f64>, f64)> {
        if restarts == 0 {
            return Err(Error::Invalid("restarts must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for r in 0..restarts {
            let start: Vec<f64> = if r == 0 {
                x0.to_vec()
            } else {
                lo.iter().zip(hi).map(|(l, h)| rng.random_range(*l..=*h)).collect()
            };
            let (x, v) = self.maximize(f, &start, lo, hi);
            if v.is_finite() && best.as_ref().is_none_or(|(_, bv)| v > *bv) {
                best = Some((x, v));
            }
        }
        best.ok_or_else(|| Error::OptimizationFailed("every restart returned a non-finite objective".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_maximum() {
        let mut f = |x: &[f64]| -(x[0] - 0.3).powi(2) - 2.0 * (x[1] + 0.7).powi(2);
        let (x, v) = NelderMead::default().maximize(&mut f, &[2.0, 2.0], &[-3.0, -3.0], &[3.0, 3.0]);
        assert!((x[0] - 0.3).abs() < 1e-4 && (x[1] + 0.7).abs() < 1e-4, "{x:?}");
        assert!(v > -1e-7);
    }

    #[test]
    fn respects_box() {
        let mut f = |x: &[f64]| x[0] + x[1];
        let (x, _) = NelderMead::default().maximize(&mut f, &[0.0, 0.0], &[-1.0, -1.0], &[1.0, 0.5]);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 0.5).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn all_infinite_fails() {
        let mut f = |_: &[f64]| f64::NAN;
        let r = NelderMead::default().maximize_multistart(&mut f, &[0.0], &[-1.0], &[1.0], 3, 1);
        assert!(matches!(r, Err(Error::OptimizationFailed(_))));
    }
}
