use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{decode, ParameterBounds, Posterior};
use crate::emulator::optim::NelderMead;
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcOptions {
    /// Iterations including burn-in.
    pub total: usize,
    pub burn_in: usize,
    /// Initial per-component proposal half-widths in φ units.
    pub scales: Vec<f64>,
    pub seed: u64,
    /// Tune proposal scales during burn-in (see [`mh_sample`]).
    pub adapt: bool,
    /// Nelder–Mead evaluations per (a, b) cell spent refining the starting
    /// state in [`Posterior::sample`]; 0 disables refinement.
    #[serde(default)]
    pub polish: usize,
}

impl McmcOptions {
    pub fn new(dim: usize, total: usize, burn_in: usize, seed: u64) -> Self {
        Self { total, burn_in, scales: vec![0.1; dim], seed, adapt: true, polish: 150 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    /// Retained states (after burn-in).
    pub samples: Vec<Vec<f64>>,
    pub log_posteriors: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Over the retained iterations.
    pub acceptance_rate: f64,
    pub seed: u64,
    pub burn_in: usize,
    pub total: usize,
    /// Proposal scales after tuning.
    pub scales: Vec<f64>,
    /// Set when fewer than 1% of proposals were accepted.
    pub low_acceptance: bool,
}

impl PosteriorChain {
    /// One row per retained iteration: decoded a, b, x_i, y_i (N_s pairs,
    /// empty when inert), S_a, S_t, log posterior, accepted flag.
    pub fn to_csv(&self, bounds: &ParameterBounds) -> String {
        let ns = bounds.max_sources;
        let mut s = String::from("iteration,a,b");
        for i in 1..=ns {
            s.push_str(&format!(",x_{i},y_{i}"));
        }
        s.push_str(",S_a,S_t,log_posterior,accepted\n");
        for (k, phi) in self.samples.iter().enumerate() {
            let (a, b, sc) = decode(phi, bounds);
            s.push_str(&format!("{},{a},{b}", self.burn_in + k));
            for i in 0..ns {
                match sc.locations.get(i) {
                    Some((x, y)) => s.push_str(&format!(",{x},{y}")),
                    None => s.push_str(",,"),
                }
            }
            s.push_str(&format!(",{},{},{},{}\n", sc.amount, sc.start, self.log_posteriors[k], self.accepted[k] as u8));
        }
        s
    }
}

fn reflect(mut v: f64) -> f64 {
    loop {
        if v < 0.0 {
            v = -v;
        } else if v > 1.0 {
            v = 2.0 - v;
        } else {
            return v;
        }
    }
}

/// Random-walk Metropolis–Hastings on the unit box: φ* = φ + s ⊙ U with U
/// uniform on [−1, 1]^dim, reflected at the faces. After burn-in the chain
/// restarts from the best state visited so far.
///
/// With `adapt`, burn-in tunes the scales in three phases: a common factor
/// steered towards 20–40% acceptance (first half), then per-component
/// scales reset from the spread of the states visited in the second quarter,
/// then the common factor again (third quarter). The last quarter and the
/// retained iterations use fixed scales.
pub fn mh_sample(target: &mut dyn FnMut(&[f64]) -> f64, init: &[f64], opts: &McmcOptions) -> Result<PosteriorChain> {
    let dim = init.len();
    if !(opts.total > opts.burn_in) {
        return invalid("total iterations must exceed burn-in");
    }
    if opts.scales.len() != dim || opts.scales.iter().any(|s| !(*s > 0.0)) {
        return invalid("one positive proposal scale per component is required");
    }
    if init.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return invalid("initial state must lie in the unit box");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut scales = opts.scales.clone();
    let mut cur = init.to_vec();
    let mut cur_lp = target(&cur);
    let mut best = (cur.clone(), cur_lp);
    let kept = opts.total - opts.burn_in;
    let mut chain = PosteriorChain {
        samples: Vec::with_capacity(kept),
        log_posteriors: Vec::with_capacity(kept),
        accepted: Vec::with_capacity(kept),
        acceptance_rate: 0.0,
        seed: opts.seed,
        burn_in: opts.burn_in,
        total: opts.total,
        scales: Vec::new(),
        low_acceptance: false,
    };
    let window = 100;
    let (mut window_acc, mut window_n) = (0usize, 0usize);
    let (half, three_q) = (opts.burn_in / 2, 3 * opts.burn_in / 4);
    let mut visited: Vec<Vec<f64>> = Vec::new();
    let mut prop = vec![0.0; dim];
    for it in 0..opts.total {
        if it == opts.burn_in && opts.burn_in > 0 {
            cur = best.0.clone();
            cur_lp = best.1;
        }
        for k in 0..dim {
            let u: f64 = rng.random_range(-1.0..=1.0);
            prop[k] = reflect(cur[k] + scales[k] * u);
        }
        let lp = target(&prop);
        let accept = if lp.is_nan() || lp == f64::NEG_INFINITY {
            false
        } else if cur_lp == f64::NEG_INFINITY || lp >= cur_lp {
            true
        } else {
            let u: f64 = rng.random();
            u.ln() < lp - cur_lp
        };
        if accept {
            cur.copy_from_slice(&prop);
            cur_lp = lp;
            if it < opts.burn_in && lp > best.1 {
                best = (cur.clone(), lp);
            }
        }
        if it < opts.burn_in {
            window_acc += accept as usize;
            window_n += 1;
            if opts.adapt && it >= opts.burn_in / 4 && it < half {
                visited.push(cur.clone());
            }
            if opts.adapt && it + 1 == half && visited.len() > 1 {
                let n = visited.len() as f64;
                let c = 3f64.sqrt() * 2.38 / (dim as f64).sqrt();
                for (k, s) in scales.iter_mut().enumerate() {
                    let m = visited.iter().map(|v| v[k]).sum::<f64>() / n;
                    let sd = (visited.iter().map(|v| (v[k] - m).powi(2)).sum::<f64>() / n).sqrt();
                    *s = (c * sd).clamp(1e-5, 1.0);
                }
                (window_acc, window_n) = (0, 0);
            } else if opts.adapt && it < three_q && window_n == window {
                let rate = window_acc as f64 / window as f64;
                let f = if rate < 0.2 {
                    0.7
                } else if rate > 0.4 {
                    1.3
                } else {
                    1.0
                };
                scales.iter_mut().for_each(|s| *s = (*s * f).clamp(1e-5, 1.0));
                (window_acc, window_n) = (0, 0);
            }
        } else {
            chain.samples.push(cur.clone());
            chain.log_posteriors.push(cur_lp);
            chain.accepted.push(accept);
        }
    }
    chain.acceptance_rate = chain.accepted.iter().filter(|a| **a).count() as f64 / kept as f64;
    chain.low_acceptance = chain.acceptance_rate < 0.01;
    if chain.low_acceptance {
        log::warn!("chain with seed {} accepted only {:.2}% of proposals", opts.seed, 100.0 * chain.acceptance_rate);
    }
    chain.scales = scales;
    Ok(chain)
}

impl Posterior<'_> {
    /// Starting state: the best of the given candidates and `draws` prior
    /// draws. When `draws` covers every (a, b) cell the draws are stratified
    /// over the cells and, with `polish > 0`, each cell's best draw is refined
    /// by Nelder–Mead over its active continuous components. A random start
    /// in a 10-dimensional box otherwise tends to land in an arbitrary cell
    /// that the random walk cannot leave.
    pub fn initial_state(&self, draws: usize, polish: usize, seed: u64, candidates: &[Vec<f64>]) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let dim = self.bounds.phi_dim();
        let (ns, nz) = (self.bounds.max_sources, self.bounds.n_zones());
        let mut best: Option<(Vec<f64>, f64)> = None;
        let offer = |phi: Vec<f64>, lp: f64, best: &mut Option<(Vec<f64>, f64)>| {
            if best.as_ref().is_none_or(|(_, b)| lp > *b) {
                *best = Some((phi, lp));
            }
        };
        for phi in candidates {
            offer(phi.clone(), self.log_posterior(phi), &mut best);
        }
        let cells = ns * nz;
        if draws < cells {
            for _ in 0..draws.max(1) {
                let phi: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                let lp = self.log_posterior(&phi);
                offer(phi, lp, &mut best);
            }
            return best.unwrap().0;
        }
        let per_cell = draws.div_ceil(cells);
        for a in 1..=ns {
            for k in 0..nz {
                let mut cell_best: Option<(Vec<f64>, f64)> = None;
                for _ in 0..per_cell {
                    let mut phi: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                    phi[0] = (a as f64 - 0.5) / ns as f64;
                    phi[1] = (k as f64 + 0.5) / nz as f64;
                    let lp = self.log_posterior(&phi);
                    offer(phi, lp, &mut cell_best);
                }
                let (mut phi, mut lp) = cell_best.unwrap();
                if polish > 0 {
                    let active: Vec<usize> = (2..2 + 2 * a).chain([2 + 2 * ns, 3 + 2 * ns]).collect();
                    let x0: Vec<f64> = active.iter().map(|&i| phi[i]).collect();
                    let base = phi.clone();
                    let mut f = |x: &[f64]| {
                        let mut p = base.clone();
                        active.iter().zip(x).for_each(|(&i, v)| p[i] = *v);
                        self.log_posterior(&p)
                    };
                    let nm = NelderMead { max_evals: polish, ..NelderMead::default() };
                    let (x, v) = nm.maximize(&mut f, &x0, &vec![0.0; x0.len()], &vec![1.0; x0.len()]);
                    if v > lp {
                        active.iter().zip(&x).for_each(|(&i, v)| phi[i] = *v);
                        lp = v;
                    }
                }
                offer(phi, lp, &mut best);
            }
        }
        best.unwrap().0
    }

    /// Chain from [`Posterior::initial_state`].
    pub fn sample(&self, opts: &McmcOptions, init_draws: usize, candidates: &[Vec<f64>]) -> Result<PosteriorChain> {
        let init = self.initial_state(init_draws, opts.polish, opts.seed, candidates);
        mh_sample(&mut |phi: &[f64]| self.log_posterior(phi), &init, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_stays_in_box() {
        for v in [-0.3, 1.4, 0.2, -1.0, 2.0] {
            let r = reflect(v);
            assert!((0.0..=1.0).contains(&r));
        }
        assert!((reflect(-0.25) - 0.25).abs() < 1e-15);
        assert!((reflect(1.25) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn uniform_target_accepts_everything() {
        let opts = McmcOptions::new(3, 2000, 500, 4);
        let ch = mh_sample(&mut |_| 0.0, &[0.5, 0.5, 0.5], &opts).unwrap();
        assert_eq!(ch.acceptance_rate, 1.0);
        assert_eq!(ch.samples.len(), 1500);
    }

    #[test]
    fn seeded_runs_repeat() {
        let opts = McmcOptions::new(2, 800, 200, 11);
        let mut f = |x: &[f64]| -50.0 * ((x[0] - 0.3).powi(2) + (x[1] - 0.6).powi(2));
        let a = mh_sample(&mut f, &[0.9, 0.1], &opts).unwrap();
        let b = mh_sample(&mut f, &[0.9, 0.1], &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.acceptance_rate > 0.0 && a.acceptance_rate < 1.0);
    }
}
