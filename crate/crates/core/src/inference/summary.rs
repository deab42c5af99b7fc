use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{decode, ParameterBounds, PosteriorChain};

/// Equal-width histogram with bin probabilities summing to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub probs: Vec<f64>,
}

impl Histogram {
    pub fn from_samples(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut probs = vec![0.0; bins];
        for v in values {
            let k = (((v - lo) / (hi - lo)) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
            probs[k] += 1.0;
        }
        let n = values.len().max(1) as f64;
        probs.iter_mut().for_each(|p| *p /= n);
        Self { lo, hi, probs }
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * (self.hi - self.lo) / self.probs.len() as f64
    }

    pub fn to_csv(&self, name: &str) -> String {
        let mut s = format!("{name},probability\n");
        for (k, p) in self.probs.iter().enumerate() {
            s.push_str(&format!("{},{p}\n", self.bin_center(k)));
        }
        s
    }
}

/// 2-D location histogram over one zone's floor, `probs[iy][ix]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationDensity {
    pub width: f64,
    pub depth: f64,
    pub probs: Vec<Vec<f64>>,
}

impl LocationDensity {
    /// Centre of the most probable bin.
    pub fn mode(&self) -> (f64, f64) {
        let n = self.probs.len();
        let mut best = (0, 0, -1.0);
        for (iy, row) in self.probs.iter().enumerate() {
            for (ix, p) in row.iter().enumerate() {
                if *p > best.2 {
                    best = (ix, iy, *p);
                }
            }
        }
        ((best.0 as f64 + 0.5) * self.width / n as f64, (best.1 as f64 + 0.5) * self.depth / n as f64)
    }

    pub fn to_csv(&self) -> String {
        let n = self.probs.len();
        let mut s = String::from("x,y,probability\n");
        for (iy, row) in self.probs.iter().enumerate() {
            for (ix, p) in row.iter().enumerate() {
                let x = (ix as f64 + 0.5) * self.width / n as f64;
                let y = (iy as f64 + 0.5) * self.depth / n as f64;
                s.push_str(&format!("{x},{y},{p}\n"));
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    /// p(Z = zone)
    pub zone: BTreeMap<usize, f64>,
    /// p(S_N = k + 1)
    pub sources: Vec<f64>,
    pub amount: Histogram,
    pub start: Histogram,
    pub amount_mean: f64,
    pub amount_sd: f64,
    pub start_mean: f64,
    pub start_sd: f64,
    /// Pooled over active sources, for zones visited by the chain.
    pub locations: BTreeMap<usize, LocationDensity>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl PosteriorSummary {
    pub fn p_zone(&self, zone: usize) -> f64 {
        self.zone.get(&zone).copied().unwrap_or(0.0)
    }

    pub fn p_sources(&self, a: usize) -> f64 {
        self.sources.get(a.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    /// Plain-text tables of p(Z) and p(S_N) plus moments.
    pub fn report(&self) -> String {
        let mut s = String::from("zone,p\n");
        for (z, p) in &self.zone {
            s.push_str(&format!("{z},{p}\n"));
        }
        s.push_str("\nsources,p\n");
        for (k, p) in self.sources.iter().enumerate() {
            s.push_str(&format!("{},{p}\n", k + 1));
        }
        s.push_str(&format!(
            "\nS_a mean {:.6} sd {:.6}\nS_t mean {:.4} sd {:.4}\n",
            self.amount_mean, self.amount_sd, self.start_mean, self.start_sd
        ));
        s
    }
}

/// Marginal summaries of the retained samples (50 bins throughout).
pub fn posterior_summaries(chain: &PosteriorChain, bounds: &ParameterBounds) -> PosteriorSummary {
    let bins = 50;
    let n = chain.samples.len().max(1) as f64;
    let mut zone: BTreeMap<usize, f64> = bounds.zones.iter().map(|z| (*z, 0.0)).collect();
    let mut sources = vec![0.0; bounds.max_sources];
    let mut amounts = Vec::with_capacity(chain.samples.len());
    let mut starts = Vec::with_capacity(chain.samples.len());
    let mut locs: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for phi in &chain.samples {
        let (a, b, sc) = decode(phi, bounds);
        *zone.get_mut(&b).unwrap() += 1.0;
        sources[a - 1] += 1.0;
        amounts.push(sc.amount);
        starts.push(sc.start);
        locs.entry(b).or_default().extend(sc.locations);
    }
    // counts first, then one division, so a unanimous chain reports exactly 1
    zone.values_mut().for_each(|p| *p /= n);
    sources.iter_mut().for_each(|p| *p /= n);
    let locations = locs
        .into_iter()
        .map(|(z, pts)| {
            let k = bounds.zones.iter().position(|q| *q == z).unwrap();
            let (w, d) = bounds.zone_dims[k];
            let mut probs = vec![vec![0.0; bins]; bins];
            for (x, y) in &pts {
                let ix = ((x / w * bins as f64) as usize).min(bins - 1);
                let iy = ((y / d * bins as f64) as usize).min(bins - 1);
                probs[iy][ix] += 1.0 / pts.len() as f64;
            }
            (z, LocationDensity { width: w, depth: d, probs })
        })
        .collect();
    let (amount_mean, amount_sd) = mean_sd(&amounts);
    let (start_mean, start_sd) = mean_sd(&starts);
    PosteriorSummary {
        zone,
        sources,
        amount: Histogram::from_samples(&amounts, bounds.amount.0, bounds.amount.1, bins),
        start: Histogram::from_samples(&starts, bounds.start.0, bounds.start.1, bins),
        amount_mean,
        amount_sd,
        start_mean,
        start_sd,
        locations,
    }
}

/// Decoded S_a and S_t of every retained sample.
pub fn continuous_marginals(chain: &PosteriorChain, bounds: &ParameterBounds) -> (Vec<f64>, Vec<f64>) {
    chain
        .samples
        .iter()
        .map(|phi| {
            let (_, _, sc) = decode(phi, bounds);
            (sc.amount, sc.start)
        })
        .unzip()
}

/// ½ Σ |p − q| over a shared index.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Two-sample Kolmogorov–Smirnov statistic sup |F_a − F_b|.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_identical_and_disjoint() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&a, &[5.0, 6.0]), 1.0);
        assert!((ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[3.5, 4.5]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn histogram_sums_to_one() {
        let h = Histogram::from_samples(&[0.1, 0.5, 0.99, 1.0, 0.0], 0.0, 1.0, 50);
        assert!((h.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(h.probs[49], 0.4);
    }
}
