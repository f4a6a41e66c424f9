//! Estimators and small statistical tools used by the Monte Carlo studies.

use serde::{Deserialize, Serialize};

use crate::rng::{run_chunks, Seed, SimRng, CHUNK_SIZE};

/// Streaming mean/variance (Chan et al. merge), mergeable in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.count as f64 * other.count as f64) / count as f64;
        Moments { count, mean, m2 }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Sums needed for a ratio estimator `R = Σw / Σs` over independent units.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RatioSums {
    pub units: u64,
    pub num: f64,
    pub den: f64,
    pub num_sq: f64,
    pub den_sq: f64,
    pub cross: f64,
}

impl RatioSums {
    pub fn push(&mut self, num: f64, den: f64) {
        self.units += 1;
        self.num += num;
        self.den += den;
        self.num_sq += num * num;
        self.den_sq += den * den;
        self.cross += num * den;
    }

    pub fn merge(self, o: RatioSums) -> RatioSums {
        RatioSums {
            units: self.units + o.units,
            num: self.num + o.num,
            den: self.den + o.den,
            num_sq: self.num_sq + o.num_sq,
            den_sq: self.den_sq + o.den_sq,
            cross: self.cross + o.cross,
        }
    }

    pub fn ratio(&self) -> f64 {
        if self.den == 0.0 {
            f64::NAN
        } else {
            self.num / self.den
        }
    }

    /// Delta-method standard error of the ratio.
    pub fn stderr(&self) -> f64 {
        if self.den == 0.0 {
            return f64::NAN;
        }
        let r = self.ratio();
        let resid_sq = self.num_sq - 2.0 * r * self.cross + r * r * self.den_sq;
        resid_sq.max(0.0).sqrt() / self.den
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    PlainMean,
    MedianOfMeans,
}

/// A Monte Carlo estimate with its provenance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevenueEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
    pub estimator: Estimator,
    pub seed: Seed,
}

impl RevenueEstimate {
    pub fn from_moments(m: &Moments, seed: Seed) -> Self {
        Self {
            mean: m.mean(),
            stderr: m.stderr(),
            samples: m.count(),
            estimator: Estimator::PlainMean,
            seed,
        }
    }

    /// `(self - x) / stderr`.
    pub fn z_score(&self, x: f64) -> f64 {
        (self.mean - x) / self.stderr
    }

    pub fn within_sigmas(&self, x: f64, sigmas: f64) -> bool {
        (self.mean - x).abs() <= sigmas * self.stderr
    }
}

/// Default block count for median-of-means.
pub const MOM_BLOCKS: usize = 32;

/// Median of block means. The standard error is `sqrt(pi/2)` times the
/// spread of the block means over `sqrt(blocks)`.
pub fn median_of_means(block_means: &[f64]) -> (f64, f64) {
    assert!(!block_means.is_empty());
    let mut sorted = block_means.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    let spread: Moments = block_means.iter().copied().collect();
    let stderr = (std::f64::consts::FRAC_PI_2).sqrt() * spread.variance().sqrt() / (k as f64).sqrt();
    (median, stderr)
}

/// Plain-mean Monte Carlo estimate of `E[draw(rng)]` over `samples` draws.
pub fn estimate_mean<F>(seed: Seed, samples: usize, draw: F) -> RevenueEstimate
where
    F: Fn(&mut SimRng) -> f64 + Sync,
{
    let m = run_chunks(seed, samples, CHUNK_SIZE, |rng, count| {
        let mut acc = Moments::default();
        for _ in 0..count {
            acc.push(draw(rng));
        }
        acc
    })
    .into_iter()
    .fold(Moments::default(), Moments::merge);
    RevenueEstimate::from_moments(&m, seed)
}

/// Median-of-means estimate with [`MOM_BLOCKS`] blocks, one seed stream per block.
pub fn estimate_median_of_means<F>(seed: Seed, samples: usize, draw: F) -> RevenueEstimate
where
    F: Fn(&mut SimRng) -> f64 + Sync,
{
    let per_block = samples.div_ceil(MOM_BLOCKS).max(1);
    let means: Vec<f64> = run_chunks(seed, per_block * MOM_BLOCKS, per_block, |rng, count| {
        let mut acc = Moments::default();
        for _ in 0..count {
            acc.push(draw(rng));
        }
        acc.mean()
    });
    let (mean, stderr) = median_of_means(&means);
    RevenueEstimate {
        mean,
        stderr,
        samples: (per_block * MOM_BLOCKS) as u64,
        estimator: Estimator::MedianOfMeans,
        seed,
    }
}

/// Ordinary least squares fit `y = slope * x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// `None` when fewer than two points or no spread in `x`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    assert_eq!(xs.len(), ys.len());
    let k = xs.len();
    if k < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / k as f64;
    let my = ys.iter().sum::<f64>() / k as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
        points: k,
    })
}

/// Kolmogorov–Smirnov statistic of `samples` against a CDF with left limits
/// `cdf_left` (equal to `cdf` for continuous laws). Sorts `samples` in place.
pub fn ks_statistic<F, G>(samples: &mut [f64], cdf: F, cdf_left: G) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let above = (i + 1) as f64 / n - cdf(x);
        let below = cdf_left(x) - i as f64 / n;
        d = d.max(above).max(below);
    }
    d
}
