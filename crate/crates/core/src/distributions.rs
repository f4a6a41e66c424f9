//! The Equal-Revenue family: `F(x) = 1 - 1/x` on `[1, ∞)`, and its
//! truncation at `T` which moves the tail mass `1/T` onto an atom at `T`.
//!
//! Sampling is inverse-CDF with one uniform per draw. Draws that land at or
//! above `T` are replaced by `T` itself, so the atom is bit-exact and the
//! mechanisms can branch on `v == T`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{one_minus_pow1m, pow1m};
use crate::rng::{Seed, SimRng};

/// A value distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistSpec {
    EqualRevenue,
    TruncatedEqualRevenue { truncation: f64 },
}

impl DistSpec {
    pub fn truncated(truncation: f64) -> Result<Self> {
        let spec = DistSpec::TruncatedEqualRevenue { truncation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DistSpec::EqualRevenue => Ok(()),
            DistSpec::TruncatedEqualRevenue { truncation } => {
                if truncation.is_finite() && truncation >= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidDistribution(format!(
                        "truncation must be finite and >= 1, got {truncation}"
                    )))
                }
            }
        }
    }

    /// Upper end of the support (`∞` when untruncated).
    pub fn upper(&self) -> f64 {
        match *self {
            DistSpec::EqualRevenue => f64::INFINITY,
            DistSpec::TruncatedEqualRevenue { truncation } => truncation,
        }
    }

    /// Maps a uniform `u ∈ [0, 1)` to a value.
    #[inline]
    pub fn from_uniform(&self, u: f64) -> f64 {
        let v = 1.0 / (1.0 - u);
        match *self {
            DistSpec::EqualRevenue => v,
            DistSpec::TruncatedEqualRevenue { truncation } => {
                if v >= truncation {
                    truncation
                } else {
                    v
                }
            }
        }
    }

    #[inline]
    pub fn draw(&self, rng: &mut SimRng) -> f64 {
        self.from_uniform(rng.random::<f64>())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 1.0 {
            return 0.0;
        }
        match *self {
            DistSpec::EqualRevenue => 1.0 - 1.0 / x,
            DistSpec::TruncatedEqualRevenue { truncation } => {
                if x >= truncation {
                    1.0
                } else {
                    1.0 - 1.0 / x
                }
            }
        }
    }

    /// `P[v < x]`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        if x <= 1.0 {
            return 0.0;
        }
        match *self {
            DistSpec::TruncatedEqualRevenue { truncation } if x > truncation => 1.0,
            _ => 1.0 - 1.0 / x,
        }
    }

    /// Density of the continuous part.
    pub fn pdf_density(&self, x: f64) -> f64 {
        if x < 1.0 || x >= self.upper() {
            return 0.0;
        }
        1.0 / (x * x)
    }

    pub fn atom_mass(&self, x: f64) -> f64 {
        match *self {
            DistSpec::TruncatedEqualRevenue { truncation } if x == truncation => 1.0 / truncation,
            _ => 0.0,
        }
    }

    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidProbability(q));
        }
        let v = 1.0 / (1.0 - q);
        Ok(match *self {
            DistSpec::EqualRevenue => v,
            DistSpec::TruncatedEqualRevenue { truncation } => v.min(truncation),
        })
    }

    /// Ironed virtual value. Zero on the continuous part of either law; `T`
    /// on the atom of the truncated one.
    pub fn virtual_value(&self, x: f64) -> Result<f64> {
        if x < 1.0 || x > self.upper() || x.is_nan() {
            return Err(Error::OutsideSupport {
                value: x,
                support: format!("[1, {}]", self.upper()),
            });
        }
        Ok(match *self {
            DistSpec::TruncatedEqualRevenue { truncation } if x == truncation => truncation,
            _ => 0.0,
        })
    }
}

/// `count` draws from stream `seed`; draw `k` is always the `k`-th value.
pub fn sample(spec: &DistSpec, seed: Seed, count: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = seed.rng();
    Ok((0..count).map(|_| spec.draw(&mut rng)).collect())
}

/// CDF and density pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Marginal {
    pub cdf: f64,
    pub pdf: f64,
}

/// Law of `max_j v_j` for `v ~ ER^m`.
pub fn favorite_marginal(m: usize, x: f64) -> Result<Marginal> {
    if m == 0 {
        return Err(Error::InvalidParams("m must be >= 1".into()));
    }
    if x < 1.0 || x.is_nan() {
        return Err(Error::OutsideSupport {
            value: x,
            support: "[1, inf)".into(),
        });
    }
    let m_f = m as f64;
    Ok(Marginal {
        cdf: pow1m(1.0 / x, m_f),
        pdf: m_f * pow1m(1.0 / x, m_f - 1.0) / (x * x),
    })
}

/// Law of a uniformly chosen non-favorite coordinate of `v ~ ER^m`.
pub fn nonfavorite_marginal(m: usize, x: f64) -> Result<Marginal> {
    if m < 2 {
        return Err(Error::InvalidParams(
            "non-favorite marginal needs m >= 2".into(),
        ));
    }
    if x < 1.0 || x.is_nan() {
        return Err(Error::OutsideSupport {
            value: x,
            support: "[1, inf)".into(),
        });
    }
    let m_f = m as f64;
    let norm = 1.0 - 1.0 / m_f;
    let pdf = one_minus_pow1m(1.0 / x, m_f - 1.0) / (x * x) / norm;
    let cdf = (1.0 - 1.0 / x - pow1m(1.0 / x, m_f) / m_f) / norm;
    Ok(Marginal {
        cdf: cdf.clamp(0.0, 1.0),
        pdf,
    })
}

/// `E[x | x <= v]` for `x ~ ER`.
pub fn conditional_mean_below(v: f64) -> Result<f64> {
    if !(v > 1.0) {
        return Err(Error::Precondition(format!("need v > 1, got {v}")));
    }
    if v.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let d = v - 1.0;
    Ok(v * d.ln_1p() / d)
}

/// `Var[x | x <= v]` for `x ~ ER`; the conditional second moment is exactly `v`.
pub fn conditional_variance_below(v: f64) -> Result<f64> {
    let mean = conditional_mean_below(v)?;
    Ok(v - mean * mean)
}

/// Maximum of `k` independent uniforms on `[0, 1)`.
pub fn max_quantile_sample(k: usize, rng: &mut SimRng) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParams("need at least one quantile".into()));
    }
    Ok((0..k).map(|_| rng.random::<f64>()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::integrate_to_infinity;
    use crate::stats::{ks_statistic, Moments};
    use proptest::prelude::*;

    fn er4() -> DistSpec {
        DistSpec::truncated(4.0).unwrap()
    }

    #[test]
    fn point_mass_at_one() {
        let spec = DistSpec::truncated(1.0).unwrap();
        assert_eq!(sample(&spec, Seed::new(42), 3).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_truncation() {
        assert!(DistSpec::truncated(0.5).is_err());
        let bad = DistSpec::TruncatedEqualRevenue { truncation: 0.9 };
        assert!(sample(&bad, Seed::new(1), 1).is_err());
        assert!(DistSpec::truncated(f64::NAN).is_err());
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(er4().cdf(2.0), 0.5);
        assert_eq!(er4().atom_mass(4.0), 0.25);
        assert_eq!(er4().atom_mass(3.0), 0.0);
        assert_eq!(DistSpec::EqualRevenue.quantile(0.9).unwrap(), 1.0 / (1.0 - 0.9));
        assert!((DistSpec::EqualRevenue.quantile(0.9).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(er4().quantile(0.8).unwrap(), 4.0);
        assert!(er4().quantile(1.2).is_err());
        assert!(er4().quantile(-0.1).is_err());
        assert_eq!(er4().cdf_left(4.0), 0.75);
        assert_eq!(er4().cdf(4.0), 1.0);
    }

    #[test]
    fn virtual_values() {
        assert_eq!(er4().virtual_value(3.0).unwrap(), 0.0);
        assert_eq!(er4().virtual_value(4.0).unwrap(), 4.0);
        assert_eq!(DistSpec::EqualRevenue.virtual_value(100.0).unwrap(), 0.0);
        assert!(er4().virtual_value(0.5).is_err());
        assert!(er4().virtual_value(5.0).is_err());
    }

    #[test]
    fn atom_frequency_and_cdf_at_two() {
        let n = 1_000_000;
        let xs = sample(&er4(), Seed::new(2024), n).unwrap();
        let at_t = xs.iter().filter(|&&x| x == 4.0).count() as f64 / n as f64;
        let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
        assert!((at_t - 0.25).abs() <= 3.0 * sigma, "{at_t}");

        let ys = sample(&DistSpec::EqualRevenue, Seed::new(2025), n).unwrap();
        let below_two = ys.iter().filter(|&&x| x <= 2.0).count() as f64 / n as f64;
        let sigma = (0.25f64 / n as f64).sqrt();
        assert!((below_two - 0.5).abs() <= 3.0 * sigma, "{below_two}");
    }

    #[test]
    fn empirical_cdfs_pass_ks() {
        for spec in [DistSpec::EqualRevenue, er4(), DistSpec::truncated(37.5).unwrap()] {
            let mut xs = sample(&spec, Seed::new(5), 1_000_000).unwrap();
            let d = ks_statistic(&mut xs, |x| spec.cdf(x), |x| spec.cdf_left(x));
            assert!(d < 0.005, "{spec:?}: {d}");
        }
    }

    #[test]
    fn favorite_marginal_values() {
        for x in [1.0, 1.5, 7.0, 1e6] {
            let f = favorite_marginal(1, x).unwrap();
            assert!((f.cdf - (1.0 - 1.0 / x)).abs() < 1e-15);
        }
        assert!((favorite_marginal(2, 2.0).unwrap().cdf - 0.25).abs() < 1e-15);
        assert!(nonfavorite_marginal(1, 2.0).is_err());
        assert!(favorite_marginal(2, 0.5).is_err());
    }

    #[test]
    fn marginal_densities_integrate_to_one() {
        for m in [1usize, 2, 3, 5, 9] {
            let fav = integrate_to_infinity(|x| favorite_marginal(m, x).unwrap().pdf, 1.0, 1e-10);
            assert!((fav - 1.0).abs() < 1e-6, "fav m={m}: {fav}");
            if m >= 2 {
                let nf = integrate_to_infinity(|x| nonfavorite_marginal(m, x).unwrap().pdf, 1.0, 1e-10);
                assert!((nf - 1.0).abs() < 1e-6, "nonfav m={m}: {nf}");
            }
        }
    }

    #[test]
    fn nonfavorite_cdf_is_integral_of_pdf() {
        for m in [2usize, 4, 7] {
            for v in [1.3, 2.0, 10.0, 250.0] {
                let integral = crate::numeric::integrate(|x| nonfavorite_marginal(m, x).unwrap().pdf, 1.0, v, 1e-12);
                let cdf = nonfavorite_marginal(m, v).unwrap().cdf;
                assert!((integral - cdf).abs() < 1e-9, "m={m} v={v}: {integral} vs {cdf}");
            }
        }
    }

    #[test]
    fn conditional_moments() {
        // Oracle: integrate the conditional density 1/(x^2 (1 - 1/v)) on [1, v].
        for v in [std::f64::consts::E, 4.0, 30.0] {
            let norm = 1.0 - 1.0 / v;
            let mean_q = crate::numeric::integrate(|x| x / (x * x) / norm, 1.0, v, 1e-12);
            let second_q = crate::numeric::integrate(|x| x * x / (x * x) / norm, 1.0, v, 1e-12);
            let mean = conditional_mean_below(v).unwrap();
            let var = conditional_variance_below(v).unwrap();
            assert!((mean - mean_q).abs() < 1e-10);
            assert!((var - (second_q - mean_q * mean_q)).abs() < 1e-9);
        }
        let e = std::f64::consts::E;
        assert!((conditional_mean_below(e).unwrap() - e / (e - 1.0)).abs() < 1e-12);
        assert!((conditional_mean_below(e).unwrap() - 1.582).abs() < 1e-3);
        assert!((conditional_variance_below(4.0).unwrap() - 0.583).abs() < 1e-3);
        assert!((conditional_mean_below(1.0 + 1e-9).unwrap() - 1.0).abs() < 1e-8);
        assert!(conditional_mean_below(1.0).is_err());
        assert!(conditional_variance_below(0.5).is_err());
    }

    #[test]
    fn max_quantiles() {
        let mut rng = Seed::new(77).rng();
        assert!(max_quantile_sample(0, &mut rng).is_err());
        let n = 1_000_000;
        let one: Moments = (0..n).map(|_| max_quantile_sample(1, &mut rng).unwrap()).collect();
        assert!((one.mean() - 0.5).abs() <= 3.0 * one.stderr());
        let two: Moments = (0..n).map(|_| max_quantile_sample(2, &mut rng).unwrap()).collect();
        assert!((two.mean() - 2.0 / 3.0).abs() <= 3.0 * two.stderr());
        let p = 0.9f64.powi(10);
        let hits = (0..n)
            .filter(|_| max_quantile_sample(10, &mut rng).unwrap() <= 0.9)
            .count() as f64
            / n as f64;
        assert!((hits - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    proptest! {
        #[test]
        fn quantile_inverts_cdf(x in 1.0f64..1e9, t in 1.0f64..1e6) {
            let er = DistSpec::EqualRevenue;
            let back = er.quantile(er.cdf(x)).unwrap();
            prop_assert!((back - x).abs() <= 1e-12 * x * x.max(1.0).log10().max(1.0) * 10.0 || x > 1e6);
            let spec = DistSpec::truncated(t).unwrap();
            if x < t && x < 1e6 {
                let back = spec.quantile(spec.cdf(x)).unwrap();
                prop_assert!((back - x).abs() <= 1e-12 * x * x.max(10.0).log10() * 10.0);
            }
        }

        #[test]
        fn virtual_value_is_threshold_in_quantile(t in 1.0f64..500.0, u in 0.0f64..1.0) {
            let spec = DistSpec::truncated(t).unwrap();
            let x = spec.from_uniform(u);
            let expected = if spec.cdf(x) >= 1.0 - 1.0 / t && x == t { t } else { 0.0 };
            prop_assert_eq!(spec.virtual_value(x).unwrap(), expected);
            prop_assert!(x >= 1.0 && x <= t);
        }
    }
}
