//! Exact revenue expressions, interim rates and inequality checks.
//!
//! Powers of `1 - 1/T` go through [`pow1m`]/[`one_minus_pow1m`], and the
//! bracket `1 - (1-1/T)^m - (m/T)(1-1/T)^(m-1)` is evaluated as the binomial
//! tail `P[Bin(m, 1/T) >= 2]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    binomial, binomial_excess_over_one, binomial_tail, compensated_sum, integrate_to_infinity,
    one_minus_pow1m, pow1m, share_among,
};
use crate::params::AuctionParams;

fn check_t(t: f64) -> Result<()> {
    if t.is_finite() && t >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidDistribution(format!("truncation must be finite and >= 1, got {t}")))
    }
}

/// Revenue of per-item second-price auctions at reserve `T` with `n_prime`
/// bidders: `m T (1 - (1 - 1/T)^n')`.
pub fn srev(n_prime: usize, m: usize, t: f64) -> Result<f64> {
    check_t(t)?;
    if n_prime == 0 {
        return Err(Error::InvalidParams("srev needs at least one bidder".into()));
    }
    Ok(m as f64 * t * one_minus_pow1m(1.0 / t, n_prime as f64))
}

/// Revenue gained by adding `x` bidders to `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrevIncrement {
    /// `m T (1-1/T)^n (1 - (1-1/T)^x)`.
    pub exact: f64,
    /// `m x (1-1/T)^n`.
    pub bound: f64,
}

pub fn srev_increment(n: usize, x: usize, m: usize, t: f64) -> Result<SrevIncrement> {
    check_t(t)?;
    let none = pow1m(1.0 / t, n as f64);
    let mf = m as f64;
    Ok(SrevIncrement {
        exact: mf * t * none * one_minus_pow1m(1.0 / t, x as f64),
        bound: mf * x as f64 * none,
    })
}

/// `P[Bin(m, 1/T) >= 2]`, the share of bidders holding two or more `T` values.
pub fn multi_top_bracket(m: usize, t: f64) -> f64 {
    binomial_tail(m as u64, 1.0 / t, 2)
}

/// `E[(Bin(m, 1/T) - 1)^+] = m/T - 1 + (1 - 1/T)^m`.
pub fn expected_subsidies(m: usize, t: f64) -> Result<f64> {
    check_t(t)?;
    Ok(binomial_excess_over_one(m as u64, 1.0 / t))
}

/// Total revenue of the Naive auction above `srev(n, m, T)`.
pub fn naive_gain(p: &AuctionParams) -> Result<f64> {
    if p.low_price() > p.t() {
        return Err(Error::EmptyBand { low_price: p.low_price(), truncation: p.t() });
    }
    let t = p.t();
    let stay_below = 1.0 - 1.0 / t;
    let rho = if t == 1.0 {
        0.0
    } else {
        p.band_mass() / stay_below * one_minus_pow1m(1.0 / t, p.mf() - 1.0)
    };
    Ok(p.mf() * p.low_price() * pow1m(1.0 / t, p.nf()) * one_minus_pow1m(rho, p.nf()))
}

/// Interim probability of winning an item reported at `T` when every
/// bidder reporting `T` for it is equally likely to win.
pub fn a0(n: usize, t: f64) -> Result<f64> {
    check_t(t)?;
    Ok(share_among(1.0 / t, n as f64))
}

pub fn b0(p: &AuctionParams) -> Result<f64> {
    Ok(rates_map(&vec![0.0; p.m - 1], p)?.b)
}

/// Extra revenue per bidder, per unit of `b`, from cheap sales minus
/// subsidies. Equals `m n (T/(mn) - 1/T) P[Bin(m, 1/T) >= 2]` when `mn/T >= 1`.
fn low_slot_gain_per_b(p: &AuctionParams) -> f64 {
    let (n, m, t) = (p.nf(), p.mf(), p.t());
    if p.low_price() >= 1.0 {
        return m * n * p.band_mass() * multi_top_bracket(p.m, t);
    }
    let sales = m * p.low_price() * p.band_mass() * one_minus_pow1m(1.0 / t, m - 1.0);
    let subsidies = (t - p.low_price()) * binomial_excess_over_one(p.m as u64, 1.0 / t);
    sales - subsidies
}

/// Total revenue of the Less-Naive auction above `srev(n, m, T)` for a
/// low-slot rate `b`.
pub fn lna_gain(p: &AuctionParams, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::InvalidProbability(b));
    }
    Ok(b * p.nf() * low_slot_gain_per_b(p))
}

/// Which power of `P[not high]` enters `b`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoHighExponent {
    /// `n - 1`: the expectation runs over the other bidders only.
    #[default]
    Others,
    /// `n`: the form that appears when bounding `b` from below.
    All,
}

/// Interim rates of the menu.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterimRates {
    pub a: f64,
    pub b: f64,
    /// `q_1 .. q_(m-1)`.
    pub q: Vec<f64>,
    pub p_high: f64,
    pub p_low: f64,
}

impl InterimRates {
    /// `sum_l C(m-1, l) q_l`.
    pub fn high_without_top(&self) -> f64 {
        let m1 = self.q.len() as u64;
        compensated_sum(self.q.iter().enumerate().map(|(i, &q)| binomial(m1, i as u64 + 1) * q))
    }

    /// `(m-1) sum_l C(m-2, l-1) q_l`.
    pub fn low_without_top(&self) -> f64 {
        let m1 = self.q.len() as u64;
        if m1 == 0 {
            return 0.0;
        }
        m1 as f64 * compensated_sum(self.q.iter().enumerate().map(|(i, &q)| binomial(m1 - 1, i as u64) * q))
    }
}

pub fn rates_map(q: &[f64], p: &AuctionParams) -> Result<InterimRates> {
    rates_map_with(q, p, NoHighExponent::Others)
}

pub fn rates_map_with(q: &[f64], p: &AuctionParams, exponent: NoHighExponent) -> Result<InterimRates> {
    if q.len() + 1 != p.m {
        return Err(Error::InvalidParams(format!("expected {} q values, got {}", p.m - 1, q.len())));
    }
    if let Some(&bad) = q.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::InvalidProbability(bad));
    }
    let t = p.t();
    let mut rates = InterimRates { a: 0.0, b: 0.0, q: q.to_vec(), p_high: 0.0, p_low: 0.0 };
    rates.p_high = 1.0 / t + rates.high_without_top();
    rates.p_low = one_minus_pow1m(1.0 / t, p.mf() - 1.0) * p.band_mass() + rates.low_without_top();
    if rates.p_high >= 1.0 {
        return Err(Error::DegenerateRates(rates.p_high));
    }
    rates.a = share_among(rates.p_high, p.nf());
    rates.b = if rates.p_low == 0.0 {
        0.0
    } else {
        let not_high = 1.0 - rates.p_high;
        let low_given_not_high = rates.p_low / not_high;
        if low_given_not_high > 1.0 {
            return Err(Error::InvalidProbability(low_given_not_high));
        }
        let others = match exponent {
            NoHighExponent::Others => p.nf() - 1.0,
            NoHighExponent::All => p.nf(),
        };
        pow1m(rates.p_high, others) * share_among(low_given_not_high, p.nf())
    };
    Ok(rates)
}

/// Expected menu payment of one bidder.
pub fn nsn_revenue_per_bidder(rates: &InterimRates, p: &AuctionParams) -> Result<f64> {
    if rates.q.len() + 1 != p.m {
        return Err(Error::InvalidParams("rates do not match m".into()));
    }
    let (t, m) = (p.t(), p.mf());
    let lp = p.low_price();
    let m1 = rates.q.len() as u64;
    let menu_buyers = compensated_sum(rates.q.iter().enumerate().map(|(i, &q)| {
        let l = (i + 1) as f64;
        binomial(m1, i as u64 + 1) * (rates.a * t + l * rates.b * lp) * q
    }));
    Ok(rates.a * m + rates.b * low_slot_gain_per_b(p) + m * menu_buyers)
}

/// One evaluated inequality `lhs <= rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl BoundCheck {
    fn le(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let slack = 1e-12 * rhs.abs().max(lhs.abs());
        Self { name: name.into(), lhs, rhs, pass: lhs <= rhs + slack }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub checks: Vec<BoundCheck>,
    /// `b / (1 - 1/T)^n`.
    pub b_ratio: f64,
    /// `b` recomputed with exponent `n`, and the same ratio for it.
    pub b_all: f64,
    pub b_all_ratio: f64,
    pub all_pass: bool,
}

pub fn bound_suite(rates: &InterimRates, p: &AuctionParams) -> Result<BoundReport> {
    let (n, m, t) = (p.nf(), p.mf(), p.t());
    let (a, b) = (rates.a, rates.b);
    let band = p.band_mass();
    let below = p.below_mass();
    let mut checks = Vec::new();
    checks.push(BoundCheck::le("b <= a", b, a));
    let x = n / t;
    checks.push(BoundCheck::le("b/a ratio bound", b / a, x * (-x).exp() / (-(-x).exp_m1())));
    for (i, &q) in rates.q.iter().enumerate() {
        let l = (i + 1) as f64;
        let rhs = band.powf(l) * below.powf(m - l - 1.0) * l * b / (t * a);
        checks.push(BoundCheck::le(format!("q_{} bound", i + 1), q, rhs));
    }
    if p.m >= 2 {
        let head = b * (m - 1.0) / (t * a) * band;
        checks.push(BoundCheck::le(
            "high without T",
            rates.high_without_top(),
            head * pow1m(1.0 / t, m - 2.0),
        ));
        let tail = (1.0 - 1.0 / t + (m - 2.0) * band) / (1.0 - 1.0 / t);
        checks.push(BoundCheck::le(
            "low without T",
            rates.low_without_top(),
            head * pow1m(1.0 / t, m - 2.0) * tail,
        ));
    }
    let zeros = vec![0.0; p.m - 1];
    let b0 = rates_map(&zeros, p)?.b;
    checks.push(BoundCheck::le("b0 <= (1-1/T)^(n-1)", b0, pow1m(1.0 / t, n - 1.0)));
    let none = pow1m(1.0 / t, n);
    let b_all = rates_map_with(&rates.q, p, NoHighExponent::All)?.b;
    let all_pass = checks.iter().all(|c| c.pass);
    Ok(BoundReport { checks, b_ratio: b / none, b_all, b_all_ratio: b_all / none, all_pass })
}

/// Right-hand side of the competition-complexity condition: `c` added
/// bidders beat the menu only if `c` is at least this.
pub fn ccx_analytic_bound(p: &AuctionParams, b: f64) -> f64 {
    let n = p.nf();
    b * n * n * p.band_mass() * multi_top_bracket(p.m, p.t()) / pow1m(1.0 / p.t(), n)
}

/// `P[v_(2),(1) <= z]`: the second-highest favorite value among `n`
/// bidders with `ER^m` values.
pub fn second_favorite_cdf(n: usize, m: usize, z: f64) -> Result<f64> {
    Ok(1.0 - second_favorite_survival(n, m, z)?)
}

fn second_favorite_survival(n: usize, m: usize, z: f64) -> Result<f64> {
    if z < 1.0 || z.is_nan() {
        return Err(Error::OutsideSupport { value: z, support: "[1, inf)".into() });
    }
    let above = one_minus_pow1m(1.0 / z, m as f64);
    Ok(binomial_tail(n as u64, above, 2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrandBundleForms {
    pub n: usize,
    pub m: usize,
    /// `E[v_(2),(1)]` by quadrature of the survival function.
    pub second_favorite_mean: f64,
    /// `mn - n(m-1)/(n-1)`.
    pub lower: f64,
    /// `nm`.
    pub upper: f64,
}

pub fn grand_bundle_forms(n: usize, m: usize) -> Result<GrandBundleForms> {
    if n < 2 || m == 0 {
        return Err(Error::InvalidParams(format!("need n >= 2, m >= 1 (n = {n}, m = {m})")));
    }
    let mean = 1.0 + integrate_to_infinity(|z| second_favorite_survival(n, m, z).unwrap_or(0.0), 1.0, 1e-11);
    let (nf, mf) = (n as f64, m as f64);
    Ok(GrandBundleForms {
        n,
        m,
        second_favorite_mean: mean,
        lower: mf * nf - nf * (mf - 1.0) / (nf - 1.0),
        upper: nf * mf,
    })
}

/// Closed-form pieces of the Knows-Favorite auction. Quantities involving
/// `H = e^(nm)` are stored multiplied by `H`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfaForms {
    pub n: usize,
    pub m: usize,
    /// `ln H = nm`.
    pub ln_h: f64,
    /// `L = sqrt(nm)`.
    pub l: f64,
    /// `H p` with `m - 1` competing items.
    pub hp_exact: f64,
    /// `H p` with exponent `m`.
    pub hp_exponent_m: f64,
    /// `H p` interval `[1 - m/(2H), 1]`.
    pub hp_lower: f64,
    pub hp_upper: f64,
    /// Per-item high-branch revenue `H P[sold to S_j]`.
    pub high_revenue_exact: f64,
    pub high_revenue_lower: f64,
    pub high_revenue_upper: f64,
    pub q_exact: f64,
    pub q_lower: f64,
    pub q_upper: f64,
    /// Per-item low-branch revenue `L ((1-p)^n - (1-p-q)^n)`.
    pub low_revenue_exact: f64,
    pub low_revenue_lower: f64,
}

impl KfaForms {
    /// Exact expected revenue over all items.
    pub fn total_exact(&self) -> f64 {
        self.m as f64 * (self.high_revenue_exact + self.low_revenue_exact)
    }
}

pub fn kfa_forms(n: usize, m: usize) -> Result<KfaForms> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParams(format!("need n, m >= 1 (n = {n}, m = {m})")));
    }
    let (nf, mf) = (n as f64, m as f64);
    let ln_h = nf * mf;
    let inv_h = (-ln_h).exp();
    let l = ln_h.sqrt();
    let hp_exact = share_among(inv_h, mf);
    let hp_exponent_m = share_among(inv_h, mf + 1.0);
    let p = inv_h * hp_exact;
    let high_revenue_exact = nf * hp_exact * share_among(p, nf);
    // A single item has no non-favorite to sell cheaply.
    let q_exact = if m == 1 { 0.0 } else { (1.0 / l - one_minus_pow1m(1.0 / l, mf) / mf).max(0.0) };
    let low_revenue_exact = l * pow1m(p, nf) * one_minus_pow1m(q_exact / (1.0 - p), nf);
    let pairs = nf * (nf - 1.0) / 2.0;
    Ok(KfaForms {
        n,
        m,
        ln_h,
        l,
        hp_exact,
        hp_exponent_m,
        hp_lower: 1.0 - mf / 2.0 * inv_h,
        hp_upper: 1.0,
        high_revenue_exact,
        high_revenue_lower: nf - nf * (nf + mf - 1.0) / 2.0 * inv_h,
        high_revenue_upper: nf,
        q_exact,
        q_lower: (mf - 1.0) / (2.0 * l * l) - (mf - 1.0) * (mf - 2.0) / (6.0 * l.powi(3)),
        q_upper: (mf - 1.0) / (2.0 * l * l),
        low_revenue_exact,
        low_revenue_lower: nf * (mf - 1.0) / (2.0 * l)
            - nf * (mf - 1.0) * (mf - 2.0) / (6.0 * l * l)
            - pairs * (mf - 1.0).powi(2) / (4.0 * l.powi(3)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{integrate, rel_diff};
    use proptest::prelude::*;

    fn lam(n: usize, m: usize) -> AuctionParams {
        AuctionParams::from_lambda(n, m, 1.5).unwrap()
    }

    /// The bracket written out the long way.
    fn bracket_naive(m: usize, t: f64) -> f64 {
        let c = 1.0 - 1.0 / t;
        1.0 - c.powi(m as i32) - m as f64 / t * c.powi(m as i32 - 1)
    }

    #[test]
    fn srev_values() {
        assert_eq!(srev(7, 3, 1.0).unwrap(), 3.0);
        assert!((srev(2, 3, 4.0).unwrap() - 5.25).abs() < 1e-12);
        assert!(srev(2, 3, 0.5).is_err());
    }

    #[test]
    fn increment_values() {
        let z = srev_increment(5, 0, 3, 7.0).unwrap();
        assert_eq!((z.exact, z.bound), (0.0, 0.0));
        let inc = srev_increment(4, 2, 1, 2.0).unwrap();
        assert!((inc.exact - 0.09375).abs() < 1e-15);
        assert!((inc.bound - 0.125).abs() < 1e-15);
        let inc = srev_increment(64, 16, 2, 17.0).unwrap();
        let diff = srev(80, 2, 17.0).unwrap() - srev(64, 2, 17.0).unwrap();
        assert!(inc.exact <= inc.bound);
        assert!(rel_diff(diff, inc.exact) < 1e-12);
    }

    #[test]
    fn naive_gain_values() {
        assert_eq!(naive_gain(&AuctionParams::new(16, 1, 6.0).unwrap()).unwrap(), 0.0);
        let p = lam(64, 2);
        let g = naive_gain(&p).unwrap();
        let scale = pow1m(1.0 / p.t(), 64.0) * 2.0 * p.low_price();
        assert!(g > 0.0 && g / scale <= 1.0);
        assert!(naive_gain(&AuctionParams::new(64, 4, 10.0).unwrap()).is_err());
    }

    #[test]
    fn a0_b0_values() {
        assert!((a0(4, 2.0).unwrap() - 0.46875).abs() < 1e-15);
        assert_eq!(b0(&AuctionParams::new(9, 1, 4.0).unwrap()).unwrap(), 0.0);
        for (n, m) in [(16, 2), (64, 3), (256, 4)] {
            let p = lam(n, m);
            let b = b0(&p).unwrap();
            assert!(b > 0.0 && b <= pow1m(1.0 / p.t(), n as f64 - 1.0));
        }
    }

    #[test]
    fn subsidies_and_lna_gain() {
        assert!((expected_subsidies(2, 4.0).unwrap() - 0.0625).abs() < 1e-15);
        assert_eq!(lna_gain(&lam(16, 1), 0.3).unwrap(), 0.0);
        assert!(lna_gain(&lam(16, 2), 1.5).is_err());
        for (n, m) in [(16, 2), (64, 3), (100, 6)] {
            let p = lam(n, m);
            let b = 0.01;
            let displayed = b * p.mf() * p.nf() * p.nf() * (p.t() / (p.mf() * p.nf()) - 1.0 / p.t())
                * bracket_naive(m, p.t());
            assert!(rel_diff(lna_gain(&p, b).unwrap(), displayed) < 1e-9);
        }
    }

    #[test]
    fn low_slot_general_form_agrees_with_bracket() {
        // Both forms hold when mn/T >= 1; compare the long-hand sales minus
        // subsidies expression to the bracket form.
        for (n, m) in [(16, 2), (64, 4), (300, 7)] {
            let p = lam(n, m);
            let t = p.t();
            let sales = p.mf() * p.low_price() * p.band_mass() * one_minus_pow1m(1.0 / t, p.mf() - 1.0);
            let subs = (t - p.low_price()) * expected_subsidies(m, t).unwrap();
            assert!(rel_diff(sales - subs, low_slot_gain_per_b(&p)) < 1e-9);
        }
    }

    #[test]
    fn rates_at_zero_reduce_to_a0_b0() {
        for (n, m) in [(16, 2), (64, 3), (256, 5)] {
            let p = lam(n, m);
            let r = rates_map(&vec![0.0; m - 1], &p).unwrap();
            assert!(rel_diff(r.a, a0(n, p.t()).unwrap()) < 1e-12);
            // b0 by the defining expectation: sum over the number of other low bidders.
            let p_low = (1.0 - (1.0 - 1.0 / p.t()).powi(m as i32 - 1)) * p.band_mass();
            let cond = p_low / (1.0 - 1.0 / p.t());
            let mut expect = 0.0;
            for k in 0..n {
                expect += binomial((n - 1) as u64, k as u64) * cond.powi(k as i32)
                    * (1.0 - cond).powi((n - 1 - k) as i32)
                    / (k + 1) as f64;
            }
            expect *= (1.0 - 1.0 / p.t()).powi(n as i32 - 1);
            assert!(rel_diff(r.b, expect) < 1e-10, "{n} {m}: {} {}", r.b, expect);
        }
    }

    #[test]
    fn rates_errors() {
        let p = lam(16, 3);
        assert!(rates_map(&[0.0], &p).is_err());
        assert!(rates_map(&[0.0, 1.5], &p).is_err());
        assert!(matches!(rates_map(&[0.5, 0.3], &p), Err(Error::DegenerateRates(_))));
    }

    #[test]
    fn nsn_reduces_to_lna() {
        for (n, m) in [(16, 2), (64, 3)] {
            let p = lam(n, m);
            let r = rates_map(&vec![0.0; m - 1], &p).unwrap();
            let lhs = nsn_revenue_per_bidder(&r, &p).unwrap();
            let rhs = r.a * p.mf() + lna_gain(&p, r.b).unwrap() / p.nf();
            assert!(rel_diff(lhs, rhs) < 1e-12);
        }
        let p = lam(16, 1);
        let r = rates_map(&[], &p).unwrap();
        let per = nsn_revenue_per_bidder(&r, &p).unwrap();
        assert!(rel_diff(per, srev(16, 1, p.t()).unwrap() / 16.0) < 1e-12);
    }

    #[test]
    fn nsn_menu_term_matches_enumeration() {
        // Per bidder: sum over (j*, L) of the option price times q_|L|.
        let p = lam(64, 3);
        let mut r = rates_map(&[0.0, 0.0], &p).unwrap();
        r.q = vec![1e-4, 3e-6];
        let base = r.a * p.mf() + lna_gain(&p, r.b).unwrap() / p.nf();
        let mut menu = 0.0;
        for _jstar in 0..3 {
            for mask in 0u32..4 {
                let l = mask.count_ones() as usize;
                if l == 0 {
                    continue;
                }
                let price = r.b * l as f64 * p.low_price() + r.a * p.t();
                menu += price * r.q[l - 1];
            }
        }
        let got = nsn_revenue_per_bidder(&r, &p).unwrap();
        assert!(rel_diff(got, base + menu) < 1e-12);
    }

    #[test]
    fn bound_suite_at_zero() {
        let p = lam(64, 3);
        let r = rates_map(&[0.0, 0.0], &p).unwrap();
        let rep = bound_suite(&r, &p).unwrap();
        assert!(rep.all_pass, "{rep:?}");
        assert!(rep.b_ratio > 0.0);
        assert!(rep.b_all < r.b);
    }

    #[test]
    fn bound_suite_detects_b_above_a() {
        let p = lam(64, 2);
        let mut r = rates_map(&[0.0], &p).unwrap();
        r.b = r.a * 2.0;
        let rep = bound_suite(&r, &p).unwrap();
        assert!(!rep.all_pass);
    }

    #[test]
    fn second_favorite_forms() {
        let g = grand_bundle_forms(2, 1).unwrap();
        let oracle = 1.0 + integrate(|u| u * u / (u * u), 0.0, 1.0, 1e-12);
        assert!((g.second_favorite_mean - oracle).abs() < 1e-8);
        assert!((g.second_favorite_mean - 2.0).abs() < 1e-8);
        let mut prev = 0.0;
        for z in [1.0, 1.5, 3.0, 10.0, 1e3, 1e8] {
            let c = second_favorite_cdf(8, 2, z).unwrap();
            assert!(c >= prev);
            prev = c;
        }
        assert!(prev > 1.0 - 1e-12);
        assert!(second_favorite_cdf(8, 2, 0.5).is_err());
        assert!(grand_bundle_forms(1, 2).is_err());
        let g = grand_bundle_forms(8, 2).unwrap();
        assert!(g.second_favorite_mean >= g.lower && g.second_favorite_mean <= g.upper);
    }

    #[test]
    fn second_favorite_cdf_matches_displayed_form() {
        for (n, m) in [(2usize, 1usize), (8, 2), (5, 4)] {
            for z in [1.2, 2.0, 9.0] {
                let c = (1.0 - 1.0 / z) as f64;
                let shown = c.powi((m * n) as i32) + n as f64 * c.powi((m * (n - 1)) as i32) * (1.0 - c.powi(m as i32));
                assert!((second_favorite_cdf(n, m, z).unwrap() - shown).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn kfa_forms_values() {
        let f = kfa_forms(16, 1).unwrap();
        assert_eq!(f.q_exact, 0.0);
        assert_eq!(f.low_revenue_lower, 0.0);
        assert_eq!(f.low_revenue_exact, 0.0);
        // One item: sold at H whenever some bidder reaches it.
        let reach = (-16f64).exp();
        let oracle = (1.0 - (1.0 - reach).powi(16)) / reach;
        assert!(rel_diff(f.total_exact(), oracle) < 1e-8);
        assert!((f.total_exact() - 16.0).abs() < 1e-4);

        let f = kfa_forms(16, 4).unwrap();
        assert!(f.high_revenue_exact >= f.high_revenue_lower && f.high_revenue_exact <= f.high_revenue_upper);
        assert!(f.hp_exact >= f.hp_lower && f.hp_exact <= f.hp_upper);
        assert!(f.q_exact >= f.q_lower && f.q_exact <= f.q_upper);
        assert!(f.low_revenue_lower > 0.0);
        assert!(f.low_revenue_exact >= f.low_revenue_lower);
        let order = f.low_revenue_lower / f.l;
        assert!(order > 0.1 && order < 1.0);

        // q by quadrature of its defining integral.
        let m = 4.0;
        let q = integrate_to_infinity(|x| (1.0 - (1.0 - 1.0 / x).powf(m - 1.0)) / (x * x), f.l, 1e-12);
        assert!(rel_diff(f.q_exact, q) < 1e-8);
    }

    #[test]
    fn kfa_small_h_intervals() {
        // nm small enough that H is moderate and the interval is visible.
        let f = kfa_forms(1, 2).unwrap();
        let h = 2f64.exp();
        let p = integrate_to_infinity(|x| (1.0 - 1.0 / x) / (x * x), h, 1e-12);
        assert!(rel_diff(f.hp_exact, h * p) < 1e-8);
        assert!(f.hp_exact >= f.hp_lower);
    }

    proptest! {
        #[test]
        fn increment_identity(n in 1usize..300, x in 0usize..50, m in 1usize..8, t in 1.0f64..60.0) {
            let inc = srev_increment(n, x, m, t).unwrap();
            prop_assert!(inc.exact <= inc.bound * (1.0 + 1e-12) + 1e-300);
            if x > 0 {
                let diff = srev(n + x, m, t).unwrap() - srev(n, m, t).unwrap();
                prop_assert!((diff - inc.exact).abs() <= 1e-10 * inc.exact.max(1e-300) + 1e-13 * srev(n + x, m, t).unwrap());
            }
        }

        #[test]
        fn zero_q_rates_respect_ratio_bound(n in 4usize..2000, m in 1usize..8, lambda in 1.0f64..3.0) {
            let p = AuctionParams::from_lambda(n, m, lambda).unwrap();
            prop_assume!(p.low_price() >= 1.0);
            let r = rates_map(&vec![0.0; m - 1], &p).unwrap();
            prop_assert!(r.a >= r.b);
            let x = p.nf() / p.t();
            prop_assert!(r.b / r.a <= x * (-x).exp() / (1.0 - (-x).exp()) * (1.0 + 1e-12));
        }

        #[test]
        fn bracket_is_accurate(m in 2usize..10, t in 2.0f64..1e3) {
            let tail = multi_top_bracket(m, t);
            let naive = bracket_naive(m, t);
            prop_assert!((tail - naive).abs() <= 1e-12 + 1e-9 * tail);
        }
    }
}
