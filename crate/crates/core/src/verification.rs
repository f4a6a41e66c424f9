//! Incentive and feasibility checks: the menu is BIC, the Naive and
//! Less-Naive auctions are not, the Knows-Favorite auction is truthful
//! among types sharing a favorite, and solved rates can be honoured ex post.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::closed_form::InterimRates;
use crate::distributions::DistSpec;
use crate::error::{Error, Result};
use crate::mechanisms::{
    best_option_exhaustive, kfa_favorite, menu_price, nsn_classify, nsn_expost, nsn_preferred_option,
    option_utility, ItemSet, MenuOption, ValuationProfile,
};
use crate::params::AuctionParams;
use crate::rng::{run_chunks, Seed, SimRng, CHUNK_SIZE};
use crate::stats::{Moments, RatioSums};

/// A type and a report that does better than the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationWitness {
    pub true_type: Vec<f64>,
    pub misreport: Vec<f64>,
    pub truthful_utility: f64,
    pub deviating_utility: f64,
    pub gain: f64,
}

impl DeviationWitness {
    fn new(true_type: Vec<f64>, misreport: Vec<f64>, truthful_utility: f64, deviating_utility: f64) -> Self {
        Self { true_type, misreport, truthful_utility, deviating_utility, gain: deviating_utility - truthful_utility }
    }
}

/// Largest exhaustive enumeration performed by [`menu_bic_check`].
pub const EXHAUSTIVE_MAX_ITEMS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MenuBicReport {
    pub types: usize,
    pub distinct_options: usize,
    /// Type prefers another sampled type's option.
    pub violations: usize,
    /// Type's option is beaten by some menu entry found by enumeration.
    pub exhaustive_mismatches: usize,
    /// Participating type with negative utility.
    pub participation_violations: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub exhaustive: bool,
    pub pass: bool,
}

/// Draws a type that puts mass where the menu's decisions are close calls:
/// exactly `T`, just below `T`, inside the band, below the band.
fn stressed_type(params: &AuctionParams, ratio: f64, rng: &mut SimRng) -> Vec<f64> {
    let t = params.t();
    let lo = params.band_floor();
    (0..params.m)
        .map(|_| match rng.random_range(0..4) {
            0 => t,
            1 => {
                let width = (t * ratio).min(t - lo).max(t * 1e-12);
                (t - rng.random::<f64>() * width).max(1.0)
            }
            2 => lo + rng.random::<f64>() * (t - lo),
            _ => 1.0 + rng.random::<f64>() * (lo - 1.0),
        })
        .collect()
}

/// Every sampled type must weakly prefer its assigned option to the option
/// assigned to every other sampled type, and participants must get
/// non-negative utility. For `m <= 6` each option is also compared with the
/// best entry of the full menu.
pub fn menu_bic_check(rates: &InterimRates, params: &AuctionParams, type_samples: usize, seed: Seed) -> MenuBicReport {
    let (a, b) = (rates.a, rates.b);
    let tol = 1e-9 * params.t();
    let dist = params.dist();
    let ratio = if a > 0.0 { b / a } else { 1.0 };
    let mut rng = seed.rng();
    let types: Vec<Vec<f64>> = (0..type_samples)
        .map(|k| {
            if k % 2 == 0 {
                (0..params.m).map(|_| dist.draw(&mut rng)).collect()
            } else {
                stressed_type(params, ratio, &mut rng)
            }
        })
        .collect();
    let chosen: Vec<MenuOption> = types.iter().map(|v| nsn_preferred_option(v, rates, params)).collect();
    let mut seen = HashSet::new();
    let distinct: Vec<MenuOption> = chosen.iter().filter(|o| seen.insert((o.high, o.low))).copied().collect();
    let exhaustive = params.m <= EXHAUSTIVE_MAX_ITEMS;

    #[derive(Default)]
    struct Tally {
        violations: usize,
        mismatches: usize,
        participation: usize,
        worst: f64,
    }
    let per_type: Vec<Tally> = {
        use rayon::prelude::*;
        types
            .par_chunks(1024)
            .zip(chosen.par_chunks(1024))
            .map(|(vs, os)| {
                let mut t = Tally::default();
                for (v, o) in vs.iter().zip(os) {
                    let own = option_utility(v, o, a, b);
                    if !o.is_null() && own < -tol {
                        t.participation += 1;
                        t.worst = t.worst.max(-own);
                    }
                    for other in &distinct {
                        let u = option_utility(v, other, a, b);
                        if u > own + tol {
                            t.violations += 1;
                            t.worst = t.worst.max(u - own);
                            break;
                        }
                    }
                    if exhaustive {
                        let (_, best) = best_option_exhaustive(v, a, b, params);
                        if best > own + tol {
                            t.mismatches += 1;
                            t.worst = t.worst.max(best - own);
                        }
                    }
                }
                t
            })
            .collect()
    };
    let mut total = Tally::default();
    for t in per_type {
        total.violations += t.violations;
        total.mismatches += t.mismatches;
        total.participation += t.participation;
        total.worst = total.worst.max(t.worst);
    }
    MenuBicReport {
        types: types.len(),
        distinct_options: distinct.len(),
        violations: total.violations,
        exhaustive_mismatches: total.mismatches,
        participation_violations: total.participation,
        max_violation: total.worst,
        tolerance: tol,
        exhaustive,
        pass: total.violations == 0 && total.mismatches == 0 && total.participation == 0,
    }
}

/// Interim utility of true type `v` reporting `w` to the Naive auction,
/// given win rate `a0` for a `T` report and `b0` for a cheap report.
fn naive_interim_utility(v: &[f64], w: &[f64], a0: f64, b0: f64, params: &AuctionParams) -> f64 {
    let t = params.t();
    let lp = params.low_price();
    let has_top = w.iter().any(|&x| x == t);
    v.iter()
        .zip(w)
        .map(|(&vj, &wj)| {
            if wj == t {
                a0 * (vj - t)
            } else if has_top && wj >= lp {
                b0 * (vj - lp)
            } else {
                0.0
            }
        })
        .sum()
}

/// The all-`T` type lowering one report to `mn/T` in the Naive auction.
pub fn find_naive_deviation(params: &AuctionParams) -> Result<DeviationWitness> {
    if params.m < 2 {
        return Err(Error::NoDeviation("a single item leaves nothing to shade".into()));
    }
    let a0 = crate::closed_form::a0(params.n, params.t())?;
    let b0 = crate::closed_form::b0(params)?;
    let t = params.t();
    let v = vec![t; params.m];
    let mut w = v.clone();
    w[0] = params.low_price();
    let truth = naive_interim_utility(&v, &v, a0, b0, params);
    let dev = naive_interim_utility(&v, &w, a0, b0, params);
    Ok(DeviationWitness::new(v, w, truth, dev))
}

/// A type with one value just below `T` and one inside the band reporting
/// the first as exactly `T` to the Less-Naive auction. Scans the gap
/// `eps = T - v_0` geometrically from `T/2` down to `1e-15 T`.
pub fn find_lna_deviation(params: &AuctionParams, a0: f64, b0: f64) -> Result<DeviationWitness> {
    if params.m < 2 {
        return Err(Error::NoDeviation("needs at least two items".into()));
    }
    let t = params.t();
    let lp = params.low_price();
    if lp >= t {
        return Err(Error::EmptyBand { low_price: lp, truncation: t });
    }
    let mut eps = t / 2.0;
    while eps >= 1e-15 * t {
        let w = lna_witness(params, a0, b0, eps);
        if w.gain > 0.0 {
            return Ok(w);
        }
        eps /= 2.0;
    }
    Err(Error::NoDeviation(format!("no profitable gap down to {:e}", 1e-15 * t)))
}

/// The witness for a given gap, profitable or not.
pub fn lna_witness(params: &AuctionParams, a0: f64, b0: f64, eps: f64) -> DeviationWitness {
    let t = params.t();
    let lp = params.low_price();
    let mut v = vec![1.0; params.m];
    v[0] = t - eps;
    v[1] = (lp.max(1.0) + t) / 2.0;
    let mut w = v.clone();
    w[0] = t;
    // Without a T report the Less-Naive auction sells this type nothing.
    let truth = 0.0;
    let bought = MenuOption {
        high: ItemSet::single(0),
        low: (1..params.m).filter(|&j| w[j] >= lp).collect(),
        price: 0.0,
    };
    let bought = MenuOption { price: menu_price(bought.high, bought.low, a0, b0, params), ..bought };
    let dev = option_utility(&v, &bought, a0, b0);
    DeviationWitness::new(v, w, truth, dev)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfBicReport {
    pub types: usize,
    /// Interim probability of winning through the high branch.
    pub pi_high: f64,
    /// Interim probability of winning through the low branch.
    pub pi_low: f64,
    pub pi_low_stderr: f64,
    /// Best gain from a misreport that keeps the favorite.
    pub same_favorite_max_gain: f64,
    pub same_favorite_gain_stderr: f64,
    /// Types for which some favorite-switching report pays off.
    pub switching_count: usize,
    /// A few of those, for inspection.
    pub switching_examples: Vec<DeviationWitness>,
    pub pass: bool,
}

/// Interim utility of type `v` reporting `w` in the Knows-Favorite auction.
pub fn kfa_interim_utility(v: &[f64], w: &[f64], pi_high: f64, pi_low: f64, n: usize) -> f64 {
    let m = v.len();
    let ln_h = (n * m) as f64;
    let l = ln_h.sqrt();
    let Some(fav) = kfa_favorite(w) else { return 0.0 };
    let mut u = 0.0;
    for j in 0..m {
        if j == fav {
            if w[j].ln() >= ln_h {
                u += pi_high * (v[j] - ln_h.exp());
            }
        } else if w[j] >= l {
            u += pi_low * (v[j] - l);
        }
    }
    u
}

/// Interim branch win probabilities, estimated over `n - 1` opponents.
fn kfa_interim_rates(n: usize, m: usize, samples: usize, seed: Seed) -> (f64, f64, f64) {
    let ln_h = (n * m) as f64;
    let l = ln_h.sqrt();
    let er = DistSpec::EqualRevenue;
    // Item 0 by symmetry; the bidder's own favorite is some other item for
    // the low branch and item 0 for the high branch.
    let parts = run_chunks(seed, samples, CHUNK_SIZE, |rng, count| {
        let mut high = Moments::default();
        let mut low = Moments::default();
        let mut row = vec![0.0; m];
        for _ in 0..count {
            let (mut k_high, mut k_low) = (0usize, 0usize);
            for _ in 1..n {
                for x in row.iter_mut() {
                    *x = er.draw(rng);
                }
                match kfa_favorite(&row) {
                    Some(0) if row[0].ln() >= ln_h => k_high += 1,
                    Some(f) if f != 0 && row[0] >= l => k_low += 1,
                    _ => {}
                }
            }
            high.push(1.0 / (1 + k_high) as f64);
            low.push(if k_high == 0 { 1.0 / (1 + k_low) as f64 } else { 0.0 });
        }
        (high, low)
    });
    let (high, low) = parts
        .into_iter()
        .fold((Moments::default(), Moments::default()), |(h, l), (h2, l2)| (h.merge(h2), l.merge(l2)));
    (high.mean(), low.mean(), low.stderr())
}

/// Same-favorite misreports never pay; favorite-switching ones are
/// searched and reported.
pub fn kf_bic_check(n: usize, m: usize, type_samples: usize, opponent_samples: usize, seed: Seed) -> Result<KfBicReport> {
    if n == 0 || m == 0 || m > 16 {
        return Err(Error::InvalidParams(format!("need n >= 1 and 1 <= m <= 16 (n = {n}, m = {m})")));
    }
    let (pi_high, pi_low, pi_low_se) = kfa_interim_rates(n, m, opponent_samples, seed.derive(1));
    let l = ((n * m) as f64).sqrt();
    let ln_h = (n * m) as f64;
    let er = DistSpec::EqualRevenue;
    let mut rng = seed.derive(2).rng();
    let mut best_same = f64::NEG_INFINITY;
    let mut best_same_scale = 0.0f64;
    let mut switching_count = 0;
    let mut examples = Vec::new();
    for _ in 0..type_samples {
        let v: Vec<f64> = (0..m).map(|_| er.draw(&mut rng)).collect();
        let Some(fav) = kfa_favorite(&v) else { continue };
        let truth = kfa_interim_utility(&v, &v, pi_high, pi_low, n);
        let top_other = v.iter().enumerate().filter(|(j, _)| *j != fav).map(|(_, &x)| x).fold(1.0, f64::max);
        // Same favorite: choose which other items clear L and whether the
        // favorite clears H; realise each choice with a concrete report.
        for mask in 0u32..(1 << m) {
            if mask >> fav & 1 == 1 {
                continue;
            }
            for high in [false, true] {
                let mut w = v.clone();
                let mut ceiling: f64 = 1.0;
                for j in (0..m).filter(|&j| j != fav) {
                    let want = mask >> j & 1 == 1;
                    if want && w[j] < l {
                        w[j] = l * (1.0 + 1e-9 * (j + 1) as f64);
                    } else if !want && w[j] >= l {
                        w[j] = 1.0 + 1e-9 * (j + 1) as f64;
                    }
                    ceiling = ceiling.max(w[j]);
                }
                w[fav] = if high {
                    (ln_h + 1e-9).exp().max(ceiling * 2.0)
                } else {
                    let cap = (ln_h - 1e-9).exp();
                    let x = v[fav].min(cap);
                    if x > ceiling { x } else { (ceiling * 1.5).min(cap) }
                };
                if kfa_favorite(&w) != Some(fav) {
                    continue;
                }
                let gain = kfa_interim_utility(&v, &w, pi_high, pi_low, n) - truth;
                if gain > best_same {
                    best_same = gain;
                    best_same_scale = v.iter().map(|x| (x - l).abs()).sum::<f64>();
                }
            }
        }
        // Favorite switching: move the top report to another item.
        for g in (0..m).filter(|&g| g != fav) {
            let mut w = v.clone();
            w[g] = top_other.max(v[fav]) * 1.5;
            if w[g].ln() >= ln_h {
                w[g] = (ln_h - 1e-9).exp();
            }
            if kfa_favorite(&w) != Some(g) {
                continue;
            }
            let dev = kfa_interim_utility(&v, &w, pi_high, pi_low, n);
            if dev > truth {
                switching_count += 1;
                if examples.len() < 8 {
                    examples.push(DeviationWitness::new(v.clone(), w, truth, dev));
                }
                break;
            }
        }
    }
    let se = pi_low_se * best_same_scale;
    Ok(KfBicReport {
        types: type_samples,
        pi_high,
        pi_low,
        pi_low_stderr: pi_low_se,
        same_favorite_max_gain: best_same.max(0.0),
        same_favorite_gain_stderr: se,
        switching_count,
        switching_examples: examples,
        pass: best_same <= 3.0 * se + 1e-12,
    })
}

/// One realised rate against its target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub target: f64,
    pub realized: f64,
    pub stderr: f64,
    pub z: f64,
    pub pass: bool,
}

impl RateCheck {
    /// Nothing observed to compare against.
    fn vacuous(target: f64) -> Self {
        Self { target, realized: target, stderr: 0.0, z: 0.0, pass: true }
    }

    fn from_ratio(target: f64, sums: &RatioSums) -> Self {
        if sums.ratio().is_nan() {
            Self::vacuous(target)
        } else {
            Self::new(target, sums.ratio(), sums.stderr())
        }
    }

    fn new(target: f64, realized: f64, stderr: f64) -> Self {
        let z = if stderr > 0.0 {
            (realized - target) / stderr
        } else if realized == target {
            0.0
        } else {
            f64::INFINITY.copysign(realized - target)
        };
        Self { target, realized, stderr, z, pass: z.abs() <= 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub profiles: usize,
    /// Win rate of pairs with the item in `H`, against `a`.
    pub high_rate: RateCheck,
    /// Win rate of pairs with the item in `L`, against `b`.
    pub low_rate: RateCheck,
    /// Share of (bidder, item) pairs that are high without a `T` value,
    /// against `sum_l C(m-1, l) q_l`.
    pub high_without_top: RateCheck,
    /// Share of pairs that are low without any `T` value, against
    /// `(m-1) sum_l C(m-2, l-1) q_l`.
    pub low_without_top: RateCheck,
    pub supply_respected: bool,
    pub pass: bool,
}

#[derive(Clone, Copy, Default)]
struct FeasTally {
    high: RatioSums,
    low: RatioSums,
    high_free: Moments,
    low_free: Moments,
    oversold: bool,
}

impl FeasTally {
    fn merge(self, o: FeasTally) -> FeasTally {
        FeasTally {
            high: self.high.merge(o.high),
            low: self.low.merge(o.low),
            high_free: self.high_free.merge(o.high_free),
            low_free: self.low_free.merge(o.low_free),
            oversold: self.oversold || o.oversold,
        }
    }
}

/// Simulates `profiles` truthful profiles against the menu with `rates`,
/// allocates each item uniformly to its high bidders and otherwise to its
/// low bidders, and compares the realised interim rates and the realised
/// classification frequencies with what the rates assume. `q_stderr` (may
/// be empty) widens the classification tests by the error in `q`.
pub fn feasibility_check(
    rates: &InterimRates,
    q_stderr: &[f64],
    params: &AuctionParams,
    profiles: usize,
    seed: Seed,
) -> Result<FeasibilityReport> {
    if rates.q.len() + 1 != params.m {
        return Err(Error::InvalidParams("rates do not match m".into()));
    }
    let (n, m) = (params.n, params.m);
    let t = params.t();
    let dist = params.dist();
    let pairs = (n * m) as f64;
    let tally = run_chunks(seed, profiles, CHUNK_SIZE, |rng, count| {
        let mut acc = FeasTally::default();
        let mut prof = ValuationProfile::sample(&dist, n, m, rng);
        for k in 0..count {
            if k > 0 {
                prof.resample(&dist, rng);
            }
            let options = nsn_classify(&prof, rates, params);
            let out = nsn_expost(&prof, rates, params, rng);
            for (j, w) in out.allocation.iter().enumerate() {
                if let Some(i) = *w {
                    let o = &options[i];
                    acc.oversold |= !(o.high.contains(j) || o.low.contains(j));
                }
            }
            let mut high_free = 0usize;
            let mut low_free = 0usize;
            for (i, o) in options.iter().enumerate() {
                let row = prof.row(i);
                let no_top = row.iter().all(|&v| v < t);
                if no_top && !o.is_null() {
                    high_free += o.high.len();
                    low_free += o.low.len();
                }
            }
            acc.high_free.push(high_free as f64 / pairs);
            acc.low_free.push(low_free as f64 / pairs);
            let (mut hw, mut hc, mut lw, mut lc) = (0.0, 0.0, 0.0, 0.0);
            for j in 0..m {
                let highs = options.iter().filter(|o| o.high.contains(j)).count();
                let lows = options.iter().filter(|o| o.low.contains(j)).count();
                hc += highs as f64;
                lc += lows as f64;
                if highs > 0 {
                    // Each high bidder wins with probability 1/highs.
                    hw += 1.0;
                } else if lows > 0 {
                    lw += 1.0;
                }
            }
            acc.high.push(hw, hc);
            acc.low.push(lw, lc);
        }
        acc
    })
    .into_iter()
    .fold(FeasTally::default(), FeasTally::merge);

    let m1 = rates.q.len() as u64;
    let mut high_model_var = 0.0;
    let mut low_model_var = 0.0;
    for (i, &s) in q_stderr.iter().enumerate() {
        high_model_var += (crate::numeric::binomial(m1, i as u64 + 1) * s).powi(2);
        low_model_var += (m1 as f64 * crate::numeric::binomial(m1 - 1, i as u64) * s).powi(2);
    }
    let high_rate = RateCheck::from_ratio(rates.a, &tally.high);
    let low_rate = RateCheck::from_ratio(rates.b, &tally.low);
    let high_without_top = RateCheck::new(
        rates.high_without_top(),
        tally.high_free.mean(),
        (tally.high_free.stderr().powi(2) + high_model_var).sqrt(),
    );
    let low_without_top = RateCheck::new(
        rates.low_without_top(),
        tally.low_free.mean(),
        (tally.low_free.stderr().powi(2) + low_model_var).sqrt(),
    );
    let supply_respected = !tally.oversold;
    let pass = high_rate.pass && low_rate.pass && high_without_top.pass && low_without_top.pass && supply_respected;
    Ok(FeasibilityReport { profiles, high_rate, low_rate, high_without_top, low_without_top, supply_respected, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{a0, b0, rates_map};
    use crate::fixed_point::{solve, SolverConfig};

    fn p(n: usize, m: usize) -> AuctionParams {
        AuctionParams::from_lambda(n, m, 1.5).unwrap()
    }

    #[test]
    fn naive_deviation() {
        let params = p(64, 3);
        let w = find_naive_deviation(&params).unwrap();
        assert_eq!(w.truthful_utility, 0.0);
        let b = b0(&params).unwrap();
        assert!((w.gain - b * (params.t() - params.low_price())).abs() < 1e-12);
        assert!(w.gain > 0.0);
        assert!(find_naive_deviation(&p(16, 1)).is_err());
    }

    #[test]
    fn lna_deviation() {
        let params = p(64, 2);
        let (a, b) = (a0(64, params.t()).unwrap(), b0(&params).unwrap());
        let w = find_lna_deviation(&params, a, b).unwrap();
        assert!(w.gain > 0.0);
        let cap = b * (w.true_type[1] - params.low_price());
        assert!(w.gain <= cap);
        let far = lna_witness(&params, a, b, params.t() / 2.0);
        assert!(far.gain < 0.0);
        assert!(find_lna_deviation(&p(64, 1), a, b).is_err());
    }

    #[test]
    fn menu_bic_at_zero_q_and_with_bad_rates() {
        let params = p(64, 3);
        let r = rates_map(&[0.0, 0.0], &params).unwrap();
        let rep = menu_bic_check(&r, &params, 4000, Seed::new(5));
        assert!(rep.pass, "{rep:?}");
        let mut bad = r.clone();
        bad.b = bad.a * 3.0;
        let rep = menu_bic_check(&bad, &params, 4000, Seed::new(5));
        assert!(!rep.pass);
        assert!(rep.exhaustive_mismatches > 0);
    }

    #[test]
    fn kfa_same_favorite_never_pays() {
        let rep = kf_bic_check(2, 2, 2000, 20_000, Seed::new(3)).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.same_favorite_max_gain <= 1e-12);
        assert!(rep.pi_low > 0.0);
        assert!(rep.switching_count > 0);
        for w in &rep.switching_examples {
            assert!(w.gain > 0.0);
        }
    }

    #[test]
    fn kfa_type_below_l_gains_nothing() {
        let v = [1.9, 1.8];
        let w = [1.95, 1.7];
        assert_eq!(kfa_interim_utility(&v, &w, 0.5, 0.5, 2), 0.0);
        assert_eq!(kfa_interim_utility(&v, &v, 0.5, 0.5, 2), 0.0);
    }

    #[test]
    fn single_bidder_always_wins() {
        let params = AuctionParams::from_lambda(1, 1, 1.5).unwrap();
        let r = rates_map(&[], &params).unwrap();
        assert_eq!(r.a, 1.0);
        let rep = feasibility_check(&r, &[], &params, 20_000, Seed::new(1)).unwrap();
        assert_eq!(rep.high_rate.realized, 1.0);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn feasibility_separates_solved_from_zero_q() {
        let params = p(64, 2);
        let sol = solve(&params, &SolverConfig { samples: 1 << 16, ..SolverConfig::default() }).unwrap();
        let good = feasibility_check(&sol.rates, &sol.q_stderr, &params, 100_000, Seed::new(2)).unwrap();
        assert!(good.pass, "{good:?}");
        let zero = rates_map(&[0.0], &params).unwrap();
        let bad = feasibility_check(&zero, &[], &params, 100_000, Seed::new(2)).unwrap();
        assert!(!bad.pass, "{bad:?}");
        assert!(bad.high_without_top.z > 3.0);
    }

}
