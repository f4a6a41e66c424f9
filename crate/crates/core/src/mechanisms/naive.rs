use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{pick, MechanismOutcome, ValuationProfile};
use crate::error::{Error, Result};
use crate::params::AuctionParams;

/// Why an item went to its winner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NaiveCase {
    /// The winner values the item at `T`.
    Top,
    /// Nobody values it at `T`; the winner values it at least `mn/T` and
    /// holds a `T` value for some other item.
    Cheap,
}

/// The allocation rule shared by the Naive and Less-Naive auctions.
pub fn naive_allocation<R: Rng + ?Sized>(
    profile: &ValuationProfile,
    params: &AuctionParams,
    rng: &mut R,
) -> Vec<Option<(usize, NaiveCase)>> {
    let (n, m) = (profile.n(), profile.m());
    let t = params.t();
    let low = params.low_price();
    let has_top: Vec<bool> = (0..n).map(|i| profile.row(i).iter().any(|&v| v == t)).collect();
    let mut cand = Vec::with_capacity(n);
    (0..m)
        .map(|j| {
            cand.clear();
            cand.extend((0..n).filter(|&i| profile.get(i, j) == t));
            if let Some(w) = pick(&cand, rng) {
                return Some((w, NaiveCase::Top));
            }
            cand.extend((0..n).filter(|&i| has_top[i] && profile.get(i, j) >= low));
            pick(&cand, rng).map(|w| (w, NaiveCase::Cheap))
        })
        .collect()
}

pub fn naive_auction<R: Rng + ?Sized>(profile: &ValuationProfile, params: &AuctionParams, rng: &mut R) -> MechanismOutcome {
    let mut out = MechanismOutcome::empty(profile.n(), profile.m());
    for (j, slot) in naive_allocation(profile, params, rng).into_iter().enumerate() {
        if let Some((w, case)) = slot {
            out.allocation[j] = Some(w);
            out.payments[w] += match case {
                NaiveCase::Top => params.t(),
                NaiveCase::Cheap => params.low_price(),
            };
        }
    }
    out.settle()
}

/// Same allocation as [`naive_auction`]; a `T`-winner who also holds `T` on
/// a lower-indexed item is refunded `(b0/a0)(T - mn/T)`.
pub fn less_naive_auction<R: Rng + ?Sized>(
    profile: &ValuationProfile,
    params: &AuctionParams,
    a0: f64,
    b0: f64,
    rng: &mut R,
) -> Result<MechanismOutcome> {
    if !(a0 > 0.0) {
        return Err(Error::InvalidParams(format!("a0 must be positive, got {a0}")));
    }
    let t = params.t();
    let rebate = b0 / a0 * (t - params.low_price());
    let mut out = MechanismOutcome::empty(profile.n(), profile.m());
    for (j, slot) in naive_allocation(profile, params, rng).into_iter().enumerate() {
        let Some((w, case)) = slot else { continue };
        out.allocation[j] = Some(w);
        match case {
            NaiveCase::Top => {
                out.payments[w] += t;
                if profile.row(w)[..j].iter().any(|&v| v == t) {
                    out.subsidies[w] += rebate;
                }
            }
            NaiveCase::Cheap => out.payments[w] += params.low_price(),
        }
    }
    Ok(out.settle())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{a0, b0};
    use crate::rng::Seed;

    fn params() -> AuctionParams {
        AuctionParams::new(3, 3, 4.0).unwrap()
    }

    #[test]
    fn top_everywhere_sells_at_t() {
        let p = params();
        let prof = ValuationProfile::from_rows(&[vec![4.0, 1.0, 4.0], vec![1.0, 4.0, 1.0], vec![1.0; 3]]).unwrap();
        let out = naive_auction(&prof, &p, &mut Seed::new(1).rng());
        assert_eq!(out.revenue, 12.0);
    }

    #[test]
    fn no_top_sells_nothing() {
        let p = params();
        let prof = ValuationProfile::from_rows(&[vec![3.9, 3.0, 2.5], vec![3.5; 3], vec![1.0; 3]]).unwrap();
        assert_eq!(naive_auction(&prof, &p, &mut Seed::new(1).rng()).revenue, 0.0);
    }

    #[test]
    fn cheap_case() {
        // mn/T = 2.25.
        let p = params();
        let prof = ValuationProfile::from_rows(&[vec![4.0, 3.0, 2.0], vec![1.0, 3.9, 1.0], vec![1.0; 3]]).unwrap();
        let out = naive_auction(&prof, &p, &mut Seed::new(1).rng());
        assert_eq!(out.allocation, vec![Some(0), Some(0), None]);
        assert!((out.revenue - (4.0 + 2.25)).abs() < 1e-12);
    }

    #[test]
    fn less_naive_subsidies() {
        let p = AuctionParams::from_lambda(16, 3, 1.5).unwrap();
        let t = p.t();
        let (a, b) = (a0(16, t).unwrap(), b0(&p).unwrap());
        let mut rows = vec![vec![t; 3]];
        rows.extend(std::iter::repeat_n(vec![1.0; 3], 15));
        let prof = ValuationProfile::from_rows(&rows).unwrap();
        let out = less_naive_auction(&prof, &p, a, b, &mut Seed::new(1).rng()).unwrap();
        let expect = 3.0 * t - 2.0 * (b / a) * (t - p.low_price());
        assert!((out.revenue - expect).abs() < 1e-12);
        assert_eq!(out.payments[0], 3.0 * t);
        assert!(out.subsidies[0] > 0.0);
        assert!(less_naive_auction(&prof, &p, 0.0, b, &mut Seed::new(1).rng()).is_err());
    }

    #[test]
    fn less_naive_matches_naive_with_single_tops() {
        let p = AuctionParams::from_lambda(16, 2, 1.5).unwrap();
        let d = p.dist();
        let mut rng = Seed::new(3).rng();
        for k in 0..500 {
            let prof = ValuationProfile::sample(&d, 16, 2, &mut rng);
            let single = (0..16).all(|i| prof.row(i).iter().filter(|&&v| v == p.t()).count() <= 1);
            let s = Seed::new(100 + k);
            let na = naive_auction(&prof, &p, &mut s.rng());
            let ln = less_naive_auction(&prof, &p, 0.3, 0.01, &mut s.rng()).unwrap();
            assert_eq!(na.allocation, ln.allocation);
            if single {
                assert_eq!(na, ln);
            }
        }
    }
}
