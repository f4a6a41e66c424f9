use rand::Rng;

use super::{first_argmax, pick, MechanismOutcome, ValuationProfile};
use crate::error::{Error, Result};

/// Second-price auction for the bundle of all items.
pub fn grand_bundle_spa<R: Rng + ?Sized>(profile: &ValuationProfile, rng: &mut R) -> Result<MechanismOutcome> {
    let n = profile.n();
    if n < 2 {
        return Err(Error::InvalidParams(format!("grand bundle auction needs n >= 2, got {n}")));
    }
    let sums: Vec<f64> = (0..n).map(|i| profile.row(i).iter().sum()).collect();
    let best = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let top: Vec<usize> = (0..n).filter(|&i| sums[i] == best).collect();
    let second = if top.len() > 1 {
        best
    } else {
        sums.iter().copied().filter(|&s| s < best).fold(f64::NEG_INFINITY, f64::max)
    };
    let winner = pick(&top, rng).expect("n >= 2");
    let mut out = MechanismOutcome::empty(n, profile.m());
    out.allocation.iter_mut().for_each(|a| *a = Some(winner));
    out.payments[winner] = second;
    Ok(out.settle())
}

/// All `m` values pairwise distinct.
pub fn kfa_is_distinct(row: &[f64]) -> bool {
    row.iter().enumerate().all(|(j, x)| row[..j].iter().all(|y| y != x))
}

/// Favorite item of a bidder with distinct values.
pub fn kfa_favorite(row: &[f64]) -> Option<usize> {
    kfa_is_distinct(row).then(|| first_argmax(row))
}

/// Knows-Favorite auction. Item `j` goes at price `H = e^(nm)` to a bidder
/// whose favorite is `j` and who values it at least `H`; failing that, at
/// price `L = sqrt(nm)` to a bidder with another favorite who values `j`
/// at least `L`. Bidders with repeated values take no part.
pub fn kfa<R: Rng + ?Sized>(profile: &ValuationProfile, rng: &mut R) -> MechanismOutcome {
    let (n, m) = (profile.n(), profile.m());
    let ln_h = (n * m) as f64;
    let l = ln_h.sqrt();
    let fav: Vec<Option<usize>> = (0..n).map(|i| kfa_favorite(profile.row(i))).collect();
    let mut out = MechanismOutcome::empty(n, m);
    let mut cand = Vec::with_capacity(n);
    for j in 0..m {
        cand.clear();
        cand.extend((0..n).filter(|&i| fav[i] == Some(j) && profile.get(i, j).ln() >= ln_h));
        if let Some(w) = pick(&cand, rng) {
            out.allocation[j] = Some(w);
            out.payments[w] += ln_h.exp();
            continue;
        }
        cand.extend((0..n).filter(|&i| matches!(fav[i], Some(f) if f != j) && profile.get(i, j) >= l));
        if let Some(w) = pick(&cand, rng) {
            out.allocation[j] = Some(w);
            out.payments[w] += l;
        }
    }
    out.settle()
}
