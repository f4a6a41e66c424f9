//! Ex-post simulators for the auctions, plus the menu's preferred-option
//! selector.
//!
//! Ties are broken uniformly with the caller's RNG; the RNG is consumed
//! only when two or more candidates tie, so identical profiles with
//! identical streams give identical allocations across mechanisms that
//! share an allocation rule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::DistSpec;
use crate::error::{Error, Result};
use crate::params::MAX_ITEMS;
use crate::rng::{Seed, SimRng};

mod bundle;
mod menu;
mod naive;
mod separate;

pub use bundle::{grand_bundle_spa, kfa, kfa_favorite, kfa_is_distinct};
pub use menu::{
    best_option_exhaustive, menu_price, nsn_classify, nsn_expost, nsn_preferred_option, option_utility,
};
pub use naive::{less_naive_auction, naive_allocation, naive_auction, NaiveCase};
pub use separate::sell_separately;

/// A set of items, as a bitmask over at most 64 items.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemSet(pub u64);

impl ItemSet {
    pub const EMPTY: ItemSet = ItemSet(0);

    pub fn single(j: usize) -> Self {
        debug_assert!(j < MAX_ITEMS);
        ItemSet(1 << j)
    }

    pub fn insert(&mut self, j: usize) {
        self.0 |= 1 << j;
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0 >> j & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let bits = self.0;
        (0..64).filter(move |j| bits >> j & 1 == 1)
    }

    pub fn is_disjoint(&self, other: ItemSet) -> bool {
        self.0 & other.0 == 0
    }
}

impl FromIterator<usize> for ItemSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = ItemSet::EMPTY;
        for j in iter {
            s.insert(j);
        }
        s
    }
}

/// One entry of the menu: items in `high` at rate `a`, items in `low` at
/// rate `b`, for an interim `price`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MenuOption {
    pub high: ItemSet,
    pub low: ItemSet,
    pub price: f64,
}

impl MenuOption {
    pub const NULL: MenuOption = MenuOption { high: ItemSet::EMPTY, low: ItemSet::EMPTY, price: 0.0 };

    pub fn is_null(&self) -> bool {
        self.high.is_empty()
    }
}

/// An `n x m` matrix of values, row-major by bidder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValuationProfile {
    n: usize,
    m: usize,
    values: Vec<f64>,
    pub provenance: Option<(DistSpec, Seed)>,
}

impl ValuationProfile {
    pub fn new(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * m {
            return Err(Error::InvalidParams(format!(
                "profile needs {} values, got {}",
                n * m,
                values.len()
            )));
        }
        if let Some(&bad) = values.iter().find(|v| !(**v >= 1.0)) {
            return Err(Error::OutsideSupport { value: bad, support: "[1, inf)".into() });
        }
        Ok(Self { n, m, values, provenance: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidParams("ragged profile rows".into()));
        }
        Self::new(rows.len(), m, rows.concat())
    }

    /// Draws `n * m` values, bidder by bidder, from `rng`.
    pub fn sample(dist: &DistSpec, n: usize, m: usize, rng: &mut SimRng) -> Self {
        let values = (0..n * m).map(|_| dist.draw(rng)).collect();
        Self { n, m, values, provenance: None }
    }

    /// Sample from a fresh stream and remember where it came from.
    pub fn sample_seeded(dist: &DistSpec, n: usize, m: usize, seed: Seed) -> Result<Self> {
        dist.validate()?;
        let mut p = Self::sample(dist, n, m, &mut seed.rng());
        p.provenance = Some((*dist, seed));
        Ok(p)
    }

    /// Refills the matrix in place, in the same order as [`Self::sample`].
    pub fn resample(&mut self, dist: &DistSpec, rng: &mut SimRng) {
        for v in &mut self.values {
            *v = dist.draw(rng);
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    /// The first `n` bidders only.
    pub fn truncate_bidders(&self, n: usize) -> ValuationProfile {
        let n = n.min(self.n);
        ValuationProfile {
            n,
            m: self.m,
            values: self.values[..n * self.m].to_vec(),
            provenance: self.provenance,
        }
    }
}

/// Ex-post result of one mechanism run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    /// Winner of each item.
    pub allocation: Vec<Option<usize>>,
    /// Gross payment of each bidder.
    pub payments: Vec<f64>,
    /// Rebates paid back to each bidder.
    pub subsidies: Vec<f64>,
    /// `sum(payments) - sum(subsidies)`.
    pub revenue: f64,
}

impl MechanismOutcome {
    pub(crate) fn empty(n: usize, m: usize) -> Self {
        Self {
            allocation: vec![None; m],
            payments: vec![0.0; n],
            subsidies: vec![0.0; n],
            revenue: 0.0,
        }
    }

    pub(crate) fn settle(mut self) -> Self {
        self.revenue = self.payments.iter().sum::<f64>() - self.subsidies.iter().sum::<f64>();
        self
    }

    pub fn items_won(&self, bidder: usize) -> usize {
        self.allocation.iter().filter(|w| **w == Some(bidder)).count()
    }
}

/// Uniform choice among `candidates`; draws only when there is a real tie.
pub(crate) fn pick<R: Rng + ?Sized>(candidates: &[usize], rng: &mut R) -> Option<usize> {
    match candidates.len() {
        0 => None,
        1 => Some(candidates[0]),
        k => Some(candidates[rng.random_range(0..k)]),
    }
}

/// First index of the maximum entry.
pub fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn item_sets() {
        let s: ItemSet = [0, 3, 5].into_iter().collect();
        assert_eq!(s.len(), 3);
        assert!(s.contains(3) && !s.contains(1));
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 3, 5]);
        assert!(s.is_disjoint(ItemSet::single(1)));
        assert!(!s.is_disjoint(ItemSet::single(5)));
    }

    #[test]
    fn profile_validation() {
        assert!(ValuationProfile::new(2, 2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(ValuationProfile::new(1, 2, vec![1.0, 0.5]).is_err());
        assert!(ValuationProfile::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        let p = ValuationProfile::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(p.get(1, 0), 3.0);
        assert_eq!(p.row(0), &[1.0, 2.0]);
        assert_eq!(p.truncate_bidders(1).n(), 1);
    }

    #[test]
    fn seeded_profiles_repeat() {
        let d = DistSpec::truncated(5.0).unwrap();
        let a = ValuationProfile::sample_seeded(&d, 3, 2, Seed::new(4)).unwrap();
        let b = ValuationProfile::sample_seeded(&d, 3, 2, Seed::new(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.provenance.is_some());
    }

    #[test]
    fn argmax_is_lexicographic() {
        assert_eq!(first_argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(first_argmax(&[4.0]), 0);
    }
}
