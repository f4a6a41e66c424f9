use rand::Rng;

use super::{pick, MechanismOutcome, ValuationProfile};

/// Per-item second-price auction with a reserve.
pub fn sell_separately<R: Rng + ?Sized>(profile: &ValuationProfile, reserve: f64, rng: &mut R) -> MechanismOutcome {
    let (n, m) = (profile.n(), profile.m());
    let mut out = MechanismOutcome::empty(n, m);
    let mut top = Vec::with_capacity(n);
    for j in 0..m {
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        top.clear();
        for i in 0..n {
            let v = profile.get(i, j);
            if v > best {
                second = best;
                best = v;
                top.clear();
                top.push(i);
            } else if v == best {
                second = best;
                top.push(i);
            } else if v > second {
                second = v;
            }
        }
        if best < reserve {
            continue;
        }
        let winner = pick(&top, rng).expect("non-empty");
        out.allocation[j] = Some(winner);
        out.payments[winner] += reserve.max(second);
    }
    out.settle()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    #[test]
    fn below_reserve_sells_nothing() {
        let p = ValuationProfile::from_rows(&[vec![1.5, 2.0], vec![1.0, 2.5]]).unwrap();
        let out = sell_separately(&p, 3.0, &mut Seed::new(1).rng());
        assert_eq!(out.revenue, 0.0);
        assert!(out.allocation.iter().all(Option::is_none));
    }

    #[test]
    fn reserve_binds_for_single_bidder() {
        let p = ValuationProfile::from_rows(&[vec![4.0, 4.0, 4.0]]).unwrap();
        let out = sell_separately(&p, 4.0, &mut Seed::new(1).rng());
        assert_eq!(out.revenue, 12.0);
        assert_eq!(out.items_won(0), 3);
    }

    #[test]
    fn second_price_and_ties() {
        let p = ValuationProfile::from_rows(&[vec![5.0], vec![3.0], vec![5.0]]).unwrap();
        let mut winners = [0usize; 3];
        let mut rng = Seed::new(8).rng();
        for _ in 0..400 {
            let out = sell_separately(&p, 2.0, &mut rng);
            assert_eq!(out.revenue, 5.0);
            winners[out.allocation[0].unwrap()] += 1;
        }
        assert_eq!(winners[1], 0);
        assert!(winners[0] > 150 && winners[2] > 150);
        let p = ValuationProfile::from_rows(&[vec![5.0], vec![3.0]]).unwrap();
        let out = sell_separately(&p, 2.0, &mut rng);
        assert_eq!((out.allocation[0], out.revenue), (Some(0), 3.0));
        let out = sell_separately(&p, 4.0, &mut rng);
        assert_eq!(out.revenue, 4.0);
    }
}
