use rand::Rng;

use super::{first_argmax, pick, ItemSet, MechanismOutcome, MenuOption, ValuationProfile};
use crate::closed_form::InterimRates;
use crate::params::AuctionParams;

/// `b |L| mn/T + a |H| T - b (T - mn/T)(|H| - 1)`; zero for the null option.
pub fn menu_price(high: ItemSet, low: ItemSet, a: f64, b: f64, params: &AuctionParams) -> f64 {
    if high.is_empty() {
        return 0.0;
    }
    let (t, lp) = (params.t(), params.low_price());
    b * low.len() as f64 * lp + a * high.len() as f64 * t - b * (t - lp) * (high.len() as f64 - 1.0)
}

/// Interim utility `a sum_H v + b sum_L v - price`.
pub fn option_utility(v: &[f64], option: &MenuOption, a: f64, b: f64) -> f64 {
    let h: f64 = option.high.iter().map(|j| v[j]).sum();
    let l: f64 = option.low.iter().map(|j| v[j]).sum();
    a * h + b * l - option.price
}

/// The option a bidder of type `v` buys from the menu with rates `(a, b)`.
pub fn nsn_preferred_option(v: &[f64], rates: &InterimRates, params: &AuctionParams) -> MenuOption {
    let (a, b) = (rates.a, rates.b);
    let t = params.t();
    let lp = params.low_price();
    let star = first_argmax(v);
    let mut high: ItemSet = v.iter().enumerate().filter(|(_, &x)| x == t).map(|(j, _)| j).collect();
    let has_top = !high.is_empty();
    high.insert(star);
    let low: ItemSet = (0..v.len()).filter(|&j| !high.contains(j) && v[j] >= lp).collect();
    if !has_top {
        let lhs = a * v[star] + b * low.iter().map(|j| v[j]).sum::<f64>();
        let rhs = a * t + low.len() as f64 * b * lp;
        if lhs < rhs {
            return MenuOption::NULL;
        }
    }
    MenuOption { high, low, price: menu_price(high, low, a, b, params) }
}

/// Best option by brute force over all `3^m` assignments and the null
/// option. Ties keep the first option found, starting with the null one.
pub fn best_option_exhaustive(v: &[f64], a: f64, b: f64, params: &AuctionParams) -> (MenuOption, f64) {
    let m = v.len();
    let mut best = (MenuOption::NULL, 0.0);
    let total = 3usize.pow(m as u32);
    for code in 0..total {
        let mut c = code;
        let (mut high, mut low) = (ItemSet::EMPTY, ItemSet::EMPTY);
        for j in 0..m {
            match c % 3 {
                1 => high.insert(j),
                2 => low.insert(j),
                _ => {}
            }
            c /= 3;
        }
        if high.is_empty() {
            continue;
        }
        let opt = MenuOption { high, low, price: menu_price(high, low, a, b, params) };
        let u = option_utility(v, &opt, a, b);
        if u > best.1 {
            best = (opt, u);
        }
    }
    best
}

/// Each bidder's chosen option.
pub fn nsn_classify(profile: &ValuationProfile, rates: &InterimRates, params: &AuctionParams) -> Vec<MenuOption> {
    (0..profile.n()).map(|i| nsn_preferred_option(profile.row(i), rates, params)).collect()
}

/// Each item goes uniformly to a bidder holding it in `H`, else uniformly
/// to one holding it in `L`. Every bidder pays the interim price of her
/// option whether or not she wins anything.
pub fn nsn_expost<R: Rng + ?Sized>(
    profile: &ValuationProfile,
    rates: &InterimRates,
    params: &AuctionParams,
    rng: &mut R,
) -> MechanismOutcome {
    let options = nsn_classify(profile, rates, params);
    let mut out = MechanismOutcome::empty(profile.n(), profile.m());
    let mut cand = Vec::new();
    for j in 0..profile.m() {
        cand.clear();
        cand.extend(options.iter().enumerate().filter(|(_, o)| o.high.contains(j)).map(|(i, _)| i));
        if cand.is_empty() {
            cand.extend(options.iter().enumerate().filter(|(_, o)| o.low.contains(j)).map(|(i, _)| i));
        }
        out.allocation[j] = pick(&cand, rng);
    }
    for (i, o) in options.iter().enumerate() {
        out.payments[i] = o.price;
    }
    out.settle()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::rates_map;
    use crate::rng::Seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn setup(n: usize, m: usize) -> (AuctionParams, InterimRates) {
        let p = AuctionParams::from_lambda(n, m, 1.5).unwrap();
        let r = rates_map(&vec![0.0; m - 1], &p).unwrap();
        (p, r)
    }

    #[test]
    fn all_top_type() {
        let (p, r) = setup(64, 3);
        let t = p.t();
        let o = nsn_preferred_option(&[t, t, t], &r, &p);
        assert_eq!(o.high, ItemSet(0b111));
        assert!(o.low.is_empty());
        let u = option_utility(&[t, t, t], &o, r.a, r.b);
        assert!(u >= -1e-9 * t);
    }

    #[test]
    fn low_type_takes_nothing() {
        let (p, r) = setup(64, 3);
        let v = [p.low_price() * 0.9, 1.2, 1.0];
        assert!(nsn_preferred_option(&v, &r, &p).is_null());
    }

    #[test]
    fn single_top_with_band_item() {
        let (p, r) = setup(64, 3);
        let t = p.t();
        let v = [2.0, t, (p.low_price() + t) / 2.0];
        let o = nsn_preferred_option(&v, &r, &p);
        assert_eq!(o.high, ItemSet::single(1));
        assert_eq!(o.low, ItemSet::single(2));
        let expect = r.b * p.low_price() + r.a * t;
        assert!((o.price - expect).abs() < 1e-12);
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = Seed::new(12).rng();
        for m in 2..=5 {
            let (p, r) = setup(64, m);
            let t = p.t();
            for _ in 0..2000 {
                let v: Vec<f64> = (0..m)
                    .map(|_| match rng.random_range(0..4) {
                        0 => t,
                        1 => t - rng.random::<f64>() * 1e-3,
                        2 => p.low_price() + rng.random::<f64>() * (t - p.low_price()),
                        _ => 1.0 + rng.random::<f64>() * (p.low_price() - 1.0),
                    })
                    .collect();
                let o = nsn_preferred_option(&v, &r, &p);
                let (_, best) = best_option_exhaustive(&v, r.a, r.b, &p);
                let u = option_utility(&v, &o, r.a, r.b);
                assert!((u - best).abs() <= 1e-9 * t, "m={m} v={v:?} u={u} best={best}");
            }
        }
    }

    #[test]
    fn sole_high_bidder_wins() {
        let (p, r) = setup(4, 2);
        let t = p.t();
        let prof = ValuationProfile::from_rows(&[vec![t, 1.0], vec![1.0; 2], vec![1.0; 2], vec![1.0; 2]]).unwrap();
        let mut rng = Seed::new(1).rng();
        for _ in 0..20 {
            assert_eq!(nsn_expost(&prof, &r, &p, &mut rng).allocation[0], Some(0));
        }
    }

    proptest! {
        #[test]
        fn permuting_items_permutes_option(
            raw in proptest::collection::vec(0.0f64..1.0, 4),
            top in proptest::collection::vec(proptest::bool::ANY, 4),
            rot in 1usize..4,
        ) {
            let (p, r) = setup(64, 4);
            let t = p.t();
            let v: Vec<f64> = raw.iter().zip(&top).map(|(&x, &is_t)| if is_t { t } else { 1.0 + x * (t - 1.0) * 0.999 }).collect();
            let w: Vec<f64> = (0..4).map(|j| v[(j + rot) % 4]).collect();
            let ov = nsn_preferred_option(&v, &r, &p);
            let ow = nsn_preferred_option(&w, &r, &p);
            prop_assert!((option_utility(&v, &ov, r.a, r.b) - option_utility(&w, &ow, r.a, r.b)).abs() <= 1e-9 * t);
            prop_assert_eq!(ov.low.len(), ow.low.len());
            if v.iter().any(|&x| x == t) {
                prop_assert!(option_utility(&v, &ov, r.a, r.b) >= -1e-9 * t);
            }
        }
    }
}
