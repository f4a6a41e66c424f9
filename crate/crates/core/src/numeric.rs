//! Floating-point helpers shared by the closed forms.
//!
//! Powers such as `(1 - 1/T)^n` are taken through `ln_1p`, and brackets like
//! `1 - (1-p)^m - m p (1-p)^(m-1)` are rewritten as binomial tail sums of
//! positive terms so nothing cancels.

use statrs::function::gamma::ln_gamma;

/// `(1 - x)^k` as `exp(k ln(1 - x))`.
pub fn pow1m(x: f64, k: f64) -> f64 {
    if k == 0.0 {
        return 1.0;
    }
    (k * (-x).ln_1p()).exp()
}

/// `1 - (1 - x)^k` without cancellation.
pub fn one_minus_pow1m(x: f64, k: f64) -> f64 {
    if k == 0.0 {
        return 0.0;
    }
    -(k * (-x).ln_1p()).exp_m1()
}

/// `(1 - (1 - p)^n) / (n p)`, i.e. `E[1 / (1 + Bin(n - 1, p))]`; equals 1 at `p = 0`.
pub fn share_among(p: f64, n: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else {
        one_minus_pow1m(p, n) / (n * p)
    }
}

/// Binomial coefficient: exact integer arithmetic for `n <= 60`, log-gamma above.
pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    if n <= 60 {
        let mut acc: u128 = 1;
        for i in 0..k {
            acc = acc * u128::from(n - i) / u128::from(i + 1);
        }
        acc as f64
    } else {
        ln_binomial(n, k).exp().round()
    }
}

pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if n <= 60 {
        return binomial(n, k).ln();
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

fn binomial_term(m: u64, k: u64, p: f64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == m { 1.0 } else { 0.0 };
    }
    (ln_binomial(m, k) + k as f64 * p.ln() + (m - k) as f64 * (-p).ln_1p()).exp()
}

/// `P[Bin(m, p) >= r]` as a sum of positive terms.
pub fn binomial_tail(m: u64, p: f64, r: u64) -> f64 {
    if r == 0 {
        return 1.0;
    }
    (r..=m).map(|k| binomial_term(m, k, p)).sum()
}

/// `E[(Bin(m, p) - 1)^+] = m p - 1 + (1 - p)^m`, summed termwise.
pub fn binomial_excess_over_one(m: u64, p: f64) -> f64 {
    (2..=m).map(|k| (k - 1) as f64 * binomial_term(m, k, p)).sum()
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Tanh-sinh quadrature on a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    quadrature::integrate(f, a, b, tol).integral
}

/// `∫_a^∞ f(x) dx` through the substitution `x = 1/u`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> f64 {
    assert!(a > 0.0);
    quadrature::integrate(
        |u: f64| {
            if u <= 0.0 {
                0.0
            } else {
                f(1.0 / u) / (u * u)
            }
        },
        0.0,
        1.0 / a,
        tol,
    )
    .integral
}

/// Largest relative difference `|x - y| / max(|y|, tiny)`.
pub fn rel_diff(x: f64, y: f64) -> f64 {
    let scale = y.abs().max(f64::MIN_POSITIVE);
    (x - y).abs() / scale
}
