//! Damped iteration for the implicit menu rates `(a, b, q_1 .. q_(m-1))`.
//!
//! `q_l` is the probability that a bidder with no value at `T` buys the
//! option `({j*}, L)` for a fixed `j*` and `|L| = l`. It depends on the rates
//! only through `b/a`. Every iteration estimates it from the same seed, so
//! the iteration map is a deterministic function of `(a, b)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::closed_form::{bound_suite, rates_map, rates_map_with, BoundReport, InterimRates, NoHighExponent};
use crate::error::{Error, Result};
use crate::params::AuctionParams;
use crate::rng::{run_chunks, Seed, CHUNK_SIZE};
use crate::stats::Moments;

/// How `q_l` is estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QEstimator {
    /// Sample the `l` cheaper values and integrate the favorite value out
    /// exactly. Smooth in `(a, b)`.
    #[default]
    Conditional,
    /// Sample all `l + 1` band values and average the purchase indicator.
    Indicator,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// Monte Carlo samples per `q_l`.
    pub samples: usize,
    pub seed: Seed,
    pub estimator: QEstimator,
    pub exponent: NoHighExponent,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 500,
            damping: 0.5,
            samples: 1 << 17,
            seed: Seed::default(),
            estimator: QEstimator::Conditional,
            exponent: NoHighExponent::Others,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSolution {
    pub rates: InterimRates,
    pub iterations: usize,
    /// Max relative change of `(a, b)` on the last step.
    pub residual: f64,
    pub q_stderr: Vec<f64>,
    /// Standard errors of `a` and `b` induced by the `q` estimates.
    pub a_stderr: f64,
    pub b_stderr: f64,
    /// The starting point `(a0, b0)`.
    pub a0: f64,
    pub b0: f64,
    pub trace: Vec<f64>,
    pub seed: Seed,
    pub config: SolverConfig,
}

impl FixedPointSolution {
    pub fn rel_shift(&self) -> (f64, f64) {
        let rel = |x: f64, x0: f64| if x0 == 0.0 { (x - x0).abs() } else { (x - x0).abs() / x0 };
        (rel(self.rates.a, self.a0), rel(self.rates.b, self.b0))
    }
}

/// Draw from `ER` restricted to `[lo, T)`.
#[inline]
fn band_draw<R: Rng + ?Sized>(rng: &mut R, lo: f64, width: f64) -> f64 {
    1.0 / (1.0 / lo - rng.random::<f64>() * width)
}

/// Estimate of `q_l` with its standard error.
pub fn estimate_q_ell(
    ell: usize,
    a: f64,
    b: f64,
    params: &AuctionParams,
    samples: usize,
    seed: Seed,
    estimator: QEstimator,
) -> Result<(f64, f64)> {
    if ell == 0 || ell >= params.m {
        return Err(Error::InvalidParams(format!("need 1 <= l <= m - 1, got l = {ell}, m = {}", params.m)));
    }
    params.require_band()?;
    if !(a > 0.0) || b < 0.0 {
        return Err(Error::InvalidParams(format!("need a > 0 and b >= 0, got a = {a}, b = {b}")));
    }
    let t = params.t();
    let lo = params.band_floor();
    let lp = params.low_price();
    let width = params.band_mass();
    let ratio = b / a;
    let rest = params.below_mass().powi((params.m - ell - 1) as i32);
    let (scale, m) = match estimator {
        QEstimator::Conditional => {
            let m = run_chunks(seed, samples, CHUNK_SIZE, |rng, count| {
                let mut acc = Moments::default();
                for _ in 0..count {
                    let mut top = 0.0f64;
                    let mut surplus = 0.0;
                    for _ in 0..ell {
                        let w = band_draw(rng, lo, width);
                        top = top.max(w);
                        surplus += w - lp;
                    }
                    // The favorite must land in [max(top, T - ratio * surplus), T).
                    let room = (t - top).min(ratio * surplus);
                    let mass = if room > 0.0 { room / (t * (t - room)) } else { 0.0 };
                    acc.push(mass);
                }
                acc
            })
            .into_iter()
            .fold(Moments::default(), Moments::merge);
            (width.powi(ell as i32) * rest, m)
        }
        QEstimator::Indicator => {
            let m = run_chunks(seed, samples, CHUNK_SIZE, |rng, count| {
                let mut acc = Moments::default();
                let mut vals = vec![0.0; ell + 1];
                for _ in 0..count {
                    for v in vals.iter_mut() {
                        *v = band_draw(rng, lo, width);
                    }
                    let k = crate::mechanisms::first_argmax(&vals);
                    let top = vals[k];
                    let others: f64 = vals.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| v - lp).sum();
                    let hit = a * (top - t) + b * others >= 0.0;
                    acc.push(if hit { 1.0 } else { 0.0 });
                }
                acc
            })
            .into_iter()
            .fold(Moments::default(), Moments::merge);
            (width.powi(ell as i32 + 1) * rest / (ell + 1) as f64, m)
        }
    };
    Ok((scale * m.mean(), scale * m.stderr()))
}

fn estimate_all_q(a: f64, b: f64, params: &AuctionParams, cfg: &SolverConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut q = Vec::with_capacity(params.m.saturating_sub(1));
    let mut se = Vec::with_capacity(q.capacity());
    for ell in 1..params.m {
        let (v, s) = estimate_q_ell(ell, a, b, params, cfg.samples, cfg.seed.derive(ell as u64), cfg.estimator)?;
        q.push(v);
        se.push(s);
    }
    Ok((q, se))
}

fn rel_change(new: f64, old: f64) -> f64 {
    if old == 0.0 {
        (new - old).abs()
    } else {
        ((new - old) / old).abs()
    }
}

/// Standard errors of `(a, b)` from those of `q`, by one-sided differences.
fn propagate(q: &[f64], se: &[f64], params: &AuctionParams, exponent: NoHighExponent) -> Result<(f64, f64)> {
    let base = rates_map_with(q, params, exponent)?;
    let (mut va, mut vb) = (0.0, 0.0);
    for k in 0..q.len() {
        if se[k] == 0.0 {
            continue;
        }
        let mut bumped = q.to_vec();
        bumped[k] = (bumped[k] + se[k]).min(1.0);
        let r = rates_map_with(&bumped, params, exponent)?;
        va += (r.a - base.a).powi(2);
        vb += (r.b - base.b).powi(2);
    }
    Ok((va.sqrt(), vb.sqrt()))
}

/// Iterates `q <- q(a, b)`, `(a, b) <- rates(q)` from `(a0, b0)` with damping.
pub fn solve(params: &AuctionParams, cfg: &SolverConfig) -> Result<FixedPointSolution> {
    params.require_menu_regime()?;
    if !(cfg.tol > 0.0) || !(cfg.damping > 0.0 && cfg.damping <= 1.0) || cfg.max_iter == 0 {
        return Err(Error::InvalidParams("need tol > 0, damping in (0, 1], max_iter >= 1".into()));
    }
    let start = rates_map_with(&vec![0.0; params.m - 1], params, cfg.exponent)?;
    let (a0, b0) = (start.a, start.b);
    let (mut a, mut b) = (a0, b0);
    let mut trace = Vec::new();
    for iteration in 1..=cfg.max_iter {
        let (q, se) = if params.m > 1 {
            params.require_band()?;
            estimate_all_q(a, b, params, cfg)?
        } else {
            (Vec::new(), Vec::new())
        };
        let next = rates_map_with(&q, params, cfg.exponent)?;
        let residual = rel_change(next.a, a).max(rel_change(next.b, b));
        trace.push(residual);
        if residual <= cfg.tol {
            let (a_stderr, b_stderr) = propagate(&q, &se, params, cfg.exponent)?;
            return Ok(FixedPointSolution {
                rates: next,
                iterations: iteration,
                residual,
                q_stderr: se,
                a_stderr,
                b_stderr,
                a0,
                b0,
                trace,
                seed: cfg.seed,
                config: *cfg,
            });
        }
        a += cfg.damping * (next.a - a);
        b += cfg.damping * (next.b - b);
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iter,
        residual: *trace.last().unwrap_or(&f64::NAN),
        trace,
    })
}

/// One more pass of the map from the returned rates, with a fresh seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualCheck {
    pub a_change: f64,
    pub b_change: f64,
    pub allowed_a: f64,
    pub allowed_b: f64,
    pub pass: bool,
}

pub fn residual_check(sol: &FixedPointSolution, params: &AuctionParams) -> Result<ResidualCheck> {
    let mut cfg = sol.config;
    cfg.seed = sol.seed.derive(u64::MAX);
    let (q, se) = if params.m > 1 {
        estimate_all_q(sol.rates.a, sol.rates.b, params, &cfg)?
    } else {
        (Vec::new(), Vec::new())
    };
    let next = rates_map_with(&q, params, cfg.exponent)?;
    let (fresh_a, fresh_b) = propagate(&q, &se, params, cfg.exponent)?;
    let a_change = (next.a - sol.rates.a).abs();
    let b_change = (next.b - sol.rates.b).abs();
    let allowed_a = cfg.tol * sol.rates.a + 3.0 * (sol.a_stderr.hypot(fresh_a));
    let allowed_b = cfg.tol * sol.rates.b + 3.0 * (sol.b_stderr.hypot(fresh_b));
    Ok(ResidualCheck { a_change, b_change, allowed_a, allowed_b, pass: a_change <= allowed_a && b_change <= allowed_b })
}

/// Static checks on a solution; ex-post feasibility lives in
/// [`crate::verification::feasibility_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub a_geq_b: bool,
    pub bounds: BoundReport,
    pub residual: ResidualCheck,
    pub failures: Vec<String>,
    pub pass: bool,
}

pub fn validate(sol: &FixedPointSolution, params: &AuctionParams) -> Result<ValidationReport> {
    params.require_menu_regime()?;
    let bounds = bound_suite(&sol.rates, params)?;
    let residual = residual_check(sol, params)?;
    let a_geq_b = sol.rates.a >= sol.rates.b;
    let mut failures: Vec<String> = bounds.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    if !a_geq_b {
        failures.push("a >= b".into());
    }
    if !residual.pass {
        failures.push("fixed-point residual".into());
    }
    let pass = failures.is_empty();
    Ok(ValidationReport { a_geq_b, bounds, residual, failures, pass })
}

/// The starting point of the iteration as a solution-shaped value.
pub fn zero_q_rates(params: &AuctionParams) -> Result<InterimRates> {
    rates_map(&vec![0.0; params.m - 1], params)
}
