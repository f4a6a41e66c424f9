//! Revenue simulations, competition-complexity sweeps, the virtual-welfare
//! benchmark, grand-bundle and Knows-Favorite studies, and an on-disk cache
//! of fixed-point solutions.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::closed_form::{ccx_analytic_bound, grand_bundle_forms, kfa_forms, nsn_revenue_per_bidder, srev, InterimRates};
use crate::distributions::DistSpec;
use crate::error::{Error, Result};
use crate::fixed_point::{solve, FixedPointSolution, SolverConfig};
use crate::mechanisms::{
    first_argmax, grand_bundle_spa, kfa, kfa_favorite, less_naive_auction, naive_auction, nsn_expost,
    sell_separately, ValuationProfile,
};
use crate::params::AuctionParams;
use crate::rng::{run_chunks, Seed, SimRng, CHUNK_SIZE};
use crate::stats::{median_of_means, ols, Estimator, LinearFit, Moments, RevenueEstimate, MOM_BLOCKS};
use crate::SCHEMA_VERSION;

/// The ex-post mechanisms that can be simulated on `ER<=T` profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    /// Second price with reserve `T` on each item.
    SellSeparately,
    Naive,
    LessNaive { a0: f64, b0: f64 },
    /// The menu at the given rates, every bidder paying her interim price.
    NotSoNaive { rates: InterimRates },
}

impl Mechanism {
    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::SellSeparately => "sell_separately",
            Mechanism::Naive => "naive",
            Mechanism::LessNaive { .. } => "less_naive",
            Mechanism::NotSoNaive { .. } => "not_so_naive",
        }
    }

    /// Revenue on one profile.
    pub fn revenue(&self, profile: &ValuationProfile, params: &AuctionParams, rng: &mut SimRng) -> Result<f64> {
        Ok(match self {
            Mechanism::SellSeparately => sell_separately(profile, params.t(), rng).revenue,
            Mechanism::Naive => naive_auction(profile, params, rng).revenue,
            Mechanism::LessNaive { a0, b0 } => less_naive_auction(profile, params, *a0, *b0, rng)?.revenue,
            Mechanism::NotSoNaive { rates } => nsn_expost(profile, rates, params, rng).revenue,
        })
    }
}

/// Mean of `stat(profile, rng)` over `profiles` draws of `n x m` values
/// from `dist`.
fn profile_mean<F>(dist: &DistSpec, n: usize, m: usize, profiles: usize, seed: Seed, stat: F) -> Result<RevenueEstimate>
where
    F: Fn(&ValuationProfile, &mut SimRng) -> Result<f64> + Sync,
{
    dist.validate()?;
    let parts = run_chunks(seed, profiles, CHUNK_SIZE, |rng, count| -> Result<Moments> {
        let mut acc = Moments::default();
        let mut prof = ValuationProfile::sample(dist, n, m, rng);
        for k in 0..count {
            if k > 0 {
                prof.resample(dist, rng);
            }
            acc.push(stat(&prof, rng)?);
        }
        Ok(acc)
    });
    let mut total = Moments::default();
    for p in parts {
        total = total.merge(p?);
    }
    Ok(RevenueEstimate::from_moments(&total, seed))
}

/// Simulated revenue of `mech` with `params.n` bidders.
pub fn simulate_revenue(params: &AuctionParams, mech: &Mechanism, profiles: usize, seed: Seed) -> Result<RevenueEstimate> {
    profile_mean(&params.dist(), params.n, params.m, profiles, seed, |prof, rng| mech.revenue(prof, params, rng))
}

/// Simulated revenue of selling separately to `n_prime` bidders at reserve `T`.
pub fn simulate_srev(n_prime: usize, params: &AuctionParams, profiles: usize, seed: Seed) -> Result<RevenueEstimate> {
    let t = params.t();
    profile_mean(&params.dist(), n_prime, params.m, profiles, seed, |prof, rng| {
        Ok(sell_separately(prof, t, rng).revenue)
    })
}

/// `E[Rev(mech, first n bidders) - SRev(all n + extra bidders)]` on shared
/// profiles.
pub fn coupled_gain(
    params: &AuctionParams,
    mech: &Mechanism,
    extra: usize,
    profiles: usize,
    seed: Seed,
) -> Result<RevenueEstimate> {
    let t = params.t();
    profile_mean(&params.dist(), params.n + extra, params.m, profiles, seed, |prof, rng| {
        let base = if extra == 0 { prof.clone() } else { prof.truncate_bidders(params.n) };
        let mech_rev = mech.revenue(&base, params, rng)?;
        Ok(mech_rev - sell_separately(prof, t, rng).revenue)
    })
}

/// One row of a competition-complexity sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub c_star: u64,
    pub rev_nsn: f64,
    pub srev_n: f64,
    pub residual: f64,
    /// The analytic lower bound on `c*` at these rates.
    pub analytic_bound: f64,
}

/// Relative slack when comparing `srev(n + c)` with the menu's revenue.
const CCX_SLACK: f64 = 1e-12;

/// Fewest added bidders for selling separately to match the menu's revenue,
/// from closed forms only.
pub fn competition_complexity(params: &AuctionParams, rates: &InterimRates, residual: f64) -> Result<SweepRow> {
    let (n, m, t) = (params.n, params.m, params.t());
    let rev_nsn = params.nf() * nsn_revenue_per_bidder(rates, params)?;
    let srev_n = srev(n, m, t)?;
    let target = rev_nsn * (1.0 - CCX_SLACK);
    let row = |c_star| SweepRow {
        n,
        m,
        lambda: params.lambda.unwrap_or(t / params.sqrt_nm()),
        t,
        c_star,
        rev_nsn,
        srev_n,
        residual,
        analytic_bound: ccx_analytic_bound(params, rates.b),
    };
    if srev_n >= target {
        return Ok(row(0));
    }
    if target >= m as f64 * t {
        return Err(Error::Precondition(format!(
            "menu revenue {rev_nsn} is out of reach of selling separately (cap {})",
            m as f64 * t
        )));
    }
    let reaches = |c: u64| -> Result<bool> { Ok(srev(n + c as usize, m, t)? >= target) };
    let mut hi = 1u64;
    while !reaches(hi)? {
        if hi >= 1 << 52 {
            return Err(Error::Precondition(format!("no c below {hi} reaches {rev_nsn}")));
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    // srev(n + lo) < target <= srev(n + hi), except lo = 0 which is known to miss.
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reaches(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(row(hi))
}

/// [`competition_complexity`] at a solved fixed point; rejects a solution
/// whose residual exceeds its tolerance.
pub fn competition_complexity_at(params: &AuctionParams, sol: &FixedPointSolution) -> Result<SweepRow> {
    if !(sol.residual <= sol.config.tol) {
        return Err(Error::NonConvergence {
            iterations: sol.iterations,
            residual: sol.residual,
            trace: sol.trace.clone(),
        });
    }
    competition_complexity(params, &sol.rates, sol.residual)
}

/// A grid point `(n, m, lambda)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub point: GridPoint,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub schema_version: u32,
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<SkippedPoint>,
    /// `c*` against `sqrt(nm)`; absent with fewer than two distinct points.
    pub fit: Option<LinearFit>,
}

/// Solves and evaluates every grid point with `T = lambda sqrt(nm) < n`.
pub fn scaling_study(grid: &[GridPoint], cfg: &SolverConfig, cache: Option<&SolutionCache>) -> Result<ScalingStudy> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &point in grid {
        let params = AuctionParams::from_lambda(point.n, point.m, point.lambda)?;
        if !params.in_regime() {
            skipped.push(SkippedPoint {
                point,
                reason: format!("T = {} is not in (sqrt(nm), n)", params.t()),
            });
            continue;
        }
        let sol = match cache {
            Some(c) => c.get_or_solve(&params, cfg)?,
            None => solve(&params, cfg)?,
        };
        rows.push(competition_complexity_at(&params, &sol)?);
    }
    let xs: Vec<f64> = rows.iter().map(|r| ((r.n * r.m) as f64).sqrt()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.c_star as f64).collect();
    Ok(ScalingStudy { schema_version: SCHEMA_VERSION, rows, skipped, fit: ols(&xs, &ys) })
}

/// Parses `m=2:n=64,128` style grids; every listed key is crossed with the
/// others.
pub fn parse_grid(spec: &str, lambda: f64) -> Result<Vec<GridPoint>> {
    let mut ns = Vec::new();
    let mut ms = Vec::new();
    let mut lambdas = Vec::new();
    for part in spec.split(':').filter(|s| !s.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidParams(format!("grid part `{part}` is not key=values")))?;
        for v in values.split(',') {
            let bad = || Error::InvalidParams(format!("bad value `{v}` for `{key}`"));
            match key.trim() {
                "n" => ns.push(v.trim().parse::<usize>().map_err(|_| bad())?),
                "m" => ms.push(v.trim().parse::<usize>().map_err(|_| bad())?),
                "lambda" => lambdas.push(v.trim().parse::<f64>().map_err(|_| bad())?),
                other => return Err(Error::InvalidParams(format!("unknown grid key `{other}`"))),
            }
        }
    }
    if ns.is_empty() || ms.is_empty() {
        return Err(Error::InvalidParams("grid needs both n and m".into()));
    }
    if lambdas.is_empty() {
        lambdas.push(lambda);
    }
    let mut out = Vec::new();
    for &m in &ms {
        for &lambda in &lambdas {
            for &n in &ns {
                out.push(GridPoint { n, m, lambda });
            }
        }
    }
    Ok(out)
}

/// Monte Carlo value of the virtual-welfare benchmark: each item goes to
/// the bidder with the highest ironed virtual value if the item is her
/// favorite, and with the highest raw value otherwise.
///
/// For `ER<=T` the ironed virtual value is `T` at the atom and 0 below it.
/// For untruncated `ER` the favorite region contributes `nm` (the limit of
/// the truncated atom term) and the rest is estimated by median of means.
pub fn cdw_benchmark(dist: &DistSpec, n: usize, m: usize, samples: usize, seed: Seed) -> Result<RevenueEstimate> {
    dist.validate()?;
    if n == 0 || m == 0 {
        return Err(Error::InvalidParams("need n, m >= 1".into()));
    }
    match *dist {
        DistSpec::TruncatedEqualRevenue { truncation } => profile_mean(dist, n, m, samples, seed, |prof, _| {
            let favs: Vec<usize> = (0..n).map(|i| first_argmax(prof.row(i))).collect();
            let mut total = 0.0;
            for j in 0..m {
                let mut best = 0.0f64;
                for (i, &f) in favs.iter().enumerate() {
                    let v = prof.get(i, j);
                    let w = if f == j { if v == truncation { truncation } else { 0.0 } } else { v };
                    best = best.max(w);
                }
                total += best;
            }
            Ok(total)
        }),
        DistSpec::EqualRevenue => {
            if n < 2 {
                return Err(Error::InvalidParams("the untruncated benchmark needs n >= 2".into()));
            }
            let mut est = profile_mom(dist, n, m, samples, seed, |prof, _| {
                let favs: Vec<usize> = (0..n).map(|i| first_argmax(prof.row(i))).collect();
                let outside: f64 = (0..m)
                    .map(|j| {
                        favs.iter()
                            .enumerate()
                            .filter(|(_, &f)| f != j)
                            .map(|(i, _)| prof.get(i, j))
                            .fold(0.0, f64::max)
                    })
                    .sum();
                Ok([outside])
            })?[0];
            est.mean += (n * m) as f64;
            Ok(est)
        }
    }
}

/// Median-of-means estimates of `K` statistics computed on the same profiles.
fn profile_mom<const K: usize, F>(
    dist: &DistSpec,
    n: usize,
    m: usize,
    samples: usize,
    seed: Seed,
    stat: F,
) -> Result<[RevenueEstimate; K]>
where
    F: Fn(&ValuationProfile, &mut SimRng) -> Result<[f64; K]> + Sync,
{
    dist.validate()?;
    let per_block = samples.div_ceil(MOM_BLOCKS).max(1);
    let blocks = run_chunks(seed, per_block * MOM_BLOCKS, per_block, |rng, count| -> Result<[f64; K]> {
        let mut acc = [Moments::default(); K];
        let mut prof = ValuationProfile::sample(dist, n, m, rng);
        for k in 0..count {
            if k > 0 {
                prof.resample(dist, rng);
            }
            for (a, x) in acc.iter_mut().zip(stat(&prof, rng)?) {
                a.push(x);
            }
        }
        Ok(acc.map(|a| a.mean()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(std::array::from_fn(|k| {
        let means: Vec<f64> = blocks.iter().map(|b| b[k]).collect();
        let (mean, stderr) = median_of_means(&means);
        RevenueEstimate {
            mean,
            stderr,
            samples: (per_block * MOM_BLOCKS) as u64,
            estimator: Estimator::MedianOfMeans,
            seed,
        }
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleRow {
    pub n: usize,
    pub m: usize,
    /// Grand-bundle second-price revenue.
    pub revenue: RevenueEstimate,
    /// Row sum of the bidder with the second-highest favorite value.
    pub proxy: RevenueEstimate,
    /// `E[v_(2),(1)]`.
    pub second_favorite: RevenueEstimate,
    pub second_favorite_exact: f64,
    pub second_favorite_lower: f64,
    pub second_favorite_upper: f64,
    pub second_favorite_within_bounds: bool,
    /// `revenue - nm`.
    pub excess: f64,
    /// `m ln(mn)`.
    pub x: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrandBundleStudy {
    pub schema_version: u32,
    pub rows: Vec<BundleRow>,
    /// `revenue - nm` against `m ln(mn)`.
    pub fit: Option<LinearFit>,
}

/// Grand-bundle revenue on untruncated `ER^m` profiles at each `(n, m)`.
pub fn grand_bundle_study(grid: &[(usize, usize)], samples: usize, seed: Seed) -> Result<GrandBundleStudy> {
    let mut rows = Vec::new();
    for (k, &(n, m)) in grid.iter().enumerate() {
        let forms = grand_bundle_forms(n, m)?;
        let point_seed = seed.derive(k as u64);
        let [revenue, proxy, second_favorite] =
            profile_mom(&DistSpec::EqualRevenue, n, m, samples, point_seed, |prof, rng| {
                let revenue = grand_bundle_spa(prof, rng)?.revenue;
                let favs: Vec<f64> = (0..n).map(|i| prof.row(i).iter().copied().fold(0.0, f64::max)).collect();
                // Second-highest favorite value and its holder (first index on ties).
                let top = first_argmax(&favs);
                let mut second = None::<usize>;
                for i in (0..n).filter(|&i| i != top) {
                    if second.is_none_or(|s| favs[i] > favs[s]) {
                        second = Some(i);
                    }
                }
                let s = second.expect("n >= 2");
                Ok([revenue, prof.row(s).iter().sum(), favs[s]])
            })?;
        let within = second_favorite.mean + 3.0 * second_favorite.stderr >= forms.lower
            && second_favorite.mean - 3.0 * second_favorite.stderr <= forms.upper;
        rows.push(BundleRow {
            n,
            m,
            excess: revenue.mean - (n * m) as f64,
            x: m as f64 * ((m * n) as f64).ln(),
            revenue,
            proxy,
            second_favorite,
            second_favorite_exact: forms.second_favorite_mean,
            second_favorite_lower: forms.lower,
            second_favorite_upper: forms.upper,
            second_favorite_within_bounds: within,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.x).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.excess).collect();
    Ok(GrandBundleStudy { schema_version: SCHEMA_VERSION, fit: ols(&xs, &ys), rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfaStudy {
    pub schema_version: u32,
    pub n: usize,
    pub m: usize,
    /// Exact high-branch revenue over all items.
    pub high_revenue: f64,
    /// Simulated low-branch revenue over all items.
    pub low_revenue: RevenueEstimate,
    pub low_revenue_exact: f64,
    /// Analytic lower bound on the low-branch revenue over all items.
    pub low_revenue_lower: f64,
    pub total: f64,
    pub total_stderr: f64,
    /// `(total - nm) / (m sqrt(nm))`.
    pub ratio: f64,
    /// `total - nm >= low_revenue_lower - 3 sigma`.
    pub above_lower_bound: bool,
}

/// High branch from closed forms (its events have probability about
/// `e^(-nm)`), low branch by simulating the auction.
pub fn kfa_study(n: usize, m: usize, samples: usize, seed: Seed) -> Result<KfaStudy> {
    if n == 0 || m == 0 || n < m {
        return Err(Error::InvalidParams(format!("need n >= m >= 1 (n = {n}, m = {m})")));
    }
    let forms = kfa_forms(n, m)?;
    let mf = m as f64;
    let high_revenue = mf * forms.high_revenue_exact;
    let low_revenue = profile_mean(&DistSpec::EqualRevenue, n, m, samples, seed, |prof, rng| {
        let out = kfa(prof, rng);
        let sold_low = out
            .allocation
            .iter()
            .enumerate()
            .filter(|(j, w)| matches!(w, Some(i) if kfa_favorite(prof.row(*i)) != Some(*j)))
            .count();
        Ok(sold_low as f64 * forms.l)
    })?;
    let nm = (n * m) as f64;
    let total = high_revenue + low_revenue.mean;
    let low_lower = mf * forms.low_revenue_lower;
    Ok(KfaStudy {
        schema_version: SCHEMA_VERSION,
        n,
        m,
        high_revenue,
        low_revenue_exact: mf * forms.low_revenue_exact,
        low_revenue_lower: low_lower,
        total,
        total_stderr: low_revenue.stderr,
        ratio: (total - nm) / (mf * nm.sqrt()),
        above_lower_bound: total - nm >= low_lower - 3.0 * low_revenue.stderr,
        low_revenue,
    })
}

/// Directory of solved fixed points, one JSON document per key.
#[derive(Clone, Debug)]
pub struct SolutionCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    schema_version: u32,
    key: String,
    solution: FixedPointSolution,
}

impl SolutionCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn key(params: &AuctionParams, cfg: &SolverConfig) -> Result<String> {
        Ok(serde_json::to_string(&(SCHEMA_VERSION, params, cfg))?)
    }

    fn path(&self, key: &str) -> PathBuf {
        let digest = Sha256::digest(key.as_bytes());
        self.dir.join(format!("{}.json", hex::encode(digest)))
    }

    /// The cached solution, if present and stored under the same key.
    pub fn get(&self, params: &AuctionParams, cfg: &SolverConfig) -> Result<Option<FixedPointSolution>> {
        let key = Self::key(params, cfg)?;
        let path = self.path(&key);
        let Ok(text) = fs::read_to_string(&path) else { return Ok(None) };
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(e) if e.key == key && e.schema_version == SCHEMA_VERSION => Ok(Some(e.solution)),
            _ => Ok(None),
        }
    }

    /// Writes atomically: a temporary file in the cache directory renamed
    /// over the entry.
    pub fn put(&self, params: &AuctionParams, cfg: &SolverConfig, sol: &FixedPointSolution) -> Result<()> {
        let key = Self::key(params, cfg)?;
        let path = self.path(&key);
        let entry = CacheEntry { schema_version: SCHEMA_VERSION, key, solution: sol.clone() };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        serde_json::to_writer(&mut tmp, &entry)?;
        tmp.flush()?;
        tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn get_or_solve(&self, params: &AuctionParams, cfg: &SolverConfig) -> Result<FixedPointSolution> {
        if let Some(sol) = self.get(params, cfg)? {
            return Ok(sol);
        }
        let sol = solve(params, cfg)?;
        self.put(params, cfg, &sol)?;
        Ok(sol)
    }
}
