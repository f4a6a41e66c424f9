use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use erauction_core::closed_form::{a0, b0, srev};
use erauction_core::distributions::{favorite_marginal, nonfavorite_marginal};
use erauction_core::experiments::{
    cdw_benchmark, competition_complexity_at, grand_bundle_study, kfa_study, parse_grid, scaling_study,
    simulate_revenue, Mechanism, SolutionCache, SweepRow,
};
use erauction_core::fixed_point::{solve, validate, SolverConfig};
use erauction_core::verification::{
    feasibility_check, find_lna_deviation, find_naive_deviation, kf_bic_check, menu_bic_check,
};
use erauction_core::{AuctionParams, DistSpec, Error, RevenueEstimate, Seed, SCHEMA_VERSION};

#[derive(Parser, Debug)]
#[command(name = "erauction", version, about = "Auctions for additive bidders with Equal-Revenue values")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Global {
    /// Number of bidders.
    #[arg(long, global = true, default_value_t = 64)]
    n: usize,
    /// Number of items.
    #[arg(long, global = true, default_value_t = 2)]
    m: usize,
    /// Truncation as a multiple of sqrt(nm).
    #[arg(long, global = true, conflicts_with = "t")]
    lambda: Option<f64>,
    /// Truncation point.
    #[arg(long, global = true)]
    t: Option<f64>,
    /// Monte Carlo samples.
    #[arg(long, global = true, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Directory for cached fixed-point solutions.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum DistArg {
    /// Equal-Revenue truncated at T.
    Truncated,
    /// Untruncated Equal-Revenue.
    Er,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
enum Command {
    /// Revenue of selling separately, from the closed form.
    Srev,
    /// Solve the fixed point for the menu's rates.
    Solve,
    /// Incentive and feasibility checks at the solved rates.
    Verify {
        /// Types sampled for the menu check.
        #[arg(long, default_value_t = 20_000)]
        types: usize,
    },
    /// Competition complexity at one point.
    Ccx,
    /// Competition complexity over a grid, e.g. `m=2:n=64,128,256,512`.
    Sweep {
        #[arg(long)]
        grid: String,
    },
    /// Grand-bundle revenue over a grid, e.g. `m=2,4:n=8,16`.
    Bundle {
        #[arg(long)]
        grid: String,
    },
    /// Knows-Favorite auction revenue.
    Kfa {
        /// Also run the incentive check with this many sampled types.
        #[arg(long)]
        bic_types: Option<usize>,
    },
    /// Virtual-welfare benchmark, and simulated revenue of every mechanism
    /// for the truncated law.
    Benchmark {
        #[arg(long, value_enum, default_value_t = DistArg::Truncated)]
        dist: DistArg,
    },
    /// Favorite and non-favorite marginal laws on a log-spaced grid.
    Marginals {
        #[arg(long, default_value_t = 1000.0)]
        max: f64,
        #[arg(long, default_value_t = 25)]
        points: usize,
    },
}

/// Reasons to stop, with their exit codes.
enum Failure {
    Usage(anyhow::Error),
    Check(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(
                Error::InvalidParams(_)
                | Error::InvalidDistribution(_)
                | Error::Precondition(_)
                | Error::EmptyBand { .. }
                | Error::OutsideSupport { .. },
            ) => Failure::Usage(e),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    if let Some(k) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .context("building the thread pool")?;
    }
    eprintln!(
        "config: {}",
        serde_json::to_string(&serde_json::json!({ "global": g, "command": &cli.command })).unwrap_or_default()
    );
    let seed = Seed::new(g.seed);
    match &cli.command {
        Command::Srev => {
            let p = params(g)?;
            let value = srev(p.n, p.m, p.t())?;
            let doc = serde_json::json!({ "n": p.n, "m": p.m, "T": p.t(), "srev": value });
            emit_one(g, Format::Json, doc)
        }
        Command::Solve => {
            let p = params(g)?;
            let sol = solved(g, &p)?;
            let report = validate(&sol, &p)?;
            let pass = report.pass;
            emit_one(g, Format::Json, serde_json::json!({ "solution": sol, "validation": report }))?;
            check(pass, "solution failed validation")
        }
        Command::Verify { types } => {
            let p = params(g)?;
            let sol = solved(g, &p)?;
            let menu = menu_bic_check(&sol.rates, &p, *types, seed.derive(1));
            let feasibility = feasibility_check(&sol.rates, &sol.q_stderr, &p, g.samples, seed.derive(2))?;
            let (naive, less_naive) = if p.m >= 2 {
                (Some(find_naive_deviation(&p)?), Some(find_lna_deviation(&p, sol.a0, sol.b0)?))
            } else {
                (None, None)
            };
            let pass = menu.pass && feasibility.pass;
            let doc = serde_json::json!({
                "n": p.n, "m": p.m, "T": p.t(),
                "menu_bic": menu,
                "feasibility": feasibility,
                "naive_deviation": naive,
                "less_naive_deviation": less_naive,
                "pass": pass,
            });
            emit_one(g, Format::Json, doc)?;
            check(pass, "menu or feasibility check failed")
        }
        Command::Ccx => {
            let p = params(g)?;
            let sol = solved(g, &p)?;
            let row = competition_complexity_at(&p, &sol)?;
            emit_sweep(g, &[row], None)
        }
        Command::Sweep { grid } => {
            let lambda = g.lambda.unwrap_or(1.5);
            if g.t.is_some() {
                return Err(Failure::Usage(anyhow::anyhow!("sweep takes --lambda, not --t")));
            }
            let points = parse_grid(grid, lambda)?;
            let cache = cache(g)?;
            let study = scaling_study(&points, &solver_config(g), cache.as_ref())?;
            for s in &study.skipped {
                eprintln!("skipped (n={}, m={}, lambda={}): {}", s.point.n, s.point.m, s.point.lambda, s.reason);
            }
            match study.fit {
                Some(f) => eprintln!("fit c* ~ sqrt(nm): slope {} intercept {} R^2 {}", f.slope, f.intercept, f.r_squared),
                None => eprintln!("fit c* ~ sqrt(nm): undefined (fewer than two distinct points)"),
            }
            emit_sweep(g, &study.rows, Some(serde_json::to_value(&study).map_err(anyhow::Error::from)?))
        }
        Command::Bundle { grid } => {
            let points: Vec<(usize, usize)> = parse_grid(grid, 1.5)?.iter().map(|p| (p.n, p.m)).collect();
            let study = grand_bundle_study(&points, g.samples, seed)?;
            match study.fit {
                Some(f) => eprintln!("fit (rev - nm) ~ m ln(mn): slope {} intercept {} R^2 {}", f.slope, f.intercept, f.r_squared),
                None => eprintln!("fit (rev - nm) ~ m ln(mn): undefined"),
            }
            let bounds_ok = study.rows.iter().all(|r| r.second_favorite_within_bounds);
            if format(g, Format::Csv) == Format::Json {
                emit_one(g, Format::Json, serde_json::to_value(&study).map_err(anyhow::Error::from)?)?;
            } else {
                let header = [
                    "n", "m", "revenue", "revenue_stderr", "proxy", "proxy_stderr", "second_favorite",
                    "second_favorite_stderr", "second_favorite_exact", "lower", "upper", "excess", "x",
                ];
                let rows = study.rows.iter().map(|r| {
                    vec![
                        r.n.to_string(),
                        r.m.to_string(),
                        float(r.revenue.mean),
                        float(r.revenue.stderr),
                        float(r.proxy.mean),
                        float(r.proxy.stderr),
                        float(r.second_favorite.mean),
                        float(r.second_favorite.stderr),
                        float(r.second_favorite_exact),
                        float(r.second_favorite_lower),
                        float(r.second_favorite_upper),
                        float(r.excess),
                        float(r.x),
                    ]
                });
                write_csv(g, &header, rows)?;
            }
            check(bounds_ok, "second-favorite mean outside its bounds")
        }
        Command::Kfa { bic_types } => {
            let study = kfa_study(g.n, g.m, g.samples, seed)?;
            let bic = match bic_types {
                Some(k) => Some(kf_bic_check(g.n, g.m, *k, g.samples, seed.derive(1))?),
                None => None,
            };
            let pass = study.above_lower_bound && bic.as_ref().is_none_or(|b| b.pass);
            emit_one(g, Format::Json, serde_json::json!({ "study": study, "bic": bic }))?;
            check(pass, "Knows-Favorite revenue or truthfulness check failed")
        }
        Command::Benchmark { dist } => {
            let (spec, p) = match dist {
                DistArg::Er => (DistSpec::EqualRevenue, None),
                DistArg::Truncated => {
                    let p = params(g)?;
                    (p.dist(), Some(p))
                }
            };
            let bench = cdw_benchmark(&spec, g.n, g.m, g.samples, seed.derive(1))?;
            let mut rows: Vec<(String, RevenueEstimate)> = vec![("benchmark".into(), bench)];
            if let Some(p) = p {
                let mut mechs = vec![Mechanism::SellSeparately, Mechanism::Naive];
                if let (Ok(a), Ok(b)) = (a0(p.n, p.t()), b0(&p)) {
                    mechs.push(Mechanism::LessNaive { a0: a, b0: b });
                }
                if p.require_menu_regime().is_ok() && p.require_band().is_ok() {
                    let sol = solved(g, &p)?;
                    mechs.push(Mechanism::NotSoNaive { rates: sol.rates });
                }
                for (i, mech) in mechs.iter().enumerate() {
                    let est = simulate_revenue(&p, mech, g.samples, seed.derive(2 + i as u64))?;
                    rows.push((mech.name().into(), est));
                }
            }
            let dominated = rows[1..]
                .iter()
                .all(|(_, r)| bench.mean + 3.0 * bench.stderr.hypot(r.stderr) >= r.mean);
            if format(g, Format::Json) == Format::Json {
                let doc: Vec<_> = rows.iter().map(|(name, e)| serde_json::json!({ "name": name, "estimate": e })).collect();
                emit_one(g, Format::Json, serde_json::json!({ "n": g.n, "m": g.m, "rows": doc }))?;
            } else {
                let header = ["name", "mean", "stderr", "samples", "estimator"];
                let data = rows.iter().map(|(name, e)| {
                    vec![
                        name.clone(),
                        float(e.mean),
                        float(e.stderr),
                        e.samples.to_string(),
                        serde_json::to_value(e.estimator).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                    ]
                });
                write_csv(g, &header, data)?;
            }
            check(dominated, "a mechanism beat the benchmark by more than 3 sigma")
        }
        Command::Marginals { max, points } => {
            if g.m < 2 || !(*max > 1.0) || *points < 2 {
                return Err(Failure::Usage(anyhow::anyhow!("marginals need m >= 2, max > 1 and points >= 2")));
            }
            let xs: Vec<f64> = (0..*points).map(|k| max.powf(k as f64 / (*points - 1) as f64)).collect();
            let mut data = Vec::with_capacity(xs.len());
            for &x in &xs {
                let f = favorite_marginal(g.m, x)?;
                let o = nonfavorite_marginal(g.m, x)?;
                data.push([x, f.cdf, f.pdf, o.cdf, o.pdf]);
            }
            if format(g, Format::Csv) == Format::Json {
                let rows: Vec<_> = data
                    .iter()
                    .map(|r| serde_json::json!({ "x": r[0], "favorite_cdf": r[1], "favorite_pdf": r[2], "nonfavorite_cdf": r[3], "nonfavorite_pdf": r[4] }))
                    .collect();
                emit_one(g, Format::Json, serde_json::json!({ "m": g.m, "rows": rows }))
            } else {
                let header = ["x", "favorite_cdf", "favorite_pdf", "nonfavorite_cdf", "nonfavorite_pdf"];
                write_csv(g, &header, data.iter().map(|r| r.iter().map(|&v| float(v)).collect()))
            }
        }
    }
}

fn params(g: &Global) -> Result<AuctionParams, Failure> {
    let p = match (g.lambda, g.t) {
        (Some(_), Some(_)) => return Err(Failure::Usage(anyhow::anyhow!("--lambda and --t conflict"))),
        (_, Some(t)) => AuctionParams::new(g.n, g.m, t)?,
        (l, None) => AuctionParams::from_lambda(g.n, g.m, l.unwrap_or(1.5))?,
    };
    eprintln!("resolved: n={} m={} T={} seed={}", p.n, p.m, p.t(), g.seed);
    Ok(p)
}

fn solver_config(g: &Global) -> SolverConfig {
    SolverConfig { seed: Seed::new(g.seed), ..SolverConfig::default() }
}

fn cache(g: &Global) -> Result<Option<SolutionCache>, Failure> {
    Ok(match &g.cache {
        Some(dir) => Some(SolutionCache::new(dir)?),
        None => None,
    })
}

fn solved(g: &Global, p: &AuctionParams) -> Result<erauction_core::FixedPointSolution, Failure> {
    let cfg = solver_config(g);
    Ok(match cache(g)? {
        Some(c) => c.get_or_solve(p, &cfg)?,
        None => solve(p, &cfg)?,
    })
}

fn check(pass: bool, msg: &str) -> Outcome {
    if pass {
        Ok(())
    } else {
        Err(Failure::Check(msg.into()))
    }
}

fn format(g: &Global, default: Format) -> Format {
    g.format.unwrap_or(default)
}

/// 17 significant digits.
fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn sink(g: &Global) -> Result<Box<dyn Write>, Failure> {
    Ok(match &g.out {
        Some(path) => Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

/// A single JSON document tagged with the schema version. CSV output of a
/// document is one header row and one value row of its scalar fields.
fn emit_one(g: &Global, default: Format, doc: serde_json::Value) -> Outcome {
    let mut doc = doc;
    if let serde_json::Value::Object(map) = &mut doc {
        map.insert("schema_version".into(), SCHEMA_VERSION.into());
    }
    match format(g, default) {
        Format::Json => {
            let mut out = sink(g)?;
            serde_json::to_writer_pretty(&mut out, &doc).map_err(anyhow::Error::from)?;
            writeln!(out)?;
            Ok(())
        }
        Format::Csv => {
            let serde_json::Value::Object(map) = doc else {
                return Err(Failure::Usage(anyhow::anyhow!("this output has no CSV form")));
            };
            let scalars: Vec<(String, String)> = map
                .into_iter()
                .filter_map(|(k, v)| match v {
                    serde_json::Value::Number(n) => Some((k, n.as_f64().map(float).unwrap_or_else(|| n.to_string()))),
                    serde_json::Value::Bool(b) => Some((k, b.to_string())),
                    serde_json::Value::String(s) => Some((k, s)),
                    _ => None,
                })
                .collect();
            if scalars.len() <= 1 {
                return Err(Failure::Usage(anyhow::anyhow!("this output has no CSV form; use --format json")));
            }
            let header: Vec<&str> = scalars.iter().map(|(k, _)| k.as_str()).collect();
            let row: Vec<String> = scalars.iter().map(|(_, v)| v.clone()).collect();
            write_csv(g, &header, std::iter::once(row))
        }
    }
}

fn emit_sweep(g: &Global, rows: &[SweepRow], study: Option<serde_json::Value>) -> Outcome {
    if format(g, Format::Csv) == Format::Json {
        let doc = study.unwrap_or_else(|| serde_json::json!({ "rows": rows }));
        return emit_one(g, Format::Json, doc);
    }
    let header = ["n", "m", "lambda", "T", "c_star", "rev_nsn", "srev_n", "residual", "analytic_bound"];
    let data = rows.iter().map(|r| {
        vec![
            r.n.to_string(),
            r.m.to_string(),
            float(r.lambda),
            float(r.t),
            r.c_star.to_string(),
            float(r.rev_nsn),
            float(r.srev_n),
            float(r.residual),
            float(r.analytic_bound),
        ]
    });
    write_csv(g, &header, data)
}

fn write_csv<I>(g: &Global, header: &[&str], rows: I) -> Outcome
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(sink(g)?);
    w.write_record(header).map_err(anyhow::Error::from)?;
    for r in rows {
        w.write_record(&r).map_err(anyhow::Error::from)?;
    }
    w.flush()?;
    Ok(())
}
