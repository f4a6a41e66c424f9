//! Revenue formulas, mechanism simulators, a fixed-point solver and
//! incentive checks for multi-item auctions with additive bidders whose
//! values are drawn from (truncated) Equal-Revenue distributions.

pub mod closed_form;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod fixed_point;
pub mod mechanisms;
pub mod numeric;
pub mod params;
pub mod rng;
pub mod stats;
pub mod verification;

pub use closed_form::{InterimRates, NoHighExponent};
pub use distributions::DistSpec;
pub use error::{Error, Result};
pub use fixed_point::{FixedPointSolution, SolverConfig};
pub use mechanisms::{ItemSet, MechanismOutcome, MenuOption, ValuationProfile};
pub use params::AuctionParams;
pub use rng::Seed;
pub use stats::{Estimator, RevenueEstimate};

/// Version tag for every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;
