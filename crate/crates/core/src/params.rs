//! Instance parameters: bidders `n`, items `m`, truncation `T`.

use serde::{Deserialize, Serialize};

use crate::distributions::DistSpec;
use crate::error::{Error, Result};

/// Item sets are bitmasks, so `m` is capped at 64.
pub const MAX_ITEMS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuctionParams {
    pub n: usize,
    pub m: usize,
    pub truncation: f64,
    /// Set when `T` was derived as `lambda * sqrt(n m)`.
    pub lambda: Option<f64>,
}

impl AuctionParams {
    pub fn new(n: usize, m: usize, truncation: f64) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidParams(format!("need n, m >= 1 (n = {n}, m = {m})")));
        }
        if m > MAX_ITEMS {
            return Err(Error::InvalidParams(format!("m = {m} exceeds {MAX_ITEMS}")));
        }
        if !(truncation.is_finite() && truncation >= 1.0) {
            return Err(Error::InvalidDistribution(format!(
                "truncation must be finite and >= 1, got {truncation}"
            )));
        }
        Ok(Self { n, m, truncation, lambda: None })
    }

    /// `T = lambda * sqrt(n m)`.
    pub fn from_lambda(n: usize, m: usize, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParams(format!("lambda must be positive, got {lambda}")));
        }
        let t = lambda * ((n * m) as f64).sqrt();
        let mut p = Self::new(n, m, t)?;
        p.lambda = Some(lambda);
        Ok(p)
    }

    pub fn t(&self) -> f64 {
        self.truncation
    }

    pub fn nf(&self) -> f64 {
        self.n as f64
    }

    pub fn mf(&self) -> f64 {
        self.m as f64
    }

    pub fn sqrt_nm(&self) -> f64 {
        (self.nf() * self.mf()).sqrt()
    }

    /// The cheap price `mn/T`.
    pub fn low_price(&self) -> f64 {
        self.mf() * self.nf() / self.truncation
    }

    /// Lower end of the band `[max(1, mn/T), T)`.
    pub fn band_floor(&self) -> f64 {
        self.low_price().max(1.0)
    }

    /// `P[v in [mn/T, T)]`, i.e. `T/(mn) - 1/T` once `mn/T >= 1`.
    pub fn band_mass(&self) -> f64 {
        (1.0 / self.band_floor() - 1.0 / self.truncation).max(0.0)
    }

    /// `P[v < mn/T]`, i.e. `1 - T/(mn)` once `mn/T >= 1`.
    pub fn below_mass(&self) -> f64 {
        1.0 - 1.0 / self.band_floor()
    }

    pub fn dist(&self) -> DistSpec {
        DistSpec::TruncatedEqualRevenue { truncation: self.truncation }
    }

    /// The regime studied for competition complexity: `T < n` and `lambda > 1`.
    pub fn in_regime(&self) -> bool {
        self.truncation < self.nf() && self.lambda.is_none_or(|l| l > 1.0)
    }

    /// `T >= sqrt(mn)`, the standing assumption of the menu analysis.
    pub fn require_menu_regime(&self) -> Result<()> {
        if self.truncation >= self.sqrt_nm() {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "need T >= sqrt(mn), got T = {} < {}",
                self.truncation,
                self.sqrt_nm()
            )))
        }
    }

    pub fn require_band(&self) -> Result<()> {
        if self.low_price() < self.truncation {
            Ok(())
        } else {
            Err(Error::EmptyBand {
                low_price: self.low_price(),
                truncation: self.truncation,
            })
        }
    }
}
