//! Fixed-point coin amounts.
//!
//! Coins carry two fractional digits and are stored as integer hundredths, so
//! arithmetic on balances is exact. Prices computed in floating point are
//! converted with round-half-even at the second decimal.

use std::fmt;
use std::iter::Sum;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoinsError {
    #[error("malformed coin amount {0:?}: expected digits with up to 2 decimals")]
    Malformed(String),
    #[error("coin amount out of range: {0}")]
    OutOfRange(String),
}

/// Coin amount in hundredths. `Coins::from_cents(20000)` is `200.00`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Coins(i64);

impl Coins {
    pub const ZERO: Coins = Coins(0);

    pub fn from_cents(cents: i64) -> Self {
        Coins(cents)
    }

    pub fn cents(self) -> i64 {
        self.0
    }

    /// Convert a floating-point price to coins, rounding half to even at the
    /// second decimal. The price must be finite.
    pub fn from_price(price: f64) -> Self {
        assert!(price.is_finite(), "price must be finite, got {price}");
        Coins((price * 100.0).round_ties_even() as i64)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn checked_add(self, other: Coins) -> Option<Coins> {
        self.0.checked_add(other.0).map(Coins)
    }

    pub fn checked_sub(self, other: Coins) -> Option<Coins> {
        self.0.checked_sub(other.0).map(Coins)
    }
}

impl fmt::Display for Coins {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl fmt::Debug for Coins {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coins({self})")
    }
}

impl FromStr for Coins {
    type Err = CoinsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || CoinsError::Malformed(s.to_string());
        let (sign, body) = match s.strip_prefix('-') {
            Some(rest) => (-1i64, rest),
            None => (1i64, s),
        };
        let (whole, frac) = match body.split_once('.') {
            Some((w, f)) => (w, f),
            None => (body, ""),
        };
        if whole.is_empty() || whole.chars().any(|c| !c.is_ascii_digit()) {
            return Err(malformed());
        }
        if frac.len() > 2 || frac.chars().any(|c| !c.is_ascii_digit()) {
            return Err(malformed());
        }
        let whole: i64 = whole
            .parse()
            .map_err(|_| CoinsError::OutOfRange(s.to_string()))?;
        let mut frac_cents: i64 = if frac.is_empty() { 0 } else { frac.parse().unwrap() };
        if frac.len() == 1 {
            frac_cents *= 10;
        }
        let cents = whole
            .checked_mul(100)
            .and_then(|c| c.checked_add(frac_cents))
            .ok_or_else(|| CoinsError::OutOfRange(s.to_string()))?;
        Ok(Coins(sign * cents))
    }
}

impl Sum for Coins {
    fn sum<I: Iterator<Item = Coins>>(iter: I) -> Coins {
        Coins(iter.map(|c| c.0).sum())
    }
}

impl Serialize for Coins {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Coins {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}
