//! Exact monetary amounts.
//!
//! Amounts are rationals expressed in currency *minor* units (cents for USD).
//! All accumulation is exact; rounding only happens when rendering for a
//! report.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Minor units per major unit (cents per dollar).
pub const MINOR_PER_MAJOR: i128 = 100;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid money literal {0:?}")]
pub struct MoneyParseError(pub String);

/// An exact amount of money in minor units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(Ratio<i128>);

impl Money {
    pub fn zero() -> Self {
        Money(Ratio::zero())
    }

    pub fn from_minor(units: i128) -> Self {
        Money(Ratio::from_integer(units))
    }

    pub fn from_ratio(numer: i128, denom: i128) -> Self {
        Money(Ratio::new(numer, denom))
    }

    /// Parses a decimal amount in major units, e.g. `"0.001"` dollars.
    pub fn from_major_decimal(s: &str) -> Result<Self, MoneyParseError> {
        parse_decimal(s).map(|r| Money(r * Ratio::from_integer(MINOR_PER_MAJOR)))
    }

    pub fn ratio(&self) -> Ratio<i128> {
        self.0
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Renders the amount in minor units rounded half away from zero to
    /// `decimals` places.
    pub fn render_minor(&self, decimals: u32) -> String {
        let scale = 10i128.pow(decimals);
        let scaled = self.0 * Ratio::from_integer(scale);
        let rounded = scaled.round().to_integer();
        let sign = if rounded < 0 { "-" } else { "" };
        let abs = rounded.abs();
        if decimals == 0 {
            return format!("{sign}{abs}");
        }
        let int = abs / scale;
        let frac = abs % scale;
        format!("{sign}{int}.{frac:0width$}", width = decimals as usize)
    }
}

fn parse_decimal(s: &str) -> Result<Ratio<i128>, MoneyParseError> {
    let err = || MoneyParseError(s.to_string());
    let t = s.trim();
    if t.is_empty() {
        return Err(err());
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return Err(err());
    }
    if frac_part.len() > 18 {
        return Err(err());
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: i128 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| err())? };
    let denom = 10i128.pow(frac_part.len() as u32);
    let r = Ratio::new(numer, denom);
    Ok(if neg { -r } else { r })
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Mul<u64> for Money {
    type Output = Money;
    fn mul(self, rhs: u64) -> Money {
        Money(self.0 * Ratio::from_integer(rhs as i128))
    }
}

impl Div<u64> for Money {
    type Output = Money;
    fn div(self, rhs: u64) -> Money {
        Money(self.0 / Ratio::from_integer(rhs as i128))
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::zero(), |a, b| a + b)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl FromStr for Money {
    type Err = MoneyParseError;

    /// Accepts the `Display` form: `"12"` or `"3/10"` (minor units).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || MoneyParseError(s.to_string());
        match s.split_once('/') {
            Some((n, d)) => {
                let n: i128 = n.trim().parse().map_err(|_| err())?;
                let d: i128 = d.trim().parse().map_err(|_| err())?;
                if d == 0 {
                    return Err(err());
                }
                Ok(Money(Ratio::new(n, d)))
            }
            None => Ok(Money(Ratio::from_integer(s.trim().parse().map_err(|_| err())?))),
        }
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn major_decimal_parses_exactly() {
        assert_eq!(Money::from_major_decimal("0.001").unwrap(), Money::from_ratio(1, 10));
        assert_eq!(Money::from_major_decimal("2").unwrap(), Money::from_minor(200));
        assert_eq!(Money::from_major_decimal(".5").unwrap(), Money::from_minor(50));
        assert!(Money::from_major_decimal("1e-3").is_err());
        assert!(Money::from_major_decimal("").is_err());
    }

    #[test]
    fn display_round_trips() {
        for m in [Money::from_ratio(3, 10), Money::from_minor(12), Money::zero(), Money::from_ratio(-7, 3)] {
            assert_eq!(m.to_string().parse::<Money>().unwrap(), m);
        }
    }

    #[test]
    fn render_rounds_half_away_from_zero() {
        assert_eq!(Money::from_ratio(12, 10).render_minor(2), "1.20");
        assert_eq!(Money::from_ratio(1, 8).render_minor(2), "0.13");
        assert_eq!(Money::from_ratio(-1, 8).render_minor(2), "-0.13");
        assert_eq!(Money::from_minor(5).render_minor(0), "5");
    }

    #[test]
    fn serde_uses_string_form() {
        let json = serde_json::to_string(&Money::from_ratio(1, 10)).unwrap();
        assert_eq!(json, "\"1/10\"");
        let back: Money = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Money::from_ratio(1, 10));
    }
}
