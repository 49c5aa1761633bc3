//! Fixed-point money.
//!
//! Payoffs mix integer prices with fractional outside options (1.6), so all
//! realized amounts are kept as integer thousandths. Sums and identities over
//! them are exact; expected values are computed in `f64` via [`Money::as_f64`].

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Number of fixed-point units per currency unit.
pub const SCALE: i64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_units(units: i64) -> Self {
        Money(units * SCALE)
    }

    pub const fn from_milli(milli: i64) -> Self {
        Money(milli)
    }

    /// Converts a decimal amount, rejecting non-finite values and anything
    /// finer than a thousandth.
    pub fn from_f64(value: f64) -> Option<Self> {
        if !value.is_finite() {
            return None;
        }
        let scaled = value * SCALE as f64;
        if scaled.abs() > (i64::MAX / 4) as f64 {
            return None;
        }
        let rounded = scaled.round();
        if (scaled - rounded).abs() > 1e-6 * scaled.abs().max(1.0) {
            return None;
        }
        Some(Money(rounded as i64))
    }

    pub const fn milli(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }
}

impl From<u32> for Money {
    fn from(units: u32) -> Self {
        Money::from_units(units as i64)
    }
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

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(-self.0)
    }
}

impl Mul<i64> for Money {
    type Output = Money;
    fn mul(self, rhs: i64) -> Money {
        Money(self.0 * rhs)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.abs();
        let whole = abs / SCALE;
        let frac = abs % SCALE;
        if frac == 0 {
            write!(f, "{sign}{whole}")
        } else {
            let s = format!("{frac:03}");
            write!(f, "{sign}{whole}.{}", s.trim_end_matches('0'))
        }
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0 % SCALE == 0 {
            serializer.serialize_i64(self.0 / SCALE)
        } else {
            serializer.serialize_f64(self.as_f64())
        }
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Money::from_f64(value).ok_or_else(|| {
            serde::de::Error::custom(format!("money amount {value} must be finite with at most three decimals"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimal_outside_option() {
        assert_eq!(Money::from_f64(1.6), Some(Money::from_milli(1600)));
        assert_eq!(Money::from_f64(f64::NAN), None);
        assert_eq!(Money::from_f64(f64::INFINITY), None);
        assert_eq!(Money::from_f64(0.0001), None);
    }

    #[test]
    fn display_trims_trailing_zeros() {
        assert_eq!(Money::from_milli(1600).to_string(), "1.6");
        assert_eq!(Money::from_units(-7).to_string(), "-7");
        assert_eq!(Money::from_milli(-250).to_string(), "-0.25");
    }

    #[test]
    fn json_roundtrip_keeps_integers_integral() {
        let json = serde_json::to_string(&[Money::from_units(3), Money::from_milli(1600)]).unwrap();
        assert_eq!(json, "[3,1.6]");
        let back: Vec<Money> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![Money::from_units(3), Money::from_milli(1600)]);
    }

    #[test]
    fn repeated_outside_options_sum_exactly() {
        let s: Money = std::iter::repeat_n(Money::from_milli(1600), 4).sum();
        assert_eq!(s, Money::from_milli(6400));
    }
}
