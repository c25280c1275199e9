//! Probability arithmetic shared by the exact oracle and the floating-point
//! estimators.
//!
//! The oracle is generic over [`Prob`]; `BigRational` gives exact identities,
//! `f64` gives speed on large trees.

use std::fmt;
use std::ops::{Add, Div, Mul, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Scalar used to carry path and event probabilities.
pub trait Prob:
    Clone
    + Send
    + Sync
    + fmt::Debug
    + PartialEq
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + 'static
{
    /// True when arithmetic is exact.
    const EXACT: bool;

    fn from_rational(r: &BigRational) -> Self;

    fn to_f64(&self) -> f64;

    /// Exact rendering when available (`"p/q"`), otherwise `None`.
    fn exact_string(&self) -> Option<String> {
        None
    }

    fn powi(&self, e: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..e {
            acc = acc * self.clone();
        }
        acc
    }
}

impl Prob for f64 {
    const EXACT: bool = false;

    fn from_rational(r: &BigRational) -> Self {
        rational_to_f64(r)
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn powi(&self, e: u32) -> Self {
        f64::powi(*self, e as i32)
    }
}

impl Prob for BigRational {
    const EXACT: bool = true;

    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }

    fn to_f64(&self) -> f64 {
        rational_to_f64(self)
    }

    fn exact_string(&self) -> Option<String> {
        Some(format_rational(self))
    }
}

/// Correctly rounded enough for reporting: exact for dyadic values that fit.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    if let (Some(n), Some(d)) = (r.numer().to_i64(), r.denom().to_i64()) {
        if n.unsigned_abs() < (1 << 53) && d.unsigned_abs() < (1 << 53) {
            return n as f64 / d as f64;
        }
    }
    // Scale so the quotient keeps 64 significant bits before conversion.
    let num_bits = r.numer().bits() as i64;
    let den_bits = r.denom().bits() as i64;
    let shift = 64 - (num_bits - den_bits);
    let scaled = if shift >= 0 {
        (r.numer() << (shift as usize)) / r.denom()
    } else {
        r.numer() / (r.denom() << ((-shift) as usize))
    };
    scaled.to_f64().unwrap_or(f64::NAN) * 2f64.powi(-(shift as i32))
}

pub fn format_rational(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `"3"`, `"1/3"`, `"0.25"`, `"1e-3"` into an exact rational.
pub fn parse_rational(text: &str) -> Result<BigRational> {
    let s = text.trim();
    if s.is_empty() {
        return Err(Error::Parse("empty probability".into()));
    }
    if let Some((n, d)) = s.split_once('/') {
        let n = BigInt::from_str(n.trim()).map_err(|e| Error::Parse(format!("{s}: {e}")))?;
        let d = BigInt::from_str(d.trim()).map_err(|e| Error::Parse(format!("{s}: {e}")))?;
        if d.is_zero() {
            return Err(Error::Parse(format!("{s}: zero denominator")));
        }
        return Ok(BigRational::new(n, d));
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => {
            let e = s[i + 1..]
                .parse::<i32>()
                .map_err(|e| Error::Parse(format!("{s}: {e}")))?;
            (&s[..i], e)
        }
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(Error::Parse(format!("{s}: no digits")));
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(Error::Parse(format!("{s}: not a number")));
    }
    if exponent.unsigned_abs() > 4096 {
        return Err(Error::Parse(format!("{s}: exponent out of range")));
    }
    let all_digits = format!("{int_part}{frac_part}");
    let numer = BigInt::from_str(if all_digits.is_empty() { "0" } else { &all_digits })
        .map_err(|e| Error::Parse(format!("{s}: {e}")))?;
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = if scale >= 0 {
        BigRational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    if negative {
        value = -value;
    }
    Ok(value)
}

/// A probability as written in a configuration file: a JSON/TOML number or a
/// string such as `"1/3"`. Numbers are taken at their exact binary value.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProbValue(pub BigRational);

impl ProbValue {
    pub fn new(r: BigRational) -> Self {
        ProbValue(r)
    }

    pub fn as_f64(&self) -> f64 {
        rational_to_f64(&self.0)
    }
}

impl From<BigRational> for ProbValue {
    fn from(r: BigRational) -> Self {
        ProbValue(r)
    }
}

impl Serialize for ProbValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(&self.0))
    }
}

impl<'de> Deserialize<'de> for ProbValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Text(String),
        }
        let value = match Raw::deserialize(d)? {
            Raw::Int(i) => BigRational::from_integer(i.into()),
            Raw::Float(f) => BigRational::from_float(f)
                .ok_or_else(|| serde::de::Error::custom("probability must be finite"))?,
            Raw::Text(t) => parse_rational(&t).map_err(serde::de::Error::custom)?,
        };
        if value.is_negative() {
            return Err(serde::de::Error::custom("probability must be nonnegative"));
        }
        Ok(ProbValue(value))
    }
}

/// Neumaier-compensated running sum; order of `add` calls fixes the result.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn parses_common_forms() {
        assert_eq!(parse_rational("1/3").unwrap(), r(1, 3));
        assert_eq!(parse_rational("0.25").unwrap(), r(1, 4));
        assert_eq!(parse_rational("1e-2").unwrap(), r(1, 100));
        assert_eq!(parse_rational("2").unwrap(), r(2, 1));
        assert_eq!(parse_rational(".5").unwrap(), r(1, 2));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn rational_conversion_handles_huge_denominators() {
        let tiny = BigRational::new(1.into(), num_traits::pow(BigInt::from(3), 90));
        let expect = 3f64.powi(-90);
        assert!((rational_to_f64(&tiny) / expect - 1.0).abs() < 1e-14);
        assert_eq!(rational_to_f64(&r(5, 16)), 0.3125);
    }

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-16).abs() < 1e-30);
    }
}
