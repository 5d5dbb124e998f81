//! Arbitrary-precision reals with explicit error bounds, and finite floating-point emulation.

mod fpa;
mod model;
mod real;

pub use fpa::{fpa_separability_bound, round_from_enclosures, round_to_fpa, FpaFlags, FpaFormat, FpaMode, FpaValue};
pub use model::{Emulated, FloatModel, Native, NativeFloat};
pub use real::{
    bits_for, exp, exp_bits, exp_with_budget, ln, ln2, ln3, ln_bits, pow3, pow_real, rational_to_decimal,
    BigReal, DEFAULT_MAX_BITS,
};
pub use real::{dyadic, floor_log2, pow2};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BigNumError {
    #[error("argument is not certifiably positive")]
    NonPositiveArgument,
    #[error("result needs about {bits} bits, beyond the digit budget")]
    OverflowBudget { bits: u64 },
    #[error("error bound too wide to round unambiguously")]
    AmbiguousRounding,
    #[error("divisor interval contains zero")]
    DivisionByZero,
    #[error("invalid floating-point format: {0}")]
    InvalidFormat(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse {0:?} as an exact rational")]
pub struct ParseRationalError(pub String);

/// Parse `p/q`, a decimal such as `-0.125`, or scientific notation such as `1e-4` exactly.
pub fn parse_rational(s: &str) -> Result<BigRational, ParseRationalError> {
    let t = s.trim();
    let bad = || ParseRationalError(s.to_string());
    if t.is_empty() {
        return Err(bad());
    }
    if let Some((n, d)) = t.split_once('/') {
        let n: BigRational = parse_rational(n)?;
        let d: BigRational = parse_rational(d)?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(n / d);
    }
    let (mant, exp) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (t, 0),
    };
    let (neg, body) = match mant.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mant.strip_prefix('+').unwrap_or(mant)),
    };
    let (ip, fp) = body.split_once('.').unwrap_or((body, ""));
    if ip.is_empty() && fp.is_empty() {
        return Err(bad());
    }
    if !ip.chars().chain(fp.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{ip}{fp}");
    let m: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().map_err(|_| bad())? };
    let scale = exp - fp.len() as i32;
    let ten = BigInt::from(10u32);
    let mut r = BigRational::from_integer(m);
    if scale >= 0 {
        r *= BigRational::from_integer(ten.pow(scale as u32));
    } else {
        r /= BigRational::from_integer(ten.pow((-scale) as u32));
    }
    Ok(if neg { -r } else { r })
}

/// Render a rational as `p/q` (or `p` when integral).
pub fn rational_to_string(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn parses_forms() {
        assert_eq!(parse_rational("3/4").unwrap(), q(3, 4));
        assert_eq!(parse_rational("-0.125").unwrap(), q(-1, 8));
        assert_eq!(parse_rational("1e-4").unwrap(), q(1, 10_000));
        assert_eq!(parse_rational("2.5E1").unwrap(), q(25, 1));
        assert_eq!(parse_rational(".5").unwrap(), q(1, 2));
        assert!(parse_rational("pi").is_err());
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn renders_rationals() {
        assert_eq!(rational_to_string(&q(6, 4)), "3/2");
        assert_eq!(rational_to_string(&q(-7, 1)), "-7");
    }
}
