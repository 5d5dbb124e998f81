use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::real::{self, dyadic, floor_log2, pow2, round_half_even, BigReal};
use super::BigNumError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FpaMode {
    /// One sign bit and `(phi - 1) / 2` bits each for exponent and mantissa.
    Symmetric { phi: u32 },
    Explicit,
    Ieee754Double,
}

/// A binary floating-point format with round-to-nearest, ties-to-even.
///
/// Exponents use bias `2^(e-1) - 1`; the top and bottom biased codes are not
/// reserved, so the normal range is `[1 - bias, bias]` (both zero when `e = 1`).
/// IEEE presets additionally enable subnormals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FpaFormat {
    pub exp_bits: u32,
    pub mant_bits: u32,
    pub mode: FpaMode,
    pub subnormals: bool,
}

impl FpaFormat {
    pub fn symmetric(phi: u32) -> Result<Self, BigNumError> {
        if phi < 3 || phi.is_multiple_of(2) {
            return Err(BigNumError::InvalidFormat(format!("symmetric width must be odd and >= 3, got {phi}")));
        }
        let h = (phi - 1) / 2;
        if h > 30 {
            return Err(BigNumError::InvalidFormat(format!("width {phi} too large")));
        }
        Ok(FpaFormat { exp_bits: h, mant_bits: h, mode: FpaMode::Symmetric { phi }, subnormals: false })
    }

    pub fn explicit(exp_bits: u32, mant_bits: u32) -> Result<Self, BigNumError> {
        if exp_bits == 0 || mant_bits == 0 || exp_bits > 30 || mant_bits > 4096 {
            return Err(BigNumError::InvalidFormat(format!("e={exp_bits}, m={mant_bits}")));
        }
        Ok(FpaFormat { exp_bits, mant_bits, mode: FpaMode::Explicit, subnormals: false })
    }

    pub fn ieee754_double() -> Self {
        FpaFormat { exp_bits: 11, mant_bits: 52, mode: FpaMode::Ieee754Double, subnormals: true }
    }

    /// IEEE binary32 layout, expressed as an explicit format with subnormals.
    pub fn ieee754_single() -> Self {
        FpaFormat { exp_bits: 8, mant_bits: 23, mode: FpaMode::Explicit, subnormals: true }
    }

    pub fn with_subnormals(mut self, on: bool) -> Self {
        self.subnormals = on;
        self
    }

    pub fn width(&self) -> u32 {
        1 + self.exp_bits + self.mant_bits
    }

    pub fn emax(&self) -> i64 {
        (1i64 << (self.exp_bits - 1)) - 1
    }

    pub fn emin(&self) -> i64 {
        if self.exp_bits == 1 {
            0
        } else {
            1 - self.emax()
        }
    }

    pub fn max_finite(&self) -> BigRational {
        let m = self.mant_bits as i64;
        dyadic((BigInt::one() << (m as usize + 1)) - 1, self.emax() - m)
    }

    pub fn min_positive(&self) -> BigRational {
        if self.subnormals {
            pow2(self.emin() - self.mant_bits as i64)
        } else {
            pow2(self.emin())
        }
    }

    /// Every finite non-negative value of the format, ascending. Intended for small formats.
    pub fn enumerate_nonneg(&self) -> Vec<BigRational> {
        let m = self.mant_bits as i64;
        let mut out = vec![BigRational::zero()];
        if self.subnormals {
            for f in 1..(1i64 << m) {
                out.push(dyadic(BigInt::from(f), self.emin() - m));
            }
        }
        for e in self.emin()..=self.emax() {
            for f in 0..(1i64 << m) {
                out.push(dyadic(BigInt::from((1i64 << m) + f), e - m));
            }
        }
        out
    }

    /// Half the spacing of representable values around `x`.
    pub fn half_ulp(&self, x: &BigRational) -> BigRational {
        let m = self.mant_bits as i64;
        let e = if x.is_zero() { self.emin() } else { floor_log2(x).max(self.emin()) };
        pow2(e - m - 1)
    }
}

impl fmt::Display for FpaFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            FpaMode::Symmetric { phi } => write!(f, "fpa({phi})"),
            FpaMode::Ieee754Double => write!(f, "ieee754-double"),
            FpaMode::Explicit => write!(f, "fpa(e={},m={})", self.exp_bits, self.mant_bits),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FpaFlags {
    pub overflow: bool,
    pub underflow: bool,
    pub invalid: bool,
}

impl FpaFlags {
    pub fn any(&self) -> bool {
        self.overflow || self.underflow || self.invalid
    }

    fn union(self, o: FpaFlags) -> FpaFlags {
        FpaFlags {
            overflow: self.overflow || o.overflow,
            underflow: self.underflow || o.underflow,
            invalid: self.invalid || o.invalid,
        }
    }
}

/// A value of an [`FpaFormat`].
///
/// Normal values have `exponent` in `[emin, emax]` and an implicit leading bit;
/// zero and subnormals use `exponent = emin - 1`. A flagged value has no numeric payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FpaValue {
    pub format: FpaFormat,
    pub sign: i8,
    pub exponent: i64,
    pub mantissa: u64,
    pub flags: FpaFlags,
}

impl FpaValue {
    pub fn zero(format: FpaFormat) -> Self {
        FpaValue { format, sign: 1, exponent: format.emin() - 1, mantissa: 0, flags: FpaFlags::default() }
    }

    pub fn flagged(format: FpaFormat, flags: FpaFlags) -> Self {
        FpaValue { flags, ..FpaValue::zero(format) }
    }

    pub fn is_flagged(&self) -> bool {
        self.flags.any()
    }

    pub fn is_zero(&self) -> bool {
        !self.is_flagged() && self.mantissa == 0 && self.exponent < self.format.emin()
    }

    /// Exact value, or `None` for a flagged value.
    pub fn to_rational(&self) -> Option<BigRational> {
        if self.is_flagged() {
            return None;
        }
        let m = self.format.mant_bits as i64;
        let emin = self.format.emin();
        let v = if self.exponent < emin {
            dyadic(BigInt::from(self.mantissa), emin - m)
        } else {
            dyadic((BigInt::one() << (m as usize)) + BigInt::from(self.mantissa), self.exponent - m)
        };
        Some(if self.sign < 0 { -v } else { v })
    }

    pub fn to_f64(&self) -> f64 {
        match self.to_rational() {
            Some(r) => real::rat_to_f64(&r),
            None if self.flags.invalid => f64::NAN,
            None if self.flags.overflow => self.sign as f64 * f64::INFINITY,
            None => 0.0,
        }
    }

    pub fn neg(&self) -> Self {
        FpaValue { sign: -self.sign, ..*self }
    }

    fn binary(
        &self,
        o: &FpaValue,
        f: impl FnOnce(&BigRational, &BigRational) -> Result<BigRational, FpaFlags>,
    ) -> FpaValue {
        let fmt = self.format;
        match (self.to_rational(), o.to_rational()) {
            (Some(a), Some(b)) => match f(&a, &b) {
                Ok(r) => round_rational(&r, fmt),
                Err(fl) => FpaValue::flagged(fmt, fl),
            },
            _ => FpaValue::flagged(fmt, self.flags.union(o.flags)),
        }
    }

    pub fn add(&self, o: &FpaValue) -> FpaValue {
        self.binary(o, |a, b| Ok(a + b))
    }

    pub fn sub(&self, o: &FpaValue) -> FpaValue {
        self.binary(o, |a, b| Ok(a - b))
    }

    pub fn mul(&self, o: &FpaValue) -> FpaValue {
        self.binary(o, |a, b| Ok(a * b))
    }

    pub fn div(&self, o: &FpaValue) -> FpaValue {
        self.binary(o, |a, b| {
            if b.is_zero() {
                Err(if a.is_zero() {
                    FpaFlags { invalid: true, ..Default::default() }
                } else {
                    FpaFlags { overflow: true, ..Default::default() }
                })
            } else {
                Ok(a / b)
            }
        })
    }

    /// Correctly rounded natural logarithm.
    pub fn ln(&self) -> FpaValue {
        let fmt = self.format;
        let Some(a) = self.to_rational() else {
            return FpaValue::flagged(fmt, self.flags);
        };
        if a.is_negative() {
            return FpaValue::flagged(fmt, FpaFlags { invalid: true, ..Default::default() });
        }
        if a.is_zero() {
            return FpaValue::flagged(fmt, FpaFlags { overflow: true, ..Default::default() });
        }
        let x = BigReal::exact(a);
        round_from_enclosures(fmt, |p| real::ln_bits(&x, p))
    }

    /// Correctly rounded exponential.
    pub fn exp(&self) -> FpaValue {
        let fmt = self.format;
        let Some(a) = self.to_rational() else {
            return FpaValue::flagged(fmt, self.flags);
        };
        let af = real::rat_to_f64(&a) * std::f64::consts::LOG2_E;
        if af > (fmt.emax() + 2) as f64 {
            return FpaValue::flagged(fmt, FpaFlags { overflow: true, ..Default::default() });
        }
        let floor = fmt.emin() - fmt.mant_bits as i64 - 2;
        if af < floor as f64 {
            return FpaValue::flagged(fmt, FpaFlags { underflow: true, ..Default::default() });
        }
        let x = BigReal::exact(a);
        round_from_enclosures(fmt, |p| real::exp_bits(&x, p))
    }

    /// Integer power by repeated rounded multiplication.
    pub fn powi(&self, n: u32) -> FpaValue {
        let mut acc = round_rational(&BigRational::one(), self.format);
        for _ in 0..n {
            acc = acc.mul(self);
        }
        acc
    }

    pub fn cmp_value(&self, o: &FpaValue) -> Option<Ordering> {
        Some(self.to_rational()?.cmp(&o.to_rational()?))
    }
}

/// Round a sequence of ever-tighter enclosures until the rounding is unambiguous.
pub fn round_from_enclosures(
    fmt: FpaFormat,
    produce: impl Fn(u64) -> Result<BigReal, BigNumError>,
) -> FpaValue {
    let mut p = fmt.mant_bits as u64 + 32 + (-(fmt.emin() - fmt.mant_bits as i64)).max(0) as u64;
    for _ in 0..12 {
        match produce(p) {
            Ok(x) => match round_to_fpa(&x, fmt) {
                Ok(v) => return v,
                Err(_) => p *= 2,
            },
            Err(BigNumError::OverflowBudget { .. }) => {
                return FpaValue::flagged(fmt, FpaFlags { overflow: true, ..Default::default() })
            }
            Err(_) => return FpaValue::flagged(fmt, FpaFlags { invalid: true, ..Default::default() }),
        }
    }
    FpaValue::flagged(fmt, FpaFlags { invalid: true, ..Default::default() })
}

/// Round an exact rational to `fmt`.
pub(crate) fn round_rational(v: &BigRational, fmt: FpaFormat) -> FpaValue {
    if v.is_zero() {
        return FpaValue::zero(fmt);
    }
    let sign: i8 = if v.is_negative() { -1 } else { 1 };
    let a = v.abs();
    let m = fmt.mant_bits as i64;
    let emin = fmt.emin();
    let e = floor_log2(&a);
    let underflow = FpaValue::flagged(fmt, FpaFlags { underflow: true, ..Default::default() });
    if e < emin && !fmt.subnormals {
        return underflow;
    }
    let q = e.max(emin) - m;
    let mut n = round_half_even(&(&a * pow2(-q)));
    let mut e_out = e.max(emin);
    let full = BigInt::one() << ((m + 1) as usize);
    if n >= full {
        n >>= 1usize;
        e_out += 1;
    }
    if n.is_zero() {
        return underflow;
    }
    if e_out > fmt.emax() {
        return FpaValue::flagged(fmt, FpaFlags { overflow: true, ..Default::default() });
    }
    let hidden = BigInt::one() << (m as usize);
    let (exponent, mantissa) = if n >= hidden { (e_out, n - hidden) } else { (emin - 1, n) };
    FpaValue {
        format: fmt,
        sign,
        exponent,
        mantissa: mantissa.to_u64().expect("mantissa fits in 64 bits"),
        flags: FpaFlags::default(),
    }
}

/// Round-to-nearest-even of an enclosure; fails when its endpoints round differently.
pub fn round_to_fpa(x: &BigReal, fmt: FpaFormat) -> Result<FpaValue, BigNumError> {
    if fmt.mant_bits > 63 {
        return Err(BigNumError::InvalidFormat("mantissa wider than 63 bits".into()));
    }
    if x.is_exact() {
        return Ok(round_rational(x.value(), fmt));
    }
    let lo = round_rational(&x.lower(), fmt);
    let hi = round_rational(&x.upper(), fmt);
    let same = lo == hi || (lo.is_zero() && hi.is_zero());
    if same {
        Ok(round_rational(x.value(), fmt))
    } else {
        Err(BigNumError::AmbiguousRounding)
    }
}

/// Smallest `phi` with `phi >= max(2 log2 tau + 5, -2 log2 tau - 1)`.
pub fn fpa_separability_bound(tau: &BigRational) -> i64 {
    assert!(tau.is_positive(), "tau must be positive");
    let t2 = tau * tau;
    // smallest phi with 2^(phi-5) >= tau^2
    let mut a = floor_log2(&t2) + 5;
    while pow2(a - 5) < t2 {
        a += 1;
    }
    while pow2(a - 6) >= t2 {
        a -= 1;
    }
    // smallest phi with 2^(phi+1) * tau^2 >= 1
    let mut b = -floor_log2(&t2) - 1;
    while pow2(b + 1) * &t2 < BigRational::one() {
        b += 1;
    }
    while pow2(b) * &t2 >= BigRational::one() {
        b -= 1;
    }
    a.max(b)
}
