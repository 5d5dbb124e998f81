use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, One, Zero};

use super::fpa::{round_from_enclosures, round_rational, FpaFormat, FpaValue};
use super::real::{dyadic, BigReal};
use super::BigNumError;

/// Scalar arithmetic with per-operation rounding.
pub trait FloatModel {
    type Value: Clone + Debug;

    fn format(&self) -> FpaFormat;
    /// Correctly rounded value of a real given as increasingly tight enclosures (`2^-p`).
    fn lift_with(&self, produce: &dyn Fn(u64) -> Result<BigReal, BigNumError>) -> Self::Value;
    fn lift_rational(&self, r: &BigRational) -> Self::Value;
    fn add(&self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn sub(&self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn mul(&self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn div(&self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn ln(&self, a: &Self::Value) -> Self::Value;
    fn exp(&self, a: &Self::Value) -> Self::Value;
    /// Exact value of a finite result.
    fn to_rational(&self, a: &Self::Value) -> Option<BigRational>;
    fn to_fpa(&self, a: &Self::Value) -> FpaValue;

    fn powi(&self, a: &Self::Value, n: u32) -> Self::Value {
        let mut acc = self.lift_rational(&BigRational::one());
        for _ in 0..n {
            acc = self.mul(&acc, a);
        }
        acc
    }
}

/// Hardware floats used as a rounding model.
pub trait NativeFloat: Float + Debug {
    const FORMAT: fn() -> FpaFormat;
    fn from_fpa(v: &FpaValue) -> Self;
    fn exact_rational(self) -> Option<BigRational>;
}

impl NativeFloat for f64 {
    const FORMAT: fn() -> FpaFormat = FpaFormat::ieee754_double;

    fn from_fpa(v: &FpaValue) -> f64 {
        if v.is_flagged() {
            return v.to_f64();
        }
        let biased = if v.exponent < v.format.emin() { 0 } else { (v.exponent + 1023) as u64 };
        let bits = ((v.sign < 0) as u64) << 63 | biased << 52 | v.mantissa;
        f64::from_bits(bits)
    }

    fn exact_rational(self) -> Option<BigRational> {
        if !self.is_finite() {
            return None;
        }
        let bits = self.to_bits();
        let neg = bits >> 63 == 1;
        let e = ((bits >> 52) & 0x7ff) as i64;
        let f = bits & ((1u64 << 52) - 1);
        let (m, ex) = if e == 0 { (f, -1074) } else { (f | (1 << 52), e - 1075) };
        let r = dyadic(BigInt::from(m), ex);
        Some(if neg { -r } else { r })
    }
}

impl NativeFloat for f32 {
    const FORMAT: fn() -> FpaFormat = FpaFormat::ieee754_single;

    fn from_fpa(v: &FpaValue) -> f32 {
        if v.is_flagged() {
            return v.to_f64() as f32;
        }
        let biased = if v.exponent < v.format.emin() { 0 } else { (v.exponent + 127) as u32 };
        let bits = ((v.sign < 0) as u32) << 31 | biased << 23 | v.mantissa as u32;
        f32::from_bits(bits)
    }

    fn exact_rational(self) -> Option<BigRational> {
        (self as f64).exact_rational()
    }
}

/// Hardware arithmetic; `ln` and `exp` come from the platform math library.
#[derive(Clone, Copy, Debug, Default)]
pub struct Native<F>(std::marker::PhantomData<F>);

impl<F> Native<F> {
    pub fn new() -> Self {
        Native(std::marker::PhantomData)
    }
}

impl<F: NativeFloat> FloatModel for Native<F> {
    type Value = F;

    fn format(&self) -> FpaFormat {
        (F::FORMAT)()
    }

    fn lift_with(&self, produce: &dyn Fn(u64) -> Result<BigReal, BigNumError>) -> F {
        F::from_fpa(&round_from_enclosures(self.format(), produce))
    }

    fn lift_rational(&self, r: &BigRational) -> F {
        F::from_fpa(&round_rational(r, self.format()))
    }

    fn add(&self, a: &F, b: &F) -> F {
        *a + *b
    }

    fn sub(&self, a: &F, b: &F) -> F {
        *a - *b
    }

    fn mul(&self, a: &F, b: &F) -> F {
        *a * *b
    }

    fn div(&self, a: &F, b: &F) -> F {
        *a / *b
    }

    fn ln(&self, a: &F) -> F {
        a.ln()
    }

    fn exp(&self, a: &F) -> F {
        a.exp()
    }

    fn to_rational(&self, a: &F) -> Option<BigRational> {
        a.exact_rational()
    }

    fn to_fpa(&self, a: &F) -> FpaValue {
        match a.exact_rational() {
            Some(r) if r.is_zero() => FpaValue::zero(self.format()),
            Some(r) => round_rational(&r, self.format()),
            None => {
                let mut fl = super::FpaFlags::default();
                if a.is_nan() {
                    fl.invalid = true;
                } else {
                    fl.overflow = true;
                }
                FpaValue::flagged(self.format(), fl)
            }
        }
    }
}

/// Software emulation of an arbitrary [`FpaFormat`] with correctly rounded `ln`/`exp`.
#[derive(Clone, Copy, Debug)]
pub struct Emulated {
    pub format: FpaFormat,
}

impl FloatModel for Emulated {
    type Value = FpaValue;

    fn format(&self) -> FpaFormat {
        self.format
    }

    fn lift_with(&self, produce: &dyn Fn(u64) -> Result<BigReal, BigNumError>) -> FpaValue {
        round_from_enclosures(self.format, produce)
    }

    fn lift_rational(&self, r: &BigRational) -> FpaValue {
        round_rational(r, self.format)
    }

    fn add(&self, a: &FpaValue, b: &FpaValue) -> FpaValue {
        a.add(b)
    }

    fn sub(&self, a: &FpaValue, b: &FpaValue) -> FpaValue {
        a.sub(b)
    }

    fn mul(&self, a: &FpaValue, b: &FpaValue) -> FpaValue {
        a.mul(b)
    }

    fn div(&self, a: &FpaValue, b: &FpaValue) -> FpaValue {
        a.div(b)
    }

    fn ln(&self, a: &FpaValue) -> FpaValue {
        a.ln()
    }

    fn exp(&self, a: &FpaValue) -> FpaValue {
        a.exp()
    }

    fn to_rational(&self, a: &FpaValue) -> Option<BigRational> {
        a.to_rational()
    }

    fn to_fpa(&self, a: &FpaValue) -> FpaValue {
        *a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn native_and_emulated_agree_on_basic_ops() {
        let n = Native::<f64>::new();
        let e = Emulated { format: FpaFormat::ieee754_double() };
        let vals = [1.0 / 3.0, 2.5, 1e-300, 7.0e200, 0.1];
        for &a in &vals {
            for &b in &vals {
                let (ea, eb) = (e.lift_rational(&a.exact_rational().unwrap()), e.lift_rational(&b.exact_rational().unwrap()));
                assert_eq!(f64::from_fpa(&e.add(&ea, &eb)), n.add(&a, &b));
                assert_eq!(f64::from_fpa(&e.mul(&ea, &eb)), n.mul(&a, &b));
                assert_eq!(f64::from_fpa(&e.div(&ea, &eb)), n.div(&a, &b));
            }
        }
    }

    #[test]
    fn f64_round_trip_through_fpa() {
        let n = Native::<f64>::new();
        for &x in &[0.0, -1.5, 5e-324, f64::MAX, 1.0 / 7.0] {
            assert_eq!(f64::from_fpa(&n.to_fpa(&x)), x);
        }
    }

    #[test]
    fn f32_lift() {
        let n = Native::<f32>::new();
        let third = BigRational::new(1.into(), 3.into());
        assert_eq!(n.lift_rational(&third), 1.0f32 / 3.0);
    }
}
