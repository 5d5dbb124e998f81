use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Mutex;

use num_bigint::BigInt;
use num_integer::{Integer, Roots};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::BigNumError;

/// Largest result magnitude, in bits, that `exp` and `pow3` will materialise.
pub const DEFAULT_MAX_BITS: u64 = 1 << 26;

/// A real number carried as a rational approximation plus an absolute error bound.
///
/// The true value lies in `[value - err, value + err]`.
#[derive(Clone, PartialEq, Eq)]
pub struct BigReal {
    value: BigRational,
    err: BigRational,
}

impl fmt::Debug for BigReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6e} ± {:.1e}", self.to_f64(), rat_to_f64(&self.err))
    }
}

impl fmt::Display for BigReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_decimal(20))
    }
}

// ---------------------------------------------------------------------------
// dyadic helpers

pub fn pow2(e: i64) -> BigRational {
    if e >= 0 {
        BigRational::from_integer(BigInt::one() << (e as usize))
    } else {
        BigRational::new_raw(BigInt::one(), BigInt::one() << ((-e) as usize))
    }
}

/// `m * 2^e` as a reduced rational.
pub fn dyadic(m: BigInt, e: i64) -> BigRational {
    if m.is_zero() {
        return BigRational::zero();
    }
    if e >= 0 {
        return BigRational::from_integer(m << (e as usize));
    }
    let tz = m.trailing_zeros().unwrap_or(0).min((-e) as u64);
    let m = m >> (tz as usize);
    let shift = (-e) as u64 - tz;
    BigRational::new_raw(m, BigInt::one() << (shift as usize))
}

fn denom_log2(r: &BigRational) -> Option<u64> {
    let d = r.denom();
    let tz = d.trailing_zeros()?;
    if d.bits() == tz + 1 {
        Some(tz)
    } else {
        None
    }
}

pub(crate) fn qadd(a: &BigRational, b: &BigRational) -> BigRational {
    if a.is_zero() {
        return b.clone();
    }
    if b.is_zero() {
        return a.clone();
    }
    match (denom_log2(a), denom_log2(b)) {
        (Some(sa), Some(sb)) => {
            let s = sa.max(sb);
            let n = (a.numer() << ((s - sa) as usize)) + (b.numer() << ((s - sb) as usize));
            dyadic(n, -(s as i64))
        }
        _ => a + b,
    }
}

pub(crate) fn qneg(a: &BigRational) -> BigRational {
    BigRational::new_raw(-a.numer(), a.denom().clone())
}

pub(crate) fn qsub(a: &BigRational, b: &BigRational) -> BigRational {
    qadd(a, &qneg(b))
}

pub(crate) fn qmul(a: &BigRational, b: &BigRational) -> BigRational {
    if a.is_zero() || b.is_zero() {
        return BigRational::zero();
    }
    match (denom_log2(a), denom_log2(b)) {
        (Some(sa), Some(sb)) => dyadic(a.numer() * b.numer(), -((sa + sb) as i64)),
        _ => a * b,
    }
}

/// `a / d` for a machine integer `d`; only a small gcd is needed to stay reduced.
fn qdiv_small(a: &BigRational, d: i64) -> BigRational {
    if a.is_zero() {
        return BigRational::zero();
    }
    let dm = BigInt::from(d.unsigned_abs());
    let g = (a.numer() % &dm).gcd(&dm);
    let (num, den) = (a.numer() / &g, a.denom() * (dm / &g));
    let num = if d < 0 { -num } else { num };
    BigRational::new_raw(num, den)
}

fn qabs(a: &BigRational) -> BigRational {
    if a.is_negative() {
        qneg(a)
    } else {
        a.clone()
    }
}

/// Round a non-negative rational up to a dyadic with at most ~40 significant bits.
fn round_up_err(e: BigRational) -> BigRational {
    if e.is_zero() {
        return e;
    }
    debug_assert!(!e.is_negative());
    if denom_log2(&e).is_some() && e.numer().bits() <= 64 {
        return e;
    }
    let lb = e.numer().bits() as i64 - e.denom().bits() as i64;
    let s = 40 - lb;
    let (n, d) = if s >= 0 {
        (e.numer() << (s as usize), e.denom().clone())
    } else {
        (e.numer().clone(), e.denom() << ((-s) as usize))
    };
    let (q, r) = n.div_rem(&d);
    let q = if r.is_zero() { q } else { q + 1 };
    dyadic(q, -s)
}

/// Smallest `p` with `2^-p <= eps` (0 when `eps >= 1`).
pub fn bits_for(eps: &BigRational) -> u64 {
    assert!(eps.is_positive(), "error budget must be positive");
    let lb = eps.denom().bits() as i64 - eps.numer().bits() as i64 + 1;
    lb.max(0) as u64
}

pub(crate) fn rat_to_f64(r: &BigRational) -> f64 {
    if let Some(f) = r.to_f64() {
        if f.is_finite() {
            return f;
        }
    }
    // fall back through bit lengths for very large or very small ratios
    let nb = r.numer().bits() as i64;
    let db = r.denom().bits() as i64;
    let shift = nb - db;
    let sign = if r.is_negative() { -1.0 } else { 1.0 };
    if shift > 1100 {
        return sign * f64::INFINITY;
    }
    if shift < -1100 {
        return sign * 0.0;
    }
    let scaled = dyadic(BigInt::one(), 60 - shift) * r;
    let f = scaled.to_f64().unwrap_or(0.0);
    f * 2f64.powi((shift - 60) as i32)
}

/// `floor(log2 |r|)` for a nonzero rational.
pub fn floor_log2(r: &BigRational) -> i64 {
    let n = r.numer().abs();
    let d = r.denom();
    let mut k = n.bits() as i64 - d.bits() as i64;
    // 2^k <= n/d < 2^(k+2) holds up to one step either way
    loop {
        let lhs = if k >= 0 { d << (k as usize) } else { d.clone() };
        let rhs = if k >= 0 { n.clone() } else { &n << ((-k) as usize) };
        if lhs > rhs {
            k -= 1;
            continue;
        }
        let lhs1 = if k + 1 >= 0 { d << ((k + 1) as usize) } else { d.clone() };
        let rhs1 = if k + 1 >= 0 { n.clone() } else { &n << ((-(k + 1)) as usize) };
        if lhs1 <= rhs1 {
            k += 1;
            continue;
        }
        return k;
    }
}

// ---------------------------------------------------------------------------
// BigReal

impl BigReal {
    pub fn exact(value: BigRational) -> Self {
        BigReal { value, err: BigRational::zero() }
    }

    pub fn from_int(i: i64) -> Self {
        Self::exact(BigRational::from_integer(BigInt::from(i)))
    }

    pub fn zero() -> Self {
        Self::exact(BigRational::zero())
    }

    pub fn one() -> Self {
        Self::from_int(1)
    }

    pub fn ratio(n: i64, d: i64) -> Self {
        Self::exact(BigRational::new(n.into(), d.into()))
    }

    /// Build from a value and an error bound; the bound is rounded up to a short dyadic.
    pub fn with_err(value: BigRational, err: BigRational) -> Self {
        assert!(!err.is_negative(), "error bound must be non-negative");
        BigReal { value, err: round_up_err(err) }
    }

    pub fn value(&self) -> &BigRational {
        &self.value
    }

    pub fn err(&self) -> &BigRational {
        &self.err
    }

    pub fn is_exact(&self) -> bool {
        self.err.is_zero()
    }

    pub fn lower(&self) -> BigRational {
        qsub(&self.value, &self.err)
    }

    pub fn upper(&self) -> BigRational {
        qadd(&self.value, &self.err)
    }

    pub fn contains(&self, x: &BigRational) -> bool {
        &self.lower() <= x && x <= &self.upper()
    }

    pub fn is_certainly_positive(&self) -> bool {
        self.lower().is_positive()
    }

    pub fn is_certainly_negative(&self) -> bool {
        self.upper().is_negative()
    }

    /// Ordering that holds for every point of both intervals, if any.
    pub fn certain_cmp(&self, other: &BigReal) -> Option<Ordering> {
        if self.upper() < other.lower() {
            Some(Ordering::Less)
        } else if self.lower() > other.upper() {
            Some(Ordering::Greater)
        } else if self.is_exact() && other.is_exact() && self.value == other.value {
            Some(Ordering::Equal)
        } else {
            None
        }
    }

    pub fn abs(&self) -> Self {
        BigReal { value: qabs(&self.value), err: self.err.clone() }
    }

    pub fn add_err(&self, extra: &BigRational) -> Self {
        BigReal::with_err(self.value.clone(), qadd(&self.err, extra))
    }

    pub fn mul_rat(&self, r: &BigRational) -> Self {
        BigReal::with_err(qmul(&self.value, r), qmul(&self.err, &qabs(r)))
    }

    pub fn div_int(&self, d: i64) -> Self {
        assert!(d != 0);
        BigReal::with_err(qdiv_small(&self.value, d), qdiv_small(&self.err, d.abs()))
    }

    pub fn sqr(&self) -> Self {
        self * self
    }

    pub fn powi(&self, n: u32) -> Self {
        let mut acc = BigReal::one();
        let mut base = self.clone();
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                acc = &acc * &base;
            }
            n >>= 1;
            if n > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    pub fn recip(&self) -> Result<Self, BigNumError> {
        BigReal::one().div(self)
    }

    pub fn div(&self, other: &BigReal) -> Result<Self, BigNumError> {
        let bl = qabs(&other.value);
        if bl <= other.err || bl.is_zero() {
            return Err(BigNumError::DivisionByZero);
        }
        let value = &self.value / &other.value;
        if self.is_exact() && other.is_exact() {
            return Ok(BigReal::exact(value));
        }
        // |a'/b' - a/b| <= (ea|b| + |a|eb) / (|b| (|b| - eb))
        let num = qadd(&qmul(&self.err, &bl), &qmul(&qabs(&self.value), &other.err));
        let den = qmul(&bl, &qsub(&bl, &other.err));
        Ok(BigReal::with_err(value, num / den))
    }

    /// Round the carried value to a multiple of `2^-p`, folding the rounding into `err`.
    pub fn round_bits(&self, p: u64) -> Self {
        if let Some(s) = denom_log2(&self.value) {
            if s <= p {
                return self.clone();
            }
        }
        let scaled = &self.value * pow2(p as i64);
        let m = round_half_even(&scaled);
        let v = dyadic(m, -(p as i64));
        let delta = qabs(&qsub(&v, &self.value));
        BigReal::with_err(v, qadd(&self.err, &delta))
    }

    /// Round so the total error stays within `eps` when the current error allows.
    pub fn round_to(&self, eps: &BigRational) -> Self {
        self.round_bits(bits_for(eps) + 2)
    }

    pub fn to_f64(&self) -> f64 {
        rat_to_f64(&self.value)
    }

    /// Fixed-point decimal rendering of the carried value with `digits` fraction digits.
    pub fn to_decimal(&self, digits: usize) -> String {
        rational_to_decimal(&self.value, digits)
    }
}

pub(crate) fn round_half_even(r: &BigRational) -> BigInt {
    let fl = r.floor();
    let frac = r - &fl;
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let base = fl.to_integer();
    match frac.cmp(&half) {
        Ordering::Less => base,
        Ordering::Greater => base + 1,
        Ordering::Equal => {
            if base.is_even() {
                base
            } else {
                base + 1
            }
        }
    }
}

pub fn rational_to_decimal(v: &BigRational, digits: usize) -> String {
    let scale = BigInt::from(10u32).pow(digits as u32);
    let scaled = v * BigRational::from_integer(scale.clone());
    let m = round_half_even(&scaled);
    let neg = m.is_negative();
    let m = m.abs();
    let (ip, fp) = m.div_rem(&scale);
    let mut s = String::new();
    if neg {
        s.push('-');
    }
    s.push_str(&ip.to_string());
    if digits > 0 {
        let f = fp.to_string();
        s.push('.');
        for _ in f.len()..digits {
            s.push('0');
        }
        s.push_str(&f);
    }
    s
}

impl Add for &BigReal {
    type Output = BigReal;
    fn add(self, o: &BigReal) -> BigReal {
        BigReal { value: qadd(&self.value, &o.value), err: round_up_err(qadd(&self.err, &o.err)) }
    }
}

impl Sub for &BigReal {
    type Output = BigReal;
    fn sub(self, o: &BigReal) -> BigReal {
        BigReal { value: qsub(&self.value, &o.value), err: round_up_err(qadd(&self.err, &o.err)) }
    }
}

impl Mul for &BigReal {
    type Output = BigReal;
    fn mul(self, o: &BigReal) -> BigReal {
        let value = qmul(&self.value, &o.value);
        if self.is_exact() && o.is_exact() {
            return BigReal::exact(value);
        }
        let e = qadd(
            &qadd(&qmul(&qabs(&self.value), &o.err), &qmul(&qabs(&o.value), &self.err)),
            &qmul(&self.err, &o.err),
        );
        BigReal::with_err(value, e)
    }
}

impl Neg for &BigReal {
    type Output = BigReal;
    fn neg(self) -> BigReal {
        BigReal { value: qneg(&self.value), err: self.err.clone() }
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for BigReal {
            type Output = BigReal;
            fn $m(self, o: BigReal) -> BigReal {
                (&self).$m(&o)
            }
        }
        impl $tr<&BigReal> for BigReal {
            type Output = BigReal;
            fn $m(self, o: &BigReal) -> BigReal {
                (&self).$m(o)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for BigReal {
    type Output = BigReal;
    fn neg(self) -> BigReal {
        -&self
    }
}

impl From<BigRational> for BigReal {
    fn from(r: BigRational) -> Self {
        BigReal::exact(r)
    }
}

impl From<i64> for BigReal {
    fn from(i: i64) -> Self {
        BigReal::from_int(i)
    }
}

// ---------------------------------------------------------------------------
// constants

/// Fixed-point `atanh(1/n)` at scale `2^w`; returns the value and an ulp error bound.
fn atanh_inv_fixed(n: u64, w: u64) -> (BigInt, u64) {
    let n2 = BigInt::from(n * n);
    let mut p = (BigInt::one() << (w as usize)) / BigInt::from(n);
    let mut sum = p.clone();
    let mut j: u64 = 1;
    loop {
        p = &p / &n2;
        if p.is_zero() {
            break;
        }
        sum += &p / BigInt::from(2 * j + 1);
        j += 1;
    }
    (sum, 3 * j + 3)
}

struct ConstCache {
    w: u64,
    ln2: BigInt,
    ln3: BigInt,
    err_ulps: u64,
}

static CONSTS: Mutex<Option<ConstCache>> = Mutex::new(None);

fn constants(p: u64) -> (BigReal, BigReal) {
    let mut guard = CONSTS.lock().unwrap_or_else(|e| e.into_inner());
    let need = p + 8;
    let fresh = !matches!(guard.as_ref(), Some(c) if c.w >= need + bitlen(c.err_ulps) + 2);
    if fresh {
        let prev = guard.as_ref().map(|c| c.w).unwrap_or(0);
        let w = (need + 64).max(prev * 2);
        let (a3, e3) = atanh_inv_fixed(3, w);
        let (a5, e5) = atanh_inv_fixed(5, w);
        let ln2 = &a3 << 1usize;
        let ln3 = &ln2 + (&a5 << 1usize);
        // ln2 error 2*e3, ln3 error 2*e3 + 2*e5
        *guard = Some(ConstCache { w, ln2, ln3, err_ulps: 2 * e3 + 2 * e5 });
    }
    let c = guard.as_ref().expect("constant cache populated");
    let err = dyadic(BigInt::from(c.err_ulps), -(c.w as i64));
    let l2 = BigReal::with_err(dyadic(c.ln2.clone(), -(c.w as i64)), err.clone());
    let l3 = BigReal::with_err(dyadic(c.ln3.clone(), -(c.w as i64)), err);
    (l2.round_bits(p + 2), l3.round_bits(p + 2))
}

/// `ln 2` with absolute error at most `2^-p`.
pub fn ln2(p: u64) -> BigReal {
    constants(p).0
}

/// `ln 3` with absolute error at most `2^-p`.
pub fn ln3(p: u64) -> BigReal {
    constants(p).1
}

// ---------------------------------------------------------------------------
// ln

fn bitlen(x: u64) -> u64 {
    64 - x.leading_zeros() as u64
}

/// `ln v` for an exact positive rational, absolute error at most `2^-p`.
fn ln_rational(v: &BigRational, p: u64) -> BigReal {
    if v.is_one() {
        return BigReal::zero();
    }
    let n = v.numer();
    let d = v.denom();
    let k = n.bits() as i64 - d.bits() as i64;
    let s = ((p / 2).sqrt()).clamp(2, 400);
    let w = p + s + bitlen(p) + 10;
    let wu = w as usize;
    // y = v / 2^k in (1/2, 2)
    let mut y = if k >= 0 {
        (n << wu) / (d << (k as usize))
    } else {
        (n << (wu + (-k) as usize)) / d
    };
    for _ in 0..s {
        y = (y << wu).sqrt();
    }
    let one = BigInt::one() << wu;
    let z = ((&y - &one) << wu) / (&y + &one);
    // atanh is odd; run the series on |z| so the shifts truncate toward zero
    let neg = z.is_negative();
    let z = z.abs();
    let z2 = (&z * &z) >> wu;
    let mut term = z.clone();
    let mut sum = z;
    let mut j: u64 = 1;
    loop {
        term = (&term * &z2) >> wu;
        if term.is_zero() {
            break;
        }
        sum += &term / BigInt::from(2 * j + 1);
        j += 1;
    }
    if neg {
        sum = -sum;
    }
    let ulps = BigInt::from(3 * j + 12) << ((s + 1) as usize);
    let lny = BigReal::with_err(dyadic(sum, (s as i64 + 1) - w as i64), dyadic(ulps, -(w as i64)));
    let lny = lny.round_bits(p + 2);
    if k == 0 {
        return lny;
    }
    let kb = bitlen(k.unsigned_abs());
    let l2 = ln2(p + kb + 2);
    let kl = l2.mul_rat(&BigRational::from_integer(BigInt::from(k)));
    (&lny + &kl).round_bits(p + 2)
}

/// Natural logarithm with a sound error bound.
///
/// The result error is at most `target` plus `x.err / (x.value - x.err)`.
pub fn ln(x: &BigReal, target: &BigRational) -> Result<BigReal, BigNumError> {
    let lo = x.lower();
    if !lo.is_positive() {
        return Err(BigNumError::NonPositiveArgument);
    }
    let p = bits_for(target) + 1;
    let core = ln_rational(&x.value, p);
    if x.is_exact() {
        return Ok(core);
    }
    let prop = &x.err / &lo;
    Ok(core.add_err(&prop))
}

/// `ln` with the target given as a bit count.
pub fn ln_bits(x: &BigReal, p: u64) -> Result<BigReal, BigNumError> {
    ln(x, &pow2(-(p as i64)))
}

// ---------------------------------------------------------------------------
// exp

const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// `exp v` for an exact rational, absolute error at most `2^-p`.
fn exp_rational(v: &BigRational, p: u64, max_bits: u64) -> Result<BigReal, BigNumError> {
    if v.is_zero() {
        return Ok(BigReal::one());
    }
    let vf = rat_to_f64(v);
    let est = vf * LOG2_E;
    if est + 2.0 < -(p as f64) {
        return Ok(BigReal::with_err(BigRational::zero(), pow2(-(p as i64))));
    }
    if !est.is_finite() || est > max_bits as f64 {
        return Err(BigNumError::OverflowBudget { bits: if est.is_finite() { est as u64 } else { u64::MAX } });
    }
    let k = (vf / std::f64::consts::LN_2).round() as i64;
    let base = (p as i64 + k).max(8) as u64;
    let s = ((base / 2).sqrt()).clamp(4, 300);
    let wide = base + 2 * s + bitlen(base) + 12;
    let kb = bitlen(k.unsigned_abs());
    let r = if k == 0 {
        BigReal::exact(v.clone())
    } else {
        let l2 = ln2(wide + kb + 4);
        &BigReal::exact(v.clone()) - &l2.mul_rat(&BigRational::from_integer(BigInt::from(k)))
    };
    let wu = wide as usize;
    // t = r / 2^s at scale 2^wide
    let t = round_half_even(&(r.value() * pow2(wide as i64 - s as i64)));
    let one = BigInt::one() << wu;
    let mut e = one.clone();
    let mut term = one;
    let mut j: u64 = 1;
    loop {
        term = (&term * &t) >> wu;
        term /= BigInt::from(j);
        if term.is_zero() {
            break;
        }
        e += &term;
        j += 1;
    }
    for _ in 0..s {
        e = (&e * &e) >> wu;
    }
    // series error is at most 3j+1 ulps; the squarings scale it by at most 1.42 * 2^s
    let series_ulps = BigInt::from(3 * j + 4) << ((s + 1) as usize);
    let mut err = dyadic(series_ulps, k - wide as i64);
    if !r.is_exact() {
        // |exp(r) - exp(r')| <= 1.5 exp(r) |r - r'|, exp(r) <= 1.5
        let extra = qmul(r.err(), &BigRational::new(BigInt::from(9), BigInt::from(4)));
        err = qadd(&err, &qmul(&extra, &pow2(k)));
    }
    Ok(BigReal::with_err(dyadic(e, k - wide as i64), err).round_bits(p + 2))
}

/// Upper bound `2^b` on `exp(u)` for a rational `u`.
fn exp_upper_pow2(u: &BigRational) -> i64 {
    let uf = rat_to_f64(u);
    let slack = if uf >= 0.0 { 1.0001 } else { 0.9999 };
    let b = uf * std::f64::consts::LOG2_E * slack;
    b.ceil() as i64 + 1
}

/// Exponential with a sound error bound and the default digit budget.
pub fn exp(x: &BigReal, target: &BigRational) -> Result<BigReal, BigNumError> {
    exp_with_budget(x, target, DEFAULT_MAX_BITS)
}

/// Exponential that fails with `OverflowBudget` when the result would exceed `max_bits`.
pub fn exp_with_budget(x: &BigReal, target: &BigRational, max_bits: u64) -> Result<BigReal, BigNumError> {
    let p = bits_for(target) + 1;
    let core = exp_rational(&x.value, p, max_bits)?;
    if x.is_exact() {
        return Ok(core);
    }
    let hi = x.upper();
    let b = exp_upper_pow2(&hi);
    // exp(e) - 1 <= 3e for e <= 1
    let e = x.err();
    let factor = if e <= &BigRational::one() {
        qmul(e, &BigRational::from_integer(BigInt::from(3)))
    } else {
        pow2(exp_upper_pow2(e))
    };
    Ok(core.add_err(&qmul(&factor, &pow2(b))))
}

pub fn exp_bits(x: &BigReal, p: u64) -> Result<BigReal, BigNumError> {
    exp(x, &pow2(-(p as i64)))
}

/// `3^w` with absolute error at most `2^-p`.
pub fn pow3(w: &BigRational, p: u64) -> Result<BigReal, BigNumError> {
    if w.is_integer() {
        let i = w.to_integer();
        if !i.is_negative() {
            let e = i.to_u64().ok_or(BigNumError::OverflowBudget { bits: u64::MAX })?;
            let bits = (e as f64 * 1.585) as u64;
            if bits > DEFAULT_MAX_BITS {
                return Err(BigNumError::OverflowBudget { bits });
            }
            return Ok(BigReal::exact(BigRational::from_integer(BigInt::from(3u32).pow(e as u32))));
        }
        let m = (-i).to_u64().unwrap_or(u64::MAX);
        if (m as f64) * 1.5849 > p as f64 + 2.0 {
            return Ok(BigReal::with_err(BigRational::zero(), pow2(-(p as i64))));
        }
        let den = BigInt::from(3u32).pow(m as u32);
        let q = (BigInt::one() << ((p + 2) as usize)) / den;
        return Ok(BigReal::with_err(dyadic(q, -((p + 2) as i64)), pow2(-((p + 2) as i64))));
    }
    let wf = rat_to_f64(w);
    if wf * 1.5849 + 2.0 < -(p as f64) {
        return Ok(BigReal::with_err(BigRational::zero(), pow2(-(p as i64))));
    }
    let mag = if wf > 0.0 { (wf * 1.585).ceil() as u64 } else { 0 };
    let q = p + mag + w.numer().bits() + 8;
    let x = ln3(q).mul_rat(w);
    exp(&x, &pow2(-(p as i64)))
}

/// `x^y` for positive `x`; integer exponents stay exact.
pub fn pow_real(x: &BigReal, y: &BigRational, p: u64) -> Result<BigReal, BigNumError> {
    if y.is_integer() {
        if let Some(n) = y.to_integer().to_u32() {
            return Ok(x.powi(n));
        }
    }
    if !x.is_certainly_positive() {
        return Err(BigNumError::NonPositiveArgument);
    }
    let lx = ln_bits(x, p + 16 + y.numer().bits())?;
    exp_bits(&lx.mul_rat(y), p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn ln_one_is_zero() {
        let v = ln(&BigReal::one(), &pow2(-64)).unwrap();
        assert!(v.value().is_zero());
        assert!(v.err() <= &pow2(-64));
    }

    #[test]
    fn ln_quarter_is_minus_two_ln2() {
        let eps = pow2(-80);
        let a = ln(&BigReal::exact(r(1, 4)), &eps).unwrap();
        let b = ln(&BigReal::from_int(2), &pow2(-81)).unwrap().mul_rat(&r(-2, 1));
        let d = (&a - &b).abs();
        assert!(d.lower() <= BigRational::zero());
    }

    #[test]
    fn exp_zero_exact() {
        let e = exp(&BigReal::zero(), &pow2(-30)).unwrap();
        assert!(e.is_exact());
        assert_eq!(e.value(), &BigRational::one());
    }

    #[test]
    fn exp_of_ln_round_trips() {
        for p in [2i64, 3, 5] {
            let eps = pow2(-60);
            let l = ln(&BigReal::from_int(p), &eps).unwrap();
            let e = exp(&l, &eps).unwrap();
            assert!(e.add_err(&(&eps + &eps)).contains(&r(p, 1)), "p={p} {e:?}");
        }
    }

    #[test]
    fn exp_sum_of_logs_is_six() {
        let eps = pow2(-70);
        let l = &ln(&BigReal::from_int(2), &eps).unwrap() + &ln(&BigReal::from_int(3), &eps).unwrap();
        let e = exp(&l, &eps).unwrap();
        assert!(e.contains(&r(6, 1)));
        assert!(e.err() < &pow2(-60));
    }

    #[test]
    fn ln_rejects_uncertified_positive() {
        let x = BigReal::with_err(r(1, 10), r(1, 5));
        assert_eq!(ln(&x, &pow2(-10)), Err(BigNumError::NonPositiveArgument));
    }

    #[test]
    fn exp_overflow_budget() {
        let x = BigReal::from_int(1 << 40);
        assert!(matches!(exp(&x, &pow2(-10)), Err(BigNumError::OverflowBudget { .. })));
    }

    #[test]
    fn pow3_fractional_and_negative() {
        let p = 90;
        let a = pow3(&r(1, 2), p).unwrap();
        let sq = a.sqr();
        assert!(sq.add_err(&pow2(-80)).contains(&r(3, 1)));
        let b = pow3(&r(-4, 1), p).unwrap();
        assert!(b.add_err(&pow2(-88)).contains(&r(1, 81)));
        let tiny = pow3(&r(-1_000_000, 1), 64).unwrap();
        assert!(tiny.value().is_zero());
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(rational_to_decimal(&r(1, 4), 3), "0.250");
        assert_eq!(rational_to_decimal(&r(-5, 2), 0), "-2");
        assert_eq!(rational_to_decimal(&r(-1, 3), 4), "-0.3333");
    }

    #[test]
    fn floor_log2_cases() {
        assert_eq!(floor_log2(&r(1, 1)), 0);
        assert_eq!(floor_log2(&r(3, 1)), 1);
        assert_eq!(floor_log2(&r(1, 3)), -2);
        assert_eq!(floor_log2(&r(-8, 1)), 3);
        assert_eq!(floor_log2(&r(1, 1024)), -10);
    }
}
