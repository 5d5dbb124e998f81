use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

/// `ln x` in `w`-bit fixed point by `k ln 2 + 2 atanh((y − 1)/(y + 1))`, `y = x / 2^k ∈ [1, 2)`.
///
/// Shares no code with the library; error below `2^(20 − w)` for the inputs used here.
pub fn ln_oracle(x: &BigRational, w: u64) -> BigRational {
    let one = BigInt::one() << w as usize;
    let mut k = x.numer().bits() as i64 - x.denom().bits() as i64;
    let fixed = |k: i64| -> BigInt {
        let (n, d) = (x.numer().clone(), x.denom().clone());
        if k >= 0 {
            (n << w as usize) / (d << k as usize)
        } else {
            (n << (w as i64 - k) as usize) / d
        }
    };
    let mut y = fixed(k);
    while y >= &one << 1usize {
        k += 1;
        y = fixed(k);
    }
    while y < one {
        k -= 1;
        y = fixed(k);
    }
    let t = ((&y - &one) << w as usize) / (&y + &one);
    let t2 = (&t * &t) >> w as usize;
    let mut term = t;
    let mut acc = BigInt::zero();
    let mut j = 0u64;
    while !term.is_zero() {
        acc += &term / BigInt::from(2 * j + 1);
        term = (&term * &t2) >> w as usize;
        j += 1;
    }
    let ln_y = acc << 1usize;
    let mut ln2 = BigInt::zero();
    for i in 1..=w {
        ln2 += (&one >> i as usize) / BigInt::from(i);
    }
    BigRational::new(ln_y + ln2 * BigInt::from(k), one)
}
