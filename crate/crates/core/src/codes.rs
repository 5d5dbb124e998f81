//! Distinct-subset-sum machinery: block codewords, μ(S), primes and snapping.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::bignum::BigReal;
use crate::losses::LabelVector;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeError {
    #[error("set of {0} elements exceeds the exhaustive limit of {MU_MAX_ELEMENTS}")]
    TooLarge(usize),
    #[error("no block-valid codeword near the input")]
    NoValidCodeword,
    #[error("value is not a product of distinct listed primes")]
    NotSquarefreeProduct,
}

/// Largest set `mu` enumerates.
pub const MU_MAX_ELEMENTS: usize = 24;

/// Block codeword `m = Σ_i 2^{(i-1)K + σ_i + 1}` for labels in `0..K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockCodeword {
    pub n: usize,
    pub k: u32,
    pub value: BigInt,
}

/// Minimum gap between two distinct subset sums. Returns an enclosure of the exact minimum.
pub fn mu(s: &[BigReal]) -> Result<BigReal, CodeError> {
    let n = s.len();
    if n > MU_MAX_ELEMENTS {
        return Err(CodeError::TooLarge(n));
    }
    if n == 0 {
        return Ok(BigReal::zero());
    }
    let mut sums: Vec<BigReal> = Vec::with_capacity(1 << n);
    sums.push(BigReal::zero());
    for x in s {
        let len = sums.len();
        for j in 0..len {
            let v = &sums[j] + x;
            sums.push(v);
        }
    }
    sums.sort_by(|a, b| a.value().cmp(b.value()));
    let mut best: Option<BigReal> = None;
    for w in sums.windows(2) {
        let d = &w[1] - &w[0];
        let replace = match &best {
            None => true,
            Some(b) => d.value() < b.value(),
        };
        if replace {
            best = Some(d);
        }
    }
    Ok(best.expect("at least two subsets"))
}

pub fn encode_codeword(sigma: &LabelVector) -> BlockCodeword {
    let k = sigma.k();
    let mut value = BigInt::zero();
    for (i, &c) in sigma.labels().iter().enumerate() {
        value.set_bit(i as u64 * k as u64 + c as u64 + 1, true);
    }
    BlockCodeword { n: sigma.n(), k, value }
}

fn block_labels(m: &BigInt, n: usize, k: u32) -> Option<Vec<u32>> {
    if m.is_negative() || m.bit(0) {
        return None;
    }
    if m.bits() > n as u64 * k as u64 + 1 {
        return None;
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut found = None;
        for c in 0..k {
            if m.bit(i as u64 * k as u64 + c as u64 + 1) {
                if found.is_some() {
                    return None;
                }
                found = Some(c);
            }
        }
        labels.push(found?);
    }
    Some(labels)
}

/// Inverse of [`encode_codeword`]; `None` when `m` is not block-valid.
pub fn decode_codeword(m: &BlockCodeword) -> Option<LabelVector> {
    let labels = block_labels(&m.value, m.n, m.k)?;
    LabelVector::new(labels, m.k).ok()
}

pub fn is_valid_codeword(m: &BigInt, n: usize, k: u32) -> bool {
    block_labels(m, n, k).is_some()
}

/// Nearest block-valid codeword among the integers adjacent to `round(x)`.
///
/// Exact midpoints resolve to the smaller codeword.
pub fn snap_to_codeword(x: &BigReal, n: usize, k: u32) -> Result<BlockCodeword, CodeError> {
    let v = x.value();
    let base = v.floor().to_integer();
    let mut best: Option<(BigRational, BigInt)> = None;
    for delta in -1i64..=2 {
        let cand = &base + delta;
        if !is_valid_codeword(&cand, n, k) {
            continue;
        }
        let d = (BigRational::from_integer(cand.clone()) - v).abs();
        let better = match &best {
            None => true,
            Some((bd, bc)) => d < *bd || (d == *bd && cand < *bc),
        };
        if better {
            best = Some((d, cand));
        }
    }
    match best {
        Some((d, value)) if d <= BigRational::one() => Ok(BlockCodeword { n, k, value }),
        _ => Err(CodeError::NoValidCodeword),
    }
}

/// The first `n` primes.
pub fn first_primes(n: usize) -> Vec<BigInt> {
    let mut out: Vec<u64> = Vec::with_capacity(n);
    let mut c = 2u64;
    while out.len() < n {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| !c.is_multiple_of(p)) {
            out.push(c);
        }
        c += 1;
    }
    out.into_iter().map(BigInt::from).collect()
}

/// 1-based indices `I` with `m = Π_{i∈I} primes[i-1]`.
pub fn factor_over_primes(m: &BigInt, primes: &[BigInt]) -> Result<Vec<usize>, CodeError> {
    if !m.is_positive() {
        return Err(CodeError::NotSquarefreeProduct);
    }
    let mut rest = m.clone();
    let mut idx = Vec::new();
    for (i, p) in primes.iter().enumerate() {
        let (q, r) = rest.div_rem(p);
        if r.is_zero() {
            if q.is_multiple_of(p) {
                return Err(CodeError::NotSquarefreeProduct);
            }
            rest = q;
            idx.push(i + 1);
        }
    }
    if rest.is_one() {
        Ok(idx)
    } else {
        Err(CodeError::NotSquarefreeProduct)
    }
}

/// Product of the listed primes, as a `u128` when it fits.
pub fn prime_product_u128(primes: &[BigInt]) -> Option<u128> {
    primes.iter().try_fold(1u128, |acc, p| acc.checked_mul(p.to_u128()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(l: &[u32], k: u32) -> LabelVector {
        LabelVector::new(l.to_vec(), k).unwrap()
    }

    #[test]
    fn mu_of_powers_of_two() {
        let s: Vec<BigReal> = (0..5).map(|i| BigReal::from_int(3 << i)).collect();
        assert_eq!(mu(&s).unwrap(), BigReal::from_int(3));
    }

    #[test]
    fn mu_detects_collision() {
        let s: Vec<BigReal> = [1, 2, 3].iter().map(|&i| BigReal::from_int(i)).collect();
        assert!(mu(&s).unwrap().value().is_zero());
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_codeword(&lv(&[0], 2)).value, BigInt::from(2));
        assert_eq!(encode_codeword(&lv(&[1, 0], 2)).value, BigInt::from(12));
    }

    #[test]
    fn snap_examples() {
        let x = BigReal::exact(BigRational::new(124.into(), 10.into()));
        assert_eq!(snap_to_codeword(&x, 2, 2).unwrap().value, BigInt::from(12));
        let mid = BigReal::exact(BigRational::new(11.into(), 1.into()));
        assert_eq!(snap_to_codeword(&mid, 2, 2).unwrap().value, BigInt::from(10));
        assert_eq!(snap_to_codeword(&BigReal::from_int(100), 2, 2), Err(CodeError::NoValidCodeword));
    }

    #[test]
    fn primes_and_factoring() {
        let p = first_primes(10);
        assert_eq!(p[..3], [2.into(), 3.into(), 5.into()]);
        assert_eq!(p[9], BigInt::from(29));
        assert_eq!(prime_product_u128(&p[..5]), Some(2310));
        assert_eq!(factor_over_primes(&6.into(), &p[..3]).unwrap(), vec![1, 2]);
        assert!(factor_over_primes(&1.into(), &p).unwrap().is_empty());
        assert_eq!(factor_over_primes(&12.into(), &p), Err(CodeError::NotSquarefreeProduct));
    }
}
