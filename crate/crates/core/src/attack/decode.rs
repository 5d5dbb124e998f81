use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed};

use super::{to_fixed, AttackError, ConstructedPayload, Decoder, LatticeShape, BRUTEFORCE_CAP};
use crate::bignum::{exp, ln3, pow2, BigReal};
use crate::codes::{decode_codeword, factor_over_primes, snap_to_codeword};
use crate::losses::LabelVector;

fn int(i: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(i))
}

/// Labels of the live rows from an answered loss value, via the payload's structured decoder.
pub fn decode(cp: &ConstructedPayload, loss: &BigReal) -> Result<LabelVector, AttackError> {
    decode_counted(cp, loss).0
}

/// [`decode`] together with the number of big-number operations and candidate evaluations it performed.
pub fn decode_counted(cp: &ConstructedPayload, loss: &BigReal) -> (Result<LabelVector, AttackError>, u64) {
    let mut ops = 0;
    let r = decode_inner(cp, loss, &mut ops);
    (r, ops)
}

fn decode_inner(cp: &ConstructedPayload, loss: &BigReal, ops: &mut u64) -> Result<LabelVector, AttackError> {
    let live = cp.live_rows().len();
    let y = || loss.value() * int(cp.n() as i64);
    match &cp.decoder {
        Decoder::Lattice { offset, base, scale, log3, negate, shape } => {
            let diff = &BigReal::exact(y()) - base;
            let mag = (diff.value().abs() / scale).ceil().to_integer().bits();
            let den = if *log3 {
                ln3(mag + 16).mul_rat(scale)
            } else {
                BigReal::exact(scale.clone())
            };
            let q = diff.div(&den)?;
            *ops += 4;
            let x = if *negate { &BigReal::exact(offset.clone()) - &q } else { &BigReal::exact(offset.clone()) + &q };
            match shape {
                LatticeShape::Blocks { k } => {
                    let m = snap_to_codeword(&x, live, *k)?;
                    *ops += 1 + live as u64;
                    decode_codeword(&m).ok_or_else(|| AttackError::DecodingFailed("codeword has no labeling".into()))
                }
                LatticeShape::Bits => {
                    *ops += 2 + live as u64;
                    decode_bits(&x, live)
                }
            }
        }
        Decoder::Superincreasing { bits, base, diffs, order, thresholds, tolerance } => {
            let mut r = to_fixed(loss.value(), *bits) * BigInt::from(cp.n()) - base;
            let mut labels = vec![0u32; diffs.len()];
            for pos in (0..order.len()).rev() {
                let j = order[pos];
                *ops += 2;
                if r > thresholds[pos] {
                    labels[j] = 1;
                    r -= &diffs[j];
                }
            }
            if r.abs() > *tolerance {
                return Err(AttackError::DecodingFailed("residual exceeds the noise tolerance".into()));
            }
            Ok(LabelVector::new(labels, 2)?)
        }
        Decoder::Prime { base, mult, primes } => {
            let max_bits: u64 = primes.iter().map(|p| p.bits()).sum();
            let v = (&BigReal::exact(y()) - base).mul_rat(mult).round_bits(max_bits + 16);
            let half = BigRational::new(1.into(), 2.into());
            if v.value() < &-half || v.value() > &int(max_bits as i64 + 2) {
                return Err(AttackError::DecodingFailed("prime product out of range".into()));
            }
            let pv = exp(&v, &pow2(-4))?;
            let quarter = BigRational::new(1.into(), 4.into());
            if pv.err() > &quarter {
                return Err(AttackError::DecodingFailed("loss value too imprecise for the prime decoder".into()));
            }
            let m = pv.value().round();
            if (pv.value() - &m).abs() > quarter {
                return Err(AttackError::DecodingFailed("exp(N(Nℓ − C)) is not near an integer".into()));
            }
            *ops += 3 + primes.len() as u64;
            let idx = factor_over_primes(&m.to_integer(), primes)?;
            let mut labels = vec![0u32; primes.len()];
            for i in idx {
                labels[i - 1] = 1;
            }
            Ok(LabelVector::new(labels, 2)?)
        }
        Decoder::BruteForce => {
            let (r, n) = bruteforce_counted(cp, loss, BRUTEFORCE_CAP);
            *ops += n;
            r
        }
    }
}

/// A labeling for every answer: the structured decode when it succeeds, otherwise a greedy
/// reading of the lattice coordinate that skips the tolerance checks.
///
/// Returns `None` only for decoders without a lattice reading (prime products, large brute force).
pub fn decode_best_effort(cp: &ConstructedPayload, loss: &BigReal) -> Option<LabelVector> {
    if let Ok(s) = decode(cp, loss) {
        return Some(s);
    }
    let live = cp.live_rows().len();
    match &cp.decoder {
        Decoder::Lattice { offset, base, scale, log3, negate, shape } => {
            let diff = &BigReal::exact(loss.value() * int(cp.n() as i64)) - base;
            let mag = (diff.value().abs() / scale).ceil().to_integer().bits();
            let den = if *log3 { ln3(mag + 16).mul_rat(scale) } else { BigReal::exact(scale.clone()) };
            let q = diff.div(&den).ok()?;
            let x = if *negate { offset - q.value() } else { offset + q.value() };
            let mut m = x.round().to_integer().max(BigInt::from(0));
            match shape {
                LatticeShape::Blocks { k } => {
                    let k = *k as usize;
                    let mut labels = vec![0u32; live];
                    // Row i contributes 2^{iK + c + 1}; all lower rows together stay below 2^{iK + 1}.
                    for i in (0..live).rev() {
                        let c = (1..k).rev().find(|&c| m >= BigInt::from(1) << (i * k + c + 1)).unwrap_or(0);
                        labels[i] = c as u32;
                        let unit = BigInt::from(1) << (i * k + c + 1);
                        m -= unit.min(m.clone());
                    }
                    LabelVector::new(labels, k as u32).ok()
                }
                LatticeShape::Bits => {
                    let b = (m / 2u32).min((BigInt::from(1) << live) - 1);
                    LabelVector::new((0..live).map(|i| b.bit(i as u64) as u32).collect(), 2).ok()
                }
            }
        }
        Decoder::Superincreasing { bits, base, diffs, order, thresholds, .. } => {
            let mut r = to_fixed(loss.value(), *bits) * BigInt::from(cp.n()) - base;
            let mut labels = vec![0u32; diffs.len()];
            for pos in (0..order.len()).rev() {
                let j = order[pos];
                if r > thresholds[pos] {
                    labels[j] = 1;
                    r -= &diffs[j];
                }
            }
            LabelVector::new(labels, 2).ok()
        }
        Decoder::BruteForce => decode_bruteforce(cp, loss, BRUTEFORCE_CAP).ok(),
        Decoder::Prime { .. } => None,
    }
}

/// `x ≈ Σ_{σ_i=1} 2^i`: nearest even lattice point `2b` with `0 <= b < 2^M`.
fn decode_bits(x: &BigReal, m: usize) -> Result<LabelVector, AttackError> {
    let two = int(2);
    let h = x.value() / &two;
    let fl = h.floor();
    // ties go to the smaller point
    let b = if &h - &fl > BigRational::new(1.into(), 2.into()) { fl + BigRational::one() } else { fl };
    let b = b.to_integer();
    if b.is_negative() || b.bits() > m as u64 {
        return Err(AttackError::DecodingFailed("bit lattice point out of range".into()));
    }
    if (x.value() - BigRational::from_integer(&b * 2)).abs() > BigRational::one() {
        return Err(AttackError::DecodingFailed("no lattice point within distance 1".into()));
    }
    let labels = (0..m).map(|i| b.bit(i as u64) as u32).collect();
    Ok(LabelVector::new(labels, 2)?)
}

/// Nearest `f(σ)` over all labelings of the live rows; ties go to the lower index.
pub fn decode_bruteforce(cp: &ConstructedPayload, loss: &BigReal, cap: u64) -> Result<LabelVector, AttackError> {
    bruteforce_counted(cp, loss, cap).0
}

/// [`decode_bruteforce`] with its count: one evaluation of `N` row terms and one comparison per labeling.
///
/// Values and the target are compared in fixed point, 64 bits below the table's error budget.
pub fn bruteforce_counted(cp: &ConstructedPayload, loss: &BigReal, cap: u64) -> (Result<LabelVector, AttackError>, u64) {
    let (p, values) = match cp.fixed_values(cap) {
        Ok(v) => v,
        Err(e) => return (Err(e), 0),
    };
    let ops = values.len() as u64 * (cp.live_rows().len() as u64 + 1);
    (nearest(cp, values, &to_fixed(loss.value(), p)), ops)
}

fn nearest(cp: &ConstructedPayload, values: &[BigInt], target: &BigInt) -> Result<LabelVector, AttackError> {
    let mut best: Option<(BigInt, usize)> = None;
    for (idx, v) in values.iter().enumerate() {
        let d = (v - target).abs();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, idx));
        }
    }
    let (_, idx) = best.ok_or_else(|| AttackError::DecodingFailed("empty labeling space".into()))?;
    Ok(LabelVector::from_index(idx as u64, cp.live_rows().len(), cp.k()))
}
