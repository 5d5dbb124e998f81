use codomain::bignum::{ln, pow2, round_to_fpa, BigReal, FpaFormat};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed};
use proptest::prelude::*;

mod common;
use common::ln_oracle;

fn rat(n: u64, d: u64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

/// `m · 2^(e − mant)` with a full-width mantissa: exactly representable in `fmt`.
fn representable(fmt: FpaFormat, mant: u64, e: i64, neg: bool) -> BigRational {
    let m = fmt.mant_bits as u64;
    let lead = BigInt::one() << m as usize;
    let frac = BigInt::from(mant) % &lead;
    let v = BigRational::from_integer(lead + frac) * pow2(e - m as i64);
    if neg {
        -v
    } else {
        v
    }
}

fn rounded(x: &BigRational, fmt: FpaFormat) -> BigRational {
    round_to_fpa(&BigReal::exact(x.clone()), fmt).unwrap().to_rational().expect("finite")
}

#[test]
fn oracle_matches_known_constants() {
    let ln2 = ln_oracle(&rat(2, 1), 128);
    let want = BigRational::new(BigInt::from(6931471805599453094u64), BigInt::from(10u64).pow(19));
    assert!((ln2 - want).abs() < BigRational::new(1.into(), BigInt::from(10u64).pow(18)));
    assert!(ln_oracle(&rat(1, 1), 128).abs() < pow2(-100));
}

#[test]
fn coarse_rounding_can_widen_gaps() {
    // 1.24 and 1.26 are 0.5 apart after rounding to one mantissa bit, 0.02 apart after eight
    let coarse = FpaFormat::explicit(3, 1).unwrap();
    let fine = FpaFormat::explicit(3, 8).unwrap();
    let (a, b) = (rat(124, 100), rat(126, 100));
    let gap = |f| (rounded(&b, f) - rounded(&a, f)).abs();
    assert_eq!(gap(coarse), rat(1, 2));
    assert!(gap(fine) < rat(1, 10));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn ln_is_sound(n in 1u64..(1 << 40), d in 1u64..(1 << 40), p in 8u64..96) {
        let x = rat(n, d);
        let got = ln(&BigReal::exact(x.clone()), &pow2(-(p as i64))).unwrap();
        prop_assert!(got.err() <= &pow2(-(p as i64)));
        let w = 4 * p.max(32);
        let oracle = ln_oracle(&x, w);
        prop_assert!((got.value() - &oracle).abs() <= got.err() + pow2(20 - w as i64));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn rounding_is_idempotent(e in 2u32..9, m in 1u32..40, mant in any::<u64>(), exp in -200i64..200, neg in any::<bool>()) {
        let fmt = FpaFormat::explicit(e, m).unwrap();
        let exp = exp.clamp(fmt.emin(), fmt.emax());
        let v = representable(fmt, mant, exp, neg);
        prop_assert_eq!(rounded(&v, fmt), v.clone());
        let again = round_to_fpa(&BigReal::exact(rounded(&v, fmt)), fmt).unwrap().to_rational().unwrap();
        prop_assert_eq!(again, v);
    }

    #[test]
    fn rounding_is_nearest_and_monotone(e in 3u32..8, m in 1u32..24, a in 1u64..1_000_000, b in 1u64..1_000_000, d in 1u64..10_000) {
        let fmt = FpaFormat::explicit(e, m).unwrap();
        let (x, y) = (rat(a.min(b), d), rat(a.max(b), d));
        prop_assume!(x >= fmt.min_positive() && y <= fmt.max_finite());
        let (rx, ry) = (rounded(&x, fmt), rounded(&y, fmt));
        prop_assert!(rx <= ry);
        prop_assert!((&rx - &x).abs() <= fmt.half_ulp(&x));
    }

    #[test]
    fn coarser_values_embed_in_finer_formats(
        e1 in 2u32..6, m1 in 1u32..12, de in 0u32..3, dm in 0u32..12,
        mant in any::<u64>(), exp in -40i64..40, neg in any::<bool>(),
    ) {
        let coarse = FpaFormat::explicit(e1, m1).unwrap();
        let fine = FpaFormat::explicit(e1 + de, m1 + dm).unwrap();
        let v = representable(coarse, mant, exp.clamp(coarse.emin(), coarse.emax()), neg);
        prop_assert_eq!(rounded(&v, fine), v);
    }

    #[test]
    fn gaps_move_by_at_most_the_rounding(
        e in 3u32..6, m1 in 1u32..10, dm in 1u32..12,
        vals in prop::collection::vec(1u64..100_000, 2..8), d in 1u64..1000,
    ) {
        let coarse = FpaFormat::explicit(e, m1).unwrap();
        let fine = FpaFormat::explicit(e, m1 + dm).unwrap();
        let xs: Vec<BigRational> = vals.iter().map(|&v| rat(v, d)).collect();
        prop_assume!(xs.iter().all(|x| x >= &coarse.min_positive() && x <= &coarse.max_finite()));
        for i in 0..xs.len() {
            for j in i + 1..xs.len() {
                let gc = (rounded(&xs[i], coarse) - rounded(&xs[j], coarse)).abs();
                let gf = (rounded(&xs[i], fine) - rounded(&xs[j], fine)).abs();
                let slack = coarse.half_ulp(&xs[i]) + coarse.half_ulp(&xs[j]) + fine.half_ulp(&xs[i]) + fine.half_ulp(&xs[j]);
                prop_assert!((gc - gf).abs() <= slack);
            }
        }
    }
}
