use std::collections::HashSet;

use codomain::bignum::{pow2, BigReal};
use codomain::codes::{decode_codeword, encode_codeword, is_valid_codeword, mu, snap_to_codeword, BlockCodeword};
use codomain::losses::LabelVector;
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

#[test]
fn doubling_sets_have_gap_m() {
    for m in [rat(1, 1), rat(1, 3), rat(7, 1)] {
        for n in 1..=12 {
            let s: Vec<BigReal> = (0..n).map(|i| BigReal::exact(&m * pow2(i))).collect();
            let got = mu(&s).unwrap();
            assert!(got.is_exact());
            assert_eq!(got.value(), &m, "m = {m}, n = {n}");
        }
    }
}

#[test]
fn encode_decode_is_a_bijection() {
    for k in 2u32..=10 {
        for n in 1usize.. {
            let Some(size) = k.checked_pow(n as u32).filter(|&s| s <= 10_000) else { break };
            let mut seen = HashSet::new();
            for sigma in LabelVector::all(n, k) {
                let m = encode_codeword(&sigma);
                assert!(is_valid_codeword(&m.value, n, k));
                assert_eq!(decode_codeword(&m).as_ref(), Some(&sigma));
                assert!(seen.insert(m.value));
            }
            assert_eq!(seen.len() as u32, size);
            let width = n as u32 * k + 1;
            if width <= 16 {
                let valid = (0u64..1 << width).filter(|&v| is_valid_codeword(&BigInt::from(v), n, k)).count();
                assert_eq!(valid as u32, size, "n = {n}, k = {k}");
            }
        }
    }
}

#[test]
fn snapping_tolerates_nine_tenths() {
    for k in 2u32..=3 {
        for n in 1usize..=4 {
            for sigma in LabelVector::all(n, k) {
                let m = encode_codeword(&sigma);
                for j in -9..=9 {
                    let x = BigReal::exact(BigRational::from_integer(m.value.clone()) + rat(j, 10));
                    assert_eq!(snap_to_codeword(&x, n, k).unwrap(), m);
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn snapping_tolerates_random_offsets(
        (n, k, idx) in (1usize..=4, 2u32..=3).prop_flat_map(|(n, k)| (Just(n), Just(k), 0..k.pow(n as u32) as u64)),
        num in -9000i64..=9000,
    ) {
        let sigma = LabelVector::from_index(idx, n, k);
        let m: BlockCodeword = encode_codeword(&sigma);
        let x = BigReal::exact(BigRational::from_integer(m.value.clone()) + rat(num, 10_000));
        prop_assert_eq!(snap_to_codeword(&x, n, k).unwrap(), m);
    }
}
