use codomain::attack::*;
use codomain::bignum::{pow2, BigReal};
use codomain::losses::{Generator, LabelVector, LossSpec, LossTable};
use num_rational::BigRational;

fn r(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

/// Answers `f(σ) + ν` for every live labeling and each noise level; checks both decoders.
fn check_all(cp: &ConstructedPayload, noise: &[BigRational]) {
    let table = LossTable::build(cp.loss(), &cp.payload, &pow2(-200)).unwrap();
    let live = cp.live_rows().len();
    for sigma in LabelVector::all(live, cp.k()) {
        let full = cp.embed(&sigma);
        let f = table.eval(&full);
        for nu in noise {
            let l = BigReal::exact(f.value() + nu);
            let got = decode(cp, &l).unwrap_or_else(|e| panic!("{:?} noise {nu}: {e}", sigma.labels()));
            assert_eq!(got, sigma, "structured decoder, noise {nu}");
            if live <= 8 {
                assert_eq!(decode_bruteforce(cp, &l, BRUTEFORCE_CAP).unwrap(), sigma, "brute force, noise {nu}");
            }
        }
    }
}

fn noises(tau: &BigRational) -> Vec<BigRational> {
    let m = tau * r(97, 100);
    vec![-m.clone(), BigRational::from_integer(0.into()), m]
}

#[test]
fn kce_small() {
    let tau = r(1, 8);
    let cp = construct_kce(3, 3, &tau).unwrap();
    assert_eq!(cp.decoder.tag(), "codeword");
    check_all(&cp, &noises(&tau));
}

#[test]
fn kce_binary_and_softmax_and_sigmoid() {
    let tau = r(1, 4);
    for cp in [construct_kce(4, 2, &tau).unwrap(), construct_softmax(3, 3, &tau).unwrap(), construct_sigmoid(5, &tau).unwrap()] {
        check_all(&cp, &noises(&tau));
    }
}

#[test]
fn kce_large_tau() {
    let tau = r(8, 1);
    check_all(&construct_kce(5, 3, &tau).unwrap(), &noises(&tau));
}

#[test]
fn binary_baseline_bits() {
    let tau = r(1, 2);
    let cp = construct_binary_baseline(6, &tau).unwrap();
    assert_eq!(cp.decoder.tag(), "bits");
    check_all(&cp, &noises(&tau));
}

#[test]
fn itakura_saito_superincreasing() {
    let tau = r(1, 16);
    let cp = construct_linear_decomposable(&LossSpec::ItakuraSaito, 5, &tau).unwrap();
    assert_eq!(cp.decoder.tag(), "superincreasing");
    check_all(&cp, &noises(&tau));
}

#[test]
fn mahalanobis_corrected_and_paper() {
    let tau = r(1, 1);
    let a = [[r(1 << 15, 1), r(0, 1)], [r(0, 1), r(1 << 15, 1)]];
    let cp = construct_mahalanobis(6, &tau, a.clone(), MahalanobisMode::Corrected).unwrap();
    check_all(&cp, &noises(&tau));
    let pf = construct_mahalanobis(3, &tau, a, MahalanobisMode::PaperFaithful).unwrap();
    assert_eq!(pf.decoder.tag(), "bruteforce");
}

#[test]
fn unnoised_prime_decoders() {
    check_all(&construct_unnoised(&LossSpec::SquaredEuclidean, 7).unwrap(), &[r(0, 1)]);
    check_all(&construct_unnoised(&LossSpec::NormLike { alpha: r(3, 1) }, 5).unwrap(), &[r(0, 1)]);
    check_all(&construct_unnoised(&LossSpec::NormLike { alpha: r(5, 2) }, 4).unwrap(), &[r(0, 1)]);
}

#[test]
fn bregman_general() {
    let tau = r(1, 4);
    let cp = construct_bregman_general(Generator::NegEntropy, &*default_solver(Generator::NegEntropy), 4, &tau).unwrap();
    check_all(&cp, &noises(&tau));
    let err = construct_bregman_general(Generator::Square, &*default_solver(Generator::Square), 3, &r(1, 1)).unwrap_err();
    assert!(matches!(err, AttackError::Infeasible(_)));
}

#[test]
fn multiquery_blocks() {
    let tau = r(1, 1);
    let cps = plan_multiquery(&LossSpec::BinaryCe, 8, Some(tau.clone()), 2).unwrap();
    assert_eq!(cps.len(), 4);
    for cp in &cps {
        check_all(cp, &noises(&tau));
    }
    let cps = plan_multiquery(&LossSpec::KaryCe { k: 3 }, 5, Some(tau.clone()), 2).unwrap();
    assert_eq!(cps.len(), 3);
    for cp in &cps {
        check_all(cp, &noises(&tau));
    }
}

mod properties {
    use codomain::bignum::ln3;
    use codomain::codes::encode_codeword;
    use codomain::separability::lambda_bruteforce;
    use num_traits::Signed;
    use proptest::prelude::*;

    use super::*;

    fn shapes() -> impl Strategy<Value = (usize, u32)> {
        (1usize..=4, 2u32..=3).prop_filter("K^N <= 81", |(n, k)| k.pow(*n as u32) <= 81)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn lambda_scales_with_tau((n, k) in shapes(), (tn, td) in (1i64..8, 1i64..8), (cn, cd) in (1i64..6, 1i64..6)) {
            let tau = r(tn, td);
            let c = r(cn, cd);
            let cp = construct_kce(n, k, &tau).unwrap();
            let scaled = construct_kce(n, k, &(&tau * &c)).unwrap();
            let base = lambda_bruteforce(cp.loss(), &cp.payload, None).unwrap().lambda;
            let got = lambda_bruteforce(scaled.loss(), &scaled.payload, None).unwrap().lambda;
            let want = base.value() * &c;
            prop_assert!((got.value() - &want).abs() <= got.err() + base.err() * &c);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn displacement_stays_below_one(
            (n, k, idx) in shapes().prop_flat_map(|(n, k)| (Just(n), Just(k), 0..k.pow(n as u32) as u64)),
            (tn, td) in (1i64..9, 1i64..9),
            noise in -990i64..=990,
            oracle in -999i64..=999,
        ) {
            let tau = r(tn, td);
            let cp = construct_kce(n, k, &tau).unwrap();
            let Decoder::Lattice { offset, base, scale, log3: true, negate: true, .. } = &cp.decoder else {
                panic!("kce decodes on the codeword lattice");
            };
            let sigma = LabelVector::from_index(idx, n, k);
            let f = LossTable::build(cp.loss(), &cp.payload, &pow2(-200)).unwrap().eval(&sigma);
            let err = &cp.plan.oracle_err * r(oracle, 1000);
            let l = f.value() + &tau * r(noise, 1000) + err;
            let y = BigReal::exact(&l * BigRational::from_integer(n.into())) - base.clone();
            let x = &BigReal::exact(offset.clone()) - &y.div(&ln3(128).mul_rat(scale)).unwrap();
            let m = BigRational::from_integer(encode_codeword(&sigma).value);
            let d = (x.value() - &m).abs() + x.err();
            prop_assert!(d < r(1, 1), "displacement {}", d);
            prop_assert!(d < r(958, 1000) + r(1, 1000));
            prop_assert_eq!(decode(&cp, &BigReal::exact(l)).unwrap(), sigma);
        }
    }
}
