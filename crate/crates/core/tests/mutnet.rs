use codomain::attack::{construct_binary_baseline, decode};
use codomain::bignum::{BigReal, Emulated, FloatModel, FpaFormat, Native};
use codomain::losses::{LabelVector, LossSpec, Payload, Row};
use codomain::mutnet::{MutNet, MutNetJson};
use codomain::oracle::{Noise, Oracle, OracleConfig};
use num_rational::BigRational;
use num_traits::Zero;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn r(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

fn random_input(rng: &mut ChaCha8Rng, d1: usize) -> Vec<BigRational> {
    (0..d1).map(|_| r(rng.gen_range(0..=1_000_000), 1_000_000)).collect()
}

#[test]
fn closed_form_biases() {
    let net = MutNet::build(&[BigReal::ratio(1, 2), BigReal::ratio(1, 2)], 4, 0).unwrap();
    assert!(net.bias.iter().all(|b| b.eval(64).unwrap().value().is_zero()));
    let net = MutNet::build(&[BigReal::ratio(1, 4), BigReal::ratio(3, 4)], 4, 0).unwrap();
    let b: Vec<f64> = net.bias.iter().map(|b| b.eval(64).unwrap().to_f64()).collect();
    assert!((b[0] + 3f64.ln()).abs() < 1e-15 && (b[1] - 3f64.ln()).abs() < 1e-15);
}

#[test]
fn output_ignores_seed_width_and_input() {
    let target = [BigReal::ratio(1, 4), BigReal::ratio(3, 5), BigReal::ratio(99, 100)];
    let want = Payload::binary(&target);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (d1, seed) in [(1, 0), (3, 1), (8, 2), (16, 99)] {
        let net = MutNet::build(&target, d1, seed).unwrap();
        assert_eq!(net.forward(&vec![BigRational::zero(); d1], true).unwrap(), want);
        assert_eq!(net.forward(&random_input(&mut rng, d1), true).unwrap(), want);
    }
}

#[test]
fn thousand_inputs_reproduce_the_attack_payload() {
    let cp = construct_binary_baseline(8, &r(1, 4)).unwrap();
    let net = MutNet::build_from_payload(&cp.payload, 6, 2021).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        assert_eq!(net.forward(&random_input(&mut rng, 6), true).unwrap(), cp.payload);
    }
}

#[test]
fn end_to_end_through_exported_network() {
    let tau = r(1, 4);
    let cp = construct_binary_baseline(8, &tau).unwrap();
    let net = MutNet::build_from_payload(&cp.payload, 5, 3).unwrap();
    let text = serde_json::to_string(&net.to_json(80).unwrap()).unwrap();
    let loaded = MutNet::from_json(&serde_json::from_str::<MutNetJson>(&text).unwrap()).unwrap();
    assert_eq!((loaded.m1.clone(), loaded.m2.clone()), (net.m1.clone(), net.m2.clone()));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for sigma in LabelVector::all(8, 2) {
        let out = loaded.forward(&random_input(&mut rng, 5), true).unwrap();
        assert!(out.rows().iter().all(|row| matches!(row, Row::Values(_))));
        let mut cfg = OracleConfig::new(LossSpec::BinaryCe, tau.clone());
        // |ν| = 0.9τ
        cfg.noise = Noise::WorstCase { margin: r(1, 10), seed: sigma.index() };
        let mut oracle = Oracle::new(sigma.clone(), cfg).unwrap();
        let answer = oracle.evaluate(&out).unwrap().value.to_real().unwrap();
        assert_eq!(decode(&cp, &answer).unwrap(), sigma);
    }
}

#[test]
fn float_models_agree() {
    let net = MutNet::build(&[BigReal::ratio(1, 4), BigReal::ratio(3, 4)], 3, 5).unwrap();
    let native = Native::<f64>::new();
    let out = net.forward_model(&native, &[0.5, 0.0, 1.0], true).unwrap();
    assert!((out[0] - 0.25).abs() < 1e-15 && (out[1] - 0.75).abs() < 1e-15);
    let emu = Emulated { format: FpaFormat::ieee754_double() };
    let v: Vec<_> = [r(1, 2), r(0, 1), r(1, 1)].iter().map(|x| emu.lift_rational(x)).collect();
    let out_e = net.forward_model(&emu, &v, true).unwrap();
    assert_eq!(out_e.iter().map(|x| x.to_f64()).collect::<Vec<_>>(), out);
    assert!(net.forward_model(&native, &[0.5, -1.0, 1.0], true).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constancy(
        d1 in 1usize..6,
        seed in any::<u64>(),
        t in prop::collection::vec(1i64..1000, 1..5),
        v1 in prop::collection::vec(0i64..10_000, 6),
        v2 in prop::collection::vec(0i64..10_000, 6),
    ) {
        let target: Vec<BigReal> = t.iter().map(|&x| BigReal::ratio(x, 1000)).collect();
        let net = MutNet::build(&target, d1, seed).unwrap();
        let a: Vec<BigRational> = v1[..d1].iter().map(|&x| r(x, 7)).collect();
        let b: Vec<BigRational> = v2[..d1].iter().map(|&x| r(x, 3)).collect();
        prop_assert_eq!(net.forward(&a, true).unwrap(), net.forward(&b, true).unwrap());
    }
}
