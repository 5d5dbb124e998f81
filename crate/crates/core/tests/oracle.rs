use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};

use codomain::bignum::{parse_rational, pow2, BigReal, FpaFormat};
use codomain::losses::{self, LabelVector, LossSpec, Payload};
use codomain::oracle::*;
use num_rational::BigRational;
use num_traits::Signed;
use proptest::prelude::*;
use serde_json::{json, Value};

fn r(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

fn kary_oracle(max_queries: Option<u64>) -> Oracle {
    let mut cfg = OracleConfig::new(LossSpec::KaryCe { k: 3 }, r(1, 10));
    cfg.max_queries = max_queries;
    Oracle::new(LabelVector::new(vec![0, 2], 3).unwrap(), cfg).unwrap()
}

fn request(id: i64) -> String {
    json!({
        "id": id,
        "op": "evaluate",
        "loss": { "family": "kary-ce", "k": 3 },
        "payload": { "kind": "probs", "rows": [["2/10", "3/10", "5/10"], ["7/31", "11/31", "13/31"]] },
        "encoding": "rational",
    })
    .to_string()
}

fn body(resp: &Response) -> Value {
    serde_json::to_value(resp).unwrap()
}

#[test]
fn worked_example_over_the_wire() {
    let mut o = kary_oracle(None);
    let v = body(&handle_line(&mut o, &request(4)));
    assert_eq!(v["ok"], true);
    assert_eq!(v["id"], 4);
    assert_eq!(v["query_index"], 0);
    let digits = v["digits"].as_u64().unwrap() as usize;
    let got = parse_rational(v["loss_value"].as_str().unwrap()).unwrap();
    // −(1/2) ln(2·13 / (10·31))
    let expected = -0.5 * (26.0f64 / 310.0).ln();
    let got_f = v["loss_value"].as_str().unwrap().parse::<f64>().unwrap();
    assert!((got_f - expected).abs() < 1e-14);
    let theta = Payload::probs(vec![
        vec![BigReal::ratio(2, 10), BigReal::ratio(3, 10), BigReal::ratio(5, 10)],
        vec![BigReal::ratio(7, 31), BigReal::ratio(11, 31), BigReal::ratio(13, 31)],
    ]);
    let sigma = LabelVector::new(vec![0, 2], 3).unwrap();
    let exact = losses::eval(&LossSpec::KaryCe { k: 3 }, &sigma, &theta, &pow2(-200)).unwrap();
    let ulp = BigRational::new(1.into(), num_bigint::BigInt::from(10u32).pow(digits as u32));
    assert!((&got - exact.value()).abs() <= ulp + pow2(-60));
}

#[test]
fn budget_is_reported_in_band() {
    let mut o = kary_oracle(Some(1));
    assert_eq!(body(&handle_line(&mut o, &request(1)))["ok"], true);
    let v = body(&handle_line(&mut o, &request(2)));
    assert_eq!((v["ok"].clone(), v["code"].clone(), v["id"].clone()), (json!(false), json!("budget_exhausted"), json!(2)));
}

#[test]
fn protocol_errors() {
    let mut o = kary_oracle(None);
    assert_eq!(body(&handle_line(&mut o, "{not json"))["code"], "malformed");
    assert_eq!(body(&handle_line(&mut o, r#"{"id": 1}"#))["code"], "malformed");
    assert_eq!(body(&handle_line(&mut o, r#"{"id": 1, "op": "labels"}"#))["code"], "unknown_op");
    let wrong_loss = request(3).replace("kary-ce", "softmax-ce");
    assert_eq!(body(&handle_line(&mut o, &wrong_loss))["code"], "loss_mismatch");
    let bad_row = request(5).replace("\"5/10\"", "\"x\"");
    assert_eq!(body(&handle_line(&mut o, &bad_row))["code"], "malformed_payload");
    let short = request(6).replace(", [\"7/31\", \"11/31\", \"13/31\"]", "").replace(",[\"7/31\",\"11/31\",\"13/31\"]", "");
    assert_eq!(body(&handle_line(&mut o, &short))["code"], "malformed_payload");
    assert_eq!(o.queries_used(), 0);
}

#[test]
fn stream_and_tcp_transports() {
    let mut o = kary_oracle(None);
    let input = format!("{}\n\n{}\n", request(1), request(2));
    let mut out = Vec::new();
    serve_stream(&mut o, input.as_bytes(), &mut out).unwrap();
    let lines: Vec<Value> = String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["query_index"], 1);

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = std::thread::spawn(move || {
        let mut o = kary_oracle(None);
        serve_tcp(&mut o, listener, Some(1)).unwrap();
        o.queries_used()
    });
    let mut s = TcpStream::connect(addr).unwrap();
    writeln!(s, "{}", request(9)).unwrap();
    writeln!(s, "oops").unwrap();
    s.shutdown(std::net::Shutdown::Write).unwrap();
    let replies: Vec<Value> = BufReader::new(s).lines().map(|l| serde_json::from_str(&l.unwrap()).unwrap()).collect();
    assert_eq!(replies[0]["ok"], true);
    assert_eq!(replies[1]["code"], "malformed");
    assert_eq!(server.join().unwrap(), 1);
}

#[test]
fn row_subsets() {
    let labels = LabelVector::new(vec![1, 0, 1, 1], 2).unwrap();
    let mut o = Oracle::new(labels, OracleConfig::new(LossSpec::BinaryCe, r(1, 4))).unwrap();
    let p = Payload::binary(&[BigReal::ratio(1, 4), BigReal::ratio(1, 2)]);
    let l = o.evaluate_rows(&p, 2..4).unwrap().value.to_real().unwrap();
    let f = losses::eval(&LossSpec::BinaryCe, &LabelVector::new(vec![1, 1], 2).unwrap(), &p, &pow2(-100)).unwrap();
    assert!((l.value() - f.value()).abs() < pow2(-60));
    assert!(matches!(o.evaluate_rows(&p, 3..5), Err(OracleError::MalformedPayload(_))));
    assert_eq!(o.transcript()[0].rows, (2, 4));
}

#[test]
fn fpa_precision_matches_native_double() {
    let mut cfg = OracleConfig::new(LossSpec::BinaryCe, r(1, 4));
    cfg.precision = Precision::Fpa { format: FpaFormat::ieee754_double() };
    let mut o = Oracle::new(LabelVector::new(vec![1, 0], 2).unwrap(), cfg).unwrap();
    let p = Payload::binary(&[BigReal::ratio(1, 4), BigReal::ratio(1, 8)]);
    let got = o.evaluate(&p).unwrap().value.to_real().unwrap().to_f64();
    let native = (-(0.25f64.ln()) + -(0.875f64.ln())) / 2.0;
    assert_eq!(got, native);
}

#[test]
fn adversarial_noise_pushes_toward_competitor() {
    let labels = LabelVector::new(vec![1, 0, 1], 2).unwrap();
    let mut cfg = OracleConfig::new(LossSpec::BinaryCe, r(1, 2));
    cfg.noise = Noise::AdversarialTowardCompetitor { margin: r(1, 100) };
    let mut o = Oracle::new(labels.clone(), cfg).unwrap();
    let p = Payload::binary(&[BigReal::ratio(1, 3), BigReal::ratio(1, 5), BigReal::ratio(3, 7)]);
    let l = o.evaluate(&p).unwrap().value.to_real().unwrap();
    let eps = pow2(-100);
    let f = |s: &LabelVector| losses::eval(&LossSpec::BinaryCe, s, &p, &eps).unwrap().value().clone();
    let truth = f(&labels);
    let nearest = LabelVector::all(3, 2).filter(|s| s != &labels).map(|s| f(&s)).min_by_key(|v| (v - &truth).abs()).unwrap();
    assert_eq!((l.value() - &truth).is_positive(), (nearest - &truth).is_positive());
}

fn noise_strategy() -> impl Strategy<Value = Noise> {
    prop_oneof![
        Just(Noise::None),
        any::<u64>().prop_map(|seed| Noise::Uniform { seed }),
        (1i64..99, any::<u64>()).prop_map(|(m, seed)| Noise::WorstCase { margin: r(m, 100), seed }),
        (1i64..99).prop_map(|m| Noise::AdversarialTowardCompetitor { margin: r(m, 100) }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Every transcript entry replays to within `τ` plus the error budget of the exact loss.
    #[test]
    fn noise_bound_and_determinism(
        noise in noise_strategy(),
        labels in prop::collection::vec(0u32..2, 1..6),
        theta in prop::collection::vec(prop::collection::vec(1i64..63, 1..6), 1..4),
        tau_n in 1i64..64,
    ) {
        let n = labels.len();
        let sigma = LabelVector::new(labels, 2).unwrap();
        let tau = r(tau_n, 16);
        let mut cfg = OracleConfig::new(LossSpec::BinaryCe, tau.clone());
        cfg.noise = noise;
        let payloads: Vec<Payload> = theta
            .iter()
            .map(|t| Payload::binary(&(0..n).map(|i| BigReal::ratio(t[i % t.len()], 64)).collect::<Vec<_>>()))
            .collect();
        let run = || {
            let mut o = Oracle::new(sigma.clone(), cfg.clone()).unwrap();
            let vals: Vec<BigReal> = payloads.iter().map(|p| o.evaluate(p).unwrap().value.to_real().unwrap()).collect();
            (vals, o.transcript().to_vec())
        };
        let (vals, transcript) = run();
        prop_assert_eq!(&transcript, &run().1);
        let Precision::Apa { err } = &cfg.precision else { unreachable!() };
        for (j, (p, l)) in payloads.iter().zip(&vals).enumerate() {
            prop_assert_eq!(transcript[j].index, j as u64);
            let f = losses::eval(&LossSpec::BinaryCe, &sigma, p, &pow2(-128)).unwrap();
            prop_assert!((l.value() - f.value()).abs() < &tau + err + pow2(-120));
        }
    }
}
