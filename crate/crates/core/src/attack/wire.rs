//! JSON encodings of payloads.

use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::AttackError;
use crate::bignum::{parse_rational, rational_to_string, round_from_enclosures, FpaFlags, FpaFormat, FpaValue};
use crate::losses::{row_entries, Payload, Row};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// Exact `"p/q"` strings.
    Rational,
    /// Base-3 exponents of each entry.
    Pow3,
    /// Fixed-point decimal strings.
    Decimal,
    /// Correctly rounded floating-point triples.
    Fpa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadJson {
    /// `"probs"` or `"logits"`.
    pub kind: String,
    pub encoding: Encoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digits: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<FpaFormat>,
    pub rows: Vec<Vec<Value>>,
}

fn enc_err(msg: impl Into<String>) -> AttackError {
    AttackError::Encoding(msg.into())
}

/// Encode a payload. `digits` applies to `Decimal`, `format` to `Fpa`.
pub fn payload_to_json(
    payload: &Payload,
    encoding: Encoding,
    digits: usize,
    format: Option<FpaFormat>,
) -> Result<PayloadJson, AttackError> {
    let kind = if payload.is_logits() { "logits" } else { "probs" }.to_string();
    let mut rows = Vec::with_capacity(payload.n());
    for (i, row) in payload.rows().iter().enumerate() {
        let out: Vec<Value> = match encoding {
            Encoding::Pow3 => match row {
                Row::Pow3(w) => w.iter().map(|x| Value::String(rational_to_string(x))).collect(),
                Row::Values(_) => return Err(enc_err(format!("row {i} is not given by base-3 exponents"))),
            },
            Encoding::Rational => exact_entries(payload, i)?
                .iter()
                .map(|x| Value::String(rational_to_string(x)))
                .collect(),
            Encoding::Decimal => {
                let p = (digits as f64 * std::f64::consts::LOG2_10).ceil() as u64 + 4;
                row_entries(payload, i, p)?.iter().map(|x| Value::String(x.to_decimal(digits))).collect()
            }
            Encoding::Fpa => {
                let fmt = format.ok_or_else(|| enc_err("fpa encoding needs a format"))?;
                (0..row.len())
                    .map(|j| {
                        let v = round_from_enclosures(fmt, |p| {
                            Ok(row_entries(payload, i, p).map_err(|_| crate::bignum::BigNumError::AmbiguousRounding)?[j].clone())
                        });
                        if v.is_flagged() {
                            return Err(enc_err(format!("entry ({i}, {j}) is not representable")));
                        }
                        Ok(json!({ "sign": v.sign, "exponent": v.exponent, "mantissa": v.mantissa }))
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        rows.push(out);
    }
    Ok(PayloadJson {
        kind,
        encoding,
        digits: (encoding == Encoding::Decimal).then_some(digits),
        format: if encoding == Encoding::Fpa { format } else { None },
        rows,
    })
}

fn exact_entries(payload: &Payload, i: usize) -> Result<Vec<BigRational>, AttackError> {
    match &payload.rows()[i] {
        Row::Values(v) => v
            .iter()
            .map(|x| if x.is_exact() { Ok(x.value().clone()) } else { Err(enc_err(format!("row {i} is not exact"))) })
            .collect(),
        Row::Pow3(w) if payload.is_logits() => {
            if w.iter().all(Zero::is_zero) {
                Ok(w.clone())
            } else {
                Err(enc_err(format!("row {i} has irrational logits")))
            }
        }
        Row::Pow3(w) => {
            if !w.iter().all(|x| x.is_integer()) {
                return Err(enc_err(format!("row {i} has irrational probabilities")));
            }
            let wmin = w.iter().min().expect("non-empty row").to_integer();
            let pw: Vec<num_bigint::BigInt> = w
                .iter()
                .map(|x| {
                    let e = (x.to_integer() - &wmin).to_string().parse::<u32>().map_err(|_| enc_err("exponent too large"))?;
                    Ok(num_bigint::BigInt::from(3u32).pow(e))
                })
                .collect::<Result<_, AttackError>>()?;
            let s: num_bigint::BigInt = pw.iter().sum();
            Ok(pw.into_iter().map(|x| BigRational::new(x, s.clone())).collect())
        }
    }
}

/// Decode a payload; probabilities and logits become exact rational entries.
pub fn payload_from_json(j: &PayloadJson) -> Result<Payload, AttackError> {
    let logits = match j.kind.as_str() {
        "probs" => false,
        "logits" => true,
        other => return Err(enc_err(format!("unknown payload kind {other:?}"))),
    };
    let mut rows = Vec::with_capacity(j.rows.len());
    for (i, r) in j.rows.iter().enumerate() {
        let row = match j.encoding {
            Encoding::Pow3 => Row::Pow3(r.iter().map(|v| parse_str(v, i)).collect::<Result<_, _>>()?),
            Encoding::Rational | Encoding::Decimal => Row::Values(
                r.iter().map(|v| parse_str(v, i).map(crate::bignum::BigReal::exact)).collect::<Result<_, _>>()?,
            ),
            Encoding::Fpa => {
                let fmt = j.format.ok_or_else(|| enc_err("fpa encoding needs a format"))?;
                Row::Values(r.iter().map(|v| parse_fpa(v, fmt, i)).collect::<Result<_, _>>()?)
            }
        };
        rows.push(row);
    }
    Ok(if logits { Payload::Logits(rows) } else { Payload::Probs(rows) })
}

fn parse_str(v: &Value, i: usize) -> Result<BigRational, AttackError> {
    let s = v.as_str().ok_or_else(|| enc_err(format!("row {i}: entries must be strings")))?;
    parse_rational(s).map_err(|e| enc_err(format!("row {i}: {e}")))
}

fn parse_fpa(v: &Value, fmt: FpaFormat, i: usize) -> Result<crate::bignum::BigReal, AttackError> {
    let bad = || enc_err(format!("row {i}: malformed floating-point entry"));
    let sign = v.get("sign").and_then(Value::as_i64).ok_or_else(bad)?;
    let exponent = v.get("exponent").and_then(Value::as_i64).ok_or_else(bad)?;
    let mantissa = v.get("mantissa").and_then(Value::as_u64).ok_or_else(bad)?;
    if sign.abs() != 1 || mantissa >> fmt.mant_bits != 0 {
        return Err(bad());
    }
    let fv = FpaValue { format: fmt, sign: sign as i8, exponent, mantissa, flags: FpaFlags::default() };
    let r = fv.to_rational().ok_or_else(bad)?;
    Ok(crate::bignum::BigReal::exact(r))
}
