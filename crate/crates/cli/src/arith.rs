//! Arithmetic models for the simulated curator.

use std::fmt;
use std::str::FromStr;

use codomain::bignum::{pow2, Emulated, FloatModel, FpaFormat, FpaMode, FpaValue, Native};
use codomain::losses::{FloatForm, FloatTable, LabelVector, LossError, LossSpec, LossTable, Payload};
use num_rational::BigRational;

/// How the curator computes the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arith {
    Apa,
    Fpa(FpaFormat),
}

impl Default for Arith {
    fn default() -> Self {
        Arith::Fpa(FpaFormat::ieee754_double())
    }
}

impl FromStr for Arith {
    type Err = String;

    /// `apa`, `fpa` (double), `fpa:double`, `fpa:single`, `fpa:phi=N`, or `fpa:e=E,m=M`.
    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim().to_ascii_lowercase();
        let fmt = match t.as_str() {
            "apa" => return Ok(Arith::Apa),
            "fpa" | "double" | "fpa:double" | "ieee754-double" | "fpa:ieee754-double" => FpaFormat::ieee754_double(),
            "single" | "fpa:single" | "ieee754-single" | "fpa:ieee754-single" => FpaFormat::ieee754_single(),
            _ => {
                let rest = t.strip_prefix("fpa:").ok_or_else(|| format!("unknown precision {s:?}"))?;
                if let Some(phi) = rest.strip_prefix("phi=") {
                    let phi = phi.parse().map_err(|_| format!("bad φ in {s:?}"))?;
                    FpaFormat::symmetric(phi).map_err(|e| e.to_string())?
                } else {
                    let mut e = None;
                    let mut m = None;
                    for part in rest.split(',') {
                        match part.split_once('=') {
                            Some(("e", v)) => e = v.parse().ok(),
                            Some(("m", v)) => m = v.parse().ok(),
                            _ => return Err(format!("unknown precision {s:?}")),
                        }
                    }
                    let (Some(e), Some(m)) = (e, m) else { return Err(format!("need e= and m= in {s:?}")) };
                    FpaFormat::explicit(e, m).map_err(|e| e.to_string())?
                }
            }
        };
        Ok(Arith::Fpa(fmt))
    }
}

impl fmt::Display for Arith {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arith::Apa => write!(f, "apa"),
            Arith::Fpa(fmt) if *fmt == FpaFormat::ieee754_double() => write!(f, "fpa:double"),
            Arith::Fpa(fmt) if *fmt == FpaFormat::ieee754_single() => write!(f, "fpa:single"),
            Arith::Fpa(FpaFormat { mode: FpaMode::Symmetric { phi }, .. }) => write!(f, "fpa:phi={phi}"),
            Arith::Fpa(fmt) => write!(f, "fpa:e={},m={}", fmt.exp_bits, fmt.mant_bits),
        }
    }
}

enum Table {
    Apa(LossTable),
    F64(Native<f64>, FloatTable<f64>),
    F32(Native<f32>, FloatTable<f32>),
    Emulated(Emulated, FloatTable<FpaValue>),
}

/// Per-row loss terms of one payload, ready to answer for any labeling.
///
/// Activation losses are evaluated with their defining formulas, as a plain implementation would.
pub struct Curator {
    table: Table,
}

impl Curator {
    pub fn build(arith: Arith, spec: &LossSpec, payload: &Payload, tau: &BigRational) -> Result<Curator, LossError> {
        let form = FloatForm::Definition;
        let table = match arith {
            Arith::Apa => Table::Apa(LossTable::build(spec, payload, &(tau * pow2(-12)))?),
            Arith::Fpa(f) if f == FpaFormat::ieee754_double() => {
                let m = Native::<f64>::new();
                let t = FloatTable::build_with(&m, spec, payload, form)?;
                Table::F64(m, t)
            }
            Arith::Fpa(f) if f == FpaFormat::ieee754_single() => {
                let m = Native::<f32>::new();
                let t = FloatTable::build_with(&m, spec, payload, form)?;
                Table::F32(m, t)
            }
            Arith::Fpa(f) => {
                let m = Emulated { format: f };
                let t = FloatTable::build_with(&m, spec, payload, form)?;
                Table::Emulated(m, t)
            }
        };
        Ok(Curator { table })
    }

    /// `f(σ) + noise`, computed in the model; `None` when the result is not finite.
    pub fn answer(&self, sigma: &LabelVector, noise: &BigRational) -> Option<BigRational> {
        fn run<M: FloatModel>(m: &M, t: &FloatTable<M::Value>, sigma: &LabelVector, noise: &BigRational) -> Option<BigRational> {
            let v = m.add(&t.eval(m, sigma), &m.lift_rational(noise));
            m.to_rational(&v)
        }
        match &self.table {
            Table::Apa(t) => Some(t.eval(sigma).value() + noise),
            Table::F64(m, t) => run(m, t, sigma, noise),
            Table::F32(m, t) => run(m, t, sigma, noise),
            Table::Emulated(m, t) => run(m, t, sigma, noise),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use codomain::bignum::BigReal;

    #[test]
    fn parse_round_trip() {
        for s in ["apa", "fpa:double", "fpa:single", "fpa:e=5,m=10", "fpa:phi=17"] {
            assert_eq!(s.parse::<Arith>().unwrap().to_string(), s);
        }
        assert_eq!("fpa".parse::<Arith>().unwrap(), Arith::default());
        assert!("fpa:phi=16".parse::<Arith>().is_err());
        assert!("float".parse::<Arith>().is_err());
    }

    #[test]
    fn double_curator_matches_native() {
        let p = Payload::binary(&[BigReal::ratio(1, 4), BigReal::ratio(1, 8)]);
        let c = Curator::build(Arith::default(), &LossSpec::BinaryCe, &p, &BigRational::new(1.into(), 4.into())).unwrap();
        let s = LabelVector::new(vec![1, 0], 2).unwrap();
        let got = c.answer(&s, &BigRational::new(1.into(), 8.into())).unwrap();
        let native = (-(0.25f64.ln()) + -(0.875f64.ln())) / 2.0 + 0.125;
        assert_eq!(got, BigRational::from_float(native).unwrap());
    }
}
