//! A two-layer ReLU/Sigmoid network whose output is a fixed target for every admissible input.
//!
//! `u₂ = ReLU(vᵀ M₁)`, `u₃ = Sigmoid(u₂ᵀ M₂ + x′)` with `M₁ < 0` entrywise and `x′ = logit(target)`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bignum::{exp_bits, ln3, ln_bits, parse_rational, rational_to_decimal, BigNumError, BigReal, FloatModel};
use crate::losses::{Payload, Row};

/// Relative precision of numerically evaluated outputs, in bits.
pub const DEFAULT_BITS: u64 = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MutNetError {
    #[error("target entry {index} is not inside (0, 1)")]
    Domain { index: usize },
    #[error("input entry {index} is negative")]
    DomainViolation { index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed network: {0}")]
    Parse(String),
    #[error(transparent)]
    Numeric(#[from] BigNumError),
}

/// Output-layer bias `x′_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Bias {
    /// `w ln 3`, the logit of `3^w / (1 + 3^w)`.
    Pow3(BigRational),
    /// `ln(θ / (1 − θ))`.
    Logit(BigReal),
    /// An explicit value.
    Value(BigReal),
}

impl Bias {
    /// The bias to absolute error about `2^-p`.
    pub fn eval(&self, p: u64) -> Result<BigReal, BigNumError> {
        match self {
            Bias::Pow3(w) if w.is_zero() => Ok(BigReal::zero()),
            Bias::Pow3(w) => {
                let extra = w.abs().ceil().to_integer().bits() + 4;
                Ok(ln3(p + extra).mul_rat(w).round_bits(p + 2))
            }
            Bias::Logit(t) => {
                let one_minus = BigReal::one() - t;
                Ok((ln_bits(t, p + 2)? - ln_bits(&one_minus, p + 2)?).round_bits(p + 2))
            }
            Bias::Value(x) => Ok(x.clone()),
        }
    }

    /// `[1 − Sigmoid(x′), Sigmoid(x′)]` when the pre-activation is exactly the bias.
    fn exact_row(&self) -> Option<Row> {
        match self {
            Bias::Pow3(w) => Some(Row::Pow3(vec![BigRational::zero(), w.clone()])),
            Bias::Logit(t) => Some(Row::Values(vec![&BigReal::one() - t, t.clone()])),
            Bias::Value(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutNet {
    /// `d₁ × d₁`, every entry negative.
    pub m1: Vec<Vec<BigRational>>,
    /// `d₁ × d₂`.
    pub m2: Vec<Vec<BigRational>>,
    pub bias: Vec<Bias>,
    /// Relative precision of numerically evaluated outputs.
    pub bits: u64,
}

/// Uniform on `(lo, lo + 1)` with 32 random bits, as a dyadic rational.
fn uniform_unit(rng: &mut ChaCha8Rng, lo: i64) -> BigRational {
    let m: u32 = rng.gen();
    BigRational::from_integer(BigInt::from(lo)) + BigRational::new(BigInt::from(2 * m as u64 + 1), BigInt::from(1u64 << 33))
}

fn check_target(i: usize, t: &BigReal) -> Result<(), MutNetError> {
    if t.is_certainly_positive() && (&BigReal::one() - t).is_certainly_positive() {
        Ok(())
    } else {
        Err(MutNetError::Domain { index: i })
    }
}

impl MutNet {
    /// Network with output `target`; `M₁ ~ U(−2, −1)` and `M₂ ~ U(−1, 1)` from `seed`.
    pub fn build(target: &[BigReal], d1: usize, seed: u64) -> Result<MutNet, MutNetError> {
        for (i, t) in target.iter().enumerate() {
            check_target(i, t)?;
        }
        Self::with_bias(target.iter().cloned().map(Bias::Logit).collect(), d1, seed)
    }

    /// Network whose output is a binary payload: `[1 − θ, θ]` rows or single sigmoid logits.
    pub fn build_from_payload(payload: &Payload, d1: usize, seed: u64) -> Result<MutNet, MutNetError> {
        let mut bias = Vec::with_capacity(payload.n());
        for (i, row) in payload.rows().iter().enumerate() {
            let b = match (payload.is_logits(), row) {
                (false, Row::Pow3(w)) if w.len() == 2 => Bias::Pow3(&w[1] - &w[0]),
                (false, Row::Values(v)) if v.len() == 2 => {
                    check_target(i, &v[1])?;
                    Bias::Logit(v[1].clone())
                }
                (true, Row::Pow3(w)) if w.len() == 1 => Bias::Pow3(w[0].clone()),
                (true, Row::Values(v)) if v.len() == 1 => Bias::Value(v[0].clone()),
                _ => return Err(MutNetError::Shape(format!("row {i} is not a binary prediction"))),
            };
            bias.push(b);
        }
        Self::with_bias(bias, d1, seed)
    }

    pub fn with_bias(bias: Vec<Bias>, d1: usize, seed: u64) -> Result<MutNet, MutNetError> {
        if d1 == 0 || bias.is_empty() {
            return Err(MutNetError::Shape("d1 and d2 must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m1 = (0..d1).map(|_| (0..d1).map(|_| uniform_unit(&mut rng, -2)).collect()).collect();
        let m2 = (0..d1)
            .map(|_| (0..bias.len()).map(|_| uniform_unit(&mut rng, 0) * BigRational::from_integer(2.into()) - BigRational::one()).collect())
            .collect();
        Ok(MutNet { m1, m2, bias, bits: DEFAULT_BITS })
    }

    pub fn d1(&self) -> usize {
        self.m1.len()
    }

    pub fn d2(&self) -> usize {
        self.bias.len()
    }

    pub fn validate(&self) -> Result<(), MutNetError> {
        let (d1, d2) = (self.d1(), self.d2());
        if d1 == 0 || d2 == 0 {
            return Err(MutNetError::Shape("empty network".into()));
        }
        if self.m1.iter().any(|r| r.len() != d1) || self.m2.len() != d1 || self.m2.iter().any(|r| r.len() != d2) {
            return Err(MutNetError::Shape(format!("expected M1 {d1}×{d1} and M2 {d1}×{d2}")));
        }
        if self.m1.iter().flatten().any(|x| !x.is_negative()) {
            return Err(MutNetError::Parse("M1 has a non-negative entry".into()));
        }
        Ok(())
    }

    /// `u₂ = ReLU(vᵀ M₁)`, exactly.
    pub fn hidden(&self, v: &[BigRational], nonneg_domain: bool) -> Result<Vec<BigRational>, MutNetError> {
        if v.len() != self.d1() {
            return Err(MutNetError::Shape(format!("input has {} entries, expected {}", v.len(), self.d1())));
        }
        if nonneg_domain {
            if let Some(index) = v.iter().position(Signed::is_negative) {
                return Err(MutNetError::DomainViolation { index });
            }
        }
        Ok((0..self.d1())
            .map(|j| {
                let s: BigRational = v.iter().zip(&self.m1).map(|(vi, row)| vi * &row[j]).sum();
                if s.is_positive() { s } else { BigRational::zero() }
            })
            .collect())
    }

    /// Binary payload `[1 − u₃_i, u₃_i]`.
    ///
    /// Pre-activations equal to the bias are evaluated symbolically; the rest to `bits` relative bits.
    pub fn forward(&self, v: &[BigRational], nonneg_domain: bool) -> Result<Payload, MutNetError> {
        let u2 = self.hidden(v, nonneg_domain)?;
        let mut rows = Vec::with_capacity(self.d2());
        for (i, b) in self.bias.iter().enumerate() {
            let lin: BigRational = u2.iter().zip(&self.m2).map(|(u, row)| u * &row[i]).sum();
            if lin.is_zero() {
                if let Some(row) = b.exact_row() {
                    rows.push(row);
                    continue;
                }
            }
            let z = b.eval(self.bits + 8)? + BigReal::exact(lin);
            rows.push(Row::Values(sigmoid_pair(&z, self.bits)?));
        }
        Ok(Payload::Probs(rows))
    }

    /// `u₃` under a rounding model, one rounding per operation.
    pub fn forward_model<M: FloatModel>(
        &self,
        model: &M,
        v: &[M::Value],
        nonneg_domain: bool,
    ) -> Result<Vec<M::Value>, MutNetError> {
        if v.len() != self.d1() {
            return Err(MutNetError::Shape(format!("input has {} entries, expected {}", v.len(), self.d1())));
        }
        let zero = model.lift_rational(&BigRational::zero());
        let one = model.lift_rational(&BigRational::one());
        let sign = |x: &M::Value| model.to_rational(x).map(|r| r.signum());
        if nonneg_domain {
            if let Some(index) = v.iter().position(|x| sign(x).is_none_or(|s| s.is_negative())) {
                return Err(MutNetError::DomainViolation { index });
            }
        }
        let mut u2 = Vec::with_capacity(self.d1());
        for j in 0..self.d1() {
            let mut s = zero.clone();
            for (vi, row) in v.iter().zip(&self.m1) {
                s = model.add(&s, &model.mul(vi, &model.lift_rational(&row[j])));
            }
            u2.push(if sign(&s).is_some_and(|x| x.is_positive()) { s } else { zero.clone() });
        }
        let mut out = Vec::with_capacity(self.d2());
        for (i, b) in self.bias.iter().enumerate() {
            let mut z = model.lift_with(&|p| b.eval(p));
            for (u, row) in u2.iter().zip(&self.m2) {
                z = model.add(&z, &model.mul(u, &model.lift_rational(&row[i])));
            }
            let e = model.exp(&model.sub(&zero, &z));
            out.push(model.div(&one, &model.add(&one, &e)));
        }
        Ok(out)
    }

    /// Weights and biases as decimal strings; biases are rounded to `digits` places.
    pub fn to_json(&self, digits: usize) -> Result<MutNetJson, MutNetError> {
        let p = (digits as f64 * std::f64::consts::LOG2_10).ceil() as u64 + 8;
        let bias = self
            .bias
            .iter()
            .map(|b| Ok(b.eval(p)?.to_decimal(digits)))
            .collect::<Result<_, BigNumError>>()?;
        Ok(MutNetJson {
            d1: self.d1(),
            d2: self.d2(),
            m1: self.m1.iter().map(|r| r.iter().map(exact_decimal).collect()).collect(),
            m2: self.m2.iter().map(|r| r.iter().map(exact_decimal).collect()).collect(),
            bias,
            hidden_activation: "relu".into(),
            output_activation: "sigmoid".into(),
        })
    }

    pub fn from_json(j: &MutNetJson) -> Result<MutNet, MutNetError> {
        let parse = |s: &String| parse_rational(s).map_err(|e| MutNetError::Parse(e.to_string()));
        let m1 = j.m1.iter().map(|r| r.iter().map(parse).collect()).collect::<Result<_, _>>()?;
        let m2 = j.m2.iter().map(|r| r.iter().map(parse).collect()).collect::<Result<_, _>>()?;
        let bias = j.bias.iter().map(|s| parse(s).map(|x| Bias::Value(BigReal::exact(x)))).collect::<Result<_, _>>()?;
        let net = MutNet { m1, m2, bias, bits: DEFAULT_BITS };
        net.validate()?;
        if net.d1() != j.d1 || net.d2() != j.d2 {
            return Err(MutNetError::Shape("declared dimensions do not match the weights".into()));
        }
        Ok(net)
    }
}

/// Exact decimal of a dyadic weight.
fn exact_decimal(r: &BigRational) -> String {
    rational_to_decimal(r, r.denom().trailing_zeros().unwrap_or(0) as usize)
}

/// `[1/(1 + e^z), 1/(1 + e^{−z})]`, each to `bits` relative bits.
fn sigmoid_pair(z: &BigReal, bits: u64) -> Result<Vec<BigReal>, BigNumError> {
    let zmax = z.upper().abs().max(z.lower().abs()).ceil().to_integer();
    let extra = u64::try_from(&zmax).map_err(|_| BigNumError::OverflowBudget { bits: u64::MAX })?;
    // e^{-|z|} ≥ 2^{-3|z|/2}
    let q = bits + extra + extra / 2 + 8;
    let e = exp_bits(&(-z.abs()), q)?;
    let one = BigReal::one();
    let denom = &one + &e;
    let large = one.div(&denom)?.round_bits(q);
    let small = e.div(&denom)?.round_bits(q);
    Ok(if z.value().is_negative() { vec![large, small] } else { vec![small, large] })
}

/// JSON form of a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutNetJson {
    pub d1: usize,
    pub d2: usize,
    pub m1: Vec<Vec<String>>,
    pub m2: Vec<Vec<String>>,
    pub bias: Vec<String>,
    pub hidden_activation: String,
    pub output_activation: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn biases_are_logits() {
        let net = MutNet::build(&[BigReal::ratio(1, 2), BigReal::ratio(1, 4), BigReal::ratio(3, 4)], 3, 1).unwrap();
        let b: Vec<f64> = net.bias.iter().map(|b| b.eval(64).unwrap().to_f64()).collect();
        assert_eq!(b[0], 0.0);
        assert!((b[1] + 3f64.ln()).abs() < 1e-15 && (b[2] - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn weights_have_the_right_signs() {
        let net = MutNet::build(&[BigReal::ratio(1, 3)], 5, 7).unwrap();
        net.validate().unwrap();
        assert!(net.m1.iter().flatten().all(|x| *x > r(-2, 1) && *x < r(-1, 1)));
        assert!(net.m2.iter().flatten().all(|x| *x > r(-1, 1) && *x < r(1, 1)));
    }

    #[test]
    fn boundary_targets_are_rejected() {
        assert_eq!(MutNet::build(&[BigReal::one()], 2, 0), Err(MutNetError::Domain { index: 0 }));
        assert_eq!(MutNet::build(&[BigReal::ratio(1, 2), BigReal::zero()], 2, 0), Err(MutNetError::Domain { index: 1 }));
    }

    #[test]
    fn negative_inputs() {
        let net = MutNet::build(&[BigReal::ratio(1, 3)], 2, 0).unwrap();
        let v = [r(1, 2), r(-1, 2)];
        assert_eq!(net.forward(&v, true), Err(MutNetError::DomainViolation { index: 1 }));
        // Large negative inputs switch the hidden layer on and move the output.
        let v = [r(-10, 1), r(-10, 1)];
        assert!(net.hidden(&v, false).unwrap().iter().all(|x| x.is_positive()));
        assert_ne!(net.forward(&v, false).unwrap(), net.forward(&[r(0, 1), r(0, 1)], true).unwrap());
    }

    #[test]
    fn sigmoid_pair_is_accurate_far_out() {
        let z = BigReal::from_int(600);
        let p = sigmoid_pair(&z, 64).unwrap();
        // 1 − Sigmoid(600) = e^{-600} / (1 + e^{-600}); compare logs.
        let l = ln_bits(&p[0], 80).unwrap().to_f64();
        assert!((l + 600.0).abs() < 1e-12);
    }
}
