//! Brute-force codomain separability and executable negative results.

use std::ops::Add;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::bignum::{pow2, rational_to_string, BigReal};
use crate::losses::{LabelVector, LossError, LossSpec, LossTable, Payload, Row};

/// Largest labeling space `lambda_bruteforce` enumerates by default.
pub const LAMBDA_CAP: u64 = 6561;

/// Finest evaluation precision, in bits, tried before giving up on a near-collision.
const MAX_BITS: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeparabilityError {
    #[error("labeling space of size {size} exceeds cap {cap}")]
    TooLarge { size: u128, cap: u64 },
    #[error("set function is not monotone: f({superset:#b}) < f({subset:#b})")]
    NotMonotone { subset: u64, superset: u64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "tau", rename_all = "kebab-case")]
pub enum Verdict {
    /// `Λ ≥ τ`.
    Separable(#[serde(with = "crate::serde_rat")] BigRational),
    /// `0 < Λ < τ`.
    NotSeparable(#[serde(with = "crate::serde_rat")] BigRational),
    /// `Λ > 0` with no noise bound claimed.
    ZeroPlusOnly,
    /// Two labelings collide exactly.
    Zero,
    /// The evaluation precision could not place `Λ` relative to the claim.
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeparabilityReport {
    pub lambda: BigReal,
    /// Closest pair of labelings.
    pub pair: (LabelVector, LabelVector),
    pub tau_claimed: Option<BigRational>,
    pub verdict: Verdict,
    /// Set when `Λ = 0` was certified by exact comparison.
    pub exact_collision: bool,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    lambda: String,
    lambda_err: String,
    pair: [&'a [u32]; 2],
    tau_claimed: Option<String>,
    verdict: &'a Verdict,
    exact_collision: bool,
}

impl SeparabilityReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ReportJson {
            lambda: self.lambda.to_decimal(30),
            lambda_err: rational_to_string(self.lambda.err()),
            pair: [self.pair.0.labels(), self.pair.1.labels()],
            tau_claimed: self.tau_claimed.as_ref().map(rational_to_string),
            verdict: &self.verdict,
            exact_collision: self.exact_collision,
        })
        .expect("report serializes")
    }
}

fn verdict_for(lambda: &BigReal, collision: bool, tau: Option<&BigRational>) -> Verdict {
    if collision {
        return Verdict::Zero;
    }
    match tau {
        Some(t) if &lambda.lower() >= t => Verdict::Separable(t.clone()),
        Some(t) if &lambda.upper() < t && lambda.is_certainly_positive() => Verdict::NotSeparable(t.clone()),
        None if lambda.is_certainly_positive() => Verdict::ZeroPlusOnly,
        _ => Verdict::Undetermined,
    }
}

// ---------------------------------------------------------------------------
// exact forms

/// `rat + ln(ln_arg) + ln3 · ln 3`, up to a per-row constant shared by all labels.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Exact {
    rat: BigRational,
    ln_arg: BigRational,
    ln3: BigRational,
}

impl Exact {
    fn rational(r: BigRational) -> Self {
        Exact { rat: r, ln_arg: BigRational::one(), ln3: BigRational::zero() }
    }

    fn zero() -> Self {
        Exact::rational(BigRational::zero())
    }

    /// Equality of the represented reals; `None` when the check would be too costly.
    fn same_value(&self, o: &Exact) -> Option<bool> {
        if self.rat != o.rat {
            // ln(q) + c ln 3 with q, 3 rational is rational only when it is 0
            return Some(false);
        }
        let q = &self.ln_arg / &o.ln_arg;
        let d = &self.ln3 - &o.ln3;
        if d.is_zero() {
            return Some(q.is_one());
        }
        // q^v · 3^u = 1 with d = u/v
        let v = d.denom().to_u32().filter(|&v| v <= 64)?;
        let u = d.numer().to_i64().filter(|u| u.unsigned_abs() <= 1 << 20)?;
        let qv = num_traits::pow(q, v as usize);
        let three = BigRational::from_integer(BigInt::from(3u32).pow(u.unsigned_abs() as u32));
        Some(if u >= 0 { qv * three == BigRational::one() } else { qv == three })
    }
}

impl Add<&Exact> for Exact {
    type Output = Exact;
    fn add(self, o: &Exact) -> Exact {
        Exact { rat: self.rat + &o.rat, ln_arg: self.ln_arg * &o.ln_arg, ln3: self.ln3 + &o.ln3 }
    }
}

fn exact_values(row: &Row) -> Option<Vec<BigRational>> {
    match row {
        Row::Values(v) => v.iter().map(|x| x.is_exact().then(|| x.value().clone())).collect(),
        Row::Pow3(_) => None,
    }
}

fn rpow(x: &BigRational, n: u32) -> BigRational {
    num_traits::pow(x.clone(), n as usize)
}

/// Exact per-row contribution for class `c`, when the family and row admit one.
fn exact_term(spec: &LossSpec, payload: &Payload, i: usize, c: usize) -> Option<Exact> {
    let row = &payload.rows()[i];
    let logits = payload.is_logits();
    let ce = matches!(
        spec,
        LossSpec::BinaryCe | LossSpec::KaryCe { .. } | LossSpec::SoftmaxCe { .. } | LossSpec::SigmoidCe | LossSpec::Kl
    );
    if ce {
        return match (row, logits) {
            // −ln p_c = ln S + (w_max − w_c) ln 3; ln S and w_max are shared by the row
            (Row::Pow3(w), _) => {
                let w = if logits && w.len() == 1 { vec![BigRational::zero(), w[0].clone()] } else { w.clone() };
                Some(Exact { rat: BigRational::zero(), ln_arg: BigRational::one(), ln3: -w[c].clone() })
            }
            // LSE − x_c
            (Row::Values(_), true) => {
                let x = exact_values(row)?;
                let x = if x.len() == 1 { vec![BigRational::zero(), x[0].clone()] } else { x };
                Some(Exact::rational(-x[c].clone()))
            }
            (Row::Values(_), false) => {
                let p = exact_values(row)?;
                p[c].is_positive().then(|| Exact { rat: BigRational::zero(), ln_arg: p[c].recip(), ln3: BigRational::zero() })
            }
        };
    }
    if logits {
        return None;
    }
    let p = exact_values(row)?;
    let one = BigRational::one();
    let pc = p[c].clone();
    let qc = if p.len() == 2 { p[1 - c].clone() } else { &one - &pc };
    match spec {
        LossSpec::ItakuraSaito => {
            pc.is_positive().then(|| Exact { rat: pc.recip() - &one, ln_arg: pc.clone(), ln3: BigRational::zero() })
        }
        LossSpec::SquaredEuclidean => Some(Exact::rational(rpow(&qc, 2))),
        LossSpec::NormLike { alpha } => {
            if !alpha.is_integer() {
                return None;
            }
            let a = alpha.to_integer().to_u32()?;
            let am1 = alpha - &one;
            Some(Exact::rational(&one + &am1 * rpow(&pc, a) - alpha * rpow(&pc, a - 1) + &am1 * rpow(&qc, a)))
        }
        LossSpec::Mahalanobis { a } => {
            let (s1, s0) = if c == 1 { (one.clone(), BigRational::zero()) } else { (BigRational::zero(), one.clone()) };
            let v0 = s1 - &p[1];
            let v1 = s0 - &p[0];
            let cross = &a[0][1] + &a[1][0];
            Some(Exact::rational(&v0 * &v0 * &a[0][0] + &v0 * &v1 * cross + &v1 * &v1 * &a[1][1]))
        }
        LossSpec::Additive { generator } => {
            let other = &p[1 - c];
            match generator {
                crate::losses::Generator::NegEntropy => pc.is_positive().then(|| Exact {
                    rat: &pc - &one + other,
                    ln_arg: pc.recip(),
                    ln3: BigRational::zero(),
                }),
                crate::losses::Generator::Square => Some(Exact::rational(rpow(&(&one - &pc), 2) + rpow(other, 2))),
            }
        }
        _ => None,
    }
}

fn exact_table(spec: &LossSpec, payload: &Payload) -> Option<Vec<Vec<Exact>>> {
    let k = spec.k() as usize;
    (0..payload.n()).map(|i| (0..k).map(|c| exact_term(spec, payload, i, c)).collect()).collect()
}

fn exact_sum(table: &[Vec<Exact>], sigma: &LabelVector) -> Exact {
    sigma.labels().iter().enumerate().fold(Exact::zero(), |acc, (i, &c)| acc + &table[i][c as usize])
}

// ---------------------------------------------------------------------------
// Λ by enumeration

/// `Λ_θ(f)` over all `K^N` labelings, with adaptive precision.
///
/// Values are recomputed with a tighter budget until every adjacent gap exceeds four times the
/// error, or the close pairs are shown equal exactly.
pub fn lambda_bruteforce(
    spec: &LossSpec,
    payload: &Payload,
    tau_claimed: Option<&BigRational>,
) -> Result<SeparabilityReport, SeparabilityError> {
    lambda_bruteforce_capped(spec, payload, tau_claimed, LAMBDA_CAP)
}

pub fn lambda_bruteforce_capped(
    spec: &LossSpec,
    payload: &Payload,
    tau_claimed: Option<&BigRational>,
    cap: u64,
) -> Result<SeparabilityReport, SeparabilityError> {
    payload.check_for(spec)?;
    let n = payload.n();
    let k = spec.k();
    let size = (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if size > cap as u128 {
        return Err(SeparabilityError::TooLarge { size, cap });
    }
    if size < 2 {
        return Err(SeparabilityError::Invalid("need at least two labelings".into()));
    }
    let exact = exact_table(spec, payload);
    let mut bits = 64u64;
    loop {
        let eps = pow2(-(bits as i64));
        let table = LossTable::build(spec, payload, &eps)?;
        let mut vals: Vec<(BigReal, u64)> =
            LabelVector::all(n, k).map(|s| (table.eval(&s), s.index())).collect();
        vals.sort_by(|a, b| a.0.value().cmp(b.0.value()).then(a.1.cmp(&b.1)));
        let max_err = vals.iter().map(|v| v.0.err().clone()).max().unwrap_or_else(BigRational::zero);
        let close = &max_err * BigRational::from_integer(4.into());
        let mut best: Option<(BigRational, usize)> = None;
        let mut unresolved = false;
        let mut collision: Option<usize> = None;
        for j in 0..vals.len() - 1 {
            let gap = vals[j + 1].0.value() - vals[j].0.value();
            if gap <= close {
                let s1 = LabelVector::from_index(vals[j].1, n, k);
                let s2 = LabelVector::from_index(vals[j + 1].1, n, k);
                match exact.as_ref().and_then(|t| exact_sum(t, &s1).same_value(&exact_sum(t, &s2))) {
                    Some(true) => {
                        collision.get_or_insert(j);
                    }
                    _ => unresolved = true,
                }
            }
            if best.as_ref().is_none_or(|(g, _)| gap < *g) {
                best = Some((gap, j));
            }
        }
        let pair_at = |j: usize| (LabelVector::from_index(vals[j].1, n, k), LabelVector::from_index(vals[j + 1].1, n, k));
        if let Some(j) = collision {
            return Ok(SeparabilityReport {
                lambda: BigReal::zero(),
                pair: pair_at(j),
                tau_claimed: tau_claimed.cloned(),
                verdict: Verdict::Zero,
                exact_collision: true,
            });
        }
        let (gap, j) = best.expect("at least one pair");
        let lambda = BigReal::with_err(gap, &max_err * BigRational::from_integer(2.into()));
        let placed = tau_claimed.is_none_or(|t| lambda.lower() >= *t || lambda.upper() < *t);
        let resolved = !unresolved && placed && lambda.value() >= &(&max_err * BigRational::from_integer(8.into()));
        let decided = tau_claimed.is_some_and(|t| lambda.upper() < *t && lambda.is_certainly_positive());
        if resolved || decided || bits >= MAX_BITS {
            return Ok(SeparabilityReport {
                verdict: verdict_for(&lambda, false, tau_claimed),
                lambda,
                pair: pair_at(j),
                tau_claimed: tau_claimed.cloned(),
                exact_collision: false,
            });
        }
        bits *= 2;
    }
}

/// A loss value consistent with the two closest labelings under noise below `τ`, when `Λ < 2τ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmbiguityWitness {
    pub loss: BigReal,
    pub first: LabelVector,
    pub second: LabelVector,
}

pub fn ambiguity_witness(
    spec: &LossSpec,
    payload: &Payload,
    tau: &BigRational,
) -> Result<Option<AmbiguityWitness>, SeparabilityError> {
    let two_tau = tau * BigRational::from_integer(2.into());
    let report = lambda_bruteforce(spec, payload, Some(&two_tau))?;
    if report.lambda.value() >= &two_tau {
        return Ok(None);
    }
    let eps = pow2(-128);
    let (a, b) = report.pair;
    let fa = crate::losses::eval(spec, &a, payload, &eps)?;
    let fb = crate::losses::eval(spec, &b, payload, &eps)?;
    let mid = (&fa + &fb).mul_rat(&BigRational::new(1.into(), 2.into()));
    Ok(Some(AmbiguityWitness { loss: mid, first: a, second: b }))
}

// ---------------------------------------------------------------------------
// negative results

/// Discrete `L_p` loss `f(σ, θ) = (Σ |σ_i − θ_i|^p)^{1/p}` on binary vectors.
///
/// Enumerates every `θ ∈ {0,1}^N`; the report's `lambda` is the largest `Λ_θ` found.
pub fn discrete_lp_check(p: u32, n: usize) -> Result<SeparabilityReport, SeparabilityError> {
    if p == 0 {
        return Err(SeparabilityError::Invalid("p must be positive".into()));
    }
    if n == 0 || n > 10 {
        return Err(SeparabilityError::TooLarge { size: 1u128 << n.min(127), cap: 1 << 10 });
    }
    // On {0,1} vectors the loss is d^{1/p} for the Hamming distance d, strictly increasing in d.
    let root = |d: u32| -> BigReal {
        if p == 1 || d <= 1 {
            return BigReal::from_int(d as i64);
        }
        let x = BigReal::from_int(d as i64);
        crate::bignum::pow_real(&x, &BigRational::new(1.into(), (p as i64).into()), 96).expect("positive base")
    };
    let count = 1u64 << n;
    let mut worst: Option<(BigReal, u64, u64)> = None;
    for theta in 0..count {
        // closest pair for this θ: equal distances collide, else the smallest distance step
        let mut by_dist: Vec<Vec<u64>> = vec![Vec::new(); n + 1];
        for s in 0..count {
            by_dist[(s ^ theta).count_ones() as usize].push(s);
        }
        let (lam, a, b) = match by_dist.iter().find(|v| v.len() >= 2) {
            Some(v) => (BigReal::zero(), v[0], v[1]),
            None => {
                let mut best: Option<(BigReal, u64, u64)> = None;
                for d in 0..n {
                    let (Some(&a), Some(&b)) = (by_dist[d].first(), by_dist[d + 1].first()) else { continue };
                    let g = &root(d as u32 + 1) - &root(d as u32);
                    if best.as_ref().is_none_or(|(bg, _, _)| g.value() < bg.value()) {
                        best = Some((g, a, b));
                    }
                }
                best.expect("n >= 1")
            }
        };
        if worst.as_ref().is_none_or(|(w, _, _)| lam.value() > w.value()) {
            worst = Some((lam, a, b));
        }
    }
    let (lambda, a, b) = worst.expect("at least one θ");
    let zero = lambda.value().is_zero();
    Ok(SeparabilityReport {
        pair: (LabelVector::from_index(a, n, 2), LabelVector::from_index(b, n, 2)),
        tau_claimed: None,
        verdict: if zero { Verdict::Zero } else { Verdict::ZeroPlusOnly },
        exact_collision: zero,
        lambda,
    })
}

/// Largest `τ` not excluded by the marginal-gain bound for a monotone set function on `[N]`.
///
/// Subsets are bitmasks (bit `i` is element `i + 1`). Every marginal `f(B ∪ {j}) − f(B)` is
/// inspected, so monotonicity is checked exhaustively. With `beta`, the result is capped at `β/N`.
pub fn monotone_bound(
    f: &dyn Fn(u64) -> BigRational,
    n: usize,
    beta: Option<&BigRational>,
) -> Result<BigRational, SeparabilityError> {
    if n == 0 || n > 20 {
        return Err(SeparabilityError::Invalid(format!("N = {n} outside 1..=20")));
    }
    let count = 1u64 << n;
    let values: Vec<BigRational> = (0..count).map(f).collect();
    let mut min_gain: Option<BigRational> = None;
    for b in 0..count {
        for j in 0..n {
            if b >> j & 1 == 1 {
                continue;
            }
            let sup = b | 1 << j;
            let gain = &values[sup as usize] - &values[b as usize];
            if gain.is_negative() {
                return Err(SeparabilityError::NotMonotone { subset: b, superset: sup });
            }
            if min_gain.as_ref().is_none_or(|m| gain < *m) {
                min_gain = Some(gain);
            }
        }
    }
    let mut bound = min_gain.expect("n >= 1") / BigRational::from_integer(2.into());
    if let Some(beta) = beta {
        let cap = beta / BigRational::from_integer(BigInt::from(n));
        if cap < bound {
            bound = cap;
        }
    }
    Ok(bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn all_half_binary_ce_is_zero() {
        let p = Payload::binary(&[BigReal::ratio(1, 2), BigReal::ratio(1, 2)]);
        let rep = lambda_bruteforce(&LossSpec::BinaryCe, &p, None).unwrap();
        assert_eq!(rep.verdict, Verdict::Zero);
        assert!(rep.exact_collision);
    }

    #[test]
    fn witness_for_all_half_is_ln2() {
        let p = Payload::binary(&[BigReal::ratio(1, 2), BigReal::ratio(1, 2)]);
        let w = ambiguity_witness(&LossSpec::BinaryCe, &p, &r(1, 10)).unwrap().unwrap();
        let ln2 = crate::bignum::ln2(100);
        assert!((w.loss.value() - ln2.value()).abs() < pow2(-90));
    }

    #[test]
    fn discrete_lp_examples() {
        assert_eq!(discrete_lp_check(2, 3).unwrap().verdict, Verdict::Zero);
        assert_eq!(discrete_lp_check(1, 2).unwrap().verdict, Verdict::Zero);
        // a single coordinate has distances 0 and 1 only
        assert_eq!(discrete_lp_check(1, 1).unwrap().lambda, BigReal::one());
    }

    #[test]
    fn monotone_bound_examples() {
        assert_eq!(monotone_bound(&|b| r(b.count_ones() as i64, 1), 4, None).unwrap(), r(1, 2));
        assert_eq!(monotone_bound(&|b| r(b.count_ones() as i64, 4), 4, Some(&r(1, 1))).unwrap(), r(1, 8));
        let pow = |b: u64| r((0..3).filter(|i| b >> i & 1 == 1).map(|i| 1i64 << (i + 1)).sum(), 1);
        assert_eq!(monotone_bound(&pow, 3, None).unwrap(), r(1, 1));
        let bad = |b: u64| r(-(b.count_ones() as i64), 1);
        assert!(matches!(monotone_bound(&bad, 3, None), Err(SeparabilityError::NotMonotone { .. })));
    }
}
