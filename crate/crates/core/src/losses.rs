//! Loss functions evaluated with explicit error bounds, or under a floating-point model.

use std::cmp::Ordering;
use std::ops::Range;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bignum::{
    self, bits_for, exp_bits, ln3, ln_bits, pow2, pow3, pow_real, BigNumError, BigReal, Emulated, FloatModel,
    FpaFormat, FpaValue,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LossError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("payload does not fit the loss: {0}")]
    Shape(String),
    #[error("invalid loss specification: {0}")]
    InvalidSpec(String),
    #[error("invalid labels: {0}")]
    Labels(String),
    #[error(transparent)]
    Numeric(#[from] BigNumError),
}

// ---------------------------------------------------------------------------
// labels

/// A labeling `σ ∈ Z_K^N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawLabels")]
pub struct LabelVector {
    labels: Vec<u32>,
    k: u32,
}

#[derive(Deserialize)]
struct RawLabels {
    labels: Vec<u32>,
    k: u32,
}

impl TryFrom<RawLabels> for LabelVector {
    type Error = LossError;
    fn try_from(r: RawLabels) -> Result<Self, LossError> {
        LabelVector::new(r.labels, r.k)
    }
}

impl LabelVector {
    pub fn new(labels: Vec<u32>, k: u32) -> Result<Self, LossError> {
        if k < 2 {
            return Err(LossError::Labels(format!("need K >= 2, got {k}")));
        }
        if labels.is_empty() {
            return Err(LossError::Labels("need N >= 1".into()));
        }
        if let Some(bad) = labels.iter().find(|&&c| c >= k) {
            return Err(LossError::Labels(format!("label {bad} outside 0..{k}")));
        }
        Ok(LabelVector { labels, k })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> u32 {
        self.labels[i]
    }

    /// Labeling whose base-`K` digits (least significant first) are `idx`.
    pub fn from_index(mut idx: u64, n: usize, k: u32) -> Self {
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push((idx % k as u64) as u32);
            idx /= k as u64;
        }
        LabelVector { labels, k }
    }

    pub fn index(&self) -> u64 {
        self.labels.iter().rev().fold(0u64, |acc, &c| acc * self.k as u64 + c as u64)
    }

    /// All `K^N` labelings in index order.
    pub fn all(n: usize, k: u32) -> impl Iterator<Item = LabelVector> {
        let total = (k as u64).checked_pow(n as u32).expect("K^N fits in u64");
        (0..total).map(move |i| LabelVector::from_index(i, n, k))
    }

    pub fn slice(&self, r: Range<usize>) -> LabelVector {
        LabelVector { labels: self.labels[r].to_vec(), k: self.k }
    }

    pub fn hamming(&self, other: &LabelVector) -> usize {
        self.labels.iter().zip(&other.labels).filter(|(a, b)| a != b).count()
    }
}

// ---------------------------------------------------------------------------
// specs

/// Convex generator `h` of an additive Bregman divergence with `h(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// `h(x) = x ln x`; the divergence is KL.
    NegEntropy,
    /// `h(x) = x²`.
    Square,
}

impl Generator {
    /// `h′(x)` to absolute error `2^-p`.
    pub fn h_prime(&self, x: &BigReal, p: u64) -> Result<BigReal, BigNumError> {
        match self {
            Generator::NegEntropy => Ok(ln_bits(x, p)? + BigReal::one()),
            Generator::Square => Ok(x.mul_rat(&BigRational::from_integer(2.into()))),
        }
    }

    /// `h(s) − h(r) − h′(r)(s − r)` for `s ∈ {0, 1}`.
    fn coord_term(&self, s: bool, r: &BigReal, p: u64) -> Result<BigReal, BigNumError> {
        match (self, s) {
            (Generator::NegEntropy, false) => Ok(r.clone()),
            (Generator::NegEntropy, true) => Ok(r - &BigReal::one() - ln_bits(r, p)?),
            (Generator::Square, false) => Ok(r.sqr()),
            (Generator::Square, true) => Ok((&BigReal::one() - r).sqr()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum LossSpec {
    BinaryCe,
    KaryCe {
        k: u32,
    },
    SoftmaxCe {
        k: u32,
    },
    SigmoidCe,
    Kl,
    ItakuraSaito,
    SquaredEuclidean,
    NormLike {
        #[serde(with = "crate::serde_rat")]
        alpha: BigRational,
    },
    Mahalanobis {
        #[serde(with = "crate::serde_rat::matrix2")]
        a: [[BigRational; 2]; 2],
    },
    Additive {
        generator: Generator,
    },
}

impl LossSpec {
    pub fn k(&self) -> u32 {
        match self {
            LossSpec::KaryCe { k } | LossSpec::SoftmaxCe { k } => *k,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::BinaryCe => "binary-ce",
            LossSpec::KaryCe { .. } => "kary-ce",
            LossSpec::SoftmaxCe { .. } => "softmax-ce",
            LossSpec::SigmoidCe => "sigmoid-ce",
            LossSpec::Kl => "kl",
            LossSpec::ItakuraSaito => "itakura-saito",
            LossSpec::SquaredEuclidean => "squared-euclidean",
            LossSpec::NormLike { .. } => "norm-like",
            LossSpec::Mahalanobis { .. } => "mahalanobis",
            LossSpec::Additive { .. } => "additive",
        }
    }

    pub fn takes_logits(&self) -> bool {
        matches!(self, LossSpec::SoftmaxCe { .. } | LossSpec::SigmoidCe)
    }

    /// Width of each payload row.
    pub fn row_width(&self) -> usize {
        match self {
            LossSpec::SigmoidCe => 1,
            other => other.k() as usize,
        }
    }

    /// `a + d − (b + c)` for Mahalanobis.
    pub fn alpha_m(&self) -> Option<BigRational> {
        match self {
            LossSpec::Mahalanobis { a } => Some(&a[0][0] + &a[1][1] - &a[0][1] - &a[1][0]),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        match self {
            LossSpec::KaryCe { k } | LossSpec::SoftmaxCe { k } if *k < 2 => {
                Err(LossError::InvalidSpec(format!("K must be >= 2, got {k}")))
            }
            LossSpec::NormLike { alpha } if *alpha < BigRational::from_integer(2.into()) => {
                Err(LossError::InvalidSpec("norm-like needs alpha >= 2".into()))
            }
            LossSpec::Mahalanobis { a } => {
                let two = BigRational::from_integer(2.into());
                let off = (&a[0][1] + &a[1][0]) / &two;
                let pd = a[0][0].is_positive() && &a[0][0] * &a[1][1] - &off * &off > BigRational::zero();
                if !pd {
                    return Err(LossError::InvalidSpec("matrix is not positive definite".into()));
                }
                if !self.alpha_m().expect("mahalanobis").is_positive() {
                    return Err(LossError::InvalidSpec("need a + d > b + c".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// payloads

/// One row of a prediction payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Row {
    /// Explicit entries.
    Values(Vec<BigReal>),
    /// Entries given by base-3 exponents `w`: probabilities `3^{w_k} / Σ_j 3^{w_j}`, or logits `w_k ln 3`.
    Pow3(Vec<BigRational>),
}

impl Row {
    pub fn len(&self) -> usize {
        match self {
            Row::Values(v) => v.len(),
            Row::Pow3(w) => w.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Attacker-chosen predictions: probability rows or logit rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Probs(Vec<Row>),
    Logits(Vec<Row>),
}

impl Payload {
    pub fn rows(&self) -> &[Row] {
        match self {
            Payload::Probs(r) | Payload::Logits(r) => r,
        }
    }

    pub fn n(&self) -> usize {
        self.rows().len()
    }

    pub fn is_logits(&self) -> bool {
        matches!(self, Payload::Logits(_))
    }

    /// Binary payload with rows `[1 − θ_i, θ_i]`.
    pub fn binary(theta: &[BigReal]) -> Payload {
        Payload::Probs(theta.iter().map(|t| Row::Values(vec![&BigReal::one() - t, t.clone()])).collect())
    }

    pub fn probs(rows: Vec<Vec<BigReal>>) -> Payload {
        Payload::Probs(rows.into_iter().map(Row::Values).collect())
    }

    pub fn logits(rows: Vec<Vec<BigReal>>) -> Payload {
        Payload::Logits(rows.into_iter().map(Row::Values).collect())
    }

    /// Rows restricted to `r`.
    pub fn slice(&self, r: Range<usize>) -> Payload {
        match self {
            Payload::Probs(v) => Payload::Probs(v[r].to_vec()),
            Payload::Logits(v) => Payload::Logits(v[r].to_vec()),
        }
    }

    pub fn check_for(&self, spec: &LossSpec) -> Result<(), LossError> {
        spec.validate()?;
        if self.n() == 0 {
            return Err(LossError::Shape("empty payload".into()));
        }
        if self.is_logits() != spec.takes_logits() {
            let want = if spec.takes_logits() { "logit" } else { "probability" };
            return Err(LossError::Shape(format!("{} expects {want} rows", spec.name())));
        }
        let w = spec.row_width();
        if let Some((i, r)) = self.rows().iter().enumerate().find(|(_, r)| r.len() != w) {
            return Err(LossError::Shape(format!("row {i} has {} entries, expected {w}", r.len())));
        }
        if let Payload::Probs(rows) = self {
            for (i, r) in rows.iter().enumerate() {
                if let Row::Values(v) = r {
                    for x in v {
                        if x.value().is_negative() || x.value() > &BigRational::one() {
                            return Err(LossError::Domain(format!("row {i} has an entry outside [0, 1]")));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// per-row quantities

enum RowSrc<'a> {
    Probs(&'a [BigReal]),
    Exp3(Vec<BigRational>),
    Logits(Vec<BigReal>),
}

fn bitlen_usize(x: usize) -> u64 {
    (usize::BITS - x.leading_zeros()) as u64
}

fn rat_bits(r: &BigRational) -> u64 {
    // bits of ceil(|r|), at least 1
    let n = r.numer().abs();
    let d = r.denom();
    (n.bits() as i64 - d.bits() as i64 + 1).max(1) as u64
}

impl<'a> RowSrc<'a> {
    fn new(payload: &'a Payload, i: usize) -> RowSrc<'a> {
        let logits = payload.is_logits();
        match &payload.rows()[i] {
            Row::Values(v) if !logits => RowSrc::Probs(v),
            Row::Values(v) => {
                if v.len() == 1 {
                    RowSrc::Logits(vec![BigReal::zero(), v[0].clone()])
                } else {
                    RowSrc::Logits(v.clone())
                }
            }
            Row::Pow3(w) => {
                if logits && w.len() == 1 {
                    RowSrc::Exp3(vec![BigRational::zero(), w[0].clone()])
                } else {
                    RowSrc::Exp3(w.clone())
                }
            }
        }
    }

    fn k(&self) -> usize {
        match self {
            RowSrc::Probs(v) => v.len(),
            RowSrc::Exp3(w) => w.len(),
            RowSrc::Logits(x) => x.len(),
        }
    }

    /// `Σ_j e^{(x_j − x_max)}` style normaliser for the exponent forms, and the chosen max.
    fn normaliser(&self, p: u64) -> Result<BigReal, LossError> {
        let kb = bitlen_usize(self.k()) + 2;
        match self {
            RowSrc::Exp3(w) => {
                let wmax = w.iter().max().expect("non-empty row");
                let mut s = BigReal::zero();
                for wj in w {
                    s = s + pow3(&(wj - wmax), p + kb)?;
                }
                Ok(s)
            }
            RowSrc::Logits(x) => {
                let xmax = max_by_value(x);
                let mut s = BigReal::zero();
                for xj in x {
                    s = s + exp_bits(&(xj - xmax), p + kb)?;
                }
                Ok(s)
            }
            RowSrc::Probs(_) => unreachable!("probability rows need no normaliser"),
        }
    }

    /// Unnormalised weight of entry `j` relative to the row maximum.
    fn weight(&self, j: usize, p: u64) -> Result<BigReal, LossError> {
        match self {
            RowSrc::Exp3(w) => Ok(pow3(&(&w[j] - w.iter().max().expect("non-empty")), p)?),
            RowSrc::Logits(x) => Ok(exp_bits(&(&x[j] - max_by_value(x)), p)?),
            RowSrc::Probs(_) => unreachable!(),
        }
    }

    fn ln_pc(&self, c: usize, p: u64) -> Result<BigReal, LossError> {
        match self {
            RowSrc::Probs(v) => {
                if !v[c].is_certainly_positive() {
                    return Err(LossError::Domain("probability of the true class is not positive".into()));
                }
                Ok(ln_bits(&v[c], p)?)
            }
            RowSrc::Exp3(w) => {
                let wmax = w.iter().max().expect("non-empty");
                let z = &w[c] - wmax;
                let s = self.normaliser(p + 3)?;
                let zl = if z.is_zero() {
                    BigReal::zero()
                } else {
                    ln3(p + 3 + rat_bits(&z)).mul_rat(&z)
                };
                Ok(zl - ln_bits(&s, p + 2)?)
            }
            RowSrc::Logits(x) => {
                let s = self.normaliser(p + 3)?;
                Ok(&x[c] - max_by_value(x) - ln_bits(&s, p + 2)?)
            }
        }
    }

    /// Probability of entry `j`.
    fn prob(&self, j: usize, p: u64) -> Result<BigReal, LossError> {
        match self {
            RowSrc::Probs(v) => Ok(v[j].clone()),
            _ => {
                let s = self.normaliser(p + 4)?;
                Ok(self.weight(j, p + 3)?.div(&s)?)
            }
        }
    }

    /// `1 − p_c`, computed without cancellation where possible.
    fn qc(&self, c: usize, p: u64) -> Result<BigReal, LossError> {
        match self {
            RowSrc::Probs(v) if v.len() == 2 => Ok(v[1 - c].clone()),
            RowSrc::Probs(v) => Ok(&BigReal::one() - &v[c]),
            _ => {
                let kb = bitlen_usize(self.k()) + 3;
                let s = self.normaliser(p + 4)?;
                let mut rest = BigReal::zero();
                for j in (0..self.k()).filter(|&j| j != c) {
                    rest = rest + self.weight(j, p + kb)?;
                }
                Ok(rest.div(&s)?)
            }
        }
    }

    /// `1 / p_c`.
    fn inv_pc(&self, c: usize, p: u64) -> Result<BigReal, LossError> {
        let kb = bitlen_usize(self.k()) + 2;
        match self {
            RowSrc::Probs(v) => {
                if !v[c].is_certainly_positive() {
                    return Err(LossError::Domain("probability of the true class is not positive".into()));
                }
                let r = v[c].recip()?;
                Ok(if r.is_exact() { r } else { r.round_bits(p + 2) })
            }
            RowSrc::Exp3(w) => {
                let mut s = BigReal::zero();
                for wj in w {
                    s = s + pow3(&(wj - &w[c]), p + kb)?;
                }
                Ok(s)
            }
            RowSrc::Logits(x) => {
                let mut s = BigReal::zero();
                for xj in x {
                    s = s + exp_bits(&(xj - &x[c]), p + kb)?;
                }
                Ok(s)
            }
        }
    }
}

fn max_by_value(x: &[BigReal]) -> &BigReal {
    x.iter().max_by(|a, b| a.value().cmp(b.value())).expect("non-empty row")
}

/// `x^α` for `x ∈ [0, 1]` and `α ≥ 2`, tolerating enclosures that touch zero.
fn pow_unit(x: &BigReal, alpha: &BigRational, p: u64) -> Result<BigReal, LossError> {
    if alpha.is_integer() {
        if let Some(n) = alpha.to_integer().to_u32() {
            return Ok(x.powi(n).round_bits(p + 2));
        }
    }
    if x.is_certainly_positive() {
        return Ok(pow_real(x, alpha, p)?);
    }
    // 0 <= x^α <= u^⌊α⌋ for the upper end u < 1 of the enclosure
    let u = x.upper().max(BigRational::zero());
    let fl = alpha.floor().to_integer().to_u32().unwrap_or(2);
    let top = BigReal::exact(u).powi(fl).round_bits(p + 2);
    let half = top.upper() / BigRational::from_integer(2.into());
    Ok(BigReal::with_err(half.clone(), half))
}

/// Contribution `t_i(c)` of one row when its true class is `c`, to absolute error about `2^-p`.
fn row_term(spec: &LossSpec, src: &RowSrc<'_>, c: usize, p: u64) -> Result<BigReal, LossError> {
    let q = p + 4;
    match spec {
        // KL with one-hot targets and 0·ln 0 := 0 reduces to −ln p_c.
        LossSpec::BinaryCe | LossSpec::KaryCe { .. } | LossSpec::SoftmaxCe { .. } | LossSpec::SigmoidCe | LossSpec::Kl => {
            Ok(-src.ln_pc(c, q)?)
        }
        LossSpec::ItakuraSaito => {
            let inv = src.inv_pc(c, q)?;
            Ok(inv + src.ln_pc(c, q)? - BigReal::one())
        }
        LossSpec::SquaredEuclidean => Ok(src.qc(c, q)?.sqr()),
        LossSpec::NormLike { alpha } => {
            let am1 = alpha - BigRational::one();
            let extra = rat_bits(alpha) + 4;
            let pc = src.prob(c, q + extra)?;
            let qc = src.qc(c, q + extra)?;
            let t1 = pow_unit(&pc, alpha, q + extra)?.mul_rat(&am1);
            let t2 = pow_unit(&pc, &am1, q + extra)?.mul_rat(alpha);
            let t3 = pow_unit(&qc, alpha, q + extra)?.mul_rat(&am1);
            Ok(BigReal::one() + t1 - t2 + t3)
        }
        LossSpec::Mahalanobis { a } => {
            let scale = a.iter().flatten().map(rat_bits).max().unwrap_or(1) + 4;
            let r1 = src.prob(1, q + scale)?;
            let r0 = src.qc(1, q + scale)?;
            let one = BigReal::one();
            let (s1, s0) = if c == 1 { (one.clone(), BigReal::zero()) } else { (BigReal::zero(), one) };
            let v0 = &s1 - &r1;
            let v1 = &s0 - &r0;
            let cross = &a[0][1] + &a[1][0];
            Ok(v0.sqr().mul_rat(&a[0][0]) + (&v0 * &v1).mul_rat(&cross) + v1.sqr().mul_rat(&a[1][1]))
        }
        LossSpec::Additive { generator } => {
            let mut t = BigReal::zero();
            for j in 0..src.k() {
                let r = if j == c { src.prob(c, q)? } else { src.qc(c, q)? };
                if src.k() != 2 && j != c {
                    return Err(LossError::Shape("additive Bregman payloads are binary".into()));
                }
                t = t + generator.coord_term(j == c, &r, q)?;
            }
            Ok(t)
        }
    }
}

/// Entries of row `i` (probabilities or logits) to absolute error `2^-p`.
pub fn row_entries(payload: &Payload, i: usize, p: u64) -> Result<Vec<BigReal>, LossError> {
    match &payload.rows()[i] {
        Row::Values(v) => Ok(v.clone()),
        Row::Pow3(w) if payload.is_logits() => {
            Ok(w.iter().map(|wj| if wj.is_zero() { BigReal::zero() } else { ln3(p + 2 + rat_bits(wj)).mul_rat(wj).round_bits(p + 2) }).collect())
        }
        Row::Pow3(w) => {
            let src = RowSrc::new(payload, i);
            (0..w.len()).map(|j| Ok(src.prob(j, p)?.round_bits(p + 2))).collect()
        }
    }
}

/// Per-row contributions `t_i(c)`, so that `f(σ, θ) = (1/N) Σ_i t_i(σ_i)`.
#[derive(Debug, Clone)]
pub struct LossTable {
    terms: Vec<Vec<BigReal>>,
}

impl LossTable {
    pub fn build(spec: &LossSpec, payload: &Payload, eps: &BigRational) -> Result<Self, LossError> {
        payload.check_for(spec)?;
        let p = bits_for(eps) + 2;
        let k = spec.k() as usize;
        let mut terms = Vec::with_capacity(payload.n());
        for i in 0..payload.n() {
            let src = RowSrc::new(payload, i);
            let mut row = Vec::with_capacity(k);
            for c in 0..k {
                row.push(row_term(spec, &src, c, p)?.round_bits(p + 2));
            }
            terms.push(row);
        }
        Ok(LossTable { terms })
    }

    pub fn n(&self) -> usize {
        self.terms.len()
    }

    pub fn term(&self, i: usize, c: u32) -> &BigReal {
        &self.terms[i][c as usize]
    }

    pub fn eval(&self, sigma: &LabelVector) -> BigReal {
        assert_eq!(sigma.n(), self.n(), "labeling length differs from payload");
        let mut acc = BigReal::zero();
        for (i, &c) in sigma.labels().iter().enumerate() {
            acc = acc + &self.terms[i][c as usize];
        }
        acc.div_int(self.n() as i64)
    }
}

/// `f(σ, θ)` within `eps`, plus whatever error the payload entries themselves carry.
pub fn eval(spec: &LossSpec, sigma: &LabelVector, payload: &Payload, eps: &BigRational) -> Result<BigReal, LossError> {
    payload.check_for(spec)?;
    if sigma.n() != payload.n() {
        return Err(LossError::Shape(format!("{} labels for {} rows", sigma.n(), payload.n())));
    }
    if sigma.k() != spec.k() {
        return Err(LossError::Shape(format!("labels have K = {}, loss has K = {}", sigma.k(), spec.k())));
    }
    let p = bits_for(eps) + 2;
    let mut acc = BigReal::zero();
    for (i, &c) in sigma.labels().iter().enumerate() {
        let src = RowSrc::new(payload, i);
        acc = acc + row_term(spec, &src, c as usize, p)?.round_bits(p + 2);
    }
    Ok(acc.div_int(sigma.n() as i64))
}

pub fn eval_binary_ce(sigma: &LabelVector, theta: &[BigReal], eps: &BigRational) -> Result<BigReal, LossError> {
    check_open_unit(theta)?;
    eval(&LossSpec::BinaryCe, sigma, &Payload::binary(theta), eps)
}

pub fn eval_kary_ce(sigma: &LabelVector, theta: &[Vec<BigReal>], eps: &BigRational) -> Result<BigReal, LossError> {
    let k = sigma.k();
    eval(&LossSpec::KaryCe { k }, sigma, &Payload::probs(theta.to_vec()), eps)
}

pub fn eval_softmax_ce(sigma: &LabelVector, logits: &[Vec<BigReal>], eps: &BigRational) -> Result<BigReal, LossError> {
    let k = sigma.k();
    eval(&LossSpec::SoftmaxCe { k }, sigma, &Payload::logits(logits.to_vec()), eps)
}

pub fn eval_sigmoid_ce(sigma: &LabelVector, logits: &[BigReal], eps: &BigRational) -> Result<BigReal, LossError> {
    let rows = logits.iter().map(|x| vec![x.clone()]).collect();
    eval(&LossSpec::SigmoidCe, sigma, &Payload::logits(rows), eps)
}

/// Binary Bregman losses on `θ ∈ (0,1)^N` (probability of class 1 per row).
pub fn eval_bregman(
    sigma: &LabelVector,
    theta: &[BigReal],
    spec: &LossSpec,
    eps: &BigRational,
) -> Result<BigReal, LossError> {
    match spec {
        LossSpec::Kl | LossSpec::ItakuraSaito => check_open_unit(theta)?,
        LossSpec::SquaredEuclidean | LossSpec::NormLike { .. } | LossSpec::Mahalanobis { .. } | LossSpec::Additive { .. } => {
            check_closed_unit(theta)?
        }
        other => return Err(LossError::InvalidSpec(format!("{} is not a binary Bregman loss", other.name()))),
    }
    eval(spec, sigma, &Payload::binary(theta), eps)
}

fn check_open_unit(theta: &[BigReal]) -> Result<(), LossError> {
    for (i, t) in theta.iter().enumerate() {
        if !(t.is_certainly_positive() && t.upper() < BigRational::one()) {
            return Err(LossError::Domain(format!("theta[{i}] is not certifiably in (0, 1)")));
        }
    }
    Ok(())
}

fn check_closed_unit(theta: &[BigReal]) -> Result<(), LossError> {
    for (i, t) in theta.iter().enumerate() {
        if t.value().is_negative() || t.value() > &BigRational::one() {
            return Err(LossError::Domain(format!("theta[{i}] is outside [0, 1]")));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// floating-point evaluation

/// How the floating-point evaluation rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FpaRounding {
    #[default]
    PerOperation,
    FinalOnly,
}

/// Formula used for activation losses under a floating-point model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FloatForm {
    /// Log-sum-exp and softplus.
    #[default]
    Stable,
    /// `−ln(e^{x_c} / Σ_j e^{x_j})` and `−ln S(x)`, `−ln(1 − S(x))`, evaluated as written.
    Definition,
}

/// Per-row contributions computed under a floating-point model.
#[derive(Debug, Clone)]
pub struct FloatTable<V> {
    terms: Vec<Vec<V>>,
}

/// A payload entry rounded into the model: explicit values round their carried rational,
/// exponent-form entries are rounded correctly from their exact value.
fn lift_row<M: FloatModel>(model: &M, payload: &Payload, i: usize) -> Result<Vec<M::Value>, LossError> {
    let row = &payload.rows()[i];
    match row {
        Row::Values(v) => Ok(v.iter().map(|x| model.lift_rational(x.value())).collect()),
        Row::Pow3(w) if payload.is_logits() => Ok(w
            .iter()
            .map(|wj| {
                let wj = wj.clone();
                let bits = rat_bits(&wj);
                model.lift_with(&move |p| Ok(ln3(p + bits + 2).mul_rat(&wj)))
            })
            .collect()),
        Row::Pow3(_) => {
            let src = RowSrc::new(payload, i);
            let mut out = Vec::with_capacity(row.len());
            for j in 0..row.len() {
                let v = model.lift_with(&|p| src.prob(j, p).map_err(|e| match e {
                    LossError::Numeric(n) => n,
                    _ => BigNumError::AmbiguousRounding,
                }));
                out.push(v);
            }
            Ok(out)
        }
    }
}

fn fl_max<M: FloatModel>(model: &M, a: &M::Value, b: &M::Value) -> M::Value {
    match (model.to_rational(a), model.to_rational(b)) {
        (Some(x), Some(y)) => {
            if x.cmp(&y) == Ordering::Less {
                b.clone()
            } else {
                a.clone()
            }
        }
        (None, _) => a.clone(),
        (_, None) => b.clone(),
    }
}

fn fl_softplus<M: FloatModel>(model: &M, z: &M::Value) -> M::Value {
    let zero = model.lift_rational(&BigRational::zero());
    let one = model.lift_rational(&BigRational::one());
    let nz = model.sub(&zero, z);
    let pos = fl_max(model, z, &zero);
    let abs = fl_max(model, z, &nz);
    let nabs = model.sub(&zero, &abs);
    model.add(&pos, &model.ln(&model.add(&one, &model.exp(&nabs))))
}

fn fl_pow<M: FloatModel>(model: &M, x: &M::Value, alpha: &BigRational) -> M::Value {
    if alpha.is_integer() {
        if let Some(n) = alpha.to_integer().to_u32() {
            return model.powi(x, n);
        }
    }
    let a = model.lift_rational(alpha);
    model.exp(&model.mul(&a, &model.ln(x)))
}

fn fl_term_definition<M: FloatModel>(model: &M, r: &[M::Value], c: usize) -> M::Value {
    let zero = model.lift_rational(&BigRational::zero());
    let one = model.lift_rational(&BigRational::one());
    let p = if r.len() == 1 {
        let s = model.div(&one, &model.add(&one, &model.exp(&model.sub(&zero, &r[0]))));
        if c == 1 { s } else { model.sub(&one, &s) }
    } else {
        let mut z = zero.clone();
        for x in r {
            z = model.add(&z, &model.exp(x));
        }
        model.div(&model.exp(&r[c]), &z)
    };
    model.sub(&zero, &model.ln(&p))
}

fn fl_term<M: FloatModel>(model: &M, spec: &LossSpec, r: &[M::Value], logits: bool, c: usize) -> M::Value {
    let zero = model.lift_rational(&BigRational::zero());
    let one = model.lift_rational(&BigRational::one());
    if logits {
        if r.len() == 1 {
            // sigmoid with a single logit
            let z = if c == 1 { model.sub(&zero, &r[0]) } else { r[0].clone() };
            return fl_softplus(model, &z);
        }
        let mut m = r[0].clone();
        for x in &r[1..] {
            m = fl_max(model, &m, x);
        }
        let mut s = zero.clone();
        for x in r {
            s = model.add(&s, &model.exp(&model.sub(x, &m)));
        }
        return model.sub(&model.ln(&s), &model.sub(&r[c], &m));
    }
    let pc = &r[c];
    match spec {
        LossSpec::ItakuraSaito => model.sub(&model.add(&model.div(&one, pc), &model.ln(pc)), &one),
        LossSpec::SquaredEuclidean => {
            let d = model.sub(&one, pc);
            model.mul(&d, &d)
        }
        LossSpec::NormLike { alpha } => {
            let am1 = alpha - BigRational::one();
            let a = model.lift_rational(alpha);
            let b = model.lift_rational(&am1);
            let q = model.sub(&one, pc);
            let t1 = model.mul(&b, &fl_pow(model, pc, alpha));
            let t2 = model.mul(&a, &fl_pow(model, pc, &am1));
            let t3 = model.mul(&b, &fl_pow(model, &q, alpha));
            model.add(&model.sub(&model.add(&one, &t1), &t2), &t3)
        }
        LossSpec::Mahalanobis { a } => {
            let (s1, s0) = if c == 1 { (&one, &zero) } else { (&zero, &one) };
            let v0 = model.sub(s1, &r[1]);
            let v1 = model.sub(s0, &r[0]);
            let a00 = model.lift_rational(&a[0][0]);
            let cross = model.lift_rational(&(&a[0][1] + &a[1][0]));
            let a11 = model.lift_rational(&a[1][1]);
            let t0 = model.mul(&a00, &model.mul(&v0, &v0));
            let t1 = model.mul(&cross, &model.mul(&v0, &v1));
            let t2 = model.mul(&a11, &model.mul(&v1, &v1));
            model.add(&model.add(&t0, &t1), &t2)
        }
        LossSpec::Additive { generator } => {
            let mut t = zero.clone();
            for (j, rj) in r.iter().enumerate() {
                let term = match (generator, j == c) {
                    (Generator::NegEntropy, false) => rj.clone(),
                    (Generator::NegEntropy, true) => model.sub(&model.sub(rj, &one), &model.ln(rj)),
                    (Generator::Square, false) => model.mul(rj, rj),
                    (Generator::Square, true) => {
                        let d = model.sub(&one, rj);
                        model.mul(&d, &d)
                    }
                };
                t = model.add(&t, &term);
            }
            t
        }
        _ => model.sub(&zero, &model.ln(pc)),
    }
}

impl<V: Clone> FloatTable<V> {
    pub fn build<M: FloatModel<Value = V>>(model: &M, spec: &LossSpec, payload: &Payload) -> Result<Self, LossError> {
        Self::build_with(model, spec, payload, FloatForm::Stable)
    }

    pub fn build_with<M: FloatModel<Value = V>>(
        model: &M,
        spec: &LossSpec,
        payload: &Payload,
        form: FloatForm,
    ) -> Result<Self, LossError> {
        payload.check_for(spec)?;
        let k = spec.k() as usize;
        let logits = payload.is_logits();
        let mut terms = Vec::with_capacity(payload.n());
        for i in 0..payload.n() {
            let r = lift_row(model, payload, i)?;
            terms.push(
                (0..k)
                    .map(|c| match form {
                        FloatForm::Definition if logits => fl_term_definition(model, &r, c),
                        _ => fl_term(model, spec, &r, logits, c),
                    })
                    .collect(),
            );
        }
        Ok(FloatTable { terms })
    }

    pub fn term(&self, i: usize, c: u32) -> &V {
        &self.terms[i][c as usize]
    }

    pub fn n(&self) -> usize {
        self.terms.len()
    }

    /// Left-to-right sum of the row terms, divided by `N`.
    pub fn eval<M: FloatModel<Value = V>>(&self, model: &M, sigma: &LabelVector) -> V {
        let mut acc = model.lift_rational(&BigRational::zero());
        for (i, &c) in sigma.labels().iter().enumerate() {
            acc = model.add(&acc, &self.terms[i][c as usize]);
        }
        let n = model.lift_rational(&BigRational::from_integer(BigInt::from(self.n())));
        model.div(&acc, &n)
    }
}

/// The loss under a floating-point model.
pub fn eval_float<M: FloatModel>(
    model: &M,
    spec: &LossSpec,
    sigma: &LabelVector,
    payload: &Payload,
) -> Result<M::Value, LossError> {
    if sigma.n() != payload.n() {
        return Err(LossError::Shape(format!("{} labels for {} rows", sigma.n(), payload.n())));
    }
    Ok(FloatTable::build(model, spec, payload)?.eval(model, sigma))
}

/// The loss in an emulated format, rounding per operation or only once at the end.
pub fn eval_in_fpa(
    spec: &LossSpec,
    sigma: &LabelVector,
    payload: &Payload,
    fmt: FpaFormat,
    rounding: FpaRounding,
) -> Result<FpaValue, LossError> {
    match rounding {
        FpaRounding::PerOperation => eval_float(&Emulated { format: fmt }, spec, sigma, payload),
        FpaRounding::FinalOnly => {
            match eval(spec, sigma, payload, &pow2(-8)) {
                Err(LossError::Numeric(_)) | Ok(_) => {}
                Err(e) => return Err(e),
            }
            Ok(bignum::round_from_enclosures(fmt, |p| {
                eval(spec, sigma, payload, &pow2(-(p as i64))).map_err(|e| match e {
                    LossError::Numeric(n) => n,
                    _ => BigNumError::AmbiguousRounding,
                })
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn r(n: i64, d: i64) -> BigReal {
        BigReal::exact(q(n, d))
    }

    fn lv(l: &[u32], k: u32) -> LabelVector {
        LabelVector::new(l.to_vec(), k).unwrap()
    }

    fn close(a: &BigReal, b: f64, tol: f64) {
        assert!((a.to_f64() - b).abs() < tol, "{} vs {b}", a.to_f64());
    }

    #[test]
    fn binary_ce_half() {
        let eps = pow2(-60);
        let v = eval_binary_ce(&lv(&[1, 0], 2), &[r(1, 2), r(1, 2)], &eps).unwrap();
        close(&v, std::f64::consts::LN_2, 1e-15);
        assert!(v.err() <= &eps);
    }

    #[test]
    fn sigmoid_symmetry() {
        let eps = pow2(-60);
        let a = eval_sigmoid_ce(&lv(&[1], 2), &[BigReal::zero()], &eps).unwrap();
        let b = eval_sigmoid_ce(&lv(&[0], 2), &[BigReal::zero()], &eps).unwrap();
        close(&a, std::f64::consts::LN_2, 1e-15);
        close(&b, std::f64::consts::LN_2, 1e-15);
    }

    #[test]
    fn softmax_uniform_is_ln_k() {
        let z = vec![vec![BigReal::zero(); 3]];
        let v = eval_softmax_ce(&lv(&[2], 3), &z, &pow2(-60)).unwrap();
        close(&v, 3f64.ln(), 1e-15);
    }

    #[test]
    fn itakura_saito_half() {
        let v = eval_bregman(&lv(&[1], 2), &[r(1, 2)], &LossSpec::ItakuraSaito, &pow2(-60)).unwrap();
        close(&v, 1.0 - std::f64::consts::LN_2, 1e-15);
    }

    #[test]
    fn squared_euclidean_perfect() {
        let v = eval_bregman(&lv(&[1], 2), &[r(1, 1)], &LossSpec::SquaredEuclidean, &pow2(-60)).unwrap();
        assert!(v.value().is_zero());
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            eval_binary_ce(&lv(&[1], 2), &[r(0, 1)], &pow2(-10)),
            Err(LossError::Domain(_))
        ));
        assert!(LabelVector::new(vec![3], 3).is_err());
    }

    #[test]
    fn label_index_round_trip() {
        for i in 0..27 {
            assert_eq!(LabelVector::from_index(i, 3, 3).index(), i);
        }
    }

    #[test]
    fn spec_json_shape() {
        let s = LossSpec::NormLike { alpha: q(5, 2) };
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"family":"norm-like","alpha":"5/2"}"#);
        let back: LossSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn definition_form_underflows_where_stable_does_not() {
        let m = crate::bignum::Native::<f64>::new();
        let spec = LossSpec::SoftmaxCe { k: 2 };
        let mild = Payload::logits(vec![vec![r(-3, 2), BigReal::zero()]]);
        let a = FloatTable::build_with(&m, &spec, &mild, FloatForm::Definition).unwrap();
        let b = FloatTable::build(&m, &spec, &mild).unwrap();
        assert!((a.term(0, 0) - b.term(0, 0)).abs() < 1e-15);
        let far = Payload::logits(vec![vec![r(-800, 1), BigReal::zero()]]);
        let a = FloatTable::build_with(&m, &spec, &far, FloatForm::Definition).unwrap();
        let b = FloatTable::build(&m, &spec, &far).unwrap();
        assert!(a.term(0, 0).is_infinite());
        assert_eq!(*b.term(0, 0), 800.0);
        let sig = Payload::logits(vec![vec![r(40, 1)]]);
        let a = FloatTable::build_with(&m, &LossSpec::SigmoidCe, &sig, FloatForm::Definition).unwrap();
        assert!(a.term(0, 0).is_infinite());
    }
}
