//! Payload constructions and label decoding (single- and multi-query).

mod construct;
mod decode;
mod multi;
mod verify;
mod wire;

use std::sync::OnceLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Signed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bignum::{parse_rational, BigNumError, BigReal};
use crate::codes::CodeError;
use crate::losses::{Generator, LabelVector, LossError, LossSpec, LossTable, Payload};

pub use construct::{
    construct, construct_binary_baseline, construct_bregman_general, construct_kce, construct_linear_decomposable,
    construct_mahalanobis, construct_sigmoid, construct_softmax, construct_unnoised, default_solver, Solver,
};
pub use decode::{bruteforce_counted, decode, decode_best_effort, decode_bruteforce, decode_counted};
pub use multi::{block_ranges, plan_multiquery};
pub use verify::{verify_exhaustive, VerifyReport};
pub use wire::{payload_from_json, payload_to_json, Encoding, PayloadJson};

/// Default bound on the bit length of the largest `3^w` a construction may imply.
///
/// Payload entries are carried as exponents, so this limits derived decimal or float views
/// rather than the construction itself.
pub const PLAN_MAX_BITS: u64 = 1 << 32;

/// Largest labeling space `decode_bruteforce` enumerates by default.
pub const BRUTEFORCE_CAP: u64 = 6561;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("construction exceeds the digit budget: {0}")]
    BudgetExceeded(String),
    #[error("tau must be an exact rational")]
    IrrationalTau,
    #[error("construction infeasible: {0}")]
    Infeasible(String),
    #[error("decoding failed: {0}")]
    DecodingFailed(String),
    #[error("labeling space of size {size} exceeds cap {cap}")]
    TooLarge { size: u128, cap: u64 },
    #[error("unsupported loss: {0}")]
    UnsupportedLoss(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("payload encoding: {0}")]
    Encoding(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Numeric(#[from] BigNumError),
}

impl From<CodeError> for AttackError {
    fn from(e: CodeError) -> Self {
        AttackError::DecodingFailed(e.to_string())
    }
}

/// Parse a noise bound given as text; anything that is not an exact rational is rejected.
pub fn parse_tau(s: &str) -> Result<BigRational, AttackError> {
    let t = parse_rational(s).map_err(|_| AttackError::IrrationalTau)?;
    if !t.is_positive() {
        return Err(AttackError::InvalidPlan("tau must be positive".into()));
    }
    Ok(t)
}

/// Which construction a plan uses for Mahalanobis losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MahalanobisMode {
    /// `1 − 2θ_i = (2Nτ/α)·2^{i−1}`.
    #[default]
    Corrected,
    /// Uniform `θ_i = (1 − Nτ/α)/2`.
    PaperFaithful,
}

/// Parameters of an attack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub loss: LossSpec,
    pub n: usize,
    pub k: u32,
    /// `None` for unnoised constructions.
    #[serde(with = "opt_rat", default)]
    pub tau: Option<BigRational>,
    pub block_size: usize,
    #[serde(with = "crate::serde_rat")]
    pub oracle_err: BigRational,
    #[serde(with = "crate::serde_rat")]
    pub attacker_err: BigRational,
    #[serde(default)]
    pub mahalanobis_mode: MahalanobisMode,
    #[serde(default = "default_max_bits")]
    pub max_bits: u64,
}

fn default_max_bits() -> u64 {
    PLAN_MAX_BITS
}

mod opt_rat {
    use num_rational::BigRational;
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::bignum::{parse_rational, rational_to_string};

    pub fn serialize<S: Serializer>(r: &Option<BigRational>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Some(r) => s.serialize_some(&rational_to_string(r)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BigRational>, D::Error> {
        let s = Option::<String>::deserialize(d)?;
        s.map(|s| parse_rational(&s).map_err(serde::de::Error::custom)).transpose()
    }
}

impl AttackPlan {
    /// Single-query plan with the default budgets (`τ/32` each; `τ/128` for Mahalanobis).
    pub fn new(loss: LossSpec, n: usize, tau: BigRational) -> Self {
        let div = if matches!(loss, LossSpec::Mahalanobis { .. }) { 128 } else { 32 };
        let b = &tau / BigRational::from_integer(BigInt::from(div));
        AttackPlan {
            k: loss.k(),
            loss,
            n,
            tau: Some(tau),
            block_size: n,
            oracle_err: b.clone(),
            attacker_err: b,
            mahalanobis_mode: MahalanobisMode::Corrected,
            max_bits: PLAN_MAX_BITS,
        }
    }

    /// Plan for an unnoised construction with explicit budgets.
    pub fn unnoised(loss: LossSpec, n: usize, budget: BigRational) -> Self {
        AttackPlan {
            k: loss.k(),
            loss,
            n,
            tau: None,
            block_size: n,
            oracle_err: budget.clone(),
            attacker_err: budget,
            mahalanobis_mode: MahalanobisMode::Corrected,
            max_bits: PLAN_MAX_BITS,
        }
    }

    pub fn tau(&self) -> Result<&BigRational, AttackError> {
        self.tau.as_ref().ok_or_else(|| AttackError::InvalidPlan("construction needs a noise bound".into()))
    }

    pub fn query_count(&self) -> usize {
        self.n.div_ceil(self.block_size)
    }

    /// Check the decoding rule for the plan's decoder family.
    pub fn validate(&self) -> Result<(), AttackError> {
        self.loss.validate()?;
        if self.n == 0 || self.block_size == 0 || self.block_size > self.n {
            return Err(AttackError::InvalidPlan(format!("need 1 <= M <= N, got M = {}, N = {}", self.block_size, self.n)));
        }
        if !self.oracle_err.is_positive() || !self.attacker_err.is_positive() {
            return Err(AttackError::InvalidPlan("error budgets must be positive".into()));
        }
        let Some(tau) = &self.tau else { return Ok(()) };
        if !tau.is_positive() {
            return Err(AttackError::InvalidPlan("tau must be positive".into()));
        }
        let slack = &self.oracle_err + &self.attacker_err;
        match self.loss {
            LossSpec::Mahalanobis { .. } => {
                if &slack >= tau {
                    return Err(AttackError::InvalidPlan("budgets leave no room for noise".into()));
                }
            }
            _ => {
                // (τ + o + a) / (τ ln 3) < 1, using ln 3 > 10986/10000
                let ln3_lo = BigRational::new(10986.into(), 10000.into());
                if tau + &slack >= tau * ln3_lo {
                    return Err(AttackError::InvalidPlan("budgets violate the decoding rule".into()));
                }
            }
        }
        Ok(())
    }
}

/// Shape of the integer lattice a structured decoder snaps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LatticeShape {
    /// Block codewords `Σ 2^{(i−1)K + σ_i + 1}` over the live rows.
    Blocks { k: u32 },
    /// `Σ_{σ_i = 1} 2^i` over the live rows.
    Bits,
}

/// The fast decode path of a constructed payload.
///
/// All structured paths work on `y = N·ℓ`, the sum of per-row contributions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoder {
    /// `x = offset ∓ (y − base) / (scale · [ln 3])`, then snap to the lattice.
    Lattice {
        offset: BigRational,
        base: BigReal,
        scale: BigRational,
        log3: bool,
        negate: bool,
        shape: LatticeShape,
    },
    /// `y − base = Σ_{σ_i=1} diffs_i` with superincreasing `diffs`; greedy extraction.
    ///
    /// All quantities are integers scaled by `2^bits`. `thresholds[j]` is the midpoint test for `order[j]`.
    Superincreasing {
        bits: u64,
        base: BigInt,
        diffs: Vec<BigInt>,
        order: Vec<usize>,
        thresholds: Vec<BigInt>,
        tolerance: BigInt,
    },
    /// `exp(mult · (y − base)) = Π_{σ_i=1} p_i`.
    Prime { base: BigReal, mult: BigRational, primes: Vec<BigInt> },
    BruteForce,
}

impl Decoder {
    pub fn tag(&self) -> &'static str {
        match self {
            Decoder::Lattice { shape: LatticeShape::Blocks { .. }, .. } => "codeword",
            Decoder::Lattice { shape: LatticeShape::Bits, .. } => "bits",
            Decoder::Superincreasing { .. } => "superincreasing",
            Decoder::Prime { .. } => "prime",
            Decoder::BruteForce => "bruteforce",
        }
    }
}

/// A payload together with everything needed to decode answers to it.
#[derive(Debug)]
pub struct ConstructedPayload {
    pub plan: AttackPlan,
    pub payload: Payload,
    /// Label-independent part `C` of the loss, when the decoder has one.
    pub constant: Option<BigReal>,
    pub decoder: Decoder,
    /// Rows carrying the neutral element.
    pub masked: Vec<usize>,
    values: OnceLock<Result<Vec<BigReal>, AttackError>>,
    fixed: OnceLock<(u64, Vec<BigInt>)>,
}

impl Clone for ConstructedPayload {
    fn clone(&self) -> Self {
        ConstructedPayload::new(
            self.plan.clone(),
            self.payload.clone(),
            self.constant.clone(),
            self.decoder.clone(),
            self.masked.clone(),
        )
    }
}

impl ConstructedPayload {
    pub fn new(
        plan: AttackPlan,
        payload: Payload,
        constant: Option<BigReal>,
        decoder: Decoder,
        masked: Vec<usize>,
    ) -> Self {
        ConstructedPayload { plan, payload, constant, decoder, masked, values: OnceLock::new(), fixed: OnceLock::new() }
    }

    pub fn loss(&self) -> &LossSpec {
        &self.plan.loss
    }

    pub fn n(&self) -> usize {
        self.payload.n()
    }

    pub fn k(&self) -> u32 {
        self.plan.k
    }

    /// Rows whose labels this payload reveals, ascending.
    pub fn live_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|i| !self.masked.contains(i)).collect()
    }

    /// Full labeling with `live` labels placed on the live rows and 0 elsewhere.
    pub fn embed(&self, live: &LabelVector) -> LabelVector {
        let mut labels = vec![0u32; self.n()];
        for (pos, row) in self.live_rows().into_iter().enumerate() {
            labels[row] = live.get(pos);
        }
        LabelVector::new(labels, self.k()).expect("labels within range")
    }

    /// Evaluation precision used for the brute-force value table.
    pub fn table_eps(&self) -> BigRational {
        let mut e = self.plan.attacker_err.clone();
        if let Some(t) = &self.plan.tau {
            let cap = t / BigRational::from_integer(BigInt::from(64));
            if cap < e {
                e = cap;
            }
        }
        e
    }

    /// `f(σ)` for every labeling of the live rows, in index order; computed once.
    pub fn all_values(&self, cap: u64) -> Result<&[BigReal], AttackError> {
        let live = self.live_rows().len();
        let size = (self.k() as u128).pow(live as u32);
        if size > cap as u128 {
            return Err(AttackError::TooLarge { size, cap });
        }
        let res = self.values.get_or_init(|| {
            let table = LossTable::build(&self.plan.loss, &self.payload, &self.table_eps())?;
            Ok(LabelVector::all(live, self.k()).map(|s| table.eval(&self.embed(&s))).collect())
        });
        match res {
            Ok(v) => Ok(v),
            Err(e) => Err(e.clone()),
        }
    }

    /// [`Self::all_values`] as integers `round(f(σ) · 2^P)`, with `P` well below the table error.
    pub fn fixed_values(&self, cap: u64) -> Result<(u64, &[BigInt]), AttackError> {
        let values = self.all_values(cap)?;
        let (p, v) = self.fixed.get_or_init(|| {
            let p = crate::bignum::bits_for(&self.table_eps()) + 64;
            (p, values.iter().map(|x| to_fixed(x.value(), p)).collect())
        });
        Ok((*p, v))
    }
}

/// `⌊x · 2^p + 1/2⌋`, without reducing a rational.
pub fn to_fixed(x: &BigRational, p: u64) -> BigInt {
    use num_integer::Integer;
    let den = x.denom() << 1usize;
    ((x.numer() << (p as usize + 1)) + x.denom()).div_floor(&den)
}

/// Default plan constructor for a loss family.
pub fn default_generator_for(loss: &LossSpec) -> Option<Generator> {
    match loss {
        LossSpec::Additive { generator } => Some(*generator),
        _ => None,
    }
}
