//! The data curator: private labels behind a noisy, budgeted loss oracle.

mod data;
mod serve;

pub use data::{load_labels, load_labels_from_reader, synthetic_labels, Dataset, LoadedLabels};
pub use serve::{handle_line, serve_stdio, serve_stream, serve_tcp, ErrorCode, Request, Response};

use std::ops::Range;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bignum::{bits_for, rational_to_string, round_to_fpa, BigNumError, BigReal, FpaFormat, FpaValue};
use crate::losses::{self, FpaRounding, LabelVector, LossError, LossSpec, LossTable, Payload, Row};

/// Largest labeling space the adversarial noise mode searches.
pub const ADVERSARIAL_CAP: u64 = 6561;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("query budget of {0} exhausted")]
    BudgetExhausted(u64),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("loss {got} does not match the oracle's {want}")]
    LossMismatch { got: String, want: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("cannot parse labels: {0}")]
    Parse(String),
    #[error("unknown class {value:?}")]
    UnknownClass { value: String },
}

impl From<LossError> for OracleError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::Numeric(n) => OracleError::Numeric(n.to_string()),
            other => OracleError::MalformedPayload(other.to_string()),
        }
    }
}

impl From<BigNumError> for OracleError {
    fn from(e: BigNumError) -> Self {
        OracleError::Numeric(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Noise {
    None,
    /// Uniform on the open interval `(−τ, τ)`.
    Uniform { seed: u64 },
    /// `±τ(1 − margin)` with a seeded random sign.
    WorstCase {
        #[serde(with = "crate::serde_rat")]
        margin: BigRational,
        seed: u64,
    },
    /// `±τ(1 − margin)`, signed toward the closest competing labeling.
    AdversarialTowardCompetitor {
        #[serde(with = "crate::serde_rat")]
        margin: BigRational,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Precision {
    /// Arbitrary precision with absolute error at most `err`.
    Apa {
        #[serde(with = "crate::serde_rat")]
        err: BigRational,
    },
    /// Evaluation with rounding after every operation in `format`.
    Fpa { format: FpaFormat },
}

/// Public oracle parameters. The labels are held by [`Oracle`] and never serialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub loss: LossSpec,
    #[serde(with = "crate::serde_rat")]
    pub tau: BigRational,
    pub noise: Noise,
    pub precision: Precision,
    #[serde(default)]
    pub max_queries: Option<u64>,
}

impl OracleConfig {
    /// Noiseless oracle with absolute error `2^-64`.
    pub fn new(loss: LossSpec, tau: BigRational) -> Self {
        OracleConfig {
            loss,
            tau,
            noise: Noise::None,
            precision: Precision::Apa { err: BigRational::new(BigInt::one(), BigInt::one() << 64) },
            max_queries: None,
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        self.loss.validate().map_err(|e| OracleError::InvalidConfig(e.to_string()))?;
        if !self.tau.is_positive() {
            return Err(OracleError::InvalidConfig("τ must be positive".into()));
        }
        match &self.noise {
            Noise::WorstCase { margin, .. } | Noise::AdversarialTowardCompetitor { margin } => {
                if !margin.is_positive() || margin >= &BigRational::one() {
                    return Err(OracleError::InvalidConfig("margin must lie in (0, 1)".into()));
                }
            }
            Noise::None | Noise::Uniform { .. } => {}
        }
        if let Precision::Apa { err } = &self.precision {
            if !err.is_positive() {
                return Err(OracleError::InvalidConfig("error budget must be positive".into()));
            }
        }
        Ok(())
    }

    /// Decimal digits carried by transport responses.
    pub fn digits(&self) -> usize {
        match &self.precision {
            Precision::Apa { err } => (bits_for(err) as f64 * std::f64::consts::LOG10_2).ceil() as usize + 2,
            Precision::Fpa { format } => ((format.mant_bits + 1) as f64 * std::f64::consts::LOG10_2).ceil() as usize + 20,
        }
    }
}

/// An answered loss value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LossValue {
    Apa(BigReal),
    Fpa(FpaValue),
}

impl LossValue {
    /// The value with its error; flagged floating-point results have none.
    pub fn to_real(&self) -> Option<BigReal> {
        match self {
            LossValue::Apa(x) => Some(x.clone()),
            LossValue::Fpa(v) => v.to_rational().map(BigReal::exact),
        }
    }

    pub fn to_decimal(&self, digits: usize) -> Option<String> {
        self.to_real().map(|x| x.to_decimal(digits))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryRecord {
    pub index: u64,
    /// Hex SHA-256 of the payload's canonical text.
    pub digest: String,
    pub rows: (usize, usize),
    pub loss_value: Option<String>,
    pub noise: String,
    /// Logical clock, advanced on every request including rejected ones.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub value: LossValue,
    pub index: u64,
}

/// A curator holding private labels.
pub struct Oracle {
    labels: LabelVector,
    config: OracleConfig,
    rng: ChaCha8Rng,
    used: u64,
    clock: u64,
    transcript: Vec<QueryRecord>,
}

impl std::fmt::Debug for Oracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Oracle")
            .field("n", &self.labels.n())
            .field("config", &self.config)
            .field("used", &self.used)
            .finish_non_exhaustive()
    }
}

impl Oracle {
    pub fn new(labels: LabelVector, config: OracleConfig) -> Result<Self, OracleError> {
        config.validate()?;
        if labels.k() != config.loss.k() {
            return Err(OracleError::InvalidConfig(format!(
                "labels have K = {}, loss expects {}",
                labels.k(),
                config.loss.k()
            )));
        }
        let seed = match &config.noise {
            Noise::Uniform { seed } | Noise::WorstCase { seed, .. } => *seed,
            _ => 0,
        };
        Ok(Oracle { labels, config, rng: ChaCha8Rng::seed_from_u64(seed), used: 0, clock: 0, transcript: Vec::new() })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.labels.n()
    }

    pub fn queries_used(&self) -> u64 {
        self.used
    }

    pub fn transcript(&self) -> &[QueryRecord] {
        &self.transcript
    }

    /// `f(σ*, θ) + ν` over all rows.
    pub fn evaluate(&mut self, payload: &Payload) -> Result<Answer, OracleError> {
        self.evaluate_rows(payload, 0..self.n())
    }

    /// `f(σ*[rows], θ) + ν` for a payload covering the given row range.
    pub fn evaluate_rows(&mut self, payload: &Payload, rows: Range<usize>) -> Result<Answer, OracleError> {
        self.clock += 1;
        if let Some(max) = self.config.max_queries {
            if self.used >= max {
                return Err(OracleError::BudgetExhausted(max));
            }
        }
        if rows.end > self.n() || rows.start >= rows.end || payload.n() != rows.len() {
            return Err(OracleError::MalformedPayload(format!(
                "{} rows supplied for range {}..{} of {}",
                payload.n(),
                rows.start,
                rows.end,
                self.n()
            )));
        }
        payload.check_for(&self.config.loss)?;
        let sigma = self.labels.slice(rows.clone());
        let noise = self.draw_noise(payload, &sigma)?;
        let spec = &self.config.loss;
        let value = match &self.config.precision {
            Precision::Apa { err } => {
                let f = losses::eval(spec, &sigma, payload, err)?;
                LossValue::Apa(&f + &BigReal::exact(noise.clone()))
            }
            Precision::Fpa { format } => {
                let f = losses::eval_in_fpa(spec, &sigma, payload, *format, FpaRounding::PerOperation)?;
                match f.to_rational() {
                    Some(x) => LossValue::Fpa(round_to_fpa(&BigReal::exact(x + &noise), *format)?),
                    None => LossValue::Fpa(f),
                }
            }
        };
        let index = self.used;
        self.used += 1;
        self.transcript.push(QueryRecord {
            index,
            digest: payload_digest(payload),
            rows: (rows.start, rows.end),
            loss_value: value.to_decimal(self.config.digits()),
            noise: rational_to_string(&noise),
            timestamp: self.clock,
        });
        Ok(Answer { value, index })
    }

    fn draw_noise(&mut self, payload: &Payload, sigma: &LabelVector) -> Result<BigRational, OracleError> {
        let tau = &self.config.tau;
        Ok(match &self.config.noise {
            Noise::None => BigRational::zero(),
            Noise::Uniform { .. } => {
                // m ∈ [1, 2^64 − 1] maps onto the open interval (−1, 1)
                let m: u64 = self.rng.gen_range(1..=u64::MAX);
                let two64 = BigInt::one() << 64;
                tau * BigRational::new(BigInt::from(m) * 2 - &two64, two64)
            }
            Noise::WorstCase { margin, .. } => {
                let mag = tau * (BigRational::one() - margin);
                if self.rng.gen::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
            Noise::AdversarialTowardCompetitor { margin } => {
                let mag = tau * (BigRational::one() - margin);
                if competitor_above(&self.config.loss, payload, sigma, tau)? {
                    mag
                } else {
                    -mag
                }
            }
        })
    }
}

/// Whether the labeling with the closest loss value to `σ` lies above it.
fn competitor_above(spec: &LossSpec, payload: &Payload, sigma: &LabelVector, tau: &BigRational) -> Result<bool, OracleError> {
    let k = spec.k();
    let size = (k as u128).checked_pow(sigma.n() as u32).unwrap_or(u128::MAX);
    if size > ADVERSARIAL_CAP as u128 {
        return Err(OracleError::InvalidConfig(format!("adversarial noise needs K^N <= {ADVERSARIAL_CAP}, got {size}")));
    }
    let eps = (tau / BigRational::from_integer(64.into())).min(crate::bignum::pow2(-64));
    let table = LossTable::build(spec, payload, &eps)?;
    let truth = table.eval(sigma);
    let mut best: Option<(BigRational, bool)> = None;
    for other in LabelVector::all(sigma.n(), k).filter(|s| s != sigma) {
        let d = table.eval(&other).value() - truth.value();
        if best.as_ref().is_none_or(|(b, _)| d.abs() < *b) {
            best = Some((d.abs(), !d.is_negative()));
        }
    }
    Ok(best.is_none_or(|(_, up)| up))
}

/// Hex SHA-256 of a canonical text form of the payload.
pub fn payload_digest(payload: &Payload) -> String {
    let mut h = Sha256::new();
    h.update(if payload.is_logits() { "logits" } else { "probs" });
    for row in payload.rows() {
        match row {
            Row::Values(v) => {
                h.update("|v");
                for x in v {
                    h.update(format!(";{}~{}", rational_to_string(x.value()), rational_to_string(x.err())));
                }
            }
            Row::Pow3(w) => {
                h.update("|w");
                for x in w {
                    h.update(format!(";{}", rational_to_string(x)));
                }
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
