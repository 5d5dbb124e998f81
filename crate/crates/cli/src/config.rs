//! Experiment configuration shared by flags and JSON config files.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use codomain::attack::parse_tau;
use codomain::bignum::{parse_rational, rational_to_string};
use codomain::losses::{Generator, LabelVector, LossSpec};
use codomain::oracle::{synthetic_labels, Dataset};
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::arith::Arith;

/// Payload families plotted in the figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossFamily {
    KaryCe,
    SoftmaxCe,
    SigmoidCe,
    /// Binary cross-entropy with the two-class baseline payload.
    BinaryCe,
}

impl LossFamily {
    pub const ALL: [LossFamily; 4] = [LossFamily::KaryCe, LossFamily::SoftmaxCe, LossFamily::SigmoidCe, LossFamily::BinaryCe];

    pub fn name(self) -> &'static str {
        match self {
            LossFamily::KaryCe => "kary-ce",
            LossFamily::SoftmaxCe => "softmax-ce",
            LossFamily::SigmoidCe => "sigmoid-ce",
            LossFamily::BinaryCe => "binary-ce",
        }
    }

    /// The loss for `k` classes, or `None` when the family is binary-only.
    pub fn spec(self, k: u32) -> Option<LossSpec> {
        match self {
            LossFamily::KaryCe => Some(LossSpec::KaryCe { k }),
            LossFamily::SoftmaxCe => Some(LossSpec::SoftmaxCe { k }),
            LossFamily::SigmoidCe if k == 2 => Some(LossSpec::SigmoidCe),
            LossFamily::BinaryCe if k == 2 => Some(LossSpec::BinaryCe),
            _ => None,
        }
    }
}

impl FromStr for LossFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        LossFamily::ALL.into_iter().find(|f| f.name() == s.trim()).ok_or_else(|| format!("unknown loss family {s:?}"))
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A bundled dataset or seeded synthetic labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetChoice {
    Named(Dataset),
    Synthetic { n: usize, k: u32, seed: u64 },
}

impl DatasetChoice {
    pub fn k(self) -> u32 {
        match self {
            DatasetChoice::Named(d) => d.k(),
            DatasetChoice::Synthetic { k, .. } => k,
        }
    }

    pub fn labels(self) -> LabelVector {
        match self {
            DatasetChoice::Named(d) => d.load().labels,
            DatasetChoice::Synthetic { n, k, seed } => synthetic_labels(seed, n, k),
        }
    }
}

impl FromStr for DatasetChoice {
    type Err = String;

    /// `titanic`, `iris`, `satellite`, or `synthetic:N,K,SEED`.
    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim();
        if let Some(rest) = t.strip_prefix("synthetic:") {
            let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
            let bad = || format!("expected synthetic:N,K,SEED, got {s:?}");
            let [n, k, seed] = parts[..] else { return Err(bad()) };
            let n: usize = n.parse().map_err(|_| bad())?;
            let k: u32 = k.parse().map_err(|_| bad())?;
            if n == 0 || k < 2 {
                return Err(bad());
            }
            return Ok(DatasetChoice::Synthetic { n, k, seed: seed.parse().map_err(|_| bad())? });
        }
        t.parse::<Dataset>().map(DatasetChoice::Named).map_err(|e| e.to_string())
    }
}

impl fmt::Display for DatasetChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetChoice::Named(d) => f.write_str(d.name()),
            DatasetChoice::Synthetic { n, k, seed } => write!(f, "synthetic:{n},{k},{seed}"),
        }
    }
}

/// Parse a loss given as `family[:params]` or as the JSON form of [`LossSpec`].
///
/// `kary-ce:K`, `softmax-ce:K`, `sigmoid-ce`, `binary-ce`, `kl`, `itakura-saito`, `squared-euclidean`,
/// `norm-like:ALPHA`, `mahalanobis:A00,A01,A10,A11`, `additive:neg-entropy|square`.
pub fn parse_loss(s: &str) -> Result<LossSpec, String> {
    let t = s.trim();
    if t.starts_with('{') {
        return serde_json::from_str(t).map_err(|e| e.to_string());
    }
    let (name, arg) = match t.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (t, None),
    };
    let rat = |x: &str| parse_rational(x).map_err(|e| e.to_string());
    let need = || format!("{name} needs a parameter");
    let spec = match (name, arg) {
        ("kary-ce", Some(k)) => LossSpec::KaryCe { k: k.parse().map_err(|_| need())? },
        ("softmax-ce", Some(k)) => LossSpec::SoftmaxCe { k: k.parse().map_err(|_| need())? },
        ("sigmoid-ce", None) => LossSpec::SigmoidCe,
        ("binary-ce", None) => LossSpec::BinaryCe,
        ("kl", None) => LossSpec::Kl,
        ("itakura-saito", None) => LossSpec::ItakuraSaito,
        ("squared-euclidean", None) => LossSpec::SquaredEuclidean,
        ("norm-like", Some(a)) => LossSpec::NormLike { alpha: rat(a)? },
        ("mahalanobis", Some(a)) => {
            let v: Vec<BigRational> = a.split(',').map(rat).collect::<Result<_, _>>()?;
            let [a00, a01, a10, a11] = <[BigRational; 4]>::try_from(v).map_err(|_| "mahalanobis needs four entries".to_string())?;
            LossSpec::Mahalanobis { a: [[a00, a01], [a10, a11]] }
        }
        ("additive", Some("neg-entropy")) => LossSpec::Additive { generator: Generator::NegEntropy },
        ("additive", Some("square")) => LossSpec::Additive { generator: Generator::Square },
        ("kary-ce" | "softmax-ce" | "norm-like" | "mahalanobis" | "additive", None) => return Err(need()),
        _ => return Err(format!("unknown loss {s:?}")),
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

/// Configuration of a figure run; the JSON form mirrors the command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(with = "strings")]
    pub datasets: Vec<DatasetChoice>,
    #[serde(with = "strings")]
    pub losses: Vec<LossFamily>,
    #[serde(with = "rationals")]
    pub tau: Vec<BigRational>,
    pub trials: u32,
    #[serde(with = "string")]
    pub precision: Arith,
    /// Required per-trial label accuracy, in percent.
    pub accuracy_target: u32,
    /// Block sizes swept by the multi-query figure.
    pub block_size: Vec<usize>,
    pub seed: u64,
    /// Largest N tried by the single-query figure.
    pub max_n: usize,
    /// Noise magnitude as a fraction of τ; the sign is drawn per trial.
    #[serde(with = "rational")]
    pub noise: BigRational,
    pub out: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            datasets: Dataset::ALL.into_iter().map(DatasetChoice::Named).collect(),
            losses: LossFamily::ALL.to_vec(),
            tau: ["1/10000", "1/1000", "1/100", "1/10", "1"].iter().map(|s| parse_rational(s).unwrap()).collect(),
            trials: 100,
            precision: Arith::default(),
            accuracy_target: 100,
            block_size: vec![1, 2, 4, 8, 12, 16, 24, 32, 48, 64],
            seed: 0,
            max_n: 64,
            noise: BigRational::new(99.into(), 100.into()),
            out: None,
            svg: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        if self.tau.is_empty() || self.tau.windows(2).any(|w| w[0] >= w[1]) || self.tau.iter().any(|t| t <= &BigRational::from_integer(0.into())) {
            return Err("tau grid must be positive and strictly ascending".into());
        }
        if self.accuracy_target == 0 || self.accuracy_target > 100 {
            return Err("accuracy target must be a percentage in 1..=100".into());
        }
        if self.noise < BigRational::from_integer(0.into()) || self.noise >= BigRational::from_integer(1.into()) {
            return Err("noise fraction must lie in [0, 1)".into());
        }
        if self.datasets.is_empty() || self.losses.is_empty() || self.max_n == 0 {
            return Err("need at least one dataset, one loss and max_n >= 1".into());
        }
        if self.block_size.contains(&0) {
            return Err("block sizes must be positive".into());
        }
        Ok(())
    }

    /// Comma-separated τ values, each an exact rational.
    pub fn parse_tau_grid(s: &str) -> Result<Vec<BigRational>, String> {
        s.split(',').map(|t| parse_tau(t.trim()).map_err(|e| format!("{t:?}: {e}"))).collect()
    }
}

mod string {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr<Err = String>,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

mod strings {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.to_string()))
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<Vec<T>, D::Error>
    where
        T: FromStr<Err = String>,
        D: Deserializer<'de>,
    {
        Vec::<String>::deserialize(d)?.iter().map(|x| x.parse().map_err(serde::de::Error::custom)).collect()
    }
}

mod rational {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&rational_to_string(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        parse_rational(&String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

mod rationals {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigRational], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(rational_to_string))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigRational>, D::Error> {
        Vec::<String>::deserialize(d)?.iter().map(|x| parse_rational(x).map_err(serde::de::Error::custom)).collect()
    }
}
