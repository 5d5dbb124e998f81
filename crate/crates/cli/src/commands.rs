//! Subcommands and their exit codes.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::ops::Range;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use codomain::attack::{
    block_ranges, construct, construct_unnoised, decode, decode_best_effort, parse_tau, payload_from_json,
    payload_to_json, verify_exhaustive, AttackError, AttackPlan, ConstructedPayload, Encoding, MahalanobisMode,
    PayloadJson, BRUTEFORCE_CAP,
};
use codomain::bignum::{parse_rational, rational_to_string, BigReal};
use codomain::losses::{LabelVector, LossError, LossSpec, Payload, Row};
use codomain::mutnet::{MutNet, MutNetError};
use codomain::oracle::{load_labels, serve_stdio, serve_tcp, Noise, Oracle, OracleConfig, OracleError, Precision, Response};
use codomain::separability::{lambda_bruteforce_capped, SeparabilityError};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, Zero};
use serde::Serialize;
use serde_json::{json, Value};

use crate::arith::Arith;
use crate::config::{parse_loss, DatasetChoice, ExperimentConfig, LossFamily};
use crate::fig;
use crate::svg::{Chart, Series};

pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IRRATIONAL_TAU: i32 = 3;
pub const EXIT_ATTACK: i32 = 4;
pub const EXIT_ORACLE: i32 = 5;
pub const EXIT_SEPARABILITY: i32 = 6;
pub const EXIT_IO: i32 = 7;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        let code = if e == AttackError::IrrationalTau { EXIT_IRRATIONAL_TAU } else { EXIT_ATTACK };
        CliError { code, message: e.to_string() }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        CliError { code: EXIT_ATTACK, message: e.to_string() }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError { code: EXIT_ORACLE, message: e.to_string() }
    }
}

impl From<SeparabilityError> for CliError {
    fn from(e: SeparabilityError) -> Self {
        CliError { code: EXIT_SEPARABILITY, message: e.to_string() }
    }
}

impl From<MutNetError> for CliError {
    fn from(e: MutNetError) -> Self {
        CliError { code: EXIT_ATTACK, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { code: EXIT_IO, message: e.to_string() }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError { code: EXIT_IO, message: format!("json: {e}") }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "codomain", version, about = "Label inference from loss values: payloads, oracle, and experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build attack payloads and write them as JSON.
    Construct(ConstructArgs),
    /// Run an attack against an in-process or served oracle and report accuracy.
    Attack(AttackArgs),
    /// Separability report for a payload, or exhaustive decoder verification.
    Verify(VerifyArgs),
    /// Serve a loss oracle over stdio or TCP.
    Oracle(OracleArgs),
    /// Largest N recovered per loss, dataset and τ (CSV).
    Fig1(FigArgs),
    /// Multi-query accuracy per block size (CSV).
    Fig2(FigArgs),
    /// Re-run one single-query trial of fig1.
    Replay(ReplayArgs),
    /// Export a network whose output is the attack payload.
    Mutnet(MutnetArgs),
}

fn loss_arg(s: &str) -> Result<LossSpec, String> {
    parse_loss(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncodingArg {
    Auto,
    Pow3,
    Rational,
    Decimal,
    Fpa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Corrected,
    PaperFaithful,
}

impl From<ModeArg> for MahalanobisMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Corrected => MahalanobisMode::Corrected,
            ModeArg::PaperFaithful => MahalanobisMode::PaperFaithful,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    None,
    Uniform,
    WorstCase,
    Adversarial,
}

#[derive(Debug, Args)]
pub struct PayloadSpecArgs {
    /// Loss, e.g. `kary-ce:3`, `sigmoid-ce`, `mahalanobis:2,0,0,2`.
    #[arg(long, value_parser = loss_arg)]
    pub loss: LossSpec,
    /// Noise bound τ as an exact rational; omit for unnoised constructions.
    #[arg(long)]
    pub tau: Option<String>,
    /// Rows per query; defaults to all rows.
    #[arg(long = "block-size")]
    pub block_size: Option<usize>,
    #[arg(long = "mahalanobis-mode", value_enum, default_value = "corrected")]
    pub mahalanobis_mode: ModeArg,
}

#[derive(Debug, Args)]
pub struct ConstructArgs {
    #[command(flatten)]
    pub spec: PayloadSpecArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "auto")]
    pub encoding: EncodingArg,
    /// Digits for decimal encodings.
    #[arg(long, default_value_t = 60)]
    pub digits: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub spec: PayloadSpecArgs,
    /// Labels held by the in-process oracle, and the reference for accuracy.
    #[arg(long)]
    pub dataset: Option<DatasetChoice>,
    /// Query a served oracle at `host:port` instead.
    #[arg(long)]
    pub connect: Option<String>,
    /// Number of rows; taken from the dataset when given.
    #[arg(long)]
    pub n: Option<usize>,
    /// In-process oracle arithmetic: `apa`, `fpa:double`, `fpa:single`, `fpa:e=E,m=M`, `fpa:phi=P`.
    #[arg(long, default_value = "apa")]
    pub precision: Arith,
    #[arg(long, value_enum, default_value = "worst-case")]
    pub noise: NoiseArg,
    /// Noise stays at `τ(1 − margin)` for the worst-case and adversarial modes.
    #[arg(long, default_value = "3/100")]
    pub margin: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_parser = loss_arg)]
    pub loss: Option<LossSpec>,
    /// Payload JSON, either from `construct` or a bare payload object.
    #[arg(long)]
    pub payload: Option<PathBuf>,
    /// Binary predictions `θ_1,…,θ_N`.
    #[arg(long)]
    pub theta: Option<String>,
    #[arg(long)]
    pub tau: Option<String>,
    /// Build and verify the construction for this many rows.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "mahalanobis-mode", value_enum, default_value = "corrected")]
    pub mahalanobis_mode: ModeArg,
    /// Largest labeling space enumerated.
    #[arg(long, default_value_t = BRUTEFORCE_CAP)]
    pub cap: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_parser = loss_arg)]
    pub loss: LossSpec,
    #[arg(long)]
    pub tau: String,
    #[arg(long)]
    pub dataset: Option<DatasetChoice>,
    /// CSV file with the labels; needs `--column` and `--k`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long, default_value = "apa")]
    pub precision: Arith,
    #[arg(long, value_enum, default_value = "uniform")]
    pub noise: NoiseArg,
    #[arg(long, default_value = "3/100")]
    pub margin: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "max-queries")]
    pub max_queries: Option<u64>,
    /// Listen on `host:port`; stdio otherwise.
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long = "max-connections")]
    pub max_connections: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FigArgs {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated datasets: `titanic`, `iris`, `satellite`, `synthetic:N,K,SEED`.
    #[arg(long)]
    pub dataset: Vec<DatasetChoice>,
    /// Comma-separated loss families: `kary-ce`, `softmax-ce`, `sigmoid-ce`, `binary-ce`.
    #[arg(long, value_delimiter = ',')]
    pub loss: Vec<LossFamily>,
    /// Comma-separated τ grid.
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long)]
    pub trials: Option<u32>,
    #[arg(long)]
    pub precision: Option<Arith>,
    /// Required label accuracy per trial, in percent.
    #[arg(long = "accuracy-target")]
    pub accuracy_target: Option<u32>,
    #[arg(long = "block-size", value_delimiter = ',')]
    pub block_size: Vec<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "max-n")]
    pub max_n: Option<usize>,
    /// Noise magnitude as a fraction of τ.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub fig: FigArgs,
    /// Single N to replay.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub trial: u32,
}

#[derive(Debug, Args)]
pub struct MutnetArgs {
    #[command(flatten)]
    pub spec: PayloadSpecArgs,
    #[arg(long)]
    pub n: usize,
    /// Input width.
    #[arg(long, default_value_t = 8)]
    pub d1: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 80)]
    pub digits: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Construct(a) => cmd_construct(&a),
        Command::Attack(a) => cmd_attack(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Fig1(a) => cmd_fig1(&a),
        Command::Fig2(a) => cmd_fig2(&a),
        Command::Replay(a) => cmd_replay(&a),
        Command::Mutnet(a) => cmd_mutnet(&a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut o = std::io::stdout().lock();
            o.write_all(text.as_bytes())?;
            o.flush()?;
        }
    }
    Ok(())
}

fn emit_json(out: Option<&Path>, v: &impl Serialize) -> CliResult {
    emit(out, &(serde_json::to_string_pretty(v)? + "\n"))
}

fn rat_arg(s: &str, what: &str) -> CliResult<BigRational> {
    parse_rational(s).map_err(|e| CliError::usage(format!("{what}: {e}")))
}

fn tau_arg(s: Option<&str>) -> CliResult<Option<BigRational>> {
    s.map(parse_tau).transpose().map_err(CliError::from)
}

// ---------------------------------------------------------------------------
// payloads

/// One query: a payload on a row range with its decoder.
pub struct Block {
    pub rows: Range<usize>,
    pub cp: ConstructedPayload,
}

fn build_one(spec: &LossSpec, n: usize, tau: Option<&BigRational>, mode: MahalanobisMode) -> Result<ConstructedPayload, AttackError> {
    match tau {
        Some(t) => {
            let mut plan = AttackPlan::new(spec.clone(), n, t.clone());
            plan.mahalanobis_mode = mode;
            construct(&plan)
        }
        None => construct_unnoised(spec, n),
    }
}

/// Payloads covering `0..n` in blocks of `m` rows, each built for its own length.
pub fn build_blocks(
    spec: &LossSpec,
    n: usize,
    tau: Option<&BigRational>,
    m: usize,
    mode: MahalanobisMode,
) -> Result<Vec<Block>, AttackError> {
    if n == 0 || m == 0 {
        return Err(AttackError::InvalidPlan("need N >= 1 and M >= 1".into()));
    }
    let mut cache: HashMap<usize, ConstructedPayload> = HashMap::new();
    let mut out = Vec::new();
    for rows in block_ranges(n, m.min(n)) {
        let len = rows.len();
        let cp = match cache.entry(len) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(build_one(spec, len, tau, mode)?),
        };
        out.push(Block { rows, cp: cp.clone() });
    }
    Ok(out)
}

fn encode(payload: &Payload, enc: EncodingArg, digits: usize) -> Result<PayloadJson, AttackError> {
    let all_pow3 = payload.rows().iter().all(|r| matches!(r, Row::Pow3(_)));
    let all_exact = payload.rows().iter().all(|r| match r {
        Row::Values(v) => v.iter().all(BigReal::is_exact),
        Row::Pow3(_) => false,
    });
    let e = match enc {
        EncodingArg::Auto if all_pow3 => Encoding::Pow3,
        EncodingArg::Auto if all_exact => Encoding::Rational,
        EncodingArg::Auto | EncodingArg::Decimal => Encoding::Decimal,
        EncodingArg::Pow3 => Encoding::Pow3,
        EncodingArg::Rational => Encoding::Rational,
        EncodingArg::Fpa => Encoding::Fpa,
    };
    let format = (e == Encoding::Fpa).then(codomain::bignum::FpaFormat::ieee754_double);
    payload_to_json(payload, e, digits, format)
}

fn cmd_construct(a: &ConstructArgs) -> CliResult {
    let tau = tau_arg(a.spec.tau.as_deref())?;
    let m = a.spec.block_size.unwrap_or(a.n);
    let blocks = build_blocks(&a.spec.loss, a.n, tau.as_ref(), m, a.spec.mahalanobis_mode.into())?;
    let queries = blocks
        .iter()
        .map(|b| Ok(json!({ "rows": [b.rows.start, b.rows.end], "payload": encode(&b.cp.payload, a.encoding, a.digits)? })))
        .collect::<Result<Vec<Value>, AttackError>>()?;
    let doc = json!({
        "loss": a.spec.loss,
        "n": a.n,
        "tau": tau.as_ref().map(rational_to_string),
        "block_size": m.min(a.n),
        "decoder": blocks[0].cp.decoder.tag(),
        "queries": queries,
    });
    emit_json(a.out.as_deref(), &doc)
}

// ---------------------------------------------------------------------------
// attack

fn noise_config(kind: NoiseArg, margin: &str, seed: u64) -> CliResult<Noise> {
    let margin = rat_arg(margin, "margin")?;
    Ok(match kind {
        NoiseArg::None => Noise::None,
        NoiseArg::Uniform => Noise::Uniform { seed },
        NoiseArg::WorstCase => Noise::WorstCase { margin, seed },
        NoiseArg::Adversarial => Noise::AdversarialTowardCompetitor { margin },
    })
}

fn precision_config(arith: Arith, err: BigRational) -> Precision {
    match arith {
        Arith::Apa => Precision::Apa { err },
        Arith::Fpa(format) => Precision::Fpa { format },
    }
}

/// Source of loss answers for a block.
enum Target {
    Local(Box<Oracle>),
    Remote { reader: BufReader<TcpStream>, writer: TcpStream, next_id: i64 },
}

impl Target {
    fn ask(&mut self, spec: &LossSpec, block: &Block) -> CliResult<Option<BigReal>> {
        match self {
            Target::Local(o) => Ok(o.evaluate_rows(&block.cp.payload, block.rows.clone())?.value.to_real()),
            Target::Remote { reader, writer, next_id } => {
                let payload = encode(&block.cp.payload, EncodingArg::Auto, 80)?;
                let req = json!({
                    "id": *next_id,
                    "op": "evaluate",
                    "loss": spec,
                    "payload": payload,
                    "rows": [block.rows.start, block.rows.end],
                });
                *next_id += 1;
                writeln!(writer, "{req}")?;
                writer.flush()?;
                let mut line = String::new();
                if reader.read_line(&mut line)? == 0 {
                    return Err(CliError { code: EXIT_ORACLE, message: "oracle closed the connection".into() });
                }
                match serde_json::from_str::<Response>(&line)? {
                    Response::Ok { loss_value, digits, .. } => {
                        let v = parse_rational(&loss_value).map_err(|e| CliError { code: EXIT_ORACLE, message: e.to_string() })?;
                        let err = BigRational::new(BigInt::one(), BigInt::from(10).pow(digits as u32));
                        Ok(Some(BigReal::with_err(v, err)))
                    }
                    Response::Err { code, message, .. } => {
                        Err(CliError { code: EXIT_ORACLE, message: format!("oracle error {code:?}: {message}") })
                    }
                }
            }
        }
    }
}

#[derive(Debug, Serialize)]
pub struct AttackReport {
    pub loss: String,
    pub n: usize,
    pub block_size: usize,
    pub queries: usize,
    pub decoder: &'static str,
    /// Blocks where exact decoding failed and a best-effort guess was used.
    pub fallback_blocks: usize,
    pub recovered: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

/// Attack with one query per block; labels are compared against `truth` when it is known.
pub fn run_attack(spec: &LossSpec, blocks: &[Block], target: &mut impl FnMut(&Block) -> CliResult<Option<BigReal>>, truth: Option<&LabelVector>) -> CliResult<AttackReport> {
    let n = blocks.last().map_or(0, |b| b.rows.end);
    let mut recovered = vec![0u32; n];
    let mut fallback = 0;
    for b in blocks {
        let guess = match target(b)? {
            Some(loss) => decode(&b.cp, &loss).ok().or_else(|| {
                fallback += 1;
                decode_best_effort(&b.cp, &loss)
            }),
            None => {
                fallback += 1;
                None
            }
        };
        if let Some(g) = guess {
            recovered[b.rows.clone()].copy_from_slice(g.labels());
        }
    }
    let correct = truth.map(|t| t.labels().iter().zip(&recovered).filter(|(a, b)| a == b).count());
    Ok(AttackReport {
        loss: spec.name().into(),
        n,
        block_size: blocks.first().map_or(0, |b| b.rows.len()),
        queries: blocks.len(),
        decoder: blocks.first().map_or("none", |b| b.cp.decoder.tag()),
        fallback_blocks: fallback,
        recovered,
        correct,
        accuracy: correct.map(|c| c as f64 / n as f64),
    })
}

fn cmd_attack(a: &AttackArgs) -> CliResult {
    let tau = tau_arg(a.spec.tau.as_deref())?;
    let truth = a.dataset.map(|d| d.labels());
    let n = match (&truth, a.n) {
        (Some(t), None) => t.n(),
        (Some(t), Some(n)) if n == t.n() => n,
        (Some(t), Some(n)) => return Err(CliError::usage(format!("--n {n} does not match the dataset's {} rows", t.n()))),
        (None, Some(n)) => n,
        (None, None) => return Err(CliError::usage("need --dataset or --n")),
    };
    if let Some(t) = &truth {
        if t.k() != a.spec.loss.k() {
            return Err(CliError::usage(format!("dataset has K = {}, loss expects {}", t.k(), a.spec.loss.k())));
        }
    }
    let m = a.spec.block_size.unwrap_or(n);
    let blocks = build_blocks(&a.spec.loss, n, tau.as_ref(), m, a.spec.mahalanobis_mode.into())?;
    let mut target = match &a.connect {
        Some(addr) => {
            let stream = TcpStream::connect(addr)?;
            Target::Remote { reader: BufReader::new(stream.try_clone()?), writer: stream, next_id: 0 }
        }
        None => {
            let labels = truth.clone().ok_or_else(|| CliError::usage("an in-process oracle needs --dataset"))?;
            let tau = tau.clone().unwrap_or_else(|| BigRational::new(BigInt::one(), BigInt::one() << 64));
            let mut cfg = OracleConfig::new(a.spec.loss.clone(), tau);
            cfg.noise = if a.spec.tau.is_some() { noise_config(a.noise, &a.margin, a.seed)? } else { Noise::None };
            cfg.precision = precision_config(a.precision, blocks[0].cp.plan.oracle_err.clone());
            Target::Local(Box::new(Oracle::new(labels, cfg)?))
        }
    };
    let spec = a.spec.loss.clone();
    let report = run_attack(&spec, &blocks, &mut |b| target.ask(&spec, b), truth.as_ref())?;
    emit_json(a.out.as_deref(), &report)
}

// ---------------------------------------------------------------------------
// verify

fn read_payload_file(path: &Path, loss: Option<&LossSpec>) -> CliResult<(LossSpec, Payload, Option<BigRational>)> {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let (pj, file_loss, tau) = match doc.get("queries") {
        Some(q) => {
            let first = q.get(0).and_then(|x| x.get("payload")).ok_or_else(|| CliError::usage("payload file has no queries"))?;
            let loss: Option<LossSpec> = doc.get("loss").map(|l| serde_json::from_value(l.clone())).transpose()?;
            let tau = doc.get("tau").and_then(Value::as_str).map(|t| rat_arg(t, "tau")).transpose()?;
            (first.clone(), loss, tau)
        }
        None => (doc, None, None),
    };
    let loss = loss.cloned().or(file_loss).ok_or_else(|| CliError::usage("need --loss"))?;
    let payload = payload_from_json(&serde_json::from_value(pj)?)?;
    Ok((loss, payload, tau))
}

fn cmd_verify(a: &VerifyArgs) -> CliResult {
    let tau = tau_arg(a.tau.as_deref())?;
    if let Some(theta) = &a.theta {
        let vals = theta.split(',').map(|t| rat_arg(t.trim(), "theta")).collect::<CliResult<Vec<_>>>()?;
        if vals.iter().any(|t| t <= &BigRational::zero() || t >= &BigRational::one()) {
            return Err(CliError::usage("theta entries must lie in (0, 1)"));
        }
        let payload = Payload::binary(&vals.into_iter().map(BigReal::exact).collect::<Vec<_>>());
        let loss = a.loss.clone().unwrap_or(LossSpec::BinaryCe);
        return lambda_report(&loss, &payload, tau.as_ref(), a);
    }
    if let Some(path) = &a.payload {
        let (loss, payload, file_tau) = read_payload_file(path, a.loss.as_ref())?;
        // a payload built for τ is certified against 2τ
        let claim = tau.or(file_tau.map(|t| t * BigRational::from_integer(2.into())));
        return lambda_report(&loss, &payload, claim.as_ref(), a);
    }
    let (Some(loss), Some(n)) = (&a.loss, a.n) else {
        return Err(CliError::usage("need --theta, --payload, or --loss with --n"));
    };
    let cp = build_one(loss, n, tau.as_ref(), a.mahalanobis_mode.into())?;
    let fracs = [BigRational::zero(), BigRational::new(97.into(), 100.into()), BigRational::new((-97).into(), 100.into())];
    let report = verify_exhaustive(&cp, &fracs, a.cap)?;
    emit_json(a.out.as_deref(), &report)?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError { code: EXIT_CHECK_FAILED, message: format!("{} decode failures, {} mismatches", report.decode_failures, report.mismatches) })
    }
}

fn lambda_report(loss: &LossSpec, payload: &Payload, claim: Option<&BigRational>, a: &VerifyArgs) -> CliResult {
    let rep = lambda_bruteforce_capped(loss, payload, claim, a.cap)?;
    emit_json(a.out.as_deref(), &rep.to_json())
}

// ---------------------------------------------------------------------------
// oracle

fn cmd_oracle(a: &OracleArgs) -> CliResult {
    let tau = parse_tau(&a.tau)?;
    let labels = match (&a.dataset, &a.labels) {
        (Some(d), None) => d.labels(),
        (None, Some(p)) => {
            let (Some(col), Some(k)) = (&a.column, a.k) else { return Err(CliError::usage("--labels needs --column and --k")) };
            load_labels(p, col, k, None)?.labels
        }
        _ => return Err(CliError::usage("need exactly one of --dataset and --labels")),
    };
    let mut cfg = OracleConfig::new(a.loss.clone(), tau.clone());
    cfg.noise = noise_config(a.noise, &a.margin, a.seed)?;
    cfg.precision = precision_config(a.precision, AttackPlan::new(a.loss.clone(), labels.n(), tau).oracle_err);
    cfg.max_queries = a.max_queries;
    let mut oracle = Oracle::new(labels, cfg)?;
    match &a.listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr)?;
            eprintln!("listening on {}", listener.local_addr()?);
            serve_tcp(&mut oracle, listener, a.max_connections)?;
        }
        None => serve_stdio(&mut oracle)?,
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// figures

/// Merge a config file and flags into one validated configuration.
pub fn fig_config(a: &FigArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).map_err(|e| CliError::usage(format!("config: {e}")))?,
        None => ExperimentConfig::default(),
    };
    if !a.dataset.is_empty() {
        cfg.datasets = a.dataset.clone();
    }
    if !a.loss.is_empty() {
        cfg.losses = a.loss.clone();
    }
    if let Some(t) = &a.tau {
        cfg.tau = ExperimentConfig::parse_tau_grid(t).map_err(|e| {
            if e.contains("exact rational") {
                CliError { code: EXIT_IRRATIONAL_TAU, message: e }
            } else {
                CliError::usage(e)
            }
        })?;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(p) = a.precision {
        cfg.precision = p;
    }
    if let Some(t) = a.accuracy_target {
        cfg.accuracy_target = t;
    }
    if !a.block_size.is_empty() {
        cfg.block_size = a.block_size.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.max_n {
        cfg.max_n = m;
    }
    if let Some(q) = &a.noise {
        cfg.noise = rat_arg(q, "noise")?;
    }
    if a.out.is_some() {
        cfg.out = a.out.clone();
    }
    if a.svg.is_some() {
        cfg.svg = a.svg.clone();
    }
    cfg.validate().map_err(CliError::usage)?;
    Ok(cfg)
}

fn threads(a: &FigArgs) -> usize {
    a.threads.unwrap_or_else(fig::default_threads)
}

fn tau_f64(t: &BigRational) -> f64 {
    codomain::bignum::BigReal::exact(t.clone()).to_f64()
}

fn cmd_fig1(a: &FigArgs) -> CliResult {
    let cfg = fig_config(a)?;
    let rows = fig::fig1(&cfg, threads(a));
    emit(cfg.out.as_deref(), &fig::fig1_csv(&rows))?;
    if let Some(p) = &cfg.svg {
        let mut series: Vec<Series> = Vec::new();
        for r in &rows {
            let name = format!("{} / {}", r.loss, r.dataset);
            let pt = (tau_f64(&r.tau), r.max_n as f64);
            match series.iter_mut().find(|s| s.name == name) {
                Some(s) => s.points.push(pt),
                None => series.push(Series { name, points: vec![pt] }),
            }
        }
        let chart = Chart { title: "Largest N recovered".into(), x_label: "tau".into(), y_label: "max N".into(), log_x: true, series };
        std::fs::write(p, chart.render())?;
    }
    Ok(())
}

fn cmd_fig2(a: &FigArgs) -> CliResult {
    let cfg = fig_config(a)?;
    let rows = fig::fig2(&cfg, threads(a));
    emit(cfg.out.as_deref(), &fig::fig2_csv(&rows))?;
    if let Some(p) = &cfg.svg {
        let mut series: Vec<Series> = Vec::new();
        for r in &rows {
            let name = format!("{} / {} / tau={}", r.loss, r.dataset, rational_to_string(&r.tau));
            let pt = (r.block_size as f64, 100.0 * r.accuracy());
            match series.iter_mut().find(|s| s.name == name) {
                Some(s) => s.points.push(pt),
                None => series.push(Series { name, points: vec![pt] }),
            }
        }
        let chart =
            Chart { title: "Multi-query accuracy".into(), x_label: "block size M".into(), y_label: "accuracy (%)".into(), log_x: false, series };
        std::fs::write(p, chart.render())?;
    }
    Ok(())
}

fn cmd_replay(a: &ReplayArgs) -> CliResult {
    let cfg = fig_config(&a.fig)?;
    let (&[family], &[dataset], [tau]) = (&cfg.losses[..], &cfg.datasets[..], &cfg.tau[..]) else {
        return Err(CliError::usage("replay needs exactly one --loss, --dataset and --tau"));
    };
    let outcome = fig::replay_trial(&cfg, family, dataset, tau, a.n, a.trial);
    emit_json(cfg.out.as_deref(), &outcome)
}

fn cmd_mutnet(a: &MutnetArgs) -> CliResult {
    let tau = tau_arg(a.spec.tau.as_deref())?;
    let cp = build_one(&a.spec.loss, a.n, tau.as_ref(), a.spec.mahalanobis_mode.into())?;
    let net = MutNet::build_from_payload(&cp.payload, a.d1, a.seed)?;
    emit_json(a.out.as_deref(), &net.to_json(a.digits)?)
}
