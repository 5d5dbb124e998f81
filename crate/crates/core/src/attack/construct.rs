use std::ops::Range;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::{to_fixed, AttackError, AttackPlan, ConstructedPayload, Decoder, LatticeShape, MahalanobisMode};
use crate::bignum::{bits_for, dyadic, ln, ln3, ln_bits, pow2, pow3, pow_real, BigReal};
use crate::codes::first_primes;
use crate::losses::{Generator, LossSpec, LossTable, Payload, Row};

/// Given a target `y`, return `θ ∈ (0, 1)` with `h′(1 − θ) − h′(θ) > y`, or `None`.
pub type Solver = dyn Fn(&BigRational, u64) -> Option<BigRational>;

/// Rows of one query: `live` carry the construction, the others the neutral element.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub n_total: usize,
    pub live: Range<usize>,
}

impl Layout {
    pub fn full(n: usize) -> Self {
        Layout { n_total: n, live: 0..n }
    }

    fn masked(&self) -> Vec<usize> {
        (0..self.n_total).filter(|i| !self.live.contains(i)).collect()
    }

    /// 1-based position of a live row.
    fn local(&self, row: usize) -> Option<usize> {
        self.live.contains(&row).then(|| row - self.live.start + 1)
    }

    fn scale(&self, tau: &BigRational) -> BigRational {
        tau * int(self.n_total as i64)
    }
}

fn int(i: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(i))
}

fn bitlen(x: usize) -> u64 {
    (usize::BITS - x.leading_zeros()) as u64
}

fn half() -> BigRational {
    BigRational::new(1.into(), 2.into())
}

fn check_budget(w: &BigRational, plan: &AttackPlan) -> Result<(), AttackError> {
    let bits = w.to_f64().unwrap_or(f64::INFINITY) * 1.585;
    if !bits.is_finite() || bits > plan.max_bits as f64 {
        return Err(AttackError::BudgetExceeded(format!(
            "largest entry needs about {bits:.3e} bits, budget is {}",
            plan.max_bits
        )));
    }
    Ok(())
}

/// Dispatch on the plan's loss family.
pub(crate) fn build(plan: &AttackPlan, layout: &Layout) -> Result<ConstructedPayload, AttackError> {
    plan.validate()?;
    match &plan.loss {
        LossSpec::KaryCe { k } => build_kce(plan, layout, *k, false),
        LossSpec::SoftmaxCe { k } => build_kce(plan, layout, *k, true),
        LossSpec::SigmoidCe => build_sigmoid(plan, layout),
        LossSpec::BinaryCe | LossSpec::Kl => build_baseline(plan, layout),
        LossSpec::ItakuraSaito => build_is(plan, layout),
        LossSpec::SquaredEuclidean | LossSpec::NormLike { .. } => build_unnoised(plan, layout),
        LossSpec::Mahalanobis { .. } => build_mahalanobis(plan, layout),
        LossSpec::Additive { generator } => build_bregman(plan, layout, *generator, &*default_solver(*generator)),
    }
}

/// Construct a single-query payload for `plan`.
pub fn construct(plan: &AttackPlan) -> Result<ConstructedPayload, AttackError> {
    if plan.block_size != plan.n {
        return Err(AttackError::InvalidPlan("block size below N needs plan_multiquery".into()));
    }
    build(plan, &Layout::full(plan.n))
}

/// K-ary cross-entropy payload with `θ_{i,c} ∝ 3^{2^{(i−1)K+c+1} N τ}`.
pub fn construct_kce(n: usize, k: u32, tau: &BigRational) -> Result<ConstructedPayload, AttackError> {
    construct(&AttackPlan::new(LossSpec::KaryCe { k }, n, tau.clone()))
}

/// Softmax logits `w_{i,c} ln 3`, gauge-shifted so the last class has logit 0.
pub fn construct_softmax(n: usize, k: u32, tau: &BigRational) -> Result<ConstructedPayload, AttackError> {
    construct(&AttackPlan::new(LossSpec::SoftmaxCe { k }, n, tau.clone()))
}

/// Sigmoid logits `(w_{i,1} − w_{i,0}) ln 3`.
pub fn construct_sigmoid(n: usize, tau: &BigRational) -> Result<ConstructedPayload, AttackError> {
    construct(&AttackPlan::new(LossSpec::SigmoidCe, n, tau.clone()))
}

/// Binary cross-entropy baseline with `θ_i = 3^{a_i} / (1 + 3^{a_i})`, `a_i = 2^i N τ`.
pub fn construct_binary_baseline(n: usize, tau: &BigRational) -> Result<ConstructedPayload, AttackError> {
    construct(&AttackPlan::new(LossSpec::BinaryCe, n, tau.clone()))
}

/// Itakura-Saito payload `θ_i = 1 / (1 + 3^{a_i})`.
pub fn construct_linear_decomposable(
    spec: &LossSpec,
    n: usize,
    tau: &BigRational,
) -> Result<ConstructedPayload, AttackError> {
    match spec {
        LossSpec::ItakuraSaito => construct(&AttackPlan::new(spec.clone(), n, tau.clone())),
        other => Err(AttackError::UnsupportedLoss(format!("{} has no linear-decomposable construction", other.name()))),
    }
}

/// Prime-product payload for squared-Euclidean and norm-like losses without noise.
pub fn construct_unnoised(spec: &LossSpec, n: usize) -> Result<ConstructedPayload, AttackError> {
    match spec {
        LossSpec::SquaredEuclidean | LossSpec::NormLike { .. } => {
            construct(&AttackPlan::unnoised(spec.clone(), n, pow2(-64)))
        }
        other => Err(AttackError::UnsupportedLoss(format!("{} has no unnoised construction", other.name()))),
    }
}

/// Mahalanobis payload for `A`, corrected or paper-faithful.
pub fn construct_mahalanobis(
    n: usize,
    tau: &BigRational,
    a: [[BigRational; 2]; 2],
    mode: MahalanobisMode,
) -> Result<ConstructedPayload, AttackError> {
    let mut plan = AttackPlan::new(LossSpec::Mahalanobis { a }, n, tau.clone());
    plan.mahalanobis_mode = mode;
    construct(&plan)
}

/// Additive Bregman payload from a caller-supplied solver.
pub fn construct_bregman_general(
    generator: Generator,
    solver: &Solver,
    n: usize,
    tau: &BigRational,
) -> Result<ConstructedPayload, AttackError> {
    let plan = AttackPlan::new(LossSpec::Additive { generator }, n, tau.clone());
    plan.validate()?;
    build_bregman(&plan, &Layout::full(n), generator, solver)
}

/// A solver for the built-in generators.
///
/// For `x ln x` it targets `h′(1 − θ) − h′(θ) = y ln 3`; for `x²` it targets `(y + 2)/2`, which exists only for `y < 2`.
pub fn default_solver(generator: Generator) -> Box<Solver> {
    match generator {
        Generator::NegEntropy => Box::new(|y: &BigRational, p: u64| {
            let bits = y.to_f64().unwrap_or(f64::INFINITY) * 1.585;
            if !bits.is_finite() || bits > crate::bignum::DEFAULT_MAX_BITS as f64 {
                return None;
            }
            let v = pow3(y, p + 8).ok()?;
            let v = v.value().clone();
            if v < BigRational::one() {
                return None;
            }
            Some((BigRational::one() + v).recip())
        }),
        Generator::Square => Box::new(|y: &BigRational, _p: u64| {
            let two = int(2);
            if y >= &two || y.is_negative() {
                return None;
            }
            // A = 2(1 − 2θ) = (y + 2)/2
            let a = (y + &two) / &two;
            Some((BigRational::one() - a / &two) / &two)
        }),
    }
}

fn wrap(payload_rows: Vec<Row>, logits: bool) -> Payload {
    if logits {
        Payload::Logits(payload_rows)
    } else {
        Payload::Probs(payload_rows)
    }
}

/// Lattice decoder for payloads of base-3 exponent rows.
///
/// `exps` are the exponents the loss sees (after expanding single sigmoid logits);
/// `gauges` are the per-row shifts removed from the construction's weights.
#[allow(clippy::too_many_arguments)]
fn pow3_lattice(
    plan: &AttackPlan,
    layout: &Layout,
    rows: Vec<Row>,
    logits: bool,
    exps: &[Vec<BigRational>],
    gauges: &[BigRational],
    s: &BigRational,
    shape: LatticeShape,
) -> Result<ConstructedPayload, AttackError> {
    let n = layout.n_total;
    let p = bits_for(&plan.attacker_err) + bitlen(n) + 4;
    let mut w_sum = BigRational::zero();
    let mut b = BigReal::zero();
    for e in exps {
        let emax = e.iter().max().expect("non-empty row").clone();
        let kb = bitlen(e.len()) + 4;
        let mut sn = BigReal::zero();
        for ej in e {
            sn = sn + pow3(&(ej - &emax), p + kb)?;
        }
        b = b + ln(&sn, &pow2(-(p as i64)))?;
        w_sum += emax;
    }
    let b = b.round_bits(p + 2);
    let g: BigRational = gauges.iter().sum();
    let offset = (&w_sum + &g) / s;
    let wb = w_sum.abs().ceil().to_integer().bits();
    let constant = (ln3(p + wb + 2).mul_rat(&w_sum) + b.clone()).div_int(n as i64).round_bits(p + 2);
    let decoder = Decoder::Lattice { offset, base: b, scale: s.clone(), log3: true, negate: true, shape };
    Ok(ConstructedPayload::new(plan.clone(), wrap(rows, logits), Some(constant), decoder, layout.masked()))
}

fn build_kce(plan: &AttackPlan, layout: &Layout, k: u32, softmax: bool) -> Result<ConstructedPayload, AttackError> {
    let tau = plan.tau()?;
    let s = layout.scale(tau);
    let ku = k as usize;
    check_budget(&(pow2((layout.live.len() * ku) as i64) * &s), plan)?;
    let mut rows = Vec::with_capacity(layout.n_total);
    let mut exps = Vec::with_capacity(layout.n_total);
    let mut gauges = Vec::with_capacity(layout.n_total);
    for row in 0..layout.n_total {
        let w: Vec<BigRational> = match layout.local(row) {
            Some(i) => (0..ku).map(|c| pow2(((i - 1) * ku + c + 1) as i64) * &s).collect(),
            None => vec![BigRational::zero(); ku],
        };
        if softmax {
            let g = w[ku - 1].clone();
            let shifted: Vec<BigRational> = w.iter().map(|x| x - &g).collect();
            rows.push(Row::Pow3(shifted.clone()));
            exps.push(shifted);
            gauges.push(g);
        } else {
            rows.push(Row::Pow3(w.clone()));
            exps.push(w);
            gauges.push(BigRational::zero());
        }
    }
    pow3_lattice(plan, layout, rows, softmax, &exps, &gauges, &s, LatticeShape::Blocks { k })
}

fn build_sigmoid(plan: &AttackPlan, layout: &Layout) -> Result<ConstructedPayload, AttackError> {
    let tau = plan.tau()?;
    let s = layout.scale(tau);
    check_budget(&(pow2((layout.live.len() * 2) as i64) * &s), plan)?;
    let mut rows = Vec::new();
    let mut exps = Vec::new();
    let mut gauges = Vec::new();
    for row in 0..layout.n_total {
        match layout.local(row) {
            Some(i) => {
                let w0 = pow2((2 * (i - 1) + 1) as i64) * &s;
                let w1 = pow2((2 * (i - 1) + 2) as i64) * &s;
                let d = &w1 - &w0;
                rows.push(Row::Pow3(vec![d.clone()]));
                exps.push(vec![BigRational::zero(), d]);
                gauges.push(w0);
            }
            None => {
                rows.push(Row::Pow3(vec![BigRational::zero()]));
                exps.push(vec![BigRational::zero(), BigRational::zero()]);
                gauges.push(BigRational::zero());
            }
        }
    }
    pow3_lattice(plan, layout, rows, true, &exps, &gauges, &s, LatticeShape::Blocks { k: 2 })
}

fn build_baseline(plan: &AttackPlan, layout: &Layout) -> Result<ConstructedPayload, AttackError> {
    let tau = plan.tau()?;
    let s = layout.scale(tau);
    check_budget(&(pow2(layout.live.len() as i64) * &s), plan)?;
    let mut rows = Vec::new();
    let mut exps = Vec::new();
    for row in 0..layout.n_total {
        let w = match layout.local(row) {
            Some(i) => vec![BigRational::zero(), pow2(i as i64) * &s],
            None => vec![BigRational::zero(), BigRational::zero()],
        };
        rows.push(Row::Pow3(w.clone()));
        exps.push(w);
    }
    let gauges = vec![BigRational::zero(); layout.n_total];
    pow3_lattice(plan, layout, rows, false, &exps, &gauges, &s, LatticeShape::Bits)
}

/// Greedy decoder data from the per-row terms of a binary payload; checks the superincreasing gap.
fn superincreasing(plan: &AttackPlan, layout: &Layout, payload: Payload) -> Result<ConstructedPayload, AttackError> {
    let tau = plan.tau()?;
    let n = layout.n_total;
    let table = LossTable::build(&plan.loss, &payload, &plan.attacker_err)?;
    let mut base = BigReal::zero();
    for i in 0..n {
        base = base + table.term(i, 0);
    }
    let diffs: Vec<BigReal> = layout.live.clone().map(|i| table.term(i, 1) - table.term(i, 0)).collect();
    let gap = int(2 * n as i64) * tau;
    let mut sorted: Vec<&BigReal> = diffs.iter().collect();
    sorted.sort_by(|a, b| a.value().cmp(b.value()));
    let mut acc = BigReal::zero();
    for (j, d) in sorted.into_iter().enumerate() {
        if (d - &acc).lower() < gap {
            return Err(AttackError::Infeasible(format!(
                "row differences are not superincreasing with gap 2τ at position {}",
                j + 1
            )));
        }
        acc = acc + d;
    }
    let tolerance = int(n as i64) * (tau + &plan.oracle_err + &plan.attacker_err);
    let constant = base.div_int(n as i64);
    let bits = bits_for(&plan.attacker_err) + 64;
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&a, &b| diffs[a].value().cmp(diffs[b].value()));
    let diffs: Vec<BigInt> = diffs.iter().map(|d| to_fixed(d.value(), bits)).collect();
    let mut thresholds = Vec::with_capacity(order.len());
    let mut prefix = BigInt::zero();
    for &j in &order {
        thresholds.push((&diffs[j] + &prefix) / 2);
        prefix += &diffs[j];
    }
    let decoder = Decoder::Superincreasing {
        bits,
        base: to_fixed(base.value(), bits),
        diffs,
        order,
        thresholds,
        tolerance: to_fixed(&tolerance, bits),
    };
    Ok(ConstructedPayload::new(plan.clone(), payload, Some(constant), decoder, layout.masked()))
}

fn build_is(plan: &AttackPlan, layout: &Layout) -> Result<ConstructedPayload, AttackError> {
    let tau = plan.tau()?;
    let s = layout.scale(tau);
    check_budget(&(pow2(layout.live.len() as i64) * &s), plan)?;
    let rows = (0..layout.n_total)
        .map(|row| match layout.local(row) {
            Some(i) => Row::Pow3(vec![pow2(i as i64) * &s, BigRational::zero()]),
            None => Row::Pow3(vec![BigRational::zero(), BigRational::zero()]),
        })
        .collect();
    superincreasing(plan, layout, Payload::Probs(rows))
}

fn build_bregman(
    plan: &AttackPlan,
    layout: &Layout,
    generator: Generator,
    solver: &Solver,
) -> Result<ConstructedPayload, AttackError> {
    let tau = plan.tau()?;
    let s = layout.scale(tau);
    let p = bits_for(&plan.attacker_err) + 8;
    let mut theta = Vec::with_capacity(layout.n_total);
    for row in 0..layout.n_total {
        let Some(i) = layout.local(row) else {
            theta.push(BigReal::exact(half()));
            continue;
        };
        let y = pow2(i as i64) * &s;
        let t = solver(&y, p).ok_or_else(|| AttackError::Infeasible(format!("solver found no θ for row {i}")))?;
        if !t.is_positive() || t >= BigRational::one() {
            return Err(AttackError::Infeasible(format!("solver returned θ outside (0, 1) for row {i}")));
        }
        let tr = BigReal::exact(t.clone());
        let a = generator.h_prime(&BigReal::exact(BigRational::one() - &t), p)? - generator.h_prime(&tr, p)?;
        if a.lower() <= y {
            return Err(AttackError::Infeasible(format!("h′(1 − θ) − h′(θ) does not exceed 2^i N τ at row {i}")));
        }
        theta.push(tr);
    }
    superincreasing(plan, layout, Payload::binary(&theta))
}

fn build_mahalanobis(plan: &AttackPlan, layout: &Layout) -> Result<ConstructedPayload, AttackError> {
    if layout.live.len() != layout.n_total {
        return Err(AttackError::UnsupportedLoss("Mahalanobis payloads are single-query only".into()));
    }
    let tau = plan.tau()?;
    let n = layout.n_total;
    let alpha = plan.loss.alpha_m().expect("Mahalanobis spec");
    let s = layout.scale(tau);
    match plan.mahalanobis_mode {
        MahalanobisMode::Corrected => {
            let step = &s / &alpha;
            let theta: Vec<BigRational> = (1..=n).map(|i| half() - &step * pow2(i as i64 - 1)).collect();
            if theta.last().expect("n >= 1").is_negative() {
                return Err(AttackError::Infeasible("needs τ <= α / (N 2^N)".into()));
            }
            let theta: Vec<BigReal> = theta.into_iter().map(BigReal::exact).collect();
            let payload = Payload::binary(&theta);
            let table = LossTable::build(&plan.loss, &payload, &plan.attacker_err)?;
            let mut base = BigReal::zero();
            for i in 0..n {
                base = base + table.term(i, 0);
            }
            let constant = base.div_int(n as i64);
            let decoder = Decoder::Lattice {
                offset: BigRational::zero(),
                base,
                scale: s,
                log3: false,
                negate: false,
                shape: LatticeShape::Bits,
            };
            Ok(ConstructedPayload::new(plan.clone(), payload, Some(constant), decoder, Vec::new()))
        }
        MahalanobisMode::PaperFaithful => {
            let t = (BigRational::one() - &s / &alpha) * half();
            if t.is_negative() || t > BigRational::one() {
                return Err(AttackError::Infeasible("θ = (1 − Nτ/α)/2 leaves [0, 1]".into()));
            }
            let theta = vec![BigReal::exact(t); n];
            Ok(ConstructedPayload::new(plan.clone(), Payload::binary(&theta), None, Decoder::BruteForce, Vec::new()))
        }
    }
}

fn build_unnoised(plan: &AttackPlan, layout: &Layout) -> Result<ConstructedPayload, AttackError> {
    let n = layout.n_total;
    let m = layout.live.len();
    let primes = first_primes(m);
    let prod_bits: u64 = primes.iter().map(|p| p.bits()).sum();
    let alpha = match &plan.loss {
        LossSpec::NormLike { alpha } => Some(alpha.clone()),
        _ => None,
    };
    let abits = alpha.as_ref().map(|a| a.ceil().to_integer().bits()).unwrap_or(1);
    let prec = prod_bits + 2 * bitlen(n) + 2 * abits + 16;
    let nr = int(n as i64);
    let mut theta = Vec::with_capacity(n);
    for row in 0..n {
        let Some(i) = layout.local(row) else {
            theta.push(BigReal::exact(half()));
            continue;
        };
        let lp = ln_bits(&BigReal::exact(BigRational::from_integer(primes[i - 1].clone())), prec + 8)?;
        let target = lp.mul_rat(&nr.recip());
        let t = match &alpha {
            None => {
                // 1 − 2θ = ln p / N
                if target.upper() >= BigRational::one() {
                    return Err(AttackError::Infeasible(format!("ln p_{i} >= N")));
                }
                let v = ((BigReal::one() - target) * BigReal::exact(half())).round_bits(prec + 2);
                v.value().clone()
            }
            Some(a) => {
                if target.upper() >= *a {
                    return Err(AttackError::Infeasible(format!("ln p_{i} >= N α")));
                }
                bisect_norm_like(a, &target, prec + 2)?
            }
        };
        theta.push(BigReal::exact(t));
    }
    let budget = pow2(-(prec as i64));
    let mut plan = plan.clone();
    plan.tau = None;
    if plan.oracle_err > budget {
        plan.oracle_err = budget.clone();
    }
    if plan.attacker_err > budget {
        plan.attacker_err = budget.clone();
    }
    let payload = Payload::binary(&theta);
    let table = LossTable::build(&plan.loss, &payload, &budget)?;
    let mut base = BigReal::zero();
    for i in 0..n {
        base = base + table.term(i, 0);
    }
    let constant = base.div_int(n as i64);
    let decoder = Decoder::Prime { base, mult: nr, primes };
    Ok(ConstructedPayload::new(plan, payload, Some(constant), decoder, layout.masked()))
}

/// Dyadic `θ ∈ [0, 1/2]` with `α((1 − θ)^{α−1} − θ^{α−1}) ≈ target`, to `2^-p`.
fn bisect_norm_like(alpha: &BigRational, target: &BigReal, p: u64) -> Result<BigRational, AttackError> {
    let am1 = alpha - BigRational::one();
    let q = p + 8;
    let pw = |x: &BigRational| -> Result<BigReal, AttackError> {
        if x.is_zero() {
            return Ok(BigReal::zero());
        }
        Ok(pow_real(&BigReal::exact(x.clone()), &am1, q)?)
    };
    let mut lo = BigInt::zero();
    let mut hi = BigInt::one() << ((p - 1) as usize);
    while &hi - &lo > BigInt::one() {
        let mid: BigInt = (&lo + &hi) >> 1usize;
        let x = dyadic(mid.clone(), -(p as i64));
        let d = (pw(&(BigRational::one() - &x))? - pw(&x)?).mul_rat(alpha);
        if d.value() > target.value() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(dyadic(lo, -(p as i64)))
}
