use num_rational::BigRational;
use num_traits::Zero;
use serde::Serialize;

use super::{bruteforce_counted, decode_counted, AttackError, ConstructedPayload};
use crate::bignum::{pow2, rational_to_string, BigReal};
use crate::losses::{LabelVector, LossTable};

/// Outcome of replaying every live labeling through both decoders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub loss: String,
    pub n: usize,
    pub k: u32,
    pub tau: Option<String>,
    pub decoder: &'static str,
    pub labelings: u64,
    pub checks: u64,
    /// Checks where `decode` missed `σ*`.
    pub decode_failures: u64,
    /// Checks where `decode` and `decode_bruteforce` disagree.
    pub mismatches: u64,
    /// First few failing cases, for diagnostics.
    pub examples: Vec<String>,
    /// Operation counts summed over all checks.
    pub structured_ops: u64,
    pub bruteforce_ops: u64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.decode_failures == 0 && self.mismatches == 0
    }
}

/// Answers `f(σ*) + q·τ` for each live `σ*` and each noise fraction `q`, then decodes.
///
/// Unnoised plans use only `q = 0`. Brute force is skipped when `K^M` exceeds `cap`.
pub fn verify_exhaustive(
    cp: &ConstructedPayload,
    noise_fracs: &[BigRational],
    cap: u64,
) -> Result<VerifyReport, AttackError> {
    let table = LossTable::build(cp.loss(), &cp.payload, &pow2(-200))?;
    let live = cp.live_rows().len();
    let k = cp.k();
    let size = (k as u128).checked_pow(live as u32).unwrap_or(u128::MAX);
    let brute = size <= cap as u128;
    let zero = [BigRational::zero()];
    let (tau, fracs) = match cp.plan.tau {
        Some(ref t) => (t.clone(), noise_fracs),
        None => (BigRational::zero(), &zero[..]),
    };
    let mut rep = VerifyReport {
        loss: cp.loss().name().to_string(),
        n: cp.n(),
        k,
        tau: cp.plan.tau.as_ref().map(rational_to_string),
        decoder: cp.decoder.tag(),
        labelings: size.min(u64::MAX as u128) as u64,
        checks: 0,
        decode_failures: 0,
        mismatches: 0,
        examples: Vec::new(),
        structured_ops: 0,
        bruteforce_ops: 0,
    };
    for sigma in LabelVector::all(live, k) {
        let f = table.eval(&cp.embed(&sigma));
        for q in fracs {
            let l = BigReal::exact(add_unreduced(f.value(), &(q * &tau)));
            rep.checks += 1;
            let (got, ops) = decode_counted(cp, &l);
            rep.structured_ops += ops;
            let ok = got.as_ref().is_ok_and(|g| g == &sigma);
            if !ok {
                rep.decode_failures += 1;
            }
            let mut agree = true;
            if brute {
                let (b, bops) = bruteforce_counted(cp, &l, cap);
                rep.bruteforce_ops += bops;
                agree = b.ok() == got.as_ref().ok().cloned();
                if !agree {
                    rep.mismatches += 1;
                }
            }
            if (!ok || !agree) && rep.examples.len() < 5 {
                let what = match &got {
                    Ok(g) => format!("{:?}", g.labels()),
                    Err(e) => e.to_string(),
                };
                rep.examples.push(format!("σ* = {:?}, noise {}τ: {what}", sigma.labels(), rational_to_string(q)));
            }
        }
    }
    Ok(rep)
}

/// `a + b` without the gcd reduction, which dominates for very long numerators.
fn add_unreduced(a: &BigRational, b: &BigRational) -> BigRational {
    if b.is_zero() {
        return a.clone();
    }
    BigRational::new_raw(a.numer() * b.denom() + b.numer() * a.denom(), a.denom() * b.denom())
}
