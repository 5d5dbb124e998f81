use std::ops::Range;

use num_rational::BigRational;

use super::construct::{build, Layout};
use super::{AttackError, AttackPlan, ConstructedPayload};
use crate::bignum::pow2;
use crate::losses::LossSpec;

/// Consecutive blocks of at most `m` rows covering `0..n`.
pub fn block_ranges(n: usize, m: usize) -> Vec<Range<usize>> {
    assert!(m >= 1, "block size must be positive");
    (0..n.div_ceil(m)).map(|j| j * m..((j + 1) * m).min(n)).collect()
}

/// One payload per block of `m` rows.
///
/// Payload `j` carries the construction on block `j` and the neutral element elsewhere.
/// Exponents use the block-local row index but keep the full `N` in the scale, so each
/// answer still separates labelings by `2τ` after the loss averages over all `N` rows.
pub fn plan_multiquery(
    spec: &LossSpec,
    n: usize,
    tau: Option<BigRational>,
    m: usize,
) -> Result<Vec<ConstructedPayload>, AttackError> {
    let mut plan = match tau {
        Some(t) => AttackPlan::new(spec.clone(), n, t),
        None => AttackPlan::unnoised(spec.clone(), n, pow2(-64)),
    };
    if matches!(spec, LossSpec::Mahalanobis { .. }) {
        return Err(AttackError::UnsupportedLoss("Mahalanobis payloads are single-query only".into()));
    }
    plan.block_size = m;
    plan.validate()?;
    block_ranges(n, m).into_iter().map(|live| build(&plan, &Layout { n_total: n, live })).collect()
}
