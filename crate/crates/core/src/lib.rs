//! Codomain-separable prediction payloads and label inference from loss values.

pub mod attack;
pub mod bignum;
pub mod codes;
pub mod losses;
pub mod mutnet;
pub mod oracle;
pub mod separability;
mod serde_rat;

pub use num_rational::BigRational;

/// Exact rational scalar used throughout the crate.
pub type Rational = BigRational;
pub use bignum::BigReal;
