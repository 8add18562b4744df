//! Pan-private uniformity testing over discrete domains.
//!
//! A pan-private streaming algorithm keeps its internal state private
//! against an adversary who can inspect it mid-stream, and its final
//! output private as well. This crate implements:
//!
//! - streaming uniformity testers over a Laplace-noised histogram, with a
//!   partition-based variant that coarsens the domain first ([`testers`]);
//! - the seeded probability primitives underneath them ([`prob`]);
//! - far-from-uniform instance generators ([`instances`]);
//! - executable transformations between multi-intrusion streaming privacy
//!   and sequentially interactive local privacy ([`bridge`]);
//! - analytic and statistical privacy audits ([`audit`]);
//! - a Monte-Carlo harness for power estimation, sample-size search, and
//!   scaling curves ([`experiments`]).

pub mod audit;
pub mod bridge;
pub mod error;
pub mod experiments;
pub mod instances;
pub mod prob;
pub mod testers;

pub use error::{Error, Result};
pub use prob::{DiscreteDistribution, LaplaceScale, RngSeed};
pub use testers::{TestVerdict, TesterConfig, Verdict};

/// The concrete generator type used throughout the crate's interfaces.
pub use rand_chacha::ChaCha8Rng;
