//! Diagnostics for truncation sampling over ranked next-token distributions.
//!
//! The crate measures how cutoff rules (top-k, top-p, min-p, oracle filters)
//! trade validity (mass on a reference set of sequences) against diversity
//! (effective support relative to that set), both empirically by exact
//! enumeration and analytically through entropy-loss bounds.
//!
//! Module map:
//! - [`ranked_dist`]: rank-sorted distributions, temperature, geometric ranked
//!   models, piecewise logit fits
//! - [`valid_set`]: counting prefix tries over fixed-length token sequences
//! - [`cutoff`]: cutoff rules and the step distributions they induce
//! - [`metrics`]: validity, diversity, local/sequence precision and recall,
//!   the multiplicative decomposition, calibration checks, text diversity
//! - [`enumerate`]: exact sequence enumeration, frontier sweeps, labeled
//!   generation trees
//! - [`theory`]: entropy-loss bounds and randomized verification suites
//! - [`model_client`]: file-backed and remote conditional models, LLM judge

pub mod cutoff;
pub mod enumerate;
pub mod metrics;
pub mod model_client;
pub mod ranked_dist;
pub mod theory;
pub mod valid_set;

/// Abstract token identifier. Surface strings, when they exist, are bound
/// separately (see [`model_client`]).
pub type TokenId = u32;
