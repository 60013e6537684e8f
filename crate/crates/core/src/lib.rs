//! Long-term vessel incident-risk feature selection.
//!
//! The crate turns raw vessel histories (incidents, PSC deficiencies and
//! detentions, daily sailing distances, DOC company and flag memberships,
//! flag red flags, physical profiles) into a labeled factor dataset, and
//! selects a small set of key risk factors from it:
//!
//! 1. [`events`] ingests and indexes the CSV history files.
//! 2. [`factors`] enumerates the candidate factors (annual, cumulative and
//!    decayed-cumulative formats), evaluates them per vessel and datestamp,
//!    and grades next-year incident severity into Low / Medium / High.
//! 3. [`resample`] rebalances the classes with SMOTE plus Tomek-link cleaning.
//! 4. [`forest`] trains a random forest that keeps per-node training covers.
//! 5. [`shap`] attributes predictions to factors with exact TreeSHAP and
//!    aggregates the attributions into an importance rank.
//! 6. [`filter`] removes factors strongly correlated with a better-ranked
//!    factor inside a sliding window over the rank.
//! 7. [`select`] cross-validates the first `n` filtered factors, grid-searches
//!    the filter parameters, and runs the unfiltered baseline for comparison.
//!
//! [`synth`] generates fleets with planted risk drivers for testing, and
//! [`pipeline`] wires the stages together behind one JSON configuration.

pub mod data;
pub mod events;
pub mod factors;
pub mod filter;
pub mod forest;
pub mod pipeline;
pub mod resample;
pub mod rng;
pub mod select;
pub mod shap;
pub mod synth;
