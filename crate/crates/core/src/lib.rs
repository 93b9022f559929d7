//! Measurement pipeline for information diversity on follower networks.
//!
//! The crate covers ingestion of link-sharing logs and follower edges, slant
//! statistics per account, OLS interaction models and core/periphery sweeps,
//! permutation-quality scoring with bootstrap critical values, structural
//! node orderings (spectral and greedy modularity), co-following slant
//! estimation for news outlets, and seeded synthetic generators with planted
//! ground truth for every estimator.

pub mod affinity;
pub mod community;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod permscore;
pub mod regression;
pub mod rng;
pub mod slantstats;
pub mod synth;

pub use error::{Error, Result};
pub use graph::FollowerGraph;
pub use ingest::{NewsTweet, SlantTable, TweetRecord};
pub use slantstats::AccountSummary;

/// Opaque account identifier as it appears in input files.
pub type AccountId = u64;
