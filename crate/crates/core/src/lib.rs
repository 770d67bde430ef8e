//! Core of the stackd governance control plane.
//!
//! Every module persists through [`store::ArtifactStore`]: content-addressed
//! blobs plus append-only JSONL event streams. [`stack::Stack`] ties the
//! modules together behind one facade.

pub mod bundle;
pub mod canonical;
pub mod config;
pub mod decision_log;
pub mod digest;
pub mod drift;
pub mod error;
pub mod escalation;
pub mod evidence;
pub mod explanation;
pub mod gate;
pub mod stack;
pub mod store;
pub mod telemetry;
pub mod time;

pub use digest::Digest;
pub use error::{Error, Result};
pub use time::Timestamp;
