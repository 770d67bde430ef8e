//! Decision-time explainability log.
//!
//! Each inference decision is appended to the `decisions` stream as a
//! [`ChainedRecord`]. The record hash covers the raw 32 bytes of the previous
//! record hash followed by the canonical JSON of the decision, so editing any
//! stored record breaks the chain at that record.

use serde::{Deserialize, Serialize};
use ulid::Ulid;

use crate::bundle::{Bundles, GovernanceBundle};
use crate::canonical;
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::escalation::Incident;
use crate::evidence::VerificationRecord;
use crate::explanation::ExplanationArtifact;
use crate::store::{event_line, parse_event_line, ArtifactStore};
use crate::time::Timestamp;

pub const DECISIONS_STREAM: &str = "decisions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub decision_id: String,
    pub model_version: Digest,
    pub bundle_id: Digest,
    pub input_context: Digest,
    pub explanation: ExplanationArtifact,
    pub decided_at: Timestamp,
}

/// What a caller supplies; the log assigns the id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewDecision {
    pub model_version: Digest,
    pub bundle_id: Digest,
    pub input_context: Digest,
    pub explanation: ExplanationArtifact,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_at: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainedRecord {
    pub record: DecisionRecord,
    pub prev_hash: Digest,
    pub record_hash: Digest,
}

/// `SHA-256(prev_hash ‖ canonical(record))`.
pub fn chain_hash(prev_hash: &Digest, record: &DecisionRecord) -> Result<Digest> {
    let body = canonical::to_vec(record)?;
    Ok(Digest::of_parts(&[prev_hash.as_bytes(), &body]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainVerification {
    pub ok: bool,
    pub length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_corrupt_offset: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle_id: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_version: Option<Digest>,
    /// Inclusive lower bound on `decided_at`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<Timestamp>,
    /// Exclusive upper bound on `decided_at`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<Timestamp>,
}

impl DecisionFilter {
    pub fn matches(&self, r: &DecisionRecord) -> bool {
        self.bundle_id.is_none_or(|b| r.bundle_id == b)
            && self.model_version.is_none_or(|m| r.model_version == m)
            && self.from.is_none_or(|f| r.decided_at >= f)
            && self.to.is_none_or(|t| r.decided_at < t)
    }
}

/// Everything needed to account for a past decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernanceContext {
    pub decision: ChainedRecord,
    pub bundle: GovernanceBundle,
    pub model_version: Digest,
    /// Base64 of the input blob.
    pub input: String,
    pub explanation: ExplanationArtifact,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_trace: Option<String>,
    pub verifications: Vec<VerificationRecord>,
    pub open_incidents: Vec<Incident>,
}

pub struct DecisionLog<'a> {
    store: &'a ArtifactStore,
}

impl<'a> DecisionLog<'a> {
    pub fn new(store: &'a ArtifactStore) -> Self {
        Self { store }
    }

    fn last_hash(&self) -> Result<Digest> {
        Ok(self
            .records()?
            .last()
            .map(|r| r.record_hash)
            .unwrap_or(Digest::ZERO))
    }

    pub fn append(&self, input: NewDecision) -> Result<ChainedRecord> {
        input.explanation.validate()?;
        for d in [&input.model_version, &input.input_context] {
            if !self.store.has_blob(d) {
                return Err(Error::DanglingDigest(*d));
            }
        }
        if let ExplanationArtifact::ReasoningTrace { trace } = &input.explanation {
            if !self.store.has_blob(trace) {
                return Err(Error::DanglingDigest(*trace));
            }
        }
        if Bundles::new(self.store).get(&input.bundle_id)?.is_none() {
            return Err(Error::UnknownBundle(input.bundle_id.to_string()));
        }
        let decided_at = input.decided_at.unwrap_or_else(|| self.store.now());
        let prev_hash = self.last_hash()?;
        let id_seed = Digest::of_parts(&[prev_hash.as_bytes(), &canonical::to_vec(&input)?]);
        let mut entropy = [0u8; 16];
        entropy[6..].copy_from_slice(&id_seed.as_bytes()[..10]);
        let decision_id = Ulid::from_parts(decided_at.millis().max(0) as u64, u128::from_be_bytes(entropy)).to_string();
        let record = DecisionRecord {
            decision_id,
            model_version: input.model_version,
            bundle_id: input.bundle_id,
            input_context: input.input_context,
            explanation: input.explanation,
            decided_at,
        };
        let chained = ChainedRecord {
            record_hash: chain_hash(&prev_hash, &record)?,
            prev_hash,
            record,
        };
        // the envelope timestamp is bound to the hashed decision time
        self.store
            .append_event_at(DECISIONS_STREAM, &canonical::to_vec(&chained)?, Some(decided_at))?;
        Ok(chained)
    }

    pub fn records(&self) -> Result<Vec<ChainedRecord>> {
        self.store
            .read_events_or_empty(DECISIONS_STREAM)?
            .iter()
            .map(|e| e.decode())
            .collect()
    }

    /// Recompute every link in order and report the earliest broken one.
    pub fn verify_chain(&self) -> Result<ChainVerification> {
        let lines = match self.store.read_raw_lines(DECISIONS_STREAM) {
            Ok(lines) => lines,
            Err(Error::UnknownStream(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        let length = lines.len() as u64;
        let mut expected_prev = Digest::ZERO;
        for (i, line) in lines.iter().enumerate() {
            match check_link(line, i as u64, &expected_prev) {
                Some(hash) => expected_prev = hash,
                None => {
                    return Ok(ChainVerification {
                        ok: false,
                        length,
                        first_corrupt_offset: Some(i as u64),
                    })
                }
            }
        }
        Ok(ChainVerification {
            ok: true,
            length,
            first_corrupt_offset: None,
        })
    }

    pub fn query(&self, filter: &DecisionFilter) -> Result<Vec<ChainedRecord>> {
        Ok(self
            .records()?
            .into_iter()
            .filter(|r| filter.matches(&r.record))
            .collect())
    }

    pub fn find(&self, decision_id: &str) -> Result<ChainedRecord> {
        self.records()?
            .into_iter()
            .find(|r| r.record.decision_id == decision_id)
            .ok_or_else(|| Error::UnknownDecision(decision_id.to_string()))
    }
}

/// Validate one stored line against the expected previous hash, returning
/// its record hash when the link is intact.
fn check_link(line: &[u8], offset: u64, expected_prev: &Digest) -> Option<Digest> {
    let event = parse_event_line(line)?;
    if event.offset != offset || event.stream != DECISIONS_STREAM {
        return None;
    }
    let payload = event.payload_bytes();
    let chained: ChainedRecord = canonical::from_canonical_slice(payload).ok()?;
    if chained.prev_hash != *expected_prev {
        return None;
    }
    let recomputed = chain_hash(&chained.prev_hash, &chained.record).ok()?;
    // any byte outside the hashed record must still match what append wrote
    let expected = event_line(DECISIONS_STREAM, offset, &canonical::to_vec(&chained).ok()?, chained.record.decided_at);
    if line != expected.as_slice() {
        return None;
    }
    (recomputed == chained.record_hash).then_some(recomputed)
}
