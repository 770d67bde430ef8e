use thiserror::Error;

use crate::digest::Digest;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure a control-plane operation can report.
///
/// Each variant maps to a stable machine-readable code via [`Error::code`];
/// the HTTP facade and the CLI surface that code verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("storage io failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization failure: {0}")]
    Serialization(#[from] serde_json::Error),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("integrity violation: blob {digest} no longer matches its digest")]
    IntegrityViolation { digest: Digest },

    #[error("invalid stream name {0:?}")]
    InvalidStreamName(String),

    #[error("unknown stream {0:?}")]
    UnknownStream(String),

    #[error("corrupt event in stream {stream:?} at line {line}")]
    CorruptEvent { stream: String, line: u64 },

    #[error("bundle is missing a required artifact of kind {0}")]
    MissingRequiredKind(String),

    #[error("dangling digest {0}")]
    DanglingDigest(Digest),

    #[error("version {version} is not greater than parent version {parent_version}")]
    NonMonotonicVersion {
        version: String,
        parent_version: String,
    },

    #[error("duplicate artifact {kind}/{name}")]
    DuplicateKindName { kind: String, name: String },

    #[error("unknown bundle {0}")]
    UnknownBundle(String),

    #[error("selector matches more than one bundle: {0:?}")]
    AmbiguousSelector(Vec<Digest>),

    #[error("control declares no evidence hooks")]
    EmptyHooks,

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("unknown control {0:?}")]
    UnknownControl(String),

    #[error("unknown hook {hook:?} on control {control:?}")]
    UnknownHook { control: String, hook: String },

    #[error("explanation kinds differ")]
    KindMismatch,

    #[error("unknown decision {0:?}")]
    UnknownDecision(String),

    #[error("decision context is irreproducible, missing: {missing:?}")]
    Irreproducible { missing: Vec<String> },

    #[error("bundle integrity check failed for {0}")]
    IntegrityFailure(Digest),

    #[error("runs were produced over different prompt sets")]
    SetMismatch,

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("invalid window: end must be after start")]
    InvalidWindow,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("no owner configured for signal kind {0}")]
    NoOwner(String),

    #[error("environment skip: {0}")]
    EnvSkip(String),

    #[error("operation not allowed in state {0}")]
    InvalidState(String),

    #[error("approver {0:?} already recorded")]
    DuplicateApprover(String),

    #[error("gates not passed")]
    GatesNotPassed(Box<crate::gate::GateReport>),

    #[error("bundle {bundle} was never deployed to {env}")]
    NeverDeployedThere { bundle: Digest, env: String },

    #[error("unknown incident {0:?}")]
    UnknownIncident(String),

    #[error("incident {0:?} is not open or under investigation")]
    IncidentNotActive(String),

    #[error("illegal transition from {from} via {event}")]
    IllegalTransition { from: String, event: String },

    #[error("resolution requires a named actor")]
    MissingActor,

    #[error("rollback resolution requires a rollback deployment for this incident")]
    MissingRollbackRef,

    #[error("capability tier {0} out of range 1..=4")]
    TierOutOfRange(i64),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io(_) => "storage-io",
            Error::Serialization(_) => "serialization",
            Error::NotFound(_) => "not-found",
            Error::IntegrityViolation { .. } => "integrity-violation",
            Error::InvalidStreamName(_) => "invalid-stream-name",
            Error::UnknownStream(_) => "unknown-stream",
            Error::CorruptEvent { .. } => "corrupt-event",
            Error::MissingRequiredKind(_) => "missing-required-kind",
            Error::DanglingDigest(_) => "dangling-digest",
            Error::NonMonotonicVersion { .. } => "non-monotonic-version",
            Error::DuplicateKindName { .. } => "duplicate-kind-name",
            Error::UnknownBundle(_) => "unknown-bundle",
            Error::AmbiguousSelector(_) => "ambiguous-selector",
            Error::EmptyHooks => "empty-hooks",
            Error::DuplicateId(_) => "duplicate-id",
            Error::UnknownControl(_) => "unknown-control",
            Error::UnknownHook { .. } => "unknown-hook",
            Error::KindMismatch => "kind-mismatch",
            Error::UnknownDecision(_) => "unknown-decision",
            Error::Irreproducible { .. } => "irreproducible",
            Error::IntegrityFailure(_) => "integrity-failure",
            Error::SetMismatch => "set-mismatch",
            Error::EmptyHistogram => "empty-histogram",
            Error::InvalidSignal(_) => "invalid-signal",
            Error::InvalidWindow => "invalid-window",
            Error::InvalidConfig(_) => "invalid-config",
            Error::NoOwner(_) => "no-owner",
            Error::EnvSkip(_) => "env-skip",
            Error::InvalidState(_) => "invalid-state",
            Error::DuplicateApprover(_) => "duplicate-approver",
            Error::GatesNotPassed(_) => "gates-not-passed",
            Error::NeverDeployedThere { .. } => "never-deployed-there",
            Error::UnknownIncident(_) => "unknown-incident",
            Error::IncidentNotActive(_) => "incident-not-active",
            Error::IllegalTransition { .. } => "illegal-transition",
            Error::MissingActor => "missing-actor",
            Error::MissingRollbackRef => "missing-rollback-ref",
            Error::TierOutOfRange(_) => "out-of-range",
            Error::InvalidInput(_) => "invalid-input",
        }
    }

    /// Structured detail attached to the error body, when the variant carries any.
    pub fn details(&self) -> Option<serde_json::Value> {
        match self {
            Error::Irreproducible { missing } => Some(serde_json::json!({ "missing": missing })),
            Error::GatesNotPassed(report) => serde_json::to_value(report.as_ref()).ok(),
            Error::AmbiguousSelector(ids) => Some(serde_json::json!({ "candidates": ids })),
            _ => None,
        }
    }
}
