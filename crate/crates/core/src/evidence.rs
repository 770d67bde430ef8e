//! Controls with evidence hooks, named owners and verification schedules.
//!
//! A control is only as good as the artifacts behind it: every control must
//! declare at least one hook, and its verification state is derived purely
//! from which hooks currently have fresh, valid evidence.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::bundle::GovernanceBundle;
use crate::canonical;
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::store::ArtifactStore;
use crate::time::Timestamp;

pub const CONTROLS_STREAM: &str = "controls";
pub const EVIDENCE_STREAM: &str = "evidence";
pub const VERIFICATIONS_STREAM: &str = "verifications";

const DAY_MS: i64 = 86_400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    Log,
    ConfigurationRecord,
    ModelDocumentation,
    EvaluationReport,
    AuditTrail,
}

impl EvidenceKind {
    /// Top-level fields a `schema_valid` document of this kind must carry.
    pub fn required_fields(&self) -> &'static [&'static str] {
        match self {
            EvidenceKind::Log => &["entries"],
            EvidenceKind::ConfigurationRecord => &["parameters"],
            EvidenceKind::ModelDocumentation => &["model", "intended_use"],
            EvidenceKind::EvaluationReport => &["metrics"],
            EvidenceKind::AuditTrail => &["events"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookValidator {
    Exists,
    SchemaValid,
    DigestListedInBundle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceHook {
    pub hook_id: String,
    pub required_artifact_kind: EvidenceKind,
    /// Freshness window in days.
    pub max_age: u32,
    pub validator: HookValidator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Control {
    pub control_id: String,
    pub title: String,
    pub owner: String,
    /// Verification period in days.
    pub schedule: u32,
    pub hooks: Vec<EvidenceHook>,
}

impl Control {
    pub fn hook(&self, hook_id: &str) -> Option<&EvidenceHook> {
        self.hooks.iter().find(|h| h.hook_id == hook_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub control_id: String,
    pub hook_id: String,
    pub artifact: Digest,
    pub observed_at: Timestamp,
}

/// Atomic verification state, ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VerificationState {
    Supported,
    PartiallySupported,
    Unsupported,
}

/// All hooks pass: Supported. None pass: Unsupported. Otherwise PartiallySupported.
pub fn state_from_results(passes: &[bool]) -> VerificationState {
    let passed = passes.iter().filter(|p| **p).count();
    if passed == passes.len() {
        VerificationState::Supported
    } else if passed == 0 {
        VerificationState::Unsupported
    } else {
        VerificationState::PartiallySupported
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HookResult {
    pub hook_id: String,
    pub pass: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub hook_id: String,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub control_id: String,
    pub bundle_id: Digest,
    pub verified_at: Timestamp,
    pub state: VerificationState,
    pub hook_results: Vec<HookResult>,
    pub evidence: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollupState {
    pub state: VerificationState,
    /// True when no controls were rolled up.
    pub vacuous: bool,
}

impl RollupState {
    pub const EMPTY: RollupState = RollupState {
        state: VerificationState::Supported,
        vacuous: true,
    };

    pub fn combine(self, other: RollupState) -> RollupState {
        RollupState {
            state: self.state.max(other.state),
            vacuous: self.vacuous && other.vacuous,
        }
    }
}

/// Worst-wins fold with identity `Supported` (vacuous).
pub fn rollup_states<I: IntoIterator<Item = VerificationState>>(states: I) -> RollupState {
    states
        .into_iter()
        .map(|state| RollupState { state, vacuous: false })
        .fold(RollupState::EMPTY, RollupState::combine)
}

/// Evaluate one hook against its latest evidence.
///
/// `payload` is the result of reading the evidence blob; it is only consulted
/// by validators that need the content.
pub fn evaluate_hook(
    hook: &EvidenceHook,
    latest: Option<&EvidenceRecord>,
    payload: Option<&Result<Vec<u8>>>,
    now: Timestamp,
    bundle: &GovernanceBundle,
) -> HookResult {
    let result = |pass: bool, reason: String| HookResult {
        hook_id: hook.hook_id.clone(),
        pass,
        reason,
    };
    let Some(record) = latest else {
        return result(false, "no evidence".into());
    };
    let age = now.millis() - record.observed_at.millis();
    if age >= hook.max_age as i64 * DAY_MS {
        return result(
            false,
            format!("evidence observed {} is older than {} days", record.observed_at, hook.max_age),
        );
    }
    match hook.validator {
        HookValidator::Exists => result(true, "evidence present".into()),
        HookValidator::SchemaValid => match payload {
            Some(Ok(bytes)) => match schema_check(hook.required_artifact_kind, bytes) {
                Ok(()) => result(true, "schema valid".into()),
                Err(why) => result(false, why),
            },
            Some(Err(e)) => result(false, format!("evidence unreadable: {e}")),
            None => result(false, "evidence unreadable".into()),
        },
        HookValidator::DigestListedInBundle => {
            if bundle.lists_digest(&record.artifact) {
                result(true, "digest listed in bundle".into())
            } else {
                result(false, format!("digest {} not listed in bundle {}", record.artifact, bundle.bundle_id))
            }
        }
    }
}

fn schema_check(kind: EvidenceKind, bytes: &[u8]) -> std::result::Result<(), String> {
    if !canonical::is_canonical(bytes) {
        return Err("evidence is not canonical JSON".into());
    }
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    let obj = value
        .as_object()
        .ok_or_else(|| "evidence is not a JSON object".to_string())?;
    let missing: Vec<&str> = kind
        .required_fields()
        .iter()
        .copied()
        .filter(|f| !obj.contains_key(*f))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(format!("missing required fields {missing:?}"))
    }
}

pub struct EvidenceRegistry<'a> {
    store: &'a ArtifactStore,
}

impl<'a> EvidenceRegistry<'a> {
    pub fn new(store: &'a ArtifactStore) -> Self {
        Self { store }
    }

    pub fn controls(&self) -> Result<Vec<Control>> {
        self.store
            .read_events_or_empty(CONTROLS_STREAM)?
            .iter()
            .map(|e| e.decode())
            .collect()
    }

    pub fn control(&self, control_id: &str) -> Result<Control> {
        self.controls()?
            .into_iter()
            .find(|c| c.control_id == control_id)
            .ok_or_else(|| Error::UnknownControl(control_id.to_string()))
    }

    pub fn register_control(&self, control: Control) -> Result<String> {
        if control.hooks.is_empty() {
            return Err(Error::EmptyHooks);
        }
        if control.control_id.trim().is_empty() {
            return Err(Error::InvalidInput("control_id must be non-empty".into()));
        }
        if control.owner.trim().is_empty() {
            return Err(Error::InvalidInput("control owner must be non-empty".into()));
        }
        if control.schedule < 1 {
            return Err(Error::InvalidInput("schedule must be at least 1 day".into()));
        }
        let mut hook_ids = HashSet::new();
        for hook in &control.hooks {
            if hook.max_age < 1 {
                return Err(Error::InvalidInput(format!("hook {} max_age must be at least 1 day", hook.hook_id)));
            }
            if !hook_ids.insert(hook.hook_id.as_str()) {
                return Err(Error::DuplicateId(hook.hook_id.clone()));
            }
        }
        if self.controls()?.iter().any(|c| c.control_id == control.control_id) {
            return Err(Error::DuplicateId(control.control_id));
        }
        self.store.append_json(CONTROLS_STREAM, &control)?;
        Ok(control.control_id)
    }

    pub fn attach_evidence(
        &self,
        control_id: &str,
        hook_id: &str,
        artifact: Digest,
        observed_at: Timestamp,
    ) -> Result<EvidenceRecord> {
        let control = self.control(control_id)?;
        if control.hook(hook_id).is_none() {
            return Err(Error::UnknownHook {
                control: control_id.to_string(),
                hook: hook_id.to_string(),
            });
        }
        if !self.store.has_blob(&artifact) {
            return Err(Error::DanglingDigest(artifact));
        }
        let record = EvidenceRecord {
            control_id: control_id.to_string(),
            hook_id: hook_id.to_string(),
            artifact,
            observed_at,
        };
        self.store.append_json(EVIDENCE_STREAM, &record)?;
        Ok(record)
    }

    pub fn evidence(&self) -> Result<Vec<EvidenceRecord>> {
        self.store
            .read_events_or_empty(EVIDENCE_STREAM)?
            .iter()
            .map(|e| e.decode())
            .collect()
    }

    /// Latest evidence per hook of `control_id` observed no later than `now`.
    /// Ties on `observed_at` go to the later attachment.
    fn latest_evidence(&self, control_id: &str, now: Timestamp) -> Result<BTreeMap<String, EvidenceRecord>> {
        let mut latest: BTreeMap<String, EvidenceRecord> = BTreeMap::new();
        for record in self.evidence()? {
            if record.control_id != control_id || record.observed_at > now {
                continue;
            }
            match latest.get(&record.hook_id) {
                Some(prev) if prev.observed_at > record.observed_at => {}
                _ => {
                    latest.insert(record.hook_id.clone(), record);
                }
            }
        }
        Ok(latest)
    }

    /// Compute a verification record without persisting it.
    pub fn assess_control(
        &self,
        control_id: &str,
        now: Timestamp,
        bundle: &GovernanceBundle,
    ) -> Result<VerificationRecord> {
        let control = self.control(control_id)?;
        let latest = self.latest_evidence(control_id, now)?;
        let mut hook_results = Vec::with_capacity(control.hooks.len());
        let mut evidence = Vec::new();
        for hook in &control.hooks {
            let record = latest.get(&hook.hook_id);
            let payload = match (record, hook.validator) {
                (Some(r), HookValidator::SchemaValid) => Some(self.store.get_blob(&r.artifact)),
                _ => None,
            };
            if let Some(r) = record {
                evidence.push(EvidenceRef {
                    hook_id: hook.hook_id.clone(),
                    digest: r.artifact,
                });
            }
            hook_results.push(evaluate_hook(hook, record, payload.as_ref(), now, bundle));
        }
        let passes: Vec<bool> = hook_results.iter().map(|r| r.pass).collect();
        Ok(VerificationRecord {
            control_id: control_id.to_string(),
            bundle_id: bundle.bundle_id,
            verified_at: now,
            state: state_from_results(&passes),
            hook_results,
            evidence,
        })
    }

    pub fn verify_control(
        &self,
        control_id: &str,
        now: Timestamp,
        bundle: &GovernanceBundle,
    ) -> Result<VerificationRecord> {
        let record = self.assess_control(control_id, now, bundle)?;
        self.store.append_json(VERIFICATIONS_STREAM, &record)?;
        Ok(record)
    }

    /// Verify each listed control and fold the states worst-wins.
    pub fn rollup(
        &self,
        control_ids: &[String],
        now: Timestamp,
        bundle: &GovernanceBundle,
    ) -> Result<RollupState> {
        let known: HashSet<String> = self.controls()?.into_iter().map(|c| c.control_id).collect();
        if let Some(missing) = control_ids.iter().find(|id| !known.contains(*id)) {
            return Err(Error::UnknownControl(missing.clone()));
        }
        let mut states = Vec::with_capacity(control_ids.len());
        for id in control_ids {
            states.push(self.verify_control(id, now, bundle)?.state);
        }
        Ok(rollup_states(states))
    }

    pub fn verifications(&self) -> Result<Vec<VerificationRecord>> {
        self.store
            .read_events_or_empty(VERIFICATIONS_STREAM)?
            .iter()
            .map(|e| e.decode())
            .collect()
    }

    /// Latest recorded verification per control for `bundle_id`, restricted to
    /// records verified at or before `at` when given.
    pub fn latest_verifications(
        &self,
        bundle_id: &Digest,
        at: Option<Timestamp>,
    ) -> Result<BTreeMap<String, VerificationRecord>> {
        let mut latest: BTreeMap<String, VerificationRecord> = BTreeMap::new();
        for record in self.verifications()? {
            if record.bundle_id != *bundle_id || at.is_some_and(|t| record.verified_at > t) {
                continue;
            }
            match latest.get(&record.control_id) {
                Some(prev) if prev.verified_at > record.verified_at => {}
                _ => {
                    latest.insert(record.control_id.clone(), record);
                }
            }
        }
        Ok(latest)
    }

    /// Rollup over every registered control using recorded verifications for
    /// the bundle; a control never verified against it counts as Unsupported.
    pub fn recorded_rollup(&self, bundle_id: &Digest) -> Result<RollupState> {
        let latest = self.latest_verifications(bundle_id, None)?;
        let states = self.controls()?.into_iter().map(|c| {
            latest
                .get(&c.control_id)
                .map(|r| r.state)
                .unwrap_or(VerificationState::Unsupported)
        });
        Ok(rollup_states(states))
    }

    /// Controls whose most recent verification (against any bundle) is older
    /// than their schedule. Never-verified controls are always due.
    pub fn due_verifications(&self, now: Timestamp) -> Result<Vec<String>> {
        let mut last: BTreeMap<String, Timestamp> = BTreeMap::new();
        for record in self.verifications()? {
            let entry = last.entry(record.control_id).or_insert(record.verified_at);
            if record.verified_at > *entry {
                *entry = record.verified_at;
            }
        }
        Ok(self
            .controls()?
            .into_iter()
            .filter(|c| match last.get(&c.control_id) {
                None => true,
                Some(t) => now.millis() - t.millis() > c.schedule as i64 * DAY_MS,
            })
            .map(|c| c.control_id)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{ArtifactKind, ArtifactRef, BundleManifest, Bundles, SemVer};
    use proptest::prelude::*;

    struct Fixture {
        _dir: tempfile::TempDir,
        store: ArtifactStore,
        bundle: GovernanceBundle,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let model = store.put_blob(b"weights").unwrap();
        let policy = store.put_blob(b"{}").unwrap();
        let bundle = Bundles::new(&store)
            .create(BundleManifest {
                version: SemVer::new(1, 0, 0),
                capability_tier: 2,
                artifacts: vec![
                    ArtifactRef { kind: ArtifactKind::Model, name: "m".into(), digest: model },
                    ArtifactRef { kind: ArtifactKind::PolicyConfig, name: "p".into(), digest: policy },
                ],
                parent: None,
            })
            .unwrap();
        Fixture { _dir: dir, store, bundle }
    }

    fn hook(id: &str, kind: EvidenceKind, validator: HookValidator) -> EvidenceHook {
        EvidenceHook {
            hook_id: id.into(),
            required_artifact_kind: kind,
            max_age: 30,
            validator,
        }
    }

    fn control(id: &str, hooks: Vec<EvidenceHook>) -> Control {
        Control {
            control_id: id.into(),
            title: "Evaluation coverage".into(),
            owner: "risk-office".into(),
            schedule: 7,
            hooks,
        }
    }

    fn t(day: i64) -> Timestamp {
        Timestamp::from_millis(1_700_000_000_000).plus_days(day)
    }

    #[test]
    fn register_rules() {
        let f = fixture();
        let reg = EvidenceRegistry::new(&f.store);
        let c = control(
            "c1",
            vec![
                hook("eval", EvidenceKind::EvaluationReport, HookValidator::SchemaValid),
                hook("audit", EvidenceKind::AuditTrail, HookValidator::Exists),
            ],
        );
        assert_eq!(reg.register_control(c.clone()).unwrap(), "c1");
        assert_eq!(reg.register_control(c).unwrap_err().code(), "duplicate-id");
        assert_eq!(reg.register_control(control("c2", vec![])).unwrap_err().code(), "empty-hooks");
    }

    #[test]
    fn attach_rules() {
        let f = fixture();
        let reg = EvidenceRegistry::new(&f.store);
        reg.register_control(control("c1", vec![hook("eval", EvidenceKind::EvaluationReport, HookValidator::Exists)]))
            .unwrap();
        let report = f.store.put_blob(br#"{"metrics":{"acc":0.9}}"#).unwrap();
        reg.attach_evidence("c1", "eval", report, t(0)).unwrap();
        assert_eq!(reg.attach_evidence("c1", "nope", report, t(0)).unwrap_err().code(), "unknown-hook");
        assert_eq!(reg.attach_evidence("zz", "eval", report, t(0)).unwrap_err().code(), "unknown-control");
        assert_eq!(
            reg.attach_evidence("c1", "eval", Digest::of(b"missing"), t(0)).unwrap_err().code(),
            "dangling-digest"
        );
    }

    #[test]
    fn verification_states() {
        let f = fixture();
        let reg = EvidenceRegistry::new(&f.store);
        reg.register_control(control(
            "c1",
            vec![
                hook("eval", EvidenceKind::EvaluationReport, HookValidator::SchemaValid),
                hook("model", EvidenceKind::ModelDocumentation, HookValidator::DigestListedInBundle),
            ],
        ))
        .unwrap();
        let report = f.store.put_blob(br#"{"metrics":{"acc":0.9}}"#).unwrap();
        let model = f.bundle.artifact(ArtifactKind::Model).unwrap().digest;

        // neither hook has evidence
        let r = reg.verify_control("c1", t(0), &f.bundle).unwrap();
        assert_eq!(r.state, VerificationState::Unsupported);

        reg.attach_evidence("c1", "eval", report, t(0)).unwrap();
        let r = reg.verify_control("c1", t(1), &f.bundle).unwrap();
        assert_eq!(r.state, VerificationState::PartiallySupported);

        reg.attach_evidence("c1", "model", model, t(0)).unwrap();
        let r = reg.verify_control("c1", t(1), &f.bundle).unwrap();
        assert_eq!(r.state, VerificationState::Supported);
        assert_eq!(r.evidence.len(), 2);

        // both older than max_age (30 days)
        let r = reg.verify_control("c1", t(31), &f.bundle).unwrap();
        assert_eq!(r.state, VerificationState::Unsupported);
        assert_eq!(f.store.read_events(VERIFICATIONS_STREAM, 0).unwrap().len(), 4);
    }

    #[test]
    fn validators_reject_bad_evidence() {
        let f = fixture();
        let reg = EvidenceRegistry::new(&f.store);
        reg.register_control(control(
            "c1",
            vec![
                hook("eval", EvidenceKind::EvaluationReport, HookValidator::SchemaValid),
                hook("listed", EvidenceKind::ConfigurationRecord, HookValidator::DigestListedInBundle),
            ],
        ))
        .unwrap();
        let wrong_schema = f.store.put_blob(br#"{"score":1}"#).unwrap();
        reg.attach_evidence("c1", "eval", wrong_schema, t(0)).unwrap();
        reg.attach_evidence("c1", "listed", wrong_schema, t(0)).unwrap();
        let r = reg.verify_control("c1", t(0), &f.bundle).unwrap();
        assert_eq!(r.state, VerificationState::Unsupported);
        assert!(r.hook_results[0].reason.contains("metrics"));
    }

    #[test]
    fn latest_evidence_wins() {
        let f = fixture();
        let reg = EvidenceRegistry::new(&f.store);
        reg.register_control(control("c1", vec![hook("eval", EvidenceKind::EvaluationReport, HookValidator::SchemaValid)]))
            .unwrap();
        let good = f.store.put_blob(br#"{"metrics":{}}"#).unwrap();
        let bad = f.store.put_blob(b"not json").unwrap();
        reg.attach_evidence("c1", "eval", good, t(0)).unwrap();
        reg.attach_evidence("c1", "eval", bad, t(2)).unwrap();
        assert_eq!(reg.verify_control("c1", t(1), &f.bundle).unwrap().state, VerificationState::Supported);
        assert_eq!(reg.verify_control("c1", t(3), &f.bundle).unwrap().state, VerificationState::Unsupported);
    }

    #[test]
    fn rollup_and_due() {
        let f = fixture();
        let reg = EvidenceRegistry::new(&f.store);
        let empty = reg.rollup(&[], t(0), &f.bundle).unwrap();
        assert_eq!(empty, RollupState { state: VerificationState::Supported, vacuous: true });

        reg.register_control(control("a", vec![hook("h", EvidenceKind::Log, HookValidator::Exists)])).unwrap();
        reg.register_control(control("b", vec![hook("h", EvidenceKind::Log, HookValidator::Exists)])).unwrap();
        assert_eq!(reg.due_verifications(t(0)).unwrap(), vec!["a".to_string(), "b".to_string()]);

        let log = f.store.put_blob(br#"{"entries":[]}"#).unwrap();
        reg.attach_evidence("a", "h", log, t(0)).unwrap();
        let r = reg.rollup(&["a".into(), "b".into()], t(1), &f.bundle).unwrap();
        assert_eq!(r.state, VerificationState::Unsupported);
        assert!(!r.vacuous);
        reg.attach_evidence("b", "h", log, t(0)).unwrap();
        let r = reg.rollup(&["a".into(), "b".into()], t(1), &f.bundle).unwrap();
        assert_eq!(r.state, VerificationState::Supported);
        assert_eq!(reg.recorded_rollup(&f.bundle.bundle_id).unwrap().state, VerificationState::Supported);
        assert_eq!(reg.rollup(&["zz".into()], t(1), &f.bundle).unwrap_err().code(), "unknown-control");

        // verified at day 1, schedule 7
        assert!(reg.due_verifications(t(2)).unwrap().is_empty());
        assert!(reg.due_verifications(t(8)).unwrap().is_empty());
        assert_eq!(reg.due_verifications(t(9)).unwrap().len(), 2);
    }

    #[test]
    fn rollup_examples() {
        use VerificationState::*;
        assert_eq!(rollup_states([Supported, Supported]).state, Supported);
        assert_eq!(rollup_states([Supported, PartiallySupported]).state, PartiallySupported);
        assert!(rollup_states([]).vacuous);
    }

    #[test]
    fn exhaustive_state_vectors() {
        for len in 1..=6usize {
            for mask in 0u32..(1 << len) {
                let v: Vec<bool> = (0..len).map(|i| mask & (1 << i) != 0).collect();
                let expected = if v.iter().all(|x| *x) {
                    VerificationState::Supported
                } else if v.iter().all(|x| !*x) {
                    VerificationState::Unsupported
                } else {
                    VerificationState::PartiallySupported
                };
                assert_eq!(state_from_results(&v), expected, "{v:?}");
            }
        }
    }

    fn arb_state() -> impl Strategy<Value = VerificationState> {
        prop_oneof![
            Just(VerificationState::Supported),
            Just(VerificationState::PartiallySupported),
            Just(VerificationState::Unsupported),
        ]
    }

    proptest! {
        #[test]
        fn flipping_a_hook_to_pass_never_worsens(v in proptest::collection::vec(any::<bool>(), 1..8), i in 0usize..8) {
            let i = i % v.len();
            let mut w = v.clone();
            w[i] = true;
            prop_assert!(state_from_results(&w) <= state_from_results(&v));
        }

        #[test]
        fn rollup_is_order_independent(mut v in proptest::collection::vec(arb_state(), 0..10), seed in any::<u64>()) {
            let a = rollup_states(v.clone());
            let n = v.len();
            if n > 1 {
                v.rotate_left((seed as usize) % n);
                v.swap(0, n - 1);
            }
            prop_assert_eq!(rollup_states(v.clone()), a);
            // idempotent: folding the result in again changes nothing
            let doubled = rollup_states(v.iter().copied().chain(v.iter().copied()));
            prop_assert_eq!(doubled, a);
        }
    }
}
