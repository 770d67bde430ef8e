//! Capability-aware escalation.
//!
//! Drift verdicts, telemetry alerts and adversarial stress failures open
//! incidents according to a per-tier trigger policy. Incidents then move
//! through `Open → Investigating → Resolved{Rollback|Retrain|Accept}`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::digest::Digest;
use crate::drift::{DriftLevel, DriftVerdict};
use crate::error::{Error, Result};
use crate::store::ArtifactStore;
use crate::telemetry::{AnomalyAlert, Severity, SignalKind};
use crate::time::Timestamp;

pub const INCIDENTS_STREAM: &str = "incidents";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Documentation,
    BasicMonitoring,
    ExplainabilityLogging,
    DriftMonitoring,
    EvidenceVerification,
    GatedPropagation,
    EscalationThresholds,
    HumanAuthority,
    StressTesting,
    InstitutionalOversight,
}

/// Mechanisms each tier adds on top of the tier below it.
const TIER_ADDITIONS: [&[Mechanism]; 4] = [
    &[Mechanism::Documentation, Mechanism::BasicMonitoring],
    &[
        Mechanism::ExplainabilityLogging,
        Mechanism::DriftMonitoring,
        Mechanism::EvidenceVerification,
    ],
    &[
        Mechanism::GatedPropagation,
        Mechanism::EscalationThresholds,
        Mechanism::HumanAuthority,
    ],
    &[Mechanism::StressTesting, Mechanism::InstitutionalOversight],
];

/// Cumulative governance mechanisms required at a capability tier (1..=4).
pub fn required_intensity(tier: i64) -> Result<BTreeSet<Mechanism>> {
    if !(1..=4).contains(&tier) {
        return Err(Error::TierOutOfRange(tier));
    }
    Ok(TIER_ADDITIONS[..tier as usize]
        .iter()
        .flat_map(|m| m.iter().copied())
        .collect())
}

/// Minimum signal severities that open an incident at one tier.
/// `None` means that signal source never triggers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_verdict: Option<DriftLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_alert: Option<Severity>,
    #[serde(default)]
    pub adversarial_failure: bool,
}

impl TriggerRule {
    pub fn verdict_fires(&self, level: DriftLevel) -> bool {
        self.min_verdict.is_some_and(|min| level >= min && level > DriftLevel::Ok)
    }

    pub fn alert_fires(&self, severity: Severity) -> bool {
        self.min_alert.is_some_and(|min| severity >= min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationPolicy {
    /// Rules for tiers 1 through 4.
    pub tiers: [TriggerRule; 4],
}

impl Default for EscalationPolicy {
    fn default() -> Self {
        Self {
            tiers: [
                TriggerRule {
                    min_verdict: Some(DriftLevel::Breach),
                    min_alert: None,
                    adversarial_failure: false,
                },
                TriggerRule {
                    min_verdict: Some(DriftLevel::Breach),
                    min_alert: Some(Severity::Critical),
                    adversarial_failure: false,
                },
                TriggerRule {
                    min_verdict: Some(DriftLevel::Warn),
                    min_alert: Some(Severity::Warn),
                    adversarial_failure: false,
                },
                TriggerRule {
                    min_verdict: Some(DriftLevel::Warn),
                    min_alert: Some(Severity::Warn),
                    adversarial_failure: true,
                },
            ],
        }
    }
}

impl EscalationPolicy {
    pub fn rule(&self, tier: u8) -> Result<&TriggerRule> {
        if !(1..=4).contains(&tier) {
            return Err(Error::TierOutOfRange(tier as i64));
        }
        Ok(&self.tiers[tier as usize - 1])
    }

    /// Higher tiers must never demand a more severe signal than lower ones.
    pub fn problems(&self) -> Vec<String> {
        // None ranks above every level: it never fires.
        fn rank<T: Ord + Copy>(o: Option<T>) -> (bool, Option<T>) {
            (o.is_none(), o)
        }
        let mut out = Vec::new();
        for t in 1..4 {
            let (lo, hi) = (&self.tiers[t - 1], &self.tiers[t]);
            if rank(hi.min_verdict) > rank(lo.min_verdict) {
                out.push(format!("escalation_policy.tiers[{t}].min_verdict: stricter than tier {t}"));
            }
            if rank(hi.min_alert) > rank(lo.min_alert) {
                out.push(format!("escalation_policy.tiers[{t}].min_alert: stricter than tier {t}"));
            }
            if lo.adversarial_failure && !hi.adversarial_failure {
                out.push(format!("escalation_policy.tiers[{t}].adversarial_failure: dropped from tier {t}"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IncidentCause {
    Drift {
        baseline_run: Digest,
        current_run: Digest,
        level: DriftLevel,
    },
    Alert {
        alert_id: String,
        kind: SignalKind,
        severity: Severity,
    },
    AdversarialFailure {
        run_id: Digest,
    },
}

impl IncidentCause {
    pub fn digest(&self) -> Result<Digest> {
        canonical::digest(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSignal {
    pub baseline_run: Digest,
    pub current_run: Digest,
    pub verdict: DriftVerdict,
}

/// Everything an escalation evaluation looks at for one bundle.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EscalationSignals {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftSignal>,
    #[serde(default)]
    pub alerts: Vec<AnomalyAlert>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial_failure_run: Option<Digest>,
}

/// Causes the tier's rule fires on, most significant first: drift verdict,
/// adversarial failure, then alerts by descending severity.
pub fn firing_causes(rule: &TriggerRule, signals: &EscalationSignals) -> Vec<IncidentCause> {
    let mut causes = Vec::new();
    if let Some(d) = &signals.drift {
        if rule.verdict_fires(d.verdict.overall) {
            causes.push(IncidentCause::Drift {
                baseline_run: d.baseline_run,
                current_run: d.current_run,
                level: d.verdict.overall,
            });
        }
    }
    if let Some(run_id) = signals.adversarial_failure_run {
        if rule.adversarial_failure {
            causes.push(IncidentCause::AdversarialFailure { run_id });
        }
    }
    let mut alerts: Vec<&AnomalyAlert> = signals.alerts.iter().filter(|a| rule.alert_fires(a.severity)).collect();
    alerts.sort_by(|a, b| b.severity.cmp(&a.severity).then_with(|| a.alert_id.cmp(&b.alert_id)));
    causes.extend(alerts.into_iter().map(|a| IncidentCause::Alert {
        alert_id: a.alert_id.clone(),
        kind: a.kind,
        severity: a.severity,
    }));
    causes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IncidentState {
    Open,
    Investigating,
    Resolved,
}

impl fmt::Display for IncidentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Rollback,
    Retrain,
    Accept,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TransitionEvent {
    StartInvestigation {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        actor: Option<String>,
    },
    Resolve {
        resolution: Resolution,
        #[serde(default)]
        actor: String,
        /// Deployment id of the rollback performed under this incident.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rollback_ref: Option<String>,
    },
}

impl TransitionEvent {
    fn name(&self) -> &'static str {
        match self {
            TransitionEvent::StartInvestigation { .. } => "start_investigation",
            TransitionEvent::Resolve { .. } => "resolve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: IncidentState,
    pub to: IncidentState,
    pub at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollback_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub incident_id: String,
    pub bundle_id: Digest,
    pub cause: IncidentCause,
    pub cause_digest: Digest,
    pub state: IncidentState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_by: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollback_ref: Option<String>,
    /// Set on Retrain: a successor bundle (parent = this bundle) must pass gates.
    #[serde(default)]
    pub retrain_obligation: bool,
    pub opened_at: Timestamp,
    pub history: Vec<Transition>,
}

impl Incident {
    pub fn is_active(&self) -> bool {
        self.state != IncidentState::Resolved
    }

    pub fn resolved_at(&self) -> Option<Timestamp> {
        self.history
            .iter()
            .find(|t| t.to == IncidentState::Resolved)
            .map(|t| t.at)
    }

    /// Opened at or before `at` and not yet resolved at `at`.
    pub fn open_at(&self, at: Timestamp) -> bool {
        self.opened_at <= at && self.resolved_at().is_none_or(|r| r > at)
    }
}

/// Apply one event to an incident. `rollback_ok` decides whether a rollback
/// deployment id is a valid reference for this incident.
pub fn apply_transition(
    incident: &Incident,
    event: &TransitionEvent,
    at: Timestamp,
    rollback_ok: impl Fn(&str) -> bool,
) -> Result<(Incident, Transition)> {
    let illegal = || Error::IllegalTransition {
        from: incident.state.to_string(),
        event: event.name().to_string(),
    };
    let mut next = incident.clone();
    let transition = match (incident.state, event) {
        (IncidentState::Open, TransitionEvent::StartInvestigation { actor }) => Transition {
            from: IncidentState::Open,
            to: IncidentState::Investigating,
            at,
            actor: actor.clone().filter(|a| !a.trim().is_empty()),
            resolution: None,
            rollback_ref: None,
        },
        (
            IncidentState::Investigating,
            TransitionEvent::Resolve {
                resolution,
                actor,
                rollback_ref,
            },
        ) => {
            if actor.trim().is_empty() {
                return Err(Error::MissingActor);
            }
            let rollback_ref = match resolution {
                Resolution::Rollback => match rollback_ref {
                    Some(r) if rollback_ok(r) => Some(r.clone()),
                    _ => return Err(Error::MissingRollbackRef),
                },
                _ => None,
            };
            next.resolution = Some(*resolution);
            next.resolved_by = Some(actor.clone());
            next.rollback_ref = rollback_ref.clone();
            next.retrain_obligation = *resolution == Resolution::Retrain;
            Transition {
                from: IncidentState::Investigating,
                to: IncidentState::Resolved,
                at,
                actor: Some(actor.clone()),
                resolution: Some(*resolution),
                rollback_ref,
            }
        }
        _ => return Err(illegal()),
    };
    next.state = transition.to;
    next.history.push(transition.clone());
    Ok((next, transition))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IncidentEvent {
    Opened { incident: Incident },
    Transitioned { incident_id: String, transition: Transition },
}

pub struct Escalation<'a> {
    store: &'a ArtifactStore,
}

impl<'a> Escalation<'a> {
    pub fn new(store: &'a ArtifactStore) -> Self {
        Self { store }
    }

    /// Current state of every incident, in opening order.
    pub fn incidents(&self) -> Result<Vec<Incident>> {
        let mut incidents: Vec<Incident> = Vec::new();
        for event in self.store.read_events_or_empty(INCIDENTS_STREAM)? {
            match event.decode::<IncidentEvent>()? {
                IncidentEvent::Opened { incident } => incidents.push(incident),
                IncidentEvent::Transitioned { incident_id, transition } => {
                    if let Some(inc) = incidents.iter_mut().find(|i| i.incident_id == incident_id) {
                        inc.state = transition.to;
                        if let Some(r) = transition.resolution {
                            inc.resolution = Some(r);
                            inc.resolved_by = transition.actor.clone();
                            inc.rollback_ref = transition.rollback_ref.clone();
                            inc.retrain_obligation = r == Resolution::Retrain;
                        }
                        inc.history.push(transition);
                    }
                }
            }
        }
        Ok(incidents)
    }

    pub fn incident(&self, incident_id: &str) -> Result<Incident> {
        self.incidents()?
            .into_iter()
            .find(|i| i.incident_id == incident_id)
            .ok_or_else(|| Error::UnknownIncident(incident_id.to_string()))
    }

    /// Open at most one incident for the bundle if the tier's rule fires.
    ///
    /// Causes that already have an incident for this bundle are suppressed;
    /// when every firing cause is a duplicate, the existing incident for the
    /// most significant one is returned without appending anything.
    pub fn evaluate_escalation(
        &self,
        bundle_id: &Digest,
        tier: u8,
        signals: &EscalationSignals,
        policy: &EscalationPolicy,
    ) -> Result<Option<Incident>> {
        let causes = firing_causes(policy.rule(tier)?, signals);
        if causes.is_empty() {
            return Ok(None);
        }
        let existing = self.incidents()?;
        let find = |d: &Digest| {
            existing
                .iter()
                .find(|i| i.bundle_id == *bundle_id && i.cause_digest == *d)
                .cloned()
        };
        let mut first_duplicate = None;
        for cause in causes {
            let cause_digest = cause.digest()?;
            if let Some(dup) = find(&cause_digest) {
                first_duplicate.get_or_insert(dup);
                continue;
            }
            let key = canonical::digest(&(bundle_id, cause_digest))?;
            let incident = Incident {
                incident_id: format!("inc-{}", key.short(16)),
                bundle_id: *bundle_id,
                cause,
                cause_digest,
                state: IncidentState::Open,
                resolution: None,
                resolved_by: None,
                rollback_ref: None,
                retrain_obligation: false,
                opened_at: self.store.now(),
                history: Vec::new(),
            };
            self.store.append_json(
                INCIDENTS_STREAM,
                &IncidentEvent::Opened {
                    incident: incident.clone(),
                },
            )?;
            return Ok(Some(incident));
        }
        Ok(first_duplicate)
    }

    pub fn transition(
        &self,
        incident_id: &str,
        event: &TransitionEvent,
        rollback_ok: impl Fn(&str) -> bool,
    ) -> Result<Incident> {
        let incident = self.incident(incident_id)?;
        let (next, transition) = apply_transition(&incident, event, self.store.now(), rollback_ok)?;
        self.store.append_json(
            INCIDENTS_STREAM,
            &IncidentEvent::Transitioned {
                incident_id: incident_id.to_string(),
                transition,
            },
        )?;
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn verdict(level: DriftLevel) -> DriftSignal {
        DriftSignal {
            baseline_run: Digest::of(b"base"),
            current_run: Digest::of(b"cur"),
            verdict: DriftVerdict {
                semantic: level,
                behavioral: DriftLevel::Ok,
                probabilistic: DriftLevel::Ok,
                overall: level,
            },
        }
    }

    fn alert(severity: Severity) -> AnomalyAlert {
        AnomalyAlert {
            alert_id: format!("al-{severity:?}"),
            kind: SignalKind::LatencyMs,
            bundle_id: Digest::ZERO,
            offset: 0,
            window_end: Timestamp::from_millis(0),
            z_score: 9.0,
            observed: 1.0,
            expected: 0.0,
            severity,
        }
    }

    #[test]
    fn intensity_profiles() {
        use Mechanism::*;
        assert_eq!(required_intensity(1).unwrap(), BTreeSet::from([Documentation, BasicMonitoring]));
        let t2 = required_intensity(2).unwrap();
        let t3 = required_intensity(3).unwrap();
        let expected: BTreeSet<Mechanism> = t2
            .iter()
            .copied()
            .chain([GatedPropagation, EscalationThresholds, HumanAuthority])
            .collect();
        assert_eq!(t3, expected);
        let t4 = required_intensity(4).unwrap();
        assert!(t4.is_superset(&t3) && t3.is_superset(&t2));
        assert!(t4.contains(&StressTesting));
        assert_eq!(required_intensity(0).unwrap_err().code(), "out-of-range");
        assert_eq!(required_intensity(5).unwrap_err().code(), "out-of-range");
    }

    #[test]
    fn default_policy_is_monotone() {
        assert!(EscalationPolicy::default().problems().is_empty());
        let mut p = EscalationPolicy::default();
        p.tiers[3].min_verdict = Some(DriftLevel::Breach);
        assert_eq!(p.problems().len(), 1);
    }

    #[test]
    fn tier_rules() {
        let p = EscalationPolicy::default();
        let warn = EscalationSignals { drift: Some(verdict(DriftLevel::Warn)), ..Default::default() };
        assert!(firing_causes(p.rule(1).unwrap(), &warn).is_empty());
        assert_eq!(firing_causes(p.rule(3).unwrap(), &warn).len(), 1);
        let crit = EscalationSignals { alerts: vec![alert(Severity::Critical)], ..Default::default() };
        assert!(firing_causes(p.rule(1).unwrap(), &crit).is_empty());
        assert_eq!(firing_causes(p.rule(2).unwrap(), &crit).len(), 1);
        let adv = EscalationSignals { adversarial_failure_run: Some(Digest::ZERO), ..Default::default() };
        assert!(firing_causes(p.rule(3).unwrap(), &adv).is_empty());
        assert_eq!(firing_causes(p.rule(4).unwrap(), &adv).len(), 1);
    }

    #[test]
    fn evaluation_dedups() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let esc = Escalation::new(&store);
        let p = EscalationPolicy::default();
        let b = Digest::of(b"bundle");
        let warn = EscalationSignals { drift: Some(verdict(DriftLevel::Warn)), ..Default::default() };
        assert!(esc.evaluate_escalation(&b, 1, &warn, &p).unwrap().is_none());
        let first = esc.evaluate_escalation(&b, 3, &warn, &p).unwrap().unwrap();
        let second = esc.evaluate_escalation(&b, 3, &warn, &p).unwrap().unwrap();
        assert_eq!(first.incident_id, second.incident_id);
        assert_eq!(esc.incidents().unwrap().len(), 1);
        // a new cause alongside a duplicate opens a second incident
        let both = EscalationSignals { alerts: vec![alert(Severity::Warn)], ..warn };
        let third = esc.evaluate_escalation(&b, 3, &both, &p).unwrap().unwrap();
        assert_ne!(third.incident_id, first.incident_id);
        assert_eq!(esc.incidents().unwrap().len(), 2);
    }

    #[test]
    fn state_machine() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let esc = Escalation::new(&store);
        let signals = EscalationSignals { drift: Some(verdict(DriftLevel::Breach)), ..Default::default() };
        let inc = esc
            .evaluate_escalation(&Digest::ZERO, 1, &signals, &EscalationPolicy::default())
            .unwrap()
            .unwrap();
        let id = inc.incident_id.clone();
        let accept = TransitionEvent::Resolve { resolution: Resolution::Accept, actor: "alice".into(), rollback_ref: None };
        assert_eq!(esc.transition(&id, &accept, |_| true).unwrap_err().code(), "illegal-transition");
        let inc = esc.transition(&id, &TransitionEvent::StartInvestigation { actor: None }, |_| true).unwrap();
        assert_eq!(inc.state, IncidentState::Investigating);
        let anonymous = TransitionEvent::Resolve { resolution: Resolution::Accept, actor: " ".into(), rollback_ref: None };
        assert_eq!(esc.transition(&id, &anonymous, |_| true).unwrap_err().code(), "missing-actor");
        let rollback = TransitionEvent::Resolve { resolution: Resolution::Rollback, actor: "alice".into(), rollback_ref: None };
        assert_eq!(esc.transition(&id, &rollback, |_| true).unwrap_err().code(), "missing-rollback-ref");
        let inc = esc.transition(&id, &accept, |_| true).unwrap();
        assert_eq!((inc.state, inc.resolution), (IncidentState::Resolved, Some(Resolution::Accept)));
        assert_eq!(inc.history.len(), 2);
        assert_eq!(esc.incident(&id).unwrap(), inc);
        assert_eq!(esc.incident("inc-nope").unwrap_err().code(), "unknown-incident");
    }

    #[test]
    fn trigger_grid_is_monotone_in_tier() {
        let p = EscalationPolicy::default();
        let levels = [DriftLevel::Ok, DriftLevel::Warn, DriftLevel::Breach];
        let severities = [None, Some(Severity::Warn), Some(Severity::Critical)];
        for level in levels {
            for sev in severities {
                let signals = EscalationSignals {
                    drift: Some(verdict(level)),
                    alerts: sev.map(alert).into_iter().collect(),
                    adversarial_failure_run: None,
                };
                let fires: Vec<bool> = (1..=4u8)
                    .map(|t| !firing_causes(p.rule(t).unwrap(), &signals).is_empty())
                    .collect();
                for t in 1..4 {
                    assert!(!fires[t - 1] || fires[t], "{level:?} {sev:?} {fires:?}");
                }
            }
        }
    }

    fn arb_event() -> impl Strategy<Value = TransitionEvent> {
        prop_oneof![
            Just(TransitionEvent::StartInvestigation { actor: None }),
            (0usize..3, prop_oneof![Just(String::new()), Just("bob".to_string())], any::<bool>()).prop_map(|(r, actor, with_ref)| {
                TransitionEvent::Resolve {
                    resolution: [Resolution::Rollback, Resolution::Retrain, Resolution::Accept][r],
                    actor,
                    rollback_ref: with_ref.then(|| "dep-1".to_string()),
                }
            }),
        ]
    }

    proptest! {
        #[test]
        fn random_event_sequences_stay_sound(events in proptest::collection::vec(arb_event(), 0..12)) {
            let mut inc = Incident {
                incident_id: "inc-x".into(),
                bundle_id: Digest::ZERO,
                cause: IncidentCause::AdversarialFailure { run_id: Digest::ZERO },
                cause_digest: Digest::ZERO,
                state: IncidentState::Open,
                resolution: None,
                resolved_by: None,
                rollback_ref: None,
                retrain_obligation: false,
                opened_at: Timestamp::from_millis(0),
                history: vec![],
            };
            for (i, e) in events.iter().enumerate() {
                let before = inc.history.len();
                if let Ok((next, _)) = apply_transition(&inc, e, Timestamp::from_millis(i as i64), |r| r == "dep-1") {
                    inc = next;
                }
                prop_assert!(inc.history.len() >= before);
                prop_assert_eq!(inc.state == IncidentState::Resolved, inc.resolution.is_some());
                if inc.state == IncidentState::Resolved {
                    prop_assert!(inc.resolved_by.as_deref().is_some_and(|a| !a.trim().is_empty()));
                }
                if inc.resolution == Some(Resolution::Rollback) {
                    prop_assert!(inc.rollback_ref.is_some());
                }
            }
        }
    }
}
