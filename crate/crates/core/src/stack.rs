//! The control-plane facade.
//!
//! [`Stack`] owns the store and configuration and wires the modules
//! together: telemetry ingestion feeds detection, routing and escalation;
//! drift evaluations are recorded and escalated; promotions gather their
//! gate context from the evidence, drift and telemetry modules.
//!
//! Mutating operations hold one write lock so that read-then-append
//! sequences (chain links, dedup checks, state machines) stay consistent
//! under concurrent callers. Reads take no lock.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Mutex, MutexGuard};

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::bundle::{diff_bundles, BundleDiff, BundleManifest, BundleSelector, Bundles, GovernanceBundle, IntegrityReport};
use crate::config::ServiceConfig;
use crate::decision_log::{
    ChainVerification, ChainedRecord, DecisionFilter, DecisionLog, GovernanceContext, NewDecision, DECISIONS_STREAM,
};
use crate::digest::Digest;
use crate::drift::{
    evaluate_drift, DriftMonitor, DriftReport, DriftVerdict, GoldenPromptSet, GoldenSetSpec,
    HashingEmbedder, StressRun, StubAdapter, DRIFT_EVALUATIONS_STREAM,
};
use crate::error::{Error, Result};
use crate::escalation::{
    DriftSignal, Escalation, EscalationSignals, Incident, Resolution, TransitionEvent,
};
use crate::evidence::{Control, EvidenceRecord, EvidenceRegistry, RollupState, VerificationRecord};
use crate::explanation::{explanation_delta, DeltaReport, ExplanationArtifact, DEFAULT_TOP_K};
use crate::gate::{
    evaluate_gates, ApprovalDecision, AuditReport, Deployment, Environment, GateContext, GateReport,
    PromotionRequest, PropagationGate,
};
use crate::store::ArtifactStore;
use crate::telemetry::{RoutedAlert, SignalKind, Telemetry, TelemetrySignal, TimeWindow, WindowStats};
use crate::time::{Clock, Timestamp};

/// Persisted outcome of one drift evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvaluation {
    pub bundle_id: Digest,
    pub report: DriftReport,
    pub verdict: DriftVerdict,
    pub evaluated_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incident_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftOutcome {
    pub evaluation: DriftEvaluation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incident: Option<Incident>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressRunOutcome {
    pub run: StressRun,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incident: Option<Incident>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub offset: u64,
    pub alerts: Vec<RoutedAlert>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incident: Option<Incident>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub offsets: BTreeMap<String, u64>,
    pub chain: ChainVerification,
}

/// A Retrain resolution and whether a successor bundle has since passed gates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrainObligation {
    pub incident_id: String,
    pub bundle_id: Digest,
    pub satisfied_by: Vec<Digest>,
}

/// Either side of an explanation-delta comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaOperand {
    Decision { decision_id: String },
    Artifact(ExplanationArtifact),
}

pub struct Stack {
    store: ArtifactStore,
    config: ServiceConfig,
    write: Mutex<()>,
}

impl Stack {
    pub fn open(config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        let store = ArtifactStore::open(&config.data_dir)?;
        Ok(Self::with_store(store, config))
    }

    pub fn open_with_clock(config: ServiceConfig, clock: Clock) -> Result<Self> {
        config.validate()?;
        let store = ArtifactStore::open_with_clock(&config.data_dir, clock)?;
        Ok(Self::with_store(store, config))
    }

    /// Wrap an already-open store. The configuration's `data_dir` is ignored.
    pub fn with_store(store: ArtifactStore, config: ServiceConfig) -> Self {
        Self {
            store,
            config,
            write: Mutex::new(()),
        }
    }

    pub fn store(&self) -> &ArtifactStore {
        &self.store
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn lock(&self) -> MutexGuard<'_, ()> {
        self.write.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn bundles(&self) -> Bundles<'_> {
        Bundles::new(&self.store)
    }

    fn evidence(&self) -> EvidenceRegistry<'_> {
        EvidenceRegistry::new(&self.store)
    }

    fn decisions(&self) -> DecisionLog<'_> {
        DecisionLog::new(&self.store)
    }

    fn drift(&self) -> DriftMonitor<'_> {
        DriftMonitor::new(&self.store)
    }

    fn telemetry(&self) -> Telemetry<'_> {
        Telemetry::new(&self.store)
    }

    fn gate(&self) -> PropagationGate<'_> {
        PropagationGate::new(&self.store)
    }

    fn escalation(&self) -> Escalation<'_> {
        Escalation::new(&self.store)
    }

    // blobs

    pub fn put_blob(&self, bytes: &[u8]) -> Result<Digest> {
        self.store.put_blob(bytes)
    }

    pub fn get_blob(&self, digest: &Digest) -> Result<Vec<u8>> {
        self.store.get_blob(digest)
    }

    // bundles

    pub fn create_bundle(&self, manifest: BundleManifest) -> Result<GovernanceBundle> {
        let _w = self.lock();
        self.bundles().create(manifest)
    }

    pub fn list_bundles(&self) -> Result<Vec<GovernanceBundle>> {
        self.bundles().list()
    }

    pub fn resolve_bundle(&self, selector: &BundleSelector) -> Result<GovernanceBundle> {
        self.bundles().resolve(selector)
    }

    pub fn bundle_integrity(&self, bundle_id: &Digest) -> Result<IntegrityReport> {
        self.bundles().verify_integrity(bundle_id)
    }

    pub fn diff_bundles(&self, a: &BundleSelector, b: &BundleSelector) -> Result<BundleDiff> {
        Ok(diff_bundles(&self.resolve_bundle(a)?, &self.resolve_bundle(b)?))
    }

    // evidence

    pub fn register_control(&self, control: Control) -> Result<String> {
        let _w = self.lock();
        self.evidence().register_control(control)
    }

    pub fn controls(&self) -> Result<Vec<Control>> {
        self.evidence().controls()
    }

    pub fn attach_evidence(
        &self,
        control_id: &str,
        hook_id: &str,
        artifact: Digest,
        observed_at: Option<Timestamp>,
    ) -> Result<EvidenceRecord> {
        let _w = self.lock();
        let observed_at = observed_at.unwrap_or_else(|| self.store.now());
        self.evidence().attach_evidence(control_id, hook_id, artifact, observed_at)
    }

    pub fn verify_control(&self, control_id: &str, bundle_id: &Digest, now: Option<Timestamp>) -> Result<VerificationRecord> {
        let _w = self.lock();
        let bundle = self.bundles().require(bundle_id)?;
        let now = now.unwrap_or_else(|| self.store.now());
        self.evidence().verify_control(control_id, now, &bundle)
    }

    pub fn rollup(&self, control_ids: &[String], bundle_id: &Digest, now: Option<Timestamp>) -> Result<RollupState> {
        let _w = self.lock();
        let bundle = self.bundles().require(bundle_id)?;
        let now = now.unwrap_or_else(|| self.store.now());
        self.evidence().rollup(control_ids, now, &bundle)
    }

    pub fn due_verifications(&self, now: Option<Timestamp>) -> Result<Vec<String>> {
        self.evidence().due_verifications(now.unwrap_or_else(|| self.store.now()))
    }

    pub fn verifications(&self) -> Result<Vec<VerificationRecord>> {
        self.evidence().verifications()
    }

    // decisions

    pub fn append_decision(&self, decision: NewDecision) -> Result<ChainedRecord> {
        let _w = self.lock();
        self.decisions().append(decision)
    }

    pub fn query_decisions(&self, filter: &DecisionFilter) -> Result<Vec<ChainedRecord>> {
        self.decisions().query(filter)
    }

    pub fn verify_chain(&self) -> Result<ChainVerification> {
        self.decisions().verify_chain()
    }

    fn operand(&self, op: &DeltaOperand) -> Result<ExplanationArtifact> {
        match op {
            DeltaOperand::Decision { decision_id } => Ok(self.decisions().find(decision_id)?.record.explanation),
            DeltaOperand::Artifact(a) => {
                a.validate()?;
                Ok(a.clone())
            }
        }
    }

    pub fn explanation_delta(&self, a: &DeltaOperand, b: &DeltaOperand, k: Option<usize>) -> Result<DeltaReport> {
        let (a, b) = (self.operand(a)?, self.operand(b)?);
        explanation_delta(&a, &b, k.unwrap_or(DEFAULT_TOP_K), |d| {
            let bytes = self.store.get_blob(d).map_err(|e| match e {
                Error::NotFound(_) => Error::DanglingDigest(*d),
                other => other,
            })?;
            Ok(String::from_utf8_lossy(&bytes).into_owned())
        })
    }

    /// Everything in effect when the decision was made. Any component that
    /// can no longer be resolved makes the context irreproducible.
    pub fn reproduce_context(&self, decision_id: &str) -> Result<GovernanceContext> {
        let decision = self.decisions().find(decision_id)?;
        let record = &decision.record;
        let mut missing = Vec::new();
        let bundle = self.bundles().get(&record.bundle_id)?;
        match &bundle {
            None => missing.push("bundle".to_string()),
            Some(b) => {
                for a in &b.artifacts {
                    if self.store.get_blob(&a.digest).is_err() {
                        missing.push(format!("artifact:{}/{}", a.kind, a.name));
                    }
                }
            }
        }
        if self.store.get_blob(&record.model_version).is_err() {
            missing.push("model_version".to_string());
        }
        let input = self.store.get_blob(&record.input_context);
        if input.is_err() {
            missing.push("input_context".to_string());
        }
        let reasoning_trace = match &record.explanation {
            ExplanationArtifact::ReasoningTrace { trace } => match self.store.get_blob(trace) {
                Ok(bytes) => Some(String::from_utf8_lossy(&bytes).into_owned()),
                Err(_) => {
                    missing.push("reasoning_trace".to_string());
                    None
                }
            },
            ExplanationArtifact::FeatureAttribution { .. } => None,
        };
        let (Some(bundle), Ok(input), true) = (bundle, input, missing.is_empty()) else {
            return Err(Error::Irreproducible { missing });
        };
        let verifications = self
            .evidence()
            .latest_verifications(&record.bundle_id, Some(record.decided_at))?
            .into_values()
            .collect();
        let open_incidents = self
            .escalation()
            .incidents()?
            .into_iter()
            .filter(|i| i.bundle_id == record.bundle_id && i.open_at(record.decided_at))
            .collect();
        Ok(GovernanceContext {
            model_version: record.model_version,
            input: base64::engine::general_purpose::STANDARD.encode(input),
            explanation: record.explanation.clone(),
            reasoning_trace,
            bundle,
            verifications,
            open_incidents,
            decision,
        })
    }

    // drift

    pub fn create_golden_set(&self, spec: GoldenSetSpec) -> Result<GoldenPromptSet> {
        let _w = self.lock();
        self.drift().create_golden_set(spec)
    }

    /// Run a stress suite. At tiers whose policy escalates adversarial
    /// failures, a run with failed adversarial prompts opens an incident.
    pub fn run_stress_suite(
        &self,
        bundle_id: &Digest,
        set_id: &Digest,
        seed: u64,
        adapter: &StubAdapter,
    ) -> Result<StressRunOutcome> {
        let _w = self.lock();
        let bundle = self.bundles().require(bundle_id)?;
        let set = self.drift().golden_set(set_id)?;
        let run = self.drift().run_stress_suite(&bundle, &set, adapter, seed)?;
        let incident = if run.adversarial_failures() > 0 {
            let signals = EscalationSignals {
                adversarial_failure_run: Some(run.run_id),
                ..Default::default()
            };
            self.escalation()
                .evaluate_escalation(bundle_id, bundle.capability_tier, &signals, &self.config.escalation_policy)?
        } else {
            None
        };
        Ok(StressRunOutcome { run, incident })
    }

    pub fn stress_run(&self, run_id: &Digest) -> Result<StressRun> {
        self.drift().run(run_id)
    }

    /// Score two runs without recording anything.
    pub fn drift_score(&self, baseline_run: &Digest, current_run: &Digest) -> Result<(DriftReport, DriftVerdict)> {
        let drift = self.drift();
        let report = drift.drift_report(&drift.run(baseline_run)?, &drift.run(current_run)?, &HashingEmbedder::default())?;
        Ok((report, evaluate_drift(&report, &self.config.drift_thresholds)))
    }

    /// Score, record and escalate against the current run's bundle.
    pub fn evaluate_drift(&self, baseline_run: &Digest, current_run: &Digest) -> Result<DriftOutcome> {
        let _w = self.lock();
        let (report, verdict) = self.drift_score(baseline_run, current_run)?;
        let bundle_id = self.drift().run(current_run)?.bundle_id;
        let bundle = self.bundles().require(&bundle_id)?;
        let signals = EscalationSignals {
            drift: Some(DriftSignal {
                baseline_run: *baseline_run,
                current_run: *current_run,
                verdict,
            }),
            ..Default::default()
        };
        let incident = self.escalation().evaluate_escalation(
            &bundle_id,
            bundle.capability_tier,
            &signals,
            &self.config.escalation_policy,
        )?;
        let evaluation = DriftEvaluation {
            bundle_id,
            report,
            verdict,
            evaluated_at: self.store.now(),
            incident_id: incident.as_ref().map(|i| i.incident_id.clone()),
        };
        self.store.append_json(DRIFT_EVALUATIONS_STREAM, &evaluation)?;
        Ok(DriftOutcome { evaluation, incident })
    }

    pub fn drift_evaluations(&self) -> Result<Vec<DriftEvaluation>> {
        self.store
            .read_events_or_empty(DRIFT_EVALUATIONS_STREAM)?
            .iter()
            .map(|e| e.decode())
            .collect()
    }

    // telemetry

    /// Store a signal, then detect, escalate and route any alerts it raises
    /// for its bundle. Alerts that cannot be routed fail the call after the
    /// signal and any incident are recorded; they are retried on the next
    /// ingest of that kind.
    pub fn ingest(&self, signal: &TelemetrySignal) -> Result<IngestOutcome> {
        let _w = self.lock();
        signal.validate()?;
        let bundle = self.bundles().require(&signal.bundle_id)?;
        let telemetry = self.telemetry();
        let offset = telemetry.ingest(signal)?;
        let routed: BTreeSet<String> = telemetry.alerts()?.into_iter().map(|r| r.alert.alert_id).collect();
        let fresh: Vec<_> = telemetry
            .detect_anomalies(signal.kind, &self.config.detector_config)?
            .into_iter()
            .filter(|a| a.bundle_id == signal.bundle_id && !routed.contains(&a.alert_id))
            .collect();
        let incident = if fresh.is_empty() {
            None
        } else {
            let signals = EscalationSignals {
                alerts: fresh.clone(),
                ..Default::default()
            };
            self.escalation().evaluate_escalation(
                &signal.bundle_id,
                bundle.capability_tier,
                &signals,
                &self.config.escalation_policy,
            )?
        };
        let mut alerts = Vec::with_capacity(fresh.len());
        for alert in &fresh {
            alerts.push(telemetry.route_alert(alert, &self.config.owner_routes)?);
        }
        Ok(IngestOutcome { offset, alerts, incident })
    }

    pub fn aggregate(&self, kind: SignalKind, window: TimeWindow) -> Result<WindowStats> {
        self.telemetry().aggregate(kind, window)
    }

    pub fn alerts(&self) -> Result<Vec<RoutedAlert>> {
        self.telemetry().alerts()
    }

    // promotion

    pub fn request_promotion(&self, bundle_id: &Digest, target_env: Environment) -> Result<PromotionRequest> {
        let _w = self.lock();
        self.gate().request_promotion(bundle_id, target_env)
    }

    pub fn promotions(&self) -> Result<Vec<PromotionRequest>> {
        self.gate().requests()
    }

    pub fn promotion(&self, request_id: &str) -> Result<PromotionRequest> {
        self.gate().request(request_id)
    }

    pub fn record_approval(&self, request_id: &str, approver: &str, decision: ApprovalDecision) -> Result<PromotionRequest> {
        let _w = self.lock();
        self.gate().record_approval(request_id, approver, decision)
    }

    /// Gate inputs for a bundle as of now.
    pub fn gate_context(&self, bundle_id: &Digest) -> Result<GateContext> {
        let drift = self.drift();
        let runs: Vec<_> = drift.run_events()?.into_iter().filter(|e| e.bundle_id == *bundle_id).collect();
        let latest = runs.last();
        let latest_verdict = match latest {
            Some(run) => self
                .drift_evaluations()?
                .into_iter()
                .rev()
                .find(|e| e.report.current_run == run.run_id)
                .map(|e| e.verdict.overall),
            None => None,
        };
        let adversarial_stress_clean = runs
            .iter()
            .rev()
            .find(|r| r.adversarial_prompts > 0)
            .map(|r| r.adversarial_failures == 0);
        Ok(GateContext {
            stress_run_exists: latest.is_some(),
            latest_verdict,
            evidence_rollup: self.evidence().recorded_rollup(bundle_id)?,
            monitoring_ready: self.config.owner_routes.covers_all(),
            adversarial_stress_clean,
        })
    }

    pub fn gate_report(&self, request_id: &str) -> Result<GateReport> {
        let request = self.gate().request(request_id)?;
        self.report_for(&request)
    }

    fn report_for(&self, request: &PromotionRequest) -> Result<GateReport> {
        let bundle = self.bundles().require(&request.bundle_id)?;
        let ctx = self.gate_context(&request.bundle_id)?;
        evaluate_gates(request, bundle.capability_tier, &ctx, &self.config.approval_table)
    }

    pub fn promote(&self, request_id: &str) -> Result<Deployment> {
        let _w = self.lock();
        let request = self.gate().request(request_id)?;
        let report = self.report_for(&request)?;
        self.gate().promote(&request, &report)
    }

    pub fn rollback(&self, env: Environment, to_bundle: &Digest, incident_id: &str) -> Result<Deployment> {
        let _w = self.lock();
        let incident = self.escalation().incident(incident_id)?;
        self.gate().rollback(env, to_bundle, &incident)
    }

    pub fn deployments(&self) -> Result<Vec<Deployment>> {
        self.gate().deployments()
    }

    /// Replay the deployment history and justify each prod deployment.
    pub fn audit_deployments(&self) -> Result<AuditReport> {
        let incidents = self.escalation().incidents()?;
        self.gate().audit(&incidents)
    }

    // incidents

    pub fn incidents(&self) -> Result<Vec<Incident>> {
        self.escalation().incidents()
    }

    pub fn incident(&self, incident_id: &str) -> Result<Incident> {
        self.escalation().incident(incident_id)
    }

    /// A Rollback resolution without an explicit reference uses the latest
    /// rollback deployment recorded under the incident.
    pub fn transition_incident(&self, incident_id: &str, event: TransitionEvent) -> Result<Incident> {
        let _w = self.lock();
        let tagged: Vec<String> = self
            .gate()
            .deployments()?
            .into_iter()
            .filter(|d| d.incident_id.as_deref() == Some(incident_id))
            .map(|d| d.deployment_id)
            .collect();
        let event = match event {
            TransitionEvent::Resolve {
                resolution: Resolution::Rollback,
                actor,
                rollback_ref: None,
            } => TransitionEvent::Resolve {
                resolution: Resolution::Rollback,
                actor,
                rollback_ref: tagged.last().cloned(),
            },
            other => other,
        };
        self.escalation()
            .transition(incident_id, &event, |r| tagged.iter().any(|t| t == r))
    }

    pub fn retrain_obligations(&self) -> Result<Vec<RetrainObligation>> {
        let bundles = self.bundles().list()?;
        let passed: BTreeSet<Digest> = self
            .gate()
            .reports()?
            .into_values()
            .filter(|r| r.all_pass)
            .map(|r| r.bundle_id)
            .collect();
        Ok(self
            .incidents()?
            .into_iter()
            .filter(|i| i.retrain_obligation)
            .map(|i| RetrainObligation {
                satisfied_by: bundles
                    .iter()
                    .filter(|b| b.parent == Some(i.bundle_id) && passed.contains(&b.bundle_id))
                    .map(|b| b.bundle_id)
                    .collect(),
                incident_id: i.incident_id,
                bundle_id: i.bundle_id,
            })
            .collect())
    }

    // service

    pub fn health(&self) -> Result<Health> {
        let mut offsets = BTreeMap::new();
        for stream in self.store.list_streams()? {
            let len = self.store.stream_len(&stream)?;
            offsets.insert(stream, len);
        }
        offsets.entry(DECISIONS_STREAM.to_string()).or_insert(0);
        let chain = self.verify_chain()?;
        Ok(Health {
            status: if chain.ok { "ok" } else { "degraded" }.to_string(),
            offsets,
            chain,
        })
    }
}

