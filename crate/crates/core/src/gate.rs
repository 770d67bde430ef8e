//! Gated propagation of bundles across environments.
//!
//! A bundle advances one environment at a time through a promotion request.
//! Promotion succeeds only when every applicable gate check passes; the
//! resulting report is persisted with the promotion for later audit.
//! Rollbacks bypass gates but must cite an active incident.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bundle::Bundles;
use crate::canonical;
use crate::digest::Digest;
use crate::drift::DriftLevel;
use crate::error::{Error, Result};
use crate::escalation::Incident;
use crate::evidence::{RollupState, VerificationState};
use crate::store::ArtifactStore;
use crate::time::Timestamp;

pub const PROMOTIONS_STREAM: &str = "promotions";
pub const DEPLOYMENTS_STREAM: &str = "deployments";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    Dev,
    Staging,
    Prod,
}

impl Environment {
    pub const ALL: [Environment; 3] = [Environment::Dev, Environment::Staging, Environment::Prod];

    pub fn as_str(&self) -> &'static str {
        match self {
            Environment::Dev => "dev",
            Environment::Staging => "staging",
            Environment::Prod => "prod",
        }
    }

    pub fn next(&self) -> Option<Environment> {
        match self {
            Environment::Dev => Some(Environment::Staging),
            Environment::Staging => Some(Environment::Prod),
            Environment::Prod => None,
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Environment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Environment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown environment {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Open,
    ApprovedPending,
    Promoted,
    Rejected,
}

impl RequestState {
    pub fn is_pending(&self) -> bool {
        matches!(self, RequestState::Open | RequestState::ApprovedPending)
    }
}

impl fmt::Display for RequestState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RequestState::Open => "open",
            RequestState::ApprovedPending => "approved_pending",
            RequestState::Promoted => "promoted",
            RequestState::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalDecision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Approval {
    pub approver: String,
    pub decision: ApprovalDecision,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromotionRequest {
    pub request_id: String,
    pub bundle_id: Digest,
    pub target_env: Environment,
    pub state: RequestState,
    pub approvals: Vec<Approval>,
    pub created_at: Timestamp,
}

impl PromotionRequest {
    pub fn approve_count(&self) -> usize {
        self.approvals
            .iter()
            .filter(|a| a.decision == ApprovalDecision::Approve)
            .count()
    }

    pub fn reject_count(&self) -> usize {
        self.approvals.len() - self.approve_count()
    }
}

/// Required human approvals, indexed by capability tier minus one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalTable {
    pub staging: [u32; 4],
    pub prod: [u32; 4],
}

impl Default for ApprovalTable {
    fn default() -> Self {
        Self {
            staging: [0, 0, 1, 1],
            prod: [1, 1, 2, 2],
        }
    }
}

impl ApprovalTable {
    pub fn required(&self, tier: u8, env: Environment) -> Result<u32> {
        if !(1..=4).contains(&tier) {
            return Err(Error::TierOutOfRange(tier as i64));
        }
        let i = tier as usize - 1;
        Ok(match env {
            Environment::Dev => 0,
            Environment::Staging => self.staging[i],
            Environment::Prod => self.prod[i],
        })
    }
}

/// Inputs to gate evaluation gathered from the other modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateContext {
    pub stress_run_exists: bool,
    /// Verdict recorded for the latest stress run, if any was evaluated.
    pub latest_verdict: Option<DriftLevel>,
    pub evidence_rollup: RollupState,
    pub monitoring_ready: bool,
    /// Whether the latest stress run completed every adversarial prompt.
    /// `None` when no run has adversarial prompts.
    pub adversarial_stress_clean: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateChecks {
    pub evaluation_pass: bool,
    pub evidence_rollup: RollupState,
    pub evidence_pass: bool,
    pub monitoring_ready: bool,
    pub approvals_met: bool,
    /// `null` when the check does not apply.
    pub stress_pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateReport {
    pub request_id: String,
    pub bundle_id: Digest,
    pub target_env: Environment,
    pub tier: u8,
    pub required_approvals: u32,
    pub checks: GateChecks,
    pub all_pass: bool,
}

impl GateReport {
    pub fn failing_checks(&self) -> Vec<&'static str> {
        let c = &self.checks;
        let mut out = Vec::new();
        if !c.evaluation_pass {
            out.push("evaluation_pass");
        }
        if !c.evidence_pass {
            out.push("evidence_rollup");
        }
        if !c.monitoring_ready {
            out.push("monitoring_ready");
        }
        if !c.approvals_met {
            out.push("approvals_met");
        }
        if c.stress_pass == Some(false) {
            out.push("stress_pass");
        }
        out
    }
}

/// Staging accepts a vacuous Supported rollup; prod demands registered controls.
pub fn evidence_passes(rollup: RollupState, env: Environment) -> bool {
    rollup.state == VerificationState::Supported && (env != Environment::Prod || !rollup.vacuous)
}

pub fn evaluate_gates(
    request: &PromotionRequest,
    tier: u8,
    ctx: &GateContext,
    table: &ApprovalTable,
) -> Result<GateReport> {
    if !request.state.is_pending() {
        return Err(Error::InvalidState(request.state.to_string()));
    }
    let required = table.required(tier, request.target_env)?;
    let evaluation_pass = ctx.stress_run_exists && ctx.latest_verdict != Some(DriftLevel::Breach);
    let evidence_pass = evidence_passes(ctx.evidence_rollup, request.target_env);
    let approvals_met = request.reject_count() == 0 && request.approve_count() as u64 >= required as u64;
    let stress_pass = (tier == 4 && request.target_env == Environment::Prod)
        .then(|| ctx.adversarial_stress_clean == Some(true));
    let all_pass = evaluation_pass
        && evidence_pass
        && ctx.monitoring_ready
        && approvals_met
        && stress_pass != Some(false);
    Ok(GateReport {
        request_id: request.request_id.clone(),
        bundle_id: request.bundle_id,
        target_env: request.target_env,
        tier,
        required_approvals: required,
        checks: GateChecks {
            evaluation_pass,
            evidence_rollup: ctx.evidence_rollup,
            evidence_pass,
            monitoring_ready: ctx.monitoring_ready,
            approvals_met,
            stress_pass,
        },
        all_pass,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deployment {
    pub deployment_id: String,
    pub bundle_id: Digest,
    pub env: Environment,
    pub at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incident_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PromotionEvent {
    Requested {
        request: PromotionRequest,
    },
    Approval {
        request_id: String,
        approval: Approval,
    },
    Promoted {
        request_id: String,
        deployment_id: String,
        report: GateReport,
    },
}

/// One prod deployment that the replay audit could not justify.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditViolation {
    pub deployment_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub prod_deployments: usize,
    pub violations: Vec<AuditViolation>,
}

pub struct PropagationGate<'a> {
    store: &'a ArtifactStore,
}

impl<'a> PropagationGate<'a> {
    pub fn new(store: &'a ArtifactStore) -> Self {
        Self { store }
    }

    fn events(&self) -> Result<Vec<PromotionEvent>> {
        self.store
            .read_events_or_empty(PROMOTIONS_STREAM)?
            .iter()
            .map(|e| e.decode())
            .collect()
    }

    /// Promotion reports keyed by request id.
    pub fn reports(&self) -> Result<BTreeMap<String, GateReport>> {
        Ok(self
            .events()?
            .into_iter()
            .filter_map(|e| match e {
                PromotionEvent::Promoted { request_id, report, .. } => Some((request_id, report)),
                _ => None,
            })
            .collect())
    }

    /// All requests in creation order, with approvals and state folded in.
    pub fn requests(&self) -> Result<Vec<PromotionRequest>> {
        let mut requests: Vec<PromotionRequest> = Vec::new();
        for event in self.events()? {
            match event {
                PromotionEvent::Requested { request } => requests.push(request),
                PromotionEvent::Approval { request_id, approval } => {
                    if let Some(r) = requests.iter_mut().find(|r| r.request_id == request_id) {
                        r.state = match approval.decision {
                            ApprovalDecision::Approve => RequestState::ApprovedPending,
                            ApprovalDecision::Reject => RequestState::Rejected,
                        };
                        r.approvals.push(approval);
                    }
                }
                PromotionEvent::Promoted { request_id, .. } => {
                    if let Some(r) = requests.iter_mut().find(|r| r.request_id == request_id) {
                        r.state = RequestState::Promoted;
                    }
                }
            }
        }
        Ok(requests)
    }

    pub fn request(&self, request_id: &str) -> Result<PromotionRequest> {
        self.requests()?
            .into_iter()
            .find(|r| r.request_id == request_id)
            .ok_or_else(|| Error::NotFound(format!("promotion request {request_id}")))
    }

    pub fn deployments(&self) -> Result<Vec<Deployment>> {
        self.store
            .read_events_or_empty(DEPLOYMENTS_STREAM)?
            .iter()
            .map(|e| e.decode())
            .collect()
    }

    /// Highest environment the bundle ever reached; dev when never deployed.
    pub fn highest_env(&self, bundle_id: &Digest) -> Result<Environment> {
        Ok(self
            .deployments()?
            .iter()
            .filter(|d| d.bundle_id == *bundle_id)
            .map(|d| d.env)
            .max()
            .unwrap_or(Environment::Dev))
    }

    /// Bundle currently deployed to `env`, if any.
    pub fn current(&self, env: Environment) -> Result<Option<Deployment>> {
        Ok(self.deployments()?.into_iter().rev().find(|d| d.env == env))
    }

    fn check_step(&self, bundle_id: &Digest, target: Environment) -> Result<()> {
        let highest = self.highest_env(bundle_id)?;
        if highest.next() != Some(target) {
            return Err(Error::EnvSkip(format!(
                "bundle is at {highest}; {target} is not the next environment"
            )));
        }
        Ok(())
    }

    pub fn request_promotion(&self, bundle_id: &Digest, target_env: Environment) -> Result<PromotionRequest> {
        Bundles::new(self.store).require(bundle_id)?;
        self.check_step(bundle_id, target_env)?;
        let created_at = self.store.now();
        let seq = self.store.stream_len(PROMOTIONS_STREAM).unwrap_or(0);
        let key = canonical::digest(&(bundle_id, target_env, created_at, seq))?;
        let request = PromotionRequest {
            request_id: format!("pr-{}", key.short(12)),
            bundle_id: *bundle_id,
            target_env,
            state: RequestState::Open,
            approvals: Vec::new(),
            created_at,
        };
        self.store.append_json(
            PROMOTIONS_STREAM,
            &PromotionEvent::Requested {
                request: request.clone(),
            },
        )?;
        Ok(request)
    }

    pub fn record_approval(
        &self,
        request_id: &str,
        approver: &str,
        decision: ApprovalDecision,
    ) -> Result<PromotionRequest> {
        let approver = approver.trim();
        if approver.is_empty() {
            return Err(Error::MissingActor);
        }
        let mut request = self.request(request_id)?;
        if !request.state.is_pending() {
            return Err(Error::InvalidState(request.state.to_string()));
        }
        if request.approvals.iter().any(|a| a.approver == approver) {
            return Err(Error::DuplicateApprover(approver.to_string()));
        }
        let approval = Approval {
            approver: approver.to_string(),
            decision,
            at: self.store.now(),
        };
        self.store.append_json(
            PROMOTIONS_STREAM,
            &PromotionEvent::Approval {
                request_id: request_id.to_string(),
                approval: approval.clone(),
            },
        )?;
        request.state = match decision {
            ApprovalDecision::Approve => RequestState::ApprovedPending,
            ApprovalDecision::Reject => RequestState::Rejected,
        };
        request.approvals.push(approval);
        Ok(request)
    }

    fn new_deployment(
        &self,
        bundle_id: Digest,
        env: Environment,
        request_id: Option<String>,
        incident_id: Option<String>,
    ) -> Result<Deployment> {
        let at = self.store.now();
        let seq = self.store.stream_len(DEPLOYMENTS_STREAM).unwrap_or(0);
        let key = canonical::digest(&(bundle_id, env, at, &request_id, &incident_id, seq))?;
        Ok(Deployment {
            deployment_id: format!("dep-{}", key.short(12)),
            bundle_id,
            env,
            at,
            request_id,
            incident_id,
        })
    }

    /// Promote when `report` (computed for this request) passes every check.
    pub fn promote(&self, request: &PromotionRequest, report: &GateReport) -> Result<Deployment> {
        if !request.state.is_pending() {
            return Err(Error::InvalidState(request.state.to_string()));
        }
        if report.request_id != request.request_id || report.bundle_id != request.bundle_id {
            return Err(Error::InvalidInput("gate report does not belong to this request".into()));
        }
        if !report.all_pass {
            return Err(Error::GatesNotPassed(Box::new(report.clone())));
        }
        self.check_step(&request.bundle_id, request.target_env)?;
        let deployment = self.new_deployment(
            request.bundle_id,
            request.target_env,
            Some(request.request_id.clone()),
            None,
        )?;
        self.store.append_json(
            PROMOTIONS_STREAM,
            &PromotionEvent::Promoted {
                request_id: request.request_id.clone(),
                deployment_id: deployment.deployment_id.clone(),
                report: report.clone(),
            },
        )?;
        self.store.append_json(DEPLOYMENTS_STREAM, &deployment)?;
        Ok(deployment)
    }

    /// Re-point `env` at a bundle previously deployed there, under an incident.
    pub fn rollback(&self, env: Environment, to_bundle: &Digest, incident: &Incident) -> Result<Deployment> {
        if !incident.is_active() {
            return Err(Error::IncidentNotActive(incident.incident_id.clone()));
        }
        let deployed_before = self
            .deployments()?
            .iter()
            .any(|d| d.env == env && d.bundle_id == *to_bundle);
        if !deployed_before {
            return Err(Error::NeverDeployedThere {
                bundle: *to_bundle,
                env: env.to_string(),
            });
        }
        let deployment = self.new_deployment(*to_bundle, env, None, Some(incident.incident_id.clone()))?;
        self.store.append_json(DEPLOYMENTS_STREAM, &deployment)?;
        Ok(deployment)
    }

    /// Replay the deployments stream and justify every prod deployment.
    pub fn audit(&self, incidents: &[Incident]) -> Result<AuditReport> {
        let reports = self.reports()?;
        let mut prod_deployments = 0;
        let mut violations = Vec::new();
        for d in self.deployments()?.into_iter().filter(|d| d.env == Environment::Prod) {
            prod_deployments += 1;
            let justified = match (&d.request_id, &d.incident_id) {
                (Some(rid), None) => reports.get(rid).is_some_and(|r| {
                    r.all_pass && r.bundle_id == d.bundle_id && r.target_env == Environment::Prod
                }),
                (None, Some(iid)) => incidents.iter().any(|i| {
                    i.incident_id == *iid && i.opened_at <= d.at && i.resolved_at().is_none_or(|r| r >= d.at)
                }),
                _ => false,
            };
            if !justified {
                violations.push(AuditViolation {
                    deployment_id: d.deployment_id.clone(),
                    reason: "no all-pass gate report or incident reference".into(),
                });
            }
        }
        Ok(AuditReport {
            prod_deployments,
            violations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::VerificationState::*;
    use proptest::prelude::*;

    fn request(env: Environment, approvals: &[ApprovalDecision]) -> PromotionRequest {
        PromotionRequest {
            request_id: "pr-1".into(),
            bundle_id: Digest::ZERO,
            target_env: env,
            state: if approvals.is_empty() { RequestState::Open } else { RequestState::ApprovedPending },
            approvals: approvals
                .iter()
                .enumerate()
                .map(|(i, d)| Approval { approver: format!("a{i}"), decision: *d, at: Timestamp::from_millis(0) })
                .collect(),
            created_at: Timestamp::from_millis(0),
        }
    }

    fn good_ctx() -> GateContext {
        GateContext {
            stress_run_exists: true,
            latest_verdict: Some(DriftLevel::Ok),
            evidence_rollup: RollupState { state: Supported, vacuous: false },
            monitoring_ready: true,
            adversarial_stress_clean: Some(true),
        }
    }

    const APPROVE: ApprovalDecision = ApprovalDecision::Approve;

    #[test]
    fn tier2_staging_one_approval_passes() {
        let r = evaluate_gates(&request(Environment::Staging, &[APPROVE]), 2, &good_ctx(), &ApprovalTable::default()).unwrap();
        assert!(r.all_pass);
        assert_eq!(r.checks.stress_pass, None);
    }

    #[test]
    fn partial_evidence_blocks_prod() {
        let ctx = GateContext { evidence_rollup: RollupState { state: PartiallySupported, vacuous: false }, ..good_ctx() };
        let r = evaluate_gates(&request(Environment::Prod, &[APPROVE, APPROVE]), 2, &ctx, &ApprovalTable::default()).unwrap();
        assert!(!r.all_pass);
        assert_eq!(r.failing_checks(), vec!["evidence_rollup"]);
    }

    #[test]
    fn vacuous_rollup_blocks_prod_only() {
        let ctx = GateContext { evidence_rollup: RollupState::EMPTY, ..good_ctx() };
        let t = ApprovalTable::default();
        assert!(evaluate_gates(&request(Environment::Staging, &[]), 1, &ctx, &t).unwrap().all_pass);
        assert!(!evaluate_gates(&request(Environment::Prod, &[APPROVE]), 1, &ctx, &t).unwrap().all_pass);
    }

    #[test]
    fn tier4_prod_requires_clean_adversarial_run() {
        let t = ApprovalTable::default();
        let r = request(Environment::Prod, &[APPROVE, APPROVE]);
        assert!(evaluate_gates(&r, 4, &good_ctx(), &t).unwrap().all_pass);
        let ctx = GateContext { adversarial_stress_clean: None, ..good_ctx() };
        let rep = evaluate_gates(&r, 4, &ctx, &t).unwrap();
        assert_eq!((rep.all_pass, rep.checks.stress_pass), (false, Some(false)));
        assert!(evaluate_gates(&r, 3, &ctx, &t).unwrap().all_pass);
    }

    #[test]
    fn evaluation_check() {
        let t = ApprovalTable::default();
        let r = request(Environment::Staging, &[APPROVE]);
        let breach = GateContext { latest_verdict: Some(DriftLevel::Breach), ..good_ctx() };
        assert!(!evaluate_gates(&r, 1, &breach, &t).unwrap().checks.evaluation_pass);
        let unevaluated = GateContext { latest_verdict: None, ..good_ctx() };
        assert!(evaluate_gates(&r, 1, &unevaluated, &t).unwrap().checks.evaluation_pass);
        let no_run = GateContext { stress_run_exists: false, ..good_ctx() };
        assert!(!evaluate_gates(&r, 1, &no_run, &t).unwrap().checks.evaluation_pass);
    }

    #[test]
    fn finished_requests_cannot_be_evaluated() {
        let mut r = request(Environment::Staging, &[]);
        r.state = RequestState::Promoted;
        let err = evaluate_gates(&r, 1, &good_ctx(), &ApprovalTable::default()).unwrap_err();
        assert_eq!(err.code(), "invalid-state");
    }

    #[test]
    fn approval_table_is_enforced_exactly() {
        let t = ApprovalTable::default();
        let expected = [
            (Environment::Staging, [0, 0, 1, 1]),
            (Environment::Prod, [1, 1, 2, 2]),
        ];
        for (env, counts) in expected {
            for tier in 1..=4u8 {
                let need = counts[tier as usize - 1];
                assert_eq!(t.required(tier, env).unwrap(), need);
                for have in 0..=3usize {
                    let r = request(env, &vec![APPROVE; have]);
                    let rep = evaluate_gates(&r, tier, &good_ctx(), &t).unwrap();
                    assert_eq!(rep.checks.approvals_met, have >= need as usize, "{env} t{tier} {have}");
                }
            }
        }
        assert_eq!(t.required(5, Environment::Prod).unwrap_err().code(), "out-of-range");
    }

    proptest! {
        #[test]
        fn adding_approvals_never_unpasses(tier in 1u8..=4, prod in any::<bool>(), n in 0usize..4, extra in 1usize..3) {
            let env = if prod { Environment::Prod } else { Environment::Staging };
            let t = ApprovalTable::default();
            let before = evaluate_gates(&request(env, &vec![APPROVE; n]), tier, &good_ctx(), &t).unwrap();
            let after = evaluate_gates(&request(env, &vec![APPROVE; n + extra]), tier, &good_ctx(), &t).unwrap();
            prop_assert!(!before.all_pass || after.all_pass);
        }
    }

    #[test]
    fn environment_parsing() {
        assert_eq!("prod".parse::<Environment>().unwrap(), Environment::Prod);
        assert!("production".parse::<Environment>().is_err());
        assert!(Environment::Dev < Environment::Staging && Environment::Staging < Environment::Prod);
    }
}
