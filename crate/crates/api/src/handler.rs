//! Transport-independent request dispatch.
//!
//! [`Api::handle`] maps one method/path/query/body tuple onto a [`Stack`]
//! operation and renders the result as canonical JSON. The HTTP server and
//! the CLI's local mode both go through it, so neither holds any logic of
//! its own.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use stackd_core::bundle::{BundleManifest, BundleSelector};
use stackd_core::decision_log::{DecisionFilter, NewDecision};
use stackd_core::drift::{GoldenSetSpec, StubAdapter};
use stackd_core::escalation::{required_intensity, TransitionEvent};
use stackd_core::evidence::Control;
use stackd_core::gate::{ApprovalDecision, Environment};
use stackd_core::stack::{DeltaOperand, Stack};
use stackd_core::telemetry::{SignalKind, TelemetrySignal, TimeWindow};
use stackd_core::{canonical, Digest, Error, Timestamp};

/// Header carrying the acting operator's name when a body omits it.
pub const ACTOR_HEADER: &str = "x-stackd-actor";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ApiRequest {
    pub method: String,
    pub path: String,
    pub query: Option<String>,
    pub actor: Option<String>,
    pub body: Vec<u8>,
}

impl ApiRequest {
    pub fn get(path: &str) -> Self {
        let (path, query) = match path.split_once('?') {
            Some((p, q)) => (p, Some(q.to_string())),
            None => (path, None),
        };
        Self {
            method: "GET".into(),
            path: path.into(),
            query,
            ..Self::default()
        }
    }

    pub fn post(path: &str, body: impl Into<Vec<u8>>) -> Self {
        Self {
            method: "POST".into(),
            body: body.into(),
            ..Self::get(path)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl ApiResponse {
    fn json<T: Serialize>(status: u16, value: &T) -> Self {
        match canonical::to_vec(value) {
            Ok(body) => Self {
                status,
                content_type: "application/json",
                body,
            },
            Err(e) => Self::error(&e),
        }
    }

    fn bytes(body: Vec<u8>) -> Self {
        Self {
            status: 200,
            content_type: "application/octet-stream",
            body,
        }
    }

    pub fn error(err: &Error) -> Self {
        let mut body = json!({ "code": err.code(), "message": err.to_string() });
        if let Some(details) = err.details() {
            body["details"] = details;
        }
        Self {
            status: status_for(err),
            content_type: "application/json",
            body: canonical::to_vec(&body).unwrap_or_default(),
        }
    }

    fn route_not_found(method: &str, path: &str) -> Self {
        Self::json(
            404,
            &json!({ "code": "no-such-route", "message": format!("no route for {method} {path}") }),
        )
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

pub fn status_for(err: &Error) -> u16 {
    match err.code() {
        "not-found" | "unknown-bundle" | "unknown-control" | "unknown-hook" | "unknown-decision"
        | "unknown-incident" | "unknown-stream" => 404,
        "invalid-input" | "serialization" => 400,
        "duplicate-id" | "duplicate-approver" | "invalid-state" | "illegal-transition" | "env-skip"
        | "gates-not-passed" | "incident-not-active" | "never-deployed-there" | "ambiguous-selector"
        | "irreproducible" => 409,
        "storage-io" | "integrity-violation" | "corrupt-event" | "invalid-config" => 500,
        _ => 422,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvidenceBody {
    hook_id: String,
    artifact: Digest,
    #[serde(default)]
    observed_at: Option<Timestamp>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyBody {
    bundle_id: Digest,
    #[serde(default)]
    now: Option<Timestamp>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RollupBody {
    control_ids: Vec<String>,
    bundle_id: Digest,
    #[serde(default)]
    now: Option<Timestamp>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DeltaBody {
    a: DeltaOperand,
    b: DeltaOperand,
    #[serde(default)]
    k: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StressRunBody {
    bundle_id: Digest,
    set_id: Digest,
    seed: u64,
    #[serde(default)]
    adapter: StubAdapter,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunPair {
    baseline_run: Digest,
    current_run: Digest,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PromotionBody {
    bundle_id: Digest,
    target_env: Environment,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ApprovalBody {
    #[serde(default)]
    approver: Option<String>,
    decision: ApprovalDecision,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RollbackBody {
    env: Environment,
    to_bundle_id: Digest,
    incident_id: String,
}

#[derive(Clone)]
pub struct Api {
    stack: Arc<Stack>,
}

type Outcome = Result<ApiResponse, Error>;

fn ok<T: Serialize>(value: T) -> Outcome {
    Ok(ApiResponse::json(200, &value))
}

fn created<T: Serialize>(value: T) -> Outcome {
    Ok(ApiResponse::json(201, &value))
}

fn body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, Error> {
    serde_json::from_slice(bytes).map_err(|e| Error::InvalidInput(format!("request body: {e}")))
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> Result<T, Error>
where
    T::Err: std::fmt::Display,
{
    s.parse()
        .map_err(|e| Error::InvalidInput(format!("{what} {s:?}: {e}")))
}

struct Query(BTreeMap<String, String>);

impl Query {
    fn new(raw: Option<&str>) -> Self {
        Query(
            form_urlencoded::parse(raw.unwrap_or("").as_bytes())
                .into_owned()
                .collect(),
        )
    }

    fn opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, Error>
    where
        T::Err: std::fmt::Display,
    {
        self.0.get(key).map(|v| parse(key, v)).transpose()
    }

    fn req<T: std::str::FromStr>(&self, key: &str) -> Result<T, Error>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key)?
            .ok_or_else(|| Error::InvalidInput(format!("missing query parameter {key:?}")))
    }
}

impl Api {
    pub fn new(stack: Arc<Stack>) -> Self {
        Self { stack }
    }

    pub fn stack(&self) -> &Stack {
        &self.stack
    }

    pub fn handle(&self, req: &ApiRequest) -> ApiResponse {
        match self.dispatch(req) {
            Ok(Some(resp)) => resp,
            Ok(None) => ApiResponse::route_not_found(&req.method, &req.path),
            Err(e) => ApiResponse::error(&e),
        }
    }

    fn dispatch(&self, req: &ApiRequest) -> Result<Option<ApiResponse>, Error> {
        let s = &*self.stack;
        let q = Query::new(req.query.as_deref());
        let segments: Vec<&str> = req.path.trim_matches('/').split('/').collect();
        let b = req.body.as_slice();
        let resp = match (req.method.as_str(), segments.as_slice()) {
            ("GET", ["healthz"]) => ok(s.health()?),

            ("POST", ["blobs"]) => created(json!({ "digest": s.put_blob(b)? })),
            ("GET", ["blobs", d]) => Ok(ApiResponse::bytes(s.get_blob(&parse("digest", d)?)?)),

            ("POST", ["bundles"]) => created(s.create_bundle(body::<BundleManifest>(b)?)?),
            ("GET", ["bundles"]) => ok(s.list_bundles()?),
            ("GET", ["bundles", "diff"]) => {
                let a: BundleSelector = q.req("a")?;
                let bb: BundleSelector = q.req("b")?;
                ok(s.diff_bundles(&a, &bb)?)
            }
            ("GET", ["bundles", sel]) => ok(s.resolve_bundle(&parse::<BundleSelector>("selector", sel)?)?),
            ("GET", ["bundles", id, "integrity"]) => ok(s.bundle_integrity(&parse("bundle id", id)?)?),

            ("POST", ["controls"]) => created(json!({ "control_id": s.register_control(body::<Control>(b)?)? })),
            ("GET", ["controls"]) => ok(s.controls()?),
            ("GET", ["controls", "due"]) => ok(s.due_verifications(q.opt("now")?)?),
            ("POST", ["controls", "rollup"]) => {
                let r: RollupBody = body(b)?;
                ok(s.rollup(&r.control_ids, &r.bundle_id, r.now)?)
            }
            ("POST", ["controls", id, "evidence"]) => {
                let e: EvidenceBody = body(b)?;
                created(s.attach_evidence(id, &e.hook_id, e.artifact, e.observed_at)?)
            }
            ("POST", ["controls", id, "verify"]) => {
                let v: VerifyBody = body(b)?;
                ok(s.verify_control(id, &v.bundle_id, v.now)?)
            }
            ("GET", ["verifications"]) => ok(s.verifications()?),

            ("POST", ["decisions"]) => created(s.append_decision(body::<NewDecision>(b)?)?),
            ("GET", ["decisions"]) => ok(s.query_decisions(&DecisionFilter {
                bundle_id: q.opt("bundle_id")?,
                model_version: q.opt("model_version")?,
                from: q.opt("from")?,
                to: q.opt("to")?,
            })?),
            ("GET", ["decisions", "chain"]) => ok(s.verify_chain()?),
            ("GET", ["decisions", id, "context"]) => ok(s.reproduce_context(id)?),
            ("POST", ["explanations", "delta"]) => {
                let d: DeltaBody = body(b)?;
                ok(s.explanation_delta(&d.a, &d.b, d.k)?)
            }

            ("POST", ["golden-sets"]) => created(s.create_golden_set(body::<GoldenSetSpec>(b)?)?),
            ("POST", ["stress-runs"]) => {
                let r: StressRunBody = body(b)?;
                created(s.run_stress_suite(&r.bundle_id, &r.set_id, r.seed, &r.adapter)?)
            }
            ("GET", ["stress-runs", id]) => ok(s.stress_run(&parse("run id", id)?)?),
            ("POST", ["drift", "score"]) => {
                let p: RunPair = body(b)?;
                let (report, verdict) = s.drift_score(&p.baseline_run, &p.current_run)?;
                ok(json!({ "report": report, "verdict": verdict }))
            }
            ("POST", ["drift", "evaluate"]) => {
                let p: RunPair = body(b)?;
                created(s.evaluate_drift(&p.baseline_run, &p.current_run)?)
            }
            ("GET", ["drift", "evaluations"]) => ok(s.drift_evaluations()?),

            ("POST", ["telemetry"]) => created(s.ingest(&body::<TelemetrySignal>(b)?)?),
            ("GET", ["telemetry", kind, "aggregate"]) => {
                let kind: SignalKind = parse("signal kind", kind)?;
                let window = TimeWindow {
                    start: q.req("start")?,
                    end: q.req("end")?,
                };
                ok(s.aggregate(kind, window)?)
            }
            ("GET", ["alerts"]) => ok(s.alerts()?),

            ("POST", ["promotions"]) => {
                let p: PromotionBody = body(b)?;
                created(s.request_promotion(&p.bundle_id, p.target_env)?)
            }
            ("GET", ["promotions"]) => ok(s.promotions()?),
            ("GET", ["promotions", id]) => ok(s.promotion(id)?),
            ("GET", ["promotions", id, "gates"]) => ok(s.gate_report(id)?),
            ("POST", ["promotions", id, "approvals"]) => {
                let a: ApprovalBody = body(b)?;
                let approver = a.approver.or_else(|| req.actor.clone()).unwrap_or_default();
                created(s.record_approval(id, &approver, a.decision)?)
            }
            ("POST", ["promotions", id, "promote"]) => created(s.promote(id)?),
            ("POST", ["rollbacks"]) => {
                let r: RollbackBody = body(b)?;
                created(s.rollback(r.env, &r.to_bundle_id, &r.incident_id)?)
            }
            ("GET", ["deployments"]) => ok(s.deployments()?),
            ("GET", ["deployments", "audit"]) => ok(s.audit_deployments()?),

            ("GET", ["incidents"]) => ok(s.incidents()?),
            ("GET", ["incidents", id]) => ok(s.incident(id)?),
            ("POST", ["incidents", id, "transition"]) => {
                let event = with_actor(body::<TransitionEvent>(b)?, req.actor.as_deref());
                ok(s.transition_incident(id, event)?)
            }
            ("GET", ["retrain-obligations"]) => ok(s.retrain_obligations()?),
            ("GET", ["intensity", tier]) => ok(required_intensity(parse("tier", tier)?)?),

            _ => return Ok(None),
        };
        resp.map(Some)
    }
}

/// Fill a missing actor from the trusted header.
fn with_actor(event: TransitionEvent, header: Option<&str>) -> TransitionEvent {
    let Some(header) = header else {
        return event;
    };
    match event {
        TransitionEvent::StartInvestigation { actor: None } => TransitionEvent::StartInvestigation {
            actor: Some(header.to_string()),
        },
        TransitionEvent::Resolve {
            resolution,
            actor,
            rollback_ref,
        } if actor.trim().is_empty() => TransitionEvent::Resolve {
            resolution,
            actor: header.to_string(),
            rollback_ref,
        },
        other => other,
    }
}
