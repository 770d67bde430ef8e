//! Operator command-line client for stackd.
//!
//! Every command maps onto one API route. Requests go either to a running
//! service (`--server`) or to an embedded stack over a local data directory
//! (`--local`), through the same request handler.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use stackd_api::{Api, ApiRequest, ApiResponse};
use stackd_core::canonical;
use stackd_core::config::ServiceConfig;
use stackd_core::stack::Stack;

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:7317";

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "stackd", version, about = "AI governance control plane")]
pub struct Cli {
    /// Base URL of a running stackd service.
    #[arg(long, global = true, env = "STACKD_SERVER", default_value = DEFAULT_SERVER)]
    pub server: String,

    /// Operate directly on a data directory instead of a service.
    #[arg(long, global = true, value_name = "DIR")]
    pub local: Option<PathBuf>,

    /// Emit one canonical JSON document on stdout.
    #[arg(long, global = true)]
    pub json: bool,

    /// Service configuration file (canonical JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Acting operator, sent as the actor header.
    #[arg(long, global = true, env = "STACKD_ACTOR")]
    pub actor: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Content-addressed blobs.
    #[command(subcommand)]
    Blob(BlobCmd),
    /// Governance bundles.
    #[command(subcommand)]
    Bundle(BundleCmd),
    /// Controls and evidence.
    #[command(subcommand)]
    Control(ControlCmd),
    /// Decision log.
    #[command(subcommand)]
    Decision(DecisionCmd),
    /// Golden sets, stress runs and drift.
    #[command(subcommand)]
    Drift(DriftCmd),
    /// Runtime telemetry.
    #[command(subcommand)]
    Telemetry(TelemetryCmd),
    /// Promotion requests, approvals and rollbacks.
    #[command(subcommand)]
    Gate(GateCmd),
    /// Promote an approved request (same as `gate promote`).
    Promote(PromoteArgs),
    /// Incidents.
    #[command(subcommand)]
    Incident(IncidentCmd),
    /// Service health.
    Health,
    /// Run the HTTP service.
    Serve,
}

#[derive(Debug, Subcommand)]
pub enum BlobCmd {
    /// Store a file and print its digest.
    Put { file: PathBuf },
    /// Write a blob to stdout or a file.
    Get {
        digest: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum BundleCmd {
    /// Create a bundle from a manifest file.
    Create {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// List all bundles.
    List,
    /// Artifact-level difference between two bundles.
    Diff { a: String, b: String },
    /// Recheck every artifact digest of a bundle.
    Verify { bundle: String },
    /// Resolve an id, version or name@version.
    Resolve { selector: String },
}

#[derive(Debug, Subcommand)]
pub enum ControlCmd {
    /// Register a control from a definition file.
    Register {
        #[arg(long)]
        file: PathBuf,
    },
    /// List registered controls.
    List,
    /// Attach an evidence artifact to a hook.
    Evidence {
        control: String,
        #[arg(long)]
        hook: String,
        /// Digest of an already stored artifact.
        #[arg(long, conflicts_with = "file", required_unless_present = "file")]
        artifact: Option<String>,
        /// Store this file and attach it.
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long)]
        observed_at: Option<String>,
    },
    /// Verify a control for a bundle.
    Verify {
        control: String,
        #[arg(long)]
        bundle: String,
        #[arg(long)]
        now: Option<String>,
    },
    /// Controls whose verification is due.
    Due {
        #[arg(long)]
        now: Option<String>,
    },
    /// Roll up verification states of several controls.
    Rollup {
        #[arg(long)]
        bundle: String,
        #[arg(long = "control", required = true)]
        controls: Vec<String>,
        #[arg(long)]
        now: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DecisionCmd {
    /// Append a decision record read from a file.
    Append {
        #[arg(long)]
        file: PathBuf,
    },
    /// Query decisions.
    List {
        #[arg(long)]
        bundle: Option<String>,
        #[arg(long)]
        model_version: Option<String>,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
    /// Reconstruct the full context of a decision.
    Context { decision: String },
    /// Compare two decisions' explanations.
    Delta {
        a: String,
        b: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Verify the hash chain.
    Chain,
}

#[derive(Debug, Subcommand)]
pub enum DriftCmd {
    /// Create a golden set from a file.
    GoldenSet {
        #[arg(long)]
        file: PathBuf,
    },
    /// Execute a stress run.
    Run {
        #[arg(long)]
        bundle: String,
        #[arg(long)]
        set: String,
        #[arg(long)]
        seed: u64,
        /// Stub adapter definition; the default stub when absent.
        #[arg(long)]
        adapter: Option<PathBuf>,
    },
    /// Score two runs without recording anything.
    Score { baseline: String, current: String },
    /// Score two runs, record the verdict and escalate.
    Evaluate { baseline: String, current: String },
    /// Recorded drift evaluations.
    Evaluations,
}

#[derive(Debug, Subcommand)]
pub enum TelemetryCmd {
    /// Ingest one signal.
    Ingest {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        value: f64,
        #[arg(long)]
        bundle: String,
        #[arg(long)]
        at: Option<String>,
    },
    /// Aggregate a signal kind over a window.
    Aggregate {
        kind: String,
        #[arg(long)]
        start: String,
        #[arg(long)]
        end: String,
    },
    /// Recorded anomaly alerts.
    Alerts,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Vote {
    Approve,
    Reject,
}

#[derive(Debug, Args)]
pub struct PromoteArgs {
    #[arg(long)]
    pub request: String,
}

#[derive(Debug, Subcommand)]
pub enum GateCmd {
    /// Open a promotion request.
    Request {
        #[arg(long)]
        bundle: String,
        #[arg(long)]
        env: String,
    },
    /// Record an approval or rejection.
    Approve {
        #[arg(long)]
        request: String,
        /// Defaults to --actor.
        #[arg(long)]
        approver: Option<String>,
        #[arg(long, value_enum, default_value = "approve")]
        decision: Vote,
    },
    /// Evaluate gates without promoting.
    Report {
        #[arg(long)]
        request: String,
    },
    /// Promote a request whose gates all pass.
    Promote(PromoteArgs),
    /// Roll an environment back under an active incident.
    Rollback {
        #[arg(long)]
        env: String,
        #[arg(long)]
        to_bundle: String,
        #[arg(long)]
        incident: String,
    },
    /// List promotion requests.
    List,
    /// List deployments.
    Deployments,
    /// Audit every prod deployment.
    Audit,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TransitionKind {
    StartInvestigation,
    Resolve,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ResolutionKind {
    Rollback,
    Retrain,
    Accept,
}

#[derive(Debug, Subcommand)]
pub enum IncidentCmd {
    /// List incidents.
    List,
    /// Show one incident.
    Show { incident: String },
    /// Move an incident through its lifecycle.
    Transition {
        incident: String,
        #[arg(long, value_enum)]
        event: TransitionKind,
        #[arg(long, value_enum, required_if_eq("event", "resolve"))]
        resolution: Option<ResolutionKind>,
        #[arg(long)]
        rollback_ref: Option<String>,
    },
    /// Retrain obligations and their successors.
    Obligations,
}

/// Where requests are sent.
enum Transport {
    Local(Api),
    Remote { base: String, client: reqwest::blocking::Client },
}

impl Transport {
    fn send(&self, mut req: ApiRequest, actor: Option<&str>) -> Result<ApiResponse, Failure> {
        req.actor = actor.map(str::to_string);
        match self {
            Transport::Local(api) => Ok(api.handle(&req)),
            Transport::Remote { base, client } => {
                let mut url = format!("{}{}", base.trim_end_matches('/'), req.path);
                if let Some(q) = &req.query {
                    url.push('?');
                    url.push_str(q);
                }
                let mut builder = match req.method.as_str() {
                    "GET" => client.get(&url),
                    _ => client.post(&url).body(req.body),
                };
                if let Some(a) = &req.actor {
                    builder = builder.header(stackd_api::ACTOR_HEADER, a);
                }
                let resp = builder
                    .send()
                    .map_err(|e| Failure::domain("unavailable", format!("cannot reach {base}: {e}")))?;
                let status = resp.status().as_u16();
                let json = resp
                    .headers()
                    .get(reqwest::header::CONTENT_TYPE)
                    .and_then(|v| v.to_str().ok())
                    .is_some_and(|v| v.starts_with("application/json"));
                let body = resp
                    .bytes()
                    .map_err(|e| Failure::domain("unavailable", format!("reading response: {e}")))?
                    .to_vec();
                Ok(ApiResponse {
                    status,
                    content_type: if json { "application/json" } else { "application/octet-stream" },
                    body,
                })
            }
        }
    }
}

/// A command that did not succeed.
#[derive(Debug)]
struct Failure {
    exit: i32,
    code: String,
    message: String,
    body: Option<Value>,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { exit: EXIT_USAGE, code: "usage".into(), message: message.into(), body: None }
    }

    fn domain(code: &str, message: impl Into<String>) -> Self {
        Self { exit: EXIT_DOMAIN, code: code.into(), message: message.into(), body: None }
    }
}

/// What a successful command produced.
enum Output {
    Json(Value),
    Bytes(Vec<u8>),
    Nothing,
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_inner(args, None, out, err)
}

/// Like [`run`], but send every request to `api`, ignoring `--local` and
/// `--server`.
pub fn run_against<I, S>(args: I, api: Api, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_inner(args, Some(api), out, err)
}

fn run_inner<I, S>(args: I, api: Option<Api>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let json_mode = cli.json;
    let result = match (&cli.command, api) {
        (Command::Serve, _) => serve(&cli),
        (_, Some(api)) => execute(&cli, &Transport::Local(api)),
        (_, None) => transport(&cli).and_then(|t| execute(&cli, &t)),
    };
    match result {
        Ok(Output::Json(v)) => {
            let _ = if json_mode { writeln!(out, "{}", canonical_text(&v)) } else { render(&v, out) };
            EXIT_OK
        }
        Ok(Output::Bytes(b)) => {
            let _ = out.write_all(&b);
            EXIT_OK
        }
        Ok(Output::Nothing) => EXIT_OK,
        Err(f) => {
            if json_mode {
                let doc = f.body.clone().unwrap_or_else(|| json!({ "code": f.code, "message": f.message }));
                let _ = writeln!(out, "{}", canonical_text(&doc));
            } else if let Some(details) = f.body.as_ref().and_then(|b| b.get("details")) {
                let _ = render(details, out);
            }
            let _ = writeln!(err, "error[{}]: {}", f.code, f.message);
            if f.exit == EXIT_USAGE {
                let _ = writeln!(err, "usage: stackd [OPTIONS] <COMMAND>  (see stackd --help)");
            }
            f.exit
        }
    }
}

fn canonical_text(v: &Value) -> String {
    canonical::to_string(v).unwrap_or_else(|_| v.to_string())
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    serde_json::from_slice(&read_file(path)?)
        .map_err(|e| Failure::usage(format!("{} is not valid JSON: {e}", path.display())))
}

fn query(pairs: &[(&str, Option<&str>)]) -> Option<String> {
    let mut ser = form_urlencoded::Serializer::new(String::new());
    let mut any = false;
    for (k, v) in pairs {
        if let Some(v) = v {
            ser.append_pair(k, v);
            any = true;
        }
    }
    any.then(|| ser.finish())
}

fn get(path: String, q: Option<String>) -> ApiRequest {
    let mut r = ApiRequest::get(&path);
    r.query = q;
    r
}

fn post(path: String, body: Value) -> ApiRequest {
    ApiRequest::post(&path, body.to_string())
}

fn seg(s: &str) -> String {
    form_urlencoded::byte_serialize(s.as_bytes()).collect()
}

fn service_config(cli: &Cli) -> Result<ServiceConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => ServiceConfig::load(path).map_err(|e| Failure::domain(e.code(), e.to_string()))?,
        None => ServiceConfig::default(),
    };
    config = config.apply_env();
    if let Some(dir) = &cli.local {
        config.data_dir = dir.clone();
    }
    Ok(config)
}

fn transport(cli: &Cli) -> Result<Transport, Failure> {
    Ok(match &cli.local {
        Some(_) => {
            let stack = Stack::open(service_config(cli)?).map_err(|e| Failure::domain(e.code(), e.to_string()))?;
            Transport::Local(Api::new(Arc::new(stack)))
        }
        None => Transport::Remote { base: cli.server.clone(), client: reqwest::blocking::Client::new() },
    })
}

fn execute(cli: &Cli, transport: &Transport) -> Result<Output, Failure> {
    let send = |req: ApiRequest| -> Result<Output, Failure> {
        let resp = transport.send(req, cli.actor.as_deref())?;
        let body: Option<Value> = match resp.content_type {
            "application/json" => serde_json::from_slice(&resp.body).ok(),
            _ => None,
        };
        if resp.is_success() {
            return Ok(match body {
                Some(v) => Output::Json(v),
                None => Output::Bytes(resp.body),
            });
        }
        let code = body.as_ref().and_then(|b| b["code"].as_str()).unwrap_or("unknown").to_string();
        let message = body
            .as_ref()
            .and_then(|b| b["message"].as_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("HTTP {}", resp.status));
        Err(Failure { exit: EXIT_DOMAIN, code, message, body })
    };
    let put_blob = |path: &Path| -> Result<String, Failure> {
        match send(ApiRequest::post("/blobs", read_file(path)?))? {
            Output::Json(v) => Ok(v["digest"].as_str().unwrap_or_default().to_string()),
            _ => Err(Failure::domain("invalid-response", "blob upload returned no digest")),
        }
    };

    match &cli.command {
        Command::Serve => Err(Failure::usage("serve cannot run against an existing API")),
        Command::Health => send(ApiRequest::get("/healthz")),
        Command::Blob(BlobCmd::Put { file }) => Ok(Output::Json(json!({ "digest": put_blob(file)? }))),
        Command::Blob(BlobCmd::Get { digest, out }) => {
            let o = send(ApiRequest::get(&format!("/blobs/{}", seg(digest))))?;
            match (o, out) {
                (Output::Bytes(b), Some(path)) => {
                    std::fs::write(path, b).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
                    Ok(Output::Nothing)
                }
                (o, _) => Ok(o),
            }
        }
        Command::Bundle(cmd) => match cmd {
            BundleCmd::Create { manifest } => send(post("/bundles".into(), read_json(manifest)?)),
            BundleCmd::List => send(ApiRequest::get("/bundles")),
            BundleCmd::Diff { a, b } => {
                send(get("/bundles/diff".into(), query(&[("a", Some(a)), ("b", Some(b))])))
            }
            BundleCmd::Verify { bundle } => send(ApiRequest::get(&format!("/bundles/{}/integrity", seg(bundle)))),
            BundleCmd::Resolve { selector } => send(ApiRequest::get(&format!("/bundles/{}", seg(selector)))),
        },
        Command::Control(cmd) => match cmd {
            ControlCmd::Register { file } => send(post("/controls".into(), read_json(file)?)),
            ControlCmd::List => send(ApiRequest::get("/controls")),
            ControlCmd::Evidence { control, hook, artifact, file, observed_at } => {
                let artifact = match (artifact, file) {
                    (Some(d), _) => d.clone(),
                    (None, Some(f)) => put_blob(f)?,
                    (None, None) => return Err(Failure::usage("--artifact or --file is required")),
                };
                let mut body = json!({ "hook_id": hook, "artifact": artifact });
                if let Some(at) = observed_at {
                    body["observed_at"] = json!(at);
                }
                send(post(format!("/controls/{}/evidence", seg(control)), body))
            }
            ControlCmd::Verify { control, bundle, now } => {
                let mut body = json!({ "bundle_id": bundle });
                if let Some(now) = now {
                    body["now"] = json!(now);
                }
                send(post(format!("/controls/{}/verify", seg(control)), body))
            }
            ControlCmd::Due { now } => send(get("/controls/due".into(), query(&[("now", now.as_deref())]))),
            ControlCmd::Rollup { bundle, controls, now } => {
                let mut body = json!({ "bundle_id": bundle, "control_ids": controls });
                if let Some(now) = now {
                    body["now"] = json!(now);
                }
                send(post("/controls/rollup".into(), body))
            }
        },
        Command::Decision(cmd) => match cmd {
            DecisionCmd::Append { file } => send(post("/decisions".into(), read_json(file)?)),
            DecisionCmd::List { bundle, model_version, from, to } => send(get(
                "/decisions".into(),
                query(&[
                    ("bundle_id", bundle.as_deref()),
                    ("model_version", model_version.as_deref()),
                    ("from", from.as_deref()),
                    ("to", to.as_deref()),
                ]),
            )),
            DecisionCmd::Context { decision } => {
                send(ApiRequest::get(&format!("/decisions/{}/context", seg(decision))))
            }
            DecisionCmd::Delta { a, b, k } => {
                let mut body = json!({ "a": { "decision_id": a }, "b": { "decision_id": b } });
                if let Some(k) = k {
                    body["k"] = json!(k);
                }
                send(post("/explanations/delta".into(), body))
            }
            DecisionCmd::Chain => send(ApiRequest::get("/decisions/chain")),
        },
        Command::Drift(cmd) => match cmd {
            DriftCmd::GoldenSet { file } => send(post("/golden-sets".into(), read_json(file)?)),
            DriftCmd::Run { bundle, set, seed, adapter } => {
                let mut body = json!({ "bundle_id": bundle, "set_id": set, "seed": seed });
                if let Some(path) = adapter {
                    body["adapter"] = read_json(path)?;
                }
                send(post("/stress-runs".into(), body))
            }
            DriftCmd::Score { baseline, current } => send(post(
                "/drift/score".into(),
                json!({ "baseline_run": baseline, "current_run": current }),
            )),
            DriftCmd::Evaluate { baseline, current } => send(post(
                "/drift/evaluate".into(),
                json!({ "baseline_run": baseline, "current_run": current }),
            )),
            DriftCmd::Evaluations => send(ApiRequest::get("/drift/evaluations")),
        },
        Command::Telemetry(cmd) => match cmd {
            TelemetryCmd::Ingest { kind, value, bundle, at } => {
                let at = at.clone().unwrap_or_else(|| stackd_core::Timestamp::now().to_string());
                send(post(
                    "/telemetry".into(),
                    json!({ "kind": kind, "value": value, "bundle_id": bundle, "observed_at": at }),
                ))
            }
            TelemetryCmd::Aggregate { kind, start, end } => send(get(
                format!("/telemetry/{}/aggregate", seg(kind)),
                query(&[("start", Some(start)), ("end", Some(end))]),
            )),
            TelemetryCmd::Alerts => send(ApiRequest::get("/alerts")),
        },
        Command::Promote(PromoteArgs { request }) | Command::Gate(GateCmd::Promote(PromoteArgs { request })) => {
            send(ApiRequest::post(&format!("/promotions/{}/promote", seg(request)), Vec::new()))
        }
        Command::Gate(cmd) => match cmd {
            GateCmd::Request { bundle, env } => {
                send(post("/promotions".into(), json!({ "bundle_id": bundle, "target_env": env })))
            }
            GateCmd::Approve { request, approver, decision } => {
                let mut body = json!({
                    "decision": match decision { Vote::Approve => "approve", Vote::Reject => "reject" },
                });
                if let Some(a) = approver {
                    body["approver"] = json!(a);
                }
                send(post(format!("/promotions/{}/approvals", seg(request)), body))
            }
            GateCmd::Report { request } => send(ApiRequest::get(&format!("/promotions/{}/gates", seg(request)))),
            GateCmd::Promote(_) => unreachable!("handled above"),
            GateCmd::Rollback { env, to_bundle, incident } => send(post(
                "/rollbacks".into(),
                json!({ "env": env, "to_bundle_id": to_bundle, "incident_id": incident }),
            )),
            GateCmd::List => send(ApiRequest::get("/promotions")),
            GateCmd::Deployments => send(ApiRequest::get("/deployments")),
            GateCmd::Audit => send(ApiRequest::get("/deployments/audit")),
        },
        Command::Incident(cmd) => match cmd {
            IncidentCmd::List => send(ApiRequest::get("/incidents")),
            IncidentCmd::Show { incident } => send(ApiRequest::get(&format!("/incidents/{}", seg(incident)))),
            IncidentCmd::Transition { incident, event, resolution, rollback_ref } => {
                let body = match event {
                    TransitionKind::StartInvestigation => json!({ "event": "start_investigation" }),
                    TransitionKind::Resolve => {
                        let resolution = match resolution {
                            Some(ResolutionKind::Rollback) => "Rollback",
                            Some(ResolutionKind::Retrain) => "Retrain",
                            Some(ResolutionKind::Accept) => "Accept",
                            None => return Err(Failure::usage("--resolution is required to resolve")),
                        };
                        let mut b = json!({ "event": "resolve", "resolution": resolution });
                        if let Some(r) = rollback_ref {
                            b["rollback_ref"] = json!(r);
                        }
                        b
                    }
                };
                send(post(format!("/incidents/{}/transition", seg(incident)), body))
            }
            IncidentCmd::Obligations => send(ApiRequest::get("/retrain-obligations")),
        },
    }
}

fn serve(cli: &Cli) -> Result<Output, Failure> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let config = service_config(cli)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::domain("storage-io", e.to_string()))?;
    rt.block_on(stackd_api::serve(config))
        .map_err(|e| Failure::domain(e.code(), e.to_string()))?;
    Ok(Output::Nothing)
}

/// Human-readable rendering: tables for lists of records, aligned
/// key/value lines for single records.
fn render(v: &Value, out: &mut dyn Write) -> std::io::Result<()> {
    match v {
        Value::Array(rows) if rows.iter().all(Value::is_object) && !rows.is_empty() => {
            let mut columns: Vec<&str> = Vec::new();
            for row in rows {
                for (k, val) in row.as_object().into_iter().flatten() {
                    if is_scalar(val) && !columns.contains(&k.as_str()) {
                        columns.push(k);
                    }
                }
            }
            let cells: Vec<Vec<String>> = rows
                .iter()
                .map(|r| columns.iter().map(|c| scalar_text(&r[*c])).collect())
                .collect();
            let widths: Vec<usize> = columns
                .iter()
                .enumerate()
                .map(|(i, c)| cells.iter().map(|r| r[i].len()).chain([c.len()]).max().unwrap_or(0))
                .collect();
            let line = |vals: Vec<&str>| {
                vals.iter()
                    .zip(&widths)
                    .map(|(v, w)| format!("{v:<w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            };
            writeln!(out, "{}", line(columns.iter().map(|c| c.to_uppercase()).collect::<Vec<_>>().iter().map(String::as_str).collect()))?;
            for r in &cells {
                writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))?;
            }
            Ok(())
        }
        Value::Array(rows) if rows.is_empty() => writeln!(out, "(none)"),
        Value::Object(map) => {
            let width = map.keys().map(String::len).max().unwrap_or(0);
            for (k, val) in map {
                writeln!(out, "{k:<width$}  {}", scalar_text(val))?;
            }
            Ok(())
        }
        other => writeln!(out, "{}", scalar_text(other)),
    }
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        other => canonical_text(other),
    }
}
