use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};
use stackd_api::{Api, ApiRequest, Server};
use stackd_cli::{run, run_against, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE};
use stackd_core::canonical;
use stackd_core::config::ServiceConfig;
use stackd_core::stack::Stack;
use stackd_core::telemetry::SignalKind;
use stackd_core::time::stepping_clock;
use stackd_core::Timestamp;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn stackd(args: &[&str]) -> Out {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(std::iter::once("stackd").chain(args.iter().copied()), &mut out, &mut err);
    Out { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p.to_string_lossy().into_owned()
}

fn write_bytes(dir: &Path, name: &str, b: &[u8]) -> String {
    let p = dir.join(name);
    std::fs::write(&p, b).unwrap();
    p.to_string_lossy().into_owned()
}

/// Blobs and a tier-3 manifest in `work`, ready for `bundle create`.
fn manifest_file(local: &str, work: &Path) -> String {
    let model = write_bytes(work, "model.bin", b"weights");
    let policy = write_bytes(work, "policy.json", b"{}");
    let digest = |file: &str| -> String {
        let o = stackd(&["--local", local, "--json", "blob", "put", file]);
        assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
        serde_json::from_str::<Value>(&o.stdout).unwrap()["digest"].as_str().unwrap().to_string()
    };
    let m = json!({
        "version": "1.0.0",
        "capability_tier": 3,
        "artifacts": [
            {"kind": "model", "name": "m", "digest": digest(&model)},
            {"kind": "policy_config", "name": "p", "digest": digest(&policy)},
        ],
    });
    write(work, "manifest.json", &m)
}

#[test]
fn unknown_command_is_a_usage_error() {
    let o = stackd(&["bogus"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("Usage: stackd"), "{}", o.stderr);
    assert!(o.stdout.is_empty());

    let o = stackd(&["gate", "approve"]);
    assert_eq!(o.code, EXIT_USAGE);
}

#[test]
fn unreadable_input_file_is_a_usage_error() {
    let data = tempfile::tempdir().unwrap();
    let o = stackd(&["--local", data.path().to_str().unwrap(), "bundle", "create", "--manifest", "/nonexistent/m.json"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("cannot read"), "{}", o.stderr);
}

#[test]
fn bundle_create_prints_the_bundle_id() {
    let data = tempfile::tempdir().unwrap();
    let work = tempfile::tempdir().unwrap();
    let local = data.path().to_str().unwrap();
    let manifest = manifest_file(local, work.path());

    let o = stackd(&["--local", local, "bundle", "create", "--manifest", &manifest]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let id_line = o.stdout.lines().find(|l| l.starts_with("bundle_id")).unwrap();
    let id = id_line.split_whitespace().nth(1).unwrap();
    assert_eq!(id.len(), 64);

    let o = stackd(&["--local", local, "--json", "bundle", "create", "--manifest", &manifest]);
    assert!(canonical::is_canonical(o.stdout.trim_end().as_bytes()));
    let v: Value = serde_json::from_str(&o.stdout).unwrap();
    assert_eq!(v["bundle_id"], id);
}

#[test]
fn promote_with_failing_gates_prints_the_report() {
    let data = tempfile::tempdir().unwrap();
    let work = tempfile::tempdir().unwrap();
    let local = data.path().to_str().unwrap();
    let manifest = manifest_file(local, work.path());
    let o = stackd(&["--local", local, "--json", "bundle", "create", "--manifest", &manifest]);
    let bundle = serde_json::from_str::<Value>(&o.stdout).unwrap()["bundle_id"].as_str().unwrap().to_string();
    let o = stackd(&["--local", local, "--json", "gate", "request", "--bundle", &bundle, "--env", "staging"]);
    let req = serde_json::from_str::<Value>(&o.stdout).unwrap()["request_id"].as_str().unwrap().to_string();

    let o = stackd(&["--local", local, "promote", "--request", &req]);
    assert_eq!(o.code, EXIT_DOMAIN);
    assert!(o.stderr.contains("error[gates-not-passed]"), "{}", o.stderr);
    assert!(o.stdout.contains("all_pass") && o.stdout.contains("false"), "{}", o.stdout);
    assert!(o.stdout.contains(&req));

    let o = stackd(&["--local", local, "--json", "gate", "promote", "--request", &req]);
    assert_eq!(o.code, EXIT_DOMAIN);
    assert!(canonical::is_canonical(o.stdout.trim_end().as_bytes()));
    let v: Value = serde_json::from_str(&o.stdout).unwrap();
    assert_eq!(v["code"], "gates-not-passed");
    assert_eq!(v["details"]["checks"]["approvals_met"], false);
    assert_eq!(v["details"]["checks"]["evaluation_pass"], false);
}

#[test]
fn json_output_is_canonical_for_every_read_command() {
    let data = tempfile::tempdir().unwrap();
    let local = data.path().to_str().unwrap();
    for cmd in [
        &["health"][..],
        &["bundle", "list"],
        &["control", "list"],
        &["control", "due"],
        &["decision", "list"],
        &["decision", "chain"],
        &["drift", "evaluations"],
        &["telemetry", "alerts"],
        &["gate", "list"],
        &["gate", "deployments"],
        &["gate", "audit"],
        &["incident", "list"],
        &["incident", "obligations"],
    ] {
        let mut args = vec!["--local", local, "--json"];
        args.extend_from_slice(cmd);
        let o = stackd(&args);
        assert_eq!(o.code, EXIT_OK, "{cmd:?}: {}", o.stderr);
        assert_eq!(o.stdout.lines().count(), 1, "{cmd:?}");
        let doc = o.stdout.trim_end().as_bytes();
        assert!(canonical::is_canonical(doc), "{cmd:?}: {}", o.stdout);
        let v: Value = serde_json::from_slice(doc).unwrap();
        assert_eq!(canonical::to_vec(&v).unwrap(), doc);
    }
}

#[test]
fn domain_errors_print_the_code() {
    let data = tempfile::tempdir().unwrap();
    let local = data.path().to_str().unwrap();
    let o = stackd(&["--local", local, "incident", "show", "inc-missing"]);
    assert_eq!(o.code, EXIT_DOMAIN);
    assert!(o.stderr.starts_with("error[unknown-incident]"), "{}", o.stderr);
    let o = stackd(&["--local", local, "--actor", "", "incident", "transition", "inc-x", "--event", "start-investigation"]);
    assert_eq!(o.code, EXIT_DOMAIN);
}

#[test]
fn remote_mode_talks_to_a_running_service() {
    let data = tempfile::tempdir().unwrap();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let stack = Arc::new(Stack::open(ServiceConfig::with_data_dir(data.path())).unwrap());
    let server = rt.block_on(Server::bind_stack(stack, "127.0.0.1:0")).unwrap();
    let url = format!("http://{}", server.local_addr().unwrap());
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let handle = rt.spawn(server.run(async {
        let _ = rx.await;
    }));

    let o = stackd(&["--server", &url, "--json", "health"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let v: Value = serde_json::from_str(&o.stdout).unwrap();
    assert_eq!(v["status"], "ok");

    let work = tempfile::tempdir().unwrap();
    let f = write_bytes(work.path(), "blob.bin", b"remote bytes");
    let o = stackd(&["--server", &url, "--json", "blob", "put", &f]);
    let digest = serde_json::from_str::<Value>(&o.stdout).unwrap()["digest"].as_str().unwrap().to_string();
    let o = stackd(&["--server", &url, "blob", "get", &digest]);
    assert_eq!(o.stdout, "remote bytes");

    let o = stackd(&["--server", &url, "incident", "show", "inc-nope"]);
    assert_eq!(o.code, EXIT_DOMAIN);
    assert!(o.stderr.contains("unknown-incident"));

    tx.send(()).unwrap();
    rt.block_on(handle).unwrap().unwrap();

    let o = stackd(&["--server", &url, "health"]);
    assert_eq!(o.code, EXIT_DOMAIN);
    assert!(o.stderr.contains("error[unavailable]"), "{}", o.stderr);
}

// CLI-vs-API equivalence: the same session issued through the CLI and as
// raw API requests persists identical bytes.

const T0: i64 = 1_765_000_000_000;

fn api_at(dir: &Path) -> Api {
    let mut config = ServiceConfig::with_data_dir(dir);
    for kind in SignalKind::ALL {
        config.owner_routes.owners.insert(kind, "oncall".into());
    }
    let stack = Stack::open_with_clock(config, stepping_clock(Timestamp::from_millis(T0), 500)).unwrap();
    Api::new(Arc::new(stack))
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut pending = vec![root.to_path_buf()];
    while let Some(dir) = pending.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                pending.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn cli_session_matches_raw_api_session() {
    let (cli_dir, api_dir, work) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let w = work.path();
    let cli_api = api_at(cli_dir.path());
    let cli = |args: &[&str]| -> Value {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = ["stackd", "--json"].into_iter().chain(args.iter().copied());
        let code = run_against(argv, cli_api.clone(), &mut out, &mut err);
        assert_eq!(code, EXIT_OK, "{args:?}: {}", String::from_utf8_lossy(&err));
        serde_json::from_slice(&out).unwrap_or(Value::Null)
    };
    let api = api_at(api_dir.path());
    let call = |req: ApiRequest| -> Value {
        let resp = api.handle(&req);
        assert!(resp.is_success(), "{} {}: {}", req.method, req.path, String::from_utf8_lossy(&resp.body));
        serde_json::from_slice(&resp.body).unwrap_or(Value::Null)
    };
    let id = |v: &Value, k: &str| v[k].as_str().unwrap().to_string();

    let model_file = write_bytes(w, "model", b"weights v7");
    let policy_file = write_bytes(w, "policy", b"{\"max\":1}");
    let model = id(&cli(&["blob", "put", &model_file]), "digest");
    let policy = id(&cli(&["blob", "put", &policy_file]), "digest");
    call(ApiRequest::post("/blobs", b"weights v7".to_vec()));
    call(ApiRequest::post("/blobs", b"{\"max\":1}".to_vec()));

    let manifest = json!({
        "version": "0.3.0",
        "capability_tier": 2,
        "artifacts": [{"kind": "model", "name": "m", "digest": model}, {"kind": "policy_config", "name": "p", "digest": policy}],
    });
    let bundle = id(&cli(&["bundle", "create", "--manifest", &write(w, "m.json", &manifest)]), "bundle_id");
    call(ApiRequest::post("/bundles", manifest.to_string()));

    let control = json!({
        "control_id": "card", "title": "card", "owner": "gov", "schedule": 7,
        "hooks": [{"hook_id": "h", "required_artifact_kind": "model_documentation", "max_age": 30, "validator": "schema_valid"}],
    });
    cli(&["control", "register", "--file", &write(w, "c.json", &control)]);
    call(ApiRequest::post("/controls", control.to_string()));
    let card = br#"{"intended_use":"demo","model":"m"}"#;
    cli(&["control", "evidence", "card", "--hook", "h", "--file", &write_bytes(w, "card", card)]);
    let card_digest = id(&call(ApiRequest::post("/blobs", card.to_vec())), "digest");
    call(ApiRequest::post("/controls/card/evidence", json!({"hook_id": "h", "artifact": card_digest}).to_string()));
    cli(&["control", "verify", "card", "--bundle", &bundle]);
    call(ApiRequest::post("/controls/card/verify", json!({"bundle_id": bundle}).to_string()));

    let input_file = write_bytes(w, "q", b"question");
    let input = id(&cli(&["blob", "put", &input_file]), "digest");
    call(ApiRequest::post("/blobs", b"question".to_vec()));
    let rubric = id(&cli(&["blob", "put", &input_file]), "digest");
    call(ApiRequest::post("/blobs", b"question".to_vec()));
    let set = json!({"prompts": [{"prompt_id": "a", "input": input, "adversarial": false}], "rubric": rubric});
    let set_id = id(&cli(&["drift", "golden-set", "--file", &write(w, "set.json", &set)]), "set_id");
    call(ApiRequest::post("/golden-sets", set.to_string()));
    let run = cli(&["drift", "run", "--bundle", &bundle, "--set", &set_id, "--seed", "3"]);
    let run_id = id(&run["run"], "run_id");
    call(ApiRequest::post("/stress-runs", json!({"bundle_id": bundle, "set_id": set_id, "seed": 3}).to_string()));
    cli(&["drift", "evaluate", &run_id, &run_id]);
    call(ApiRequest::post("/drift/evaluate", json!({"baseline_run": run_id, "current_run": run_id}).to_string()));

    let decision = json!({
        "model_version": model, "bundle_id": bundle, "input_context": input,
        "explanation": {"kind": "feature_attribution", "weights": {"a": 1.0}},
    });
    cli(&["decision", "append", "--file", &write(w, "d.json", &decision)]);
    call(ApiRequest::post("/decisions", decision.to_string()));

    let at = Timestamp::from_millis(T0).to_string();
    cli(&["telemetry", "ingest", "--kind", "latency_ms", "--value", "12.5", "--bundle", &bundle, "--at", &at]);
    call(ApiRequest::post(
        "/telemetry",
        json!({"kind": "latency_ms", "value": 12.5, "bundle_id": bundle, "observed_at": at}).to_string(),
    ));

    let req = id(&cli(&["gate", "request", "--bundle", &bundle, "--env", "staging"]), "request_id");
    call(ApiRequest::post("/promotions", json!({"bundle_id": bundle, "target_env": "staging"}).to_string()));
    cli(&["--actor", "dana", "gate", "approve", "--request", &req]);
    let mut approval = ApiRequest::post(&format!("/promotions/{req}/approvals"), json!({"decision": "approve"}).to_string());
    approval.actor = Some("dana".into());
    call(approval);
    cli(&["gate", "promote", "--request", &req]);
    call(ApiRequest::post(&format!("/promotions/{req}/promote"), Vec::new()));

    let (a, b) = (tree(cli_dir.path()), tree(api_dir.path()));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs");
    }
    assert!(a.contains_key("streams/deployments.jsonl"));
}
