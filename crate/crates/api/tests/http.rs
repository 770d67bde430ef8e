use std::sync::Arc;

use stackd_api::{Server, ACTOR_HEADER};
use stackd_core::config::ServiceConfig;
use stackd_core::stack::Stack;
use tokio::runtime::Runtime;
use tokio::sync::oneshot;

struct Running {
    _dir: tempfile::TempDir,
    rt: Runtime,
    base: String,
    stop: Option<oneshot::Sender<()>>,
    done: Option<tokio::task::JoinHandle<Result<(), stackd_api::ServeError>>>,
}

impl Running {
    fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        let stack = Arc::new(Stack::open(ServiceConfig::with_data_dir(dir.path())).unwrap());
        let server = rt.block_on(Server::bind_stack(stack, "127.0.0.1:0")).unwrap();
        let base = format!("http://{}", server.local_addr().unwrap());
        let (tx, rx) = oneshot::channel::<()>();
        let done = rt.spawn(server.run(async {
            let _ = rx.await;
        }));
        Running { _dir: dir, rt, base, stop: Some(tx), done: Some(done) }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn stop(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        let done = self.done.take().unwrap();
        self.rt.block_on(done).unwrap().unwrap();
    }
}

fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::new()
}

#[test]
fn healthz_and_decision_offsets() {
    let srv = Running::start();
    let c = client();
    let h: serde_json::Value = c.get(srv.url("/healthz")).send().unwrap().json().unwrap();
    assert_eq!(h["status"], "ok");
    assert_eq!(h["offsets"]["decisions"], 0);
    assert_eq!(h["chain"]["ok"], true);

    let blob = |bytes: &[u8]| -> String {
        let r: serde_json::Value = c.post(srv.url("/blobs")).body(bytes.to_vec()).send().unwrap().json().unwrap();
        r["digest"].as_str().unwrap().to_string()
    };
    let model = blob(b"weights");
    let policy = blob(b"{}");
    let manifest = serde_json::json!({
        "version": "1.0.0",
        "capability_tier": 2,
        "artifacts": [
            {"kind": "model", "name": "m", "digest": model},
            {"kind": "policy_config", "name": "p", "digest": policy},
        ],
    });
    let r = c.post(srv.url("/bundles")).json(&manifest).send().unwrap();
    assert_eq!(r.status(), 201);
    let bundle: serde_json::Value = r.json().unwrap();
    for i in 0..3 {
        let input = blob([b"a", b"b", b"c"][i]);
        let d = serde_json::json!({
            "model_version": model,
            "bundle_id": bundle["bundle_id"],
            "input_context": input,
            "explanation": {"kind": "feature_attribution", "weights": {"x": 0.5}},
        });
        assert_eq!(c.post(srv.url("/decisions")).json(&d).send().unwrap().status(), 201);
    }
    let h: serde_json::Value = c.get(srv.url("/healthz")).send().unwrap().json().unwrap();
    assert_eq!(h["offsets"]["decisions"], 3);

    let blob_bytes = c.get(srv.url(&format!("/blobs/{model}"))).send().unwrap().bytes().unwrap();
    assert_eq!(&blob_bytes[..], b"weights");
    srv.stop();
}

#[test]
fn error_bodies_carry_codes() {
    let srv = Running::start();
    let c = client();
    let r = c.get(srv.url("/incidents/inc-nope")).send().unwrap();
    assert_eq!(r.status(), 404);
    let body: serde_json::Value = r.json().unwrap();
    assert_eq!(body["code"], "unknown-incident");

    let r = c.post(srv.url("/bundles")).body("{not json").send().unwrap();
    assert_eq!(r.status(), 400);
    assert_eq!(r.json::<serde_json::Value>().unwrap()["code"], "invalid-input");

    let r = c
        .post(srv.url("/controls"))
        .json(&serde_json::json!({"control_id": "c", "title": "t", "owner": "o", "schedule": 1, "hooks": []}))
        .send()
        .unwrap();
    assert_eq!(r.status(), 422);
    assert_eq!(r.json::<serde_json::Value>().unwrap()["code"], "empty-hooks");

    let r = c.get(srv.url("/nowhere")).send().unwrap();
    assert_eq!(r.status(), 404);
    assert_eq!(r.json::<serde_json::Value>().unwrap()["code"], "no-such-route");

    let r = c
        .post(srv.url("/incidents/inc-x/transition"))
        .header(ACTOR_HEADER, "alice")
        .json(&serde_json::json!({"event": "start_investigation"}))
        .send()
        .unwrap();
    assert_eq!(r.json::<serde_json::Value>().unwrap()["code"], "unknown-incident");
    srv.stop();
}

#[test]
fn occupied_port_is_bind_failure() {
    let srv = Running::start();
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig::with_data_dir(dir.path());
    config.listen_address = srv.base.trim_start_matches("http://").to_string();
    let err = srv.rt.block_on(Server::bind(config)).err().unwrap();
    assert_eq!(err.code(), "bind-failure");
    srv.stop();
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig::with_data_dir(dir.path());
    config.listen_address = "127.0.0.1:0".into();
    config.detector_config.warn_z = 5.0;
    config.detector_config.critical_z = 5.0;
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let err = rt.block_on(Server::bind(config)).err().unwrap();
    assert_eq!(err.code(), "config-invalid");
    assert!(err.to_string().contains("detector_config.warn_z"), "{err}");
}
