//! HTTP API driven over a real socket with a human oracle.

mod common;

use std::net::SocketAddr;
use std::time::{Duration, Instant};

use common::*;
use hitl_core::service::{serve, Service, ServiceOptions, TOKEN_HEADER};
use serde_json::{json, Value};

const TOKEN: &str = "s3cret";

async fn spawn(opts: ServiceOptions) -> String {
    let svc = Service::new(opts);
    let (tx, rx) = tokio::sync::oneshot::channel::<SocketAddr>();
    tokio::spawn(async move {
        serve(svc, "127.0.0.1:0".parse().unwrap(), move |a| {
            let _ = tx.send(a);
        })
        .await
        .unwrap();
    });
    format!("http://{}", rx.await.unwrap())
}

struct Api {
    base: String,
    http: reqwest::Client,
}

impl Api {
    async fn call(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> (u16, Value) {
        let mut req = self
            .http
            .request(method, format!("{}{path}", self.base))
            .header(TOKEN_HEADER, TOKEN);
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap();
        (
            status,
            serde_json::from_str(&text).unwrap_or(Value::String(text)),
        )
    }

    async fn get(&self, path: &str) -> Value {
        let (s, v) = self.call(reqwest::Method::GET, path, None).await;
        assert_eq!(s, 200, "GET {path}: {v}");
        v
    }

    async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        self.call(reqwest::Method::POST, path, Some(body)).await
    }

    async fn until<F: Fn(&Value) -> bool>(&self, path: &str, ok: F) -> Value {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let v = self.get(path).await;
            if ok(&v) {
                return v;
            }
            assert!(
                Instant::now() < deadline,
                "timed out waiting on {path}: {v}"
            );
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }
}

fn create_body(run_id: &str, budget: i64) -> Value {
    let task = synthetic(None);
    let instances: Vec<_> = task.stream.iter().take(20).cloned().collect();
    let newer = rule("policy-new", "R01: new guidance for the case", 0);
    let mut older = rule("policy-old", "R01: old guidance for the case", 0);
    older.status = hitl_core::kr::Status::Superseded;
    older.meta.superseded_by = Some("policy-new".into());
    json!({
        "config": {
            "run_id": run_id,
            "budget": budget,
            "llm": {"kind": "mock"},
            "oracle": {"kind": "human", "timeout_s": 30},
        },
        "instances": instances,
        "seed_items": [newer, older],
    })
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn human_oracle_round_trip() {
    let base = spawn(ServiceOptions {
        token: Some(TOKEN.into()),
        data_dir: None,
    })
    .await;
    let api = Api {
        base,
        http: reqwest::Client::new(),
    };

    let (s, v) = api.post("/runs", create_body("svc-1", 3)).await;
    assert_eq!(s, 201, "{v}");
    assert_eq!(v["total"], 20);
    let (s, _) = api.post("/runs", create_body("svc-1", 3)).await;
    assert_eq!(s, 409);

    let (s, _) = api.post("/runs/svc-1/advance?steps=1", json!({})).await;
    assert_eq!(s, 202);
    let pending = api
        .until("/runs/svc-1/queries/pending", |v| {
            v.as_array().is_some_and(|a| !a.is_empty())
        })
        .await;
    let q = &pending[0];
    let qid = q["query"]["qid"].as_str().unwrap().to_string();
    assert_eq!(q["query"]["kind"], "AskRules", "{q}");
    assert!(q["query"]["payload"]["prompt"]
        .as_str()
        .unwrap()
        .contains("Which rule or policy"));
    let b = api.get("/runs/svc-1/budget").await;
    assert_eq!(b["spent"], 0);

    let (s, v) = api
        .post("/queries/nope/answer", json!({"label": "Match"}))
        .await;
    assert_eq!(s, 404, "{v}");
    let (s, v) = api
        .post(&format!("/queries/{qid}/answer"), json!({"label": "Maybe"}))
        .await;
    assert_eq!(s, 422, "{v}");
    let (s, v) = api
        .post(&format!("/queries/{qid}/answer"), json!({"text": "R00: albara albelo albiku albosh albumi albanto alberil albovan indicate Match"}))
        .await;
    assert_eq!(s, 200, "{v}");
    let (s, _) = api
        .post(&format!("/queries/{qid}/answer"), json!({"text": "again"}))
        .await;
    assert_eq!(s, 409);

    let run = api.until("/runs/svc-1", |v| v["processed"] == 1).await;
    assert_eq!(run["budget"]["spent"], 1);
    assert_eq!(run["budget"]["remaining"], 2);

    // Ten more steps; answer whatever the run asks on the way.
    let (s, _) = api.post("/runs/svc-1/advance?steps=10", json!({})).await;
    assert_eq!(s, 202);
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let run = api.get("/runs/svc-1").await;
        if run["processed"] == 11 {
            break;
        }
        assert!(Instant::now() < deadline, "{run}");
        for p in api
            .get("/runs/svc-1/queries/pending")
            .await
            .as_array()
            .unwrap()
        {
            let id = p["query"]["qid"].as_str().unwrap();
            let _ = api
                .post(&format!("/queries/{id}/answer"), json!({"label": "Non-Match", "text": "[B] conditional only. This case is Non-Match."}))
                .await;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let m = api.get("/runs/svc-1/metrics").await;
    assert_eq!(m["processed"], 11, "{m}");
    let b = api.get("/runs/svc-1/budget").await;
    assert!(b["spent"].as_u64().unwrap() <= 3);
    assert_eq!(
        b["spent"].as_u64().unwrap() + b["remaining"].as_u64().unwrap(),
        3
    );

    let ev = api.get("/runs/svc-1/events?from=1&limit=5").await;
    let ev = ev.as_array().unwrap();
    assert_eq!(ev.len(), 5);
    assert_eq!(ev[0]["seq"], 1);

    let sup = api.get("/kr/svc-1/items?status=Superseded").await;
    let sup = sup.as_array().unwrap();
    assert_eq!(sup.len(), 1);
    assert_eq!(sup[0]["kid"], "policy-old");
    assert_eq!(sup[0]["status_label"], "Superseded by policy-new");
    let item = api.get("/kr/svc-1/items/policy-new").await;
    assert_eq!(item["predecessors"], json!(["policy-old"]));
    let all = api.get("/kr/items?q=guidance").await;
    assert_eq!(all.as_array().unwrap().len(), 2);
    let (s, _) = api
        .call(reqwest::Method::GET, "/kr/svc-1/items?status=Bogus", None)
        .await;
    assert_eq!(s, 400);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn token_is_required() {
    let base = spawn(ServiceOptions {
        token: Some(TOKEN.into()),
        data_dir: None,
    })
    .await;
    let http = reqwest::Client::new();
    let r = http.get(format!("{base}/runs")).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 401);
    let r = http
        .get(format!("{base}/runs"))
        .header(TOKEN_HEADER, "wrong")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status().as_u16(), 401);
    let r = http
        .get(format!("{base}/runs"))
        .header("authorization", format!("Bearer {TOKEN}"))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status().as_u16(), 200);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn invalid_requests_are_rejected() {
    let base = spawn(ServiceOptions::default()).await;
    let api = Api {
        base,
        http: reqwest::Client::new(),
    };
    let (s, _) = api.post("/runs", create_body("neg", -1)).await;
    assert_eq!(s, 400);
    let (s, _) = api.post("/runs", json!({"config": {"budget": 1}})).await;
    assert_eq!(s, 400);
    let (s, _) = api.call(reqwest::Method::GET, "/runs/missing", None).await;
    assert_eq!(s, 404);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn data_dir_runs_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let opts = ServiceOptions {
        token: None,
        data_dir: Some(dir.path().to_path_buf()),
    };
    let api = Api {
        base: spawn(opts.clone()).await,
        http: reqwest::Client::new(),
    };
    let mut body = create_body("keep", 0);
    body["config"]["oracle"] = json!({"kind": "human", "timeout_s": 30});
    let (s, v) = api.post("/runs", body).await;
    assert_eq!(s, 201, "{v}");
    let (s, v) = api
        .post("/runs/keep/advance?steps=5&wait=true", json!({}))
        .await;
    assert_eq!(s, 200, "{v}");
    let before = api.get("/runs/keep").await;
    assert_eq!(before["processed"], 5);

    let svc = Service::new(opts);
    let found = svc.recover().unwrap();
    assert_eq!(found, vec!["keep".to_string()]);
    let after = svc.summary("keep").unwrap();
    assert_eq!(after.processed, 5);
    // Recovery appends one resume marker.
    assert_eq!(after.last_seq, before["last_seq"].as_u64().unwrap() + 1);
    svc.advance("keep", 15, true).await.unwrap();
    assert_eq!(svc.summary("keep").unwrap().processed, 20);
}
