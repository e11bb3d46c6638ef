use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use segaudit::export::{Bundle, BundleEntry, BundleIndex, BUNDLE_SCHEMA_VERSION};
use segaudit::io::{to_json_bytes, write_file};
use segaudit::manifest::{ClassEntry, Split};
use segaudit::records::write_candidates;
use segaudit::service::{replay, router, AppState, ExportView, Stats};
use segaudit_core::detect::Candidate;
use segaudit_core::{extract_components, Origin, SegMask};

const IMAGES: [&str; 4] = ["city/a", "city/b", "c d", "e"];

/// Bundle with one candidate per image; crop bytes are a marker per rank.
fn bundle(dir: &Path) {
    let mut data = vec![1u16; 8 * 8];
    data[9] = 2;
    let mask = SegMask::new(8, 8, 2, data).unwrap();
    let comps = extract_components(&mask, true, Origin::Prediction);
    let k = comps.components().iter().find(|k| k.class_id == 2).unwrap();
    let cands: Vec<Candidate> = IMAGES
        .iter()
        .enumerate()
        .map(|(i, im)| Candidate::new(im, k.clone(), 0.9 - 0.1 * i as f64, 2))
        .collect();
    write_candidates(&dir.join("candidates.jsonl"), &cands).unwrap();
    let entries = cands
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let crop = PathBuf::from(format!("crops/{i:05}.png"));
            write_file(&dir.join(&crop), format!("png-{i}").as_bytes()).unwrap();
            BundleEntry {
                image: c.image.clone(),
                component_id: c.component_id(),
                split: Some(Split::Search),
                group: None,
                crop,
            }
        })
        .collect();
    let index = BundleIndex {
        schema_version: BUNDLE_SCHEMA_VERSION,
        dataset: "toy".into(),
        classes: vec![
            ClassEntry {
                id: 1,
                name: "road".into(),
            },
            ClassEntry {
                id: 2,
                name: "car".into(),
            },
        ],
        groups: Vec::new(),
        top_n: 4,
        entries,
    };
    write_file(&dir.join("bundle.json"), &to_json_bytes(&index)).unwrap();
}

fn app(dir: &Path) -> Router {
    let state = AppState::new(Bundle::load(dir).unwrap(), &dir.join("verdicts.jsonl"), "ann").unwrap();
    router(Arc::new(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn post_verdict(app: &Router, image: &str, decision: &str) -> Value {
    let (s, v) = json_call(
        app,
        "POST",
        "/api/verdict",
        Some(json!({"image": image, "component_id": 2, "decision": decision})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v
}

#[tokio::test]
async fn precision_follows_the_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    bundle(dir.path());
    let app = app(dir.path());

    let (s, v) = json_call(&app, "GET", "/api/stats", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["total"], 4);
    assert_eq!(v["reviewed"], 0);
    assert!(v["precision"].is_null());

    post_verdict(&app, "city/a", "confirmed").await;
    post_verdict(&app, "city/b", "confirmed").await;
    post_verdict(&app, "c d", "confirmed").await;
    let last = post_verdict(&app, "e", "rejected").await;
    assert_eq!(last["stats"]["precision"], 0.75);
    assert_eq!(last["verdict"]["reviewer"], "ann");

    post_verdict(&app, "e", "unsure").await;
    let (_, v) = json_call(&app, "GET", "/api/stats", None).await;
    let stats: Stats = serde_json::from_value(v).unwrap();
    assert_eq!(
        (stats.reviewed, stats.confirmed, stats.rejected, stats.unsure),
        (4, 3, 0, 1)
    );
    assert_eq!(stats.precision, Some(0.75));
    assert_eq!(stats.precision_excluding_unsure, Some(1.0));
}

#[tokio::test]
async fn candidates_list_in_rank_order_with_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    bundle(dir.path());
    let app = app(dir.path());
    post_verdict(&app, "city/b", "rejected").await;

    let (s, v) = json_call(&app, "GET", "/api/candidates", None).await;
    assert_eq!(s, StatusCode::OK);
    let list = v.as_array().unwrap();
    let images: Vec<&str> = list.iter().map(|c| c["image"].as_str().unwrap()).collect();
    assert_eq!(images, IMAGES);
    assert_eq!(list[0]["rank"], 1);
    assert_eq!(list[0]["class_name"], "car");
    assert_eq!(list[1]["verdict"], "rejected");
    assert!(list[0]["verdict"].is_null());
    assert_eq!(list[0]["crop_url"], "/api/crop/city%2Fa/2");
    assert_eq!(list[2]["crop_url"], "/api/crop/c%20d/2");

    let (_, other) = json_call(&app, "GET", "/api/candidates?reviewer=bob", None).await;
    assert!(other[1]["verdict"].is_null());
}

#[tokio::test]
async fn crops_are_served_by_encoded_id() {
    let dir = tempfile::tempdir().unwrap();
    bundle(dir.path());
    let app = app(dir.path());
    for (i, url) in ["/api/crop/city%2Fa/2", "/api/crop/city%2Fb/2", "/api/crop/c%20d/2"]
        .iter()
        .enumerate()
    {
        let (s, body) = call(&app, "GET", url, None).await;
        assert_eq!(s, StatusCode::OK, "{url}");
        assert_eq!(body, format!("png-{i}").into_bytes());
    }
    let (s, _) = call(&app, "GET", "/api/crop/e/7", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/api/crop/nope/2", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bad_verdicts_are_refused_without_logging() {
    let dir = tempfile::tempdir().unwrap();
    bundle(dir.path());
    let app = app(dir.path());
    let cases = [
        (
            json!({"image": "zzz", "component_id": 2, "decision": "confirmed"}),
            StatusCode::NOT_FOUND,
        ),
        (
            json!({"image": "e", "component_id": 9, "decision": "confirmed"}),
            StatusCode::NOT_FOUND,
        ),
        (
            json!({"image": "e", "component_id": 2, "decision": "maybe"}),
            StatusCode::CONFLICT,
        ),
        (json!({"image": "e", "decision": "confirmed"}), StatusCode::CONFLICT),
        (
            json!({"image": "e", "component_id": 2, "decision": "confirmed", "extra": 1}),
            StatusCode::CONFLICT,
        ),
        (
            json!({"image": "e", "component_id": 2, "decision": "confirmed", "reviewer": " "}),
            StatusCode::CONFLICT,
        ),
        (json!([1, 2]), StatusCode::CONFLICT),
    ];
    for (body, want) in cases {
        let (s, v) = json_call(&app, "POST", "/api/verdict", Some(body.clone())).await;
        assert_eq!(s, want, "{body}");
        assert!(v["error"].is_string());
    }
    let (s, _) = call(&app, "POST", "/api/verdict", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(!dir.path().join("verdicts.jsonl").exists());
}

#[tokio::test]
async fn reposts_are_idempotent_and_state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    bundle(dir.path());
    let log = dir.path().join("verdicts.jsonl");
    {
        let app = app(dir.path());
        assert_eq!(post_verdict(&app, "city/a", "confirmed").await["recorded"], true);
        assert_eq!(post_verdict(&app, "city/a", "confirmed").await["recorded"], false);
        assert_eq!(post_verdict(&app, "city/a", "rejected").await["recorded"], true);
        let (s, v) = json_call(
            &app,
            "POST",
            "/api/verdict",
            Some(json!({"image": "e", "component_id": 2, "decision": "confirmed", "reviewer": "bob"})),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(v["stats"]["reviewed"], 2);
    }
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 3);

    let app = app(dir.path());
    let (_, stats) = json_call(&app, "GET", "/api/stats", None).await;
    assert_eq!(stats["confirmed"], 1);
    assert_eq!(stats["rejected"], 1);
    assert_eq!(stats["precision"], 0.5);
    assert_eq!(post_verdict(&app, "city/a", "rejected").await["recorded"], false);

    let (_, v) = json_call(&app, "GET", "/api/export", None).await;
    let export: ExportView = serde_json::from_value(v).unwrap();
    assert_eq!(export.verdicts.len(), 3);
    assert_eq!(replay(&export.verdicts, 4), export.stats);
    assert_eq!(serde_json::to_value(&export.stats).unwrap(), stats);
}

#[tokio::test]
async fn unknown_routes_and_methods_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    bundle(dir.path());
    let app = app(dir.path());
    let (s, _) = call(&app, "GET", "/api/nothing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/api/verdict", None).await;
    assert_eq!(s, StatusCode::METHOD_NOT_ALLOWED);
}

#[tokio::test]
async fn serves_over_a_real_socket() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};

    let dir = tempfile::tempdir().unwrap();
    bundle(dir.path());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = app(dir.path());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let body = r#"{"image":"city/a","component_id":2,"decision":"confirmed"}"#;
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    let req = format!(
        "POST /api/verdict HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(req.as_bytes()).await.unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).await.unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains(r#""precision":1.0"#), "{resp}");
}
