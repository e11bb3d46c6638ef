//! HTTP review service over an exported bundle.
//!
//! Endpoints:
//!
//! - `GET /api/candidates`: bundle candidates in rank order with the current
//!   verdict of the reviewer (`?reviewer=` overrides the server default).
//! - `GET /api/crop/{image}/{component}`: the rendered crop (PNG).
//! - `POST /api/verdict`: `{image, component_id, decision, reviewer?}`.
//! - `GET /api/stats`: counts and precision over the latest verdicts.
//! - `GET /api/export`: the full verdict log plus the stats it replays to.
//!
//! Verdicts go to an append-only JSON-lines file; the latest line per
//! (reviewer, candidate) wins.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

use segaudit_core::BBox;

use crate::error::{Error, Result};
use crate::export::Bundle;
use crate::io::read_jsonl;
use crate::manifest::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Confirmed,
    Rejected,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub image: String,
    pub component_id: u32,
    pub decision: Decision,
    pub reviewer: String,
    /// Unix seconds, assigned by the server.
    pub timestamp: u64,
}

type Key = (String, String, u32);

fn key(v: &Verdict) -> Key {
    (v.reviewer.clone(), v.image.clone(), v.component_id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    /// Number of (reviewer, candidate) pairs with a verdict.
    pub reviewed: usize,
    pub confirmed: usize,
    pub rejected: usize,
    pub unsure: usize,
    /// confirmed / (confirmed + rejected + unsure); null before any verdict.
    pub precision: Option<f64>,
    /// confirmed / (confirmed + rejected).
    pub precision_excluding_unsure: Option<f64>,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

pub fn stats<'a>(latest: impl IntoIterator<Item = &'a Verdict>, total: usize) -> Stats {
    let (mut confirmed, mut rejected, mut unsure) = (0, 0, 0);
    for v in latest {
        match v.decision {
            Decision::Confirmed => confirmed += 1,
            Decision::Rejected => rejected += 1,
            Decision::Unsure => unsure += 1,
        }
    }
    let reviewed = confirmed + rejected + unsure;
    Stats {
        total,
        reviewed,
        confirmed,
        rejected,
        unsure,
        precision: ratio(confirmed, reviewed),
        precision_excluding_unsure: ratio(confirmed, confirmed + rejected),
    }
}

/// Latest verdict per (reviewer, candidate) from a log in append order.
pub fn latest(log: &[Verdict]) -> BTreeMap<Key, Verdict> {
    log.iter().map(|v| (key(v), v.clone())).collect()
}

pub fn replay(log: &[Verdict], total: usize) -> Stats {
    stats(latest(log).values(), total)
}

/// Append-only verdict log with an in-memory latest view.
#[derive(Debug)]
pub struct VerdictStore {
    path: PathBuf,
    log: Vec<Verdict>,
    latest: BTreeMap<Key, Verdict>,
}

impl VerdictStore {
    pub fn open(path: &Path) -> Result<Self> {
        let log = if path.exists() { read_jsonl(path)? } else { Vec::new() };
        Ok(Self {
            path: path.to_path_buf(),
            latest: latest(&log),
            log,
        })
    }

    /// Appends `v` unless it repeats the reviewer's current decision.
    /// Returns whether a line was written.
    pub fn record(&mut self, v: Verdict) -> Result<bool> {
        if self.latest.get(&key(&v)).is_some_and(|old| old.decision == v.decision) {
            return Ok(false);
        }
        let mut line = serde_json::to_vec(&v).expect("verdict serializes");
        line.push(b'\n');
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        f.sync_data().map_err(|e| Error::io(&self.path, e))?;
        self.latest.insert(key(&v), v.clone());
        self.log.push(v);
        Ok(true)
    }

    pub fn log(&self) -> &[Verdict] {
        &self.log
    }

    pub fn decision(&self, reviewer: &str, image: &str, component_id: u32) -> Option<Decision> {
        self.latest
            .get(&(reviewer.to_string(), image.to_string(), component_id))
            .map(|v| v.decision)
    }

    pub fn stats(&self, total: usize) -> Stats {
        stats(self.latest.values(), total)
    }
}

pub struct AppState {
    bundle: Bundle,
    index: HashMap<(String, u32), usize>,
    reviewer: String,
    store: Mutex<VerdictStore>,
}

impl AppState {
    pub fn new(bundle: Bundle, verdicts: &Path, reviewer: &str) -> Result<Self> {
        let index = bundle
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| ((c.image.clone(), c.component_id()), i))
            .collect();
        Ok(Self {
            bundle,
            index,
            reviewer: reviewer.to_string(),
            store: Mutex::new(VerdictStore::open(verdicts)?),
        })
    }

    fn total(&self) -> usize {
        self.bundle.candidates.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub rank: usize,
    pub image: String,
    pub component_id: u32,
    pub class_id: u16,
    pub class_name: Option<String>,
    pub size: usize,
    pub bbox: BBox,
    pub crop_bbox: BBox,
    pub score: f64,
    pub split: Option<Split>,
    pub group: Option<String>,
    pub crop_url: String,
    pub verdict: Option<Decision>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictRequest {
    image: String,
    component_id: u32,
    decision: Decision,
    #[serde(default)]
    reviewer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictResponse {
    pub verdict: Verdict,
    /// False when the verdict repeated the current decision.
    pub recorded: bool,
    pub stats: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportView {
    pub verdicts: Vec<Verdict>,
    pub stats: Stats,
}

#[derive(Debug, Deserialize)]
struct ReviewerQuery {
    reviewer: Option<String>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

fn crop_url(image: &str, component_id: u32) -> String {
    format!(
        "/api/crop/{}/{component_id}",
        utf8_percent_encode(image, NON_ALPHANUMERIC)
    )
}

async fn candidates(State(s): State<Arc<AppState>>, Query(q): Query<ReviewerQuery>) -> Response {
    let reviewer = q.reviewer.unwrap_or_else(|| s.reviewer.clone());
    let store = s.store.lock().expect("store lock");
    let classes = &s.bundle.index.classes;
    let views: Vec<CandidateView> = s
        .bundle
        .candidates
        .iter()
        .zip(&s.bundle.index.entries)
        .enumerate()
        .map(|(i, (c, e))| CandidateView {
            rank: i + 1,
            image: c.image.clone(),
            component_id: c.component_id(),
            class_id: c.class_id,
            class_name: classes.iter().find(|k| k.id == c.class_id).map(|k| k.name.clone()),
            size: c.size,
            bbox: c.component.bbox,
            crop_bbox: c.crop_bbox,
            score: c.score,
            split: e.split,
            group: e.group.clone(),
            crop_url: crop_url(&c.image, c.component_id()),
            verdict: store.decision(&reviewer, &c.image, c.component_id()),
        })
        .collect();
    Json(views).into_response()
}

async fn crop(State(s): State<Arc<AppState>>, UrlPath((image, component)): UrlPath<(String, u32)>) -> Response {
    let Some(&i) = s.index.get(&(image.clone(), component)) else {
        return error(StatusCode::NOT_FOUND, format!("no candidate {image}/{component}"));
    };
    let path = s.bundle.dir.join(&s.bundle.index.entries[i].crop);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", path.display())),
    }
}

async fn verdict(State(s): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: VerdictRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::CONFLICT, format!("malformed verdict: {e}")),
    };
    if !s.index.contains_key(&(req.image.clone(), req.component_id)) {
        return error(
            StatusCode::NOT_FOUND,
            format!("no candidate {}/{}", req.image, req.component_id),
        );
    }
    let reviewer = match req.reviewer {
        Some(r) if r.trim().is_empty() => return error(StatusCode::CONFLICT, "empty reviewer id"),
        Some(r) => r,
        None => s.reviewer.clone(),
    };
    let v = Verdict {
        image: req.image,
        component_id: req.component_id,
        decision: req.decision,
        reviewer,
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    let mut store = s.store.lock().expect("store lock");
    match store.record(v.clone()) {
        Ok(recorded) => Json(VerdictResponse {
            verdict: v,
            recorded,
            stats: store.stats(s.total()),
        })
        .into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn stats_handler(State(s): State<Arc<AppState>>) -> Response {
    Json(s.store.lock().expect("store lock").stats(s.total())).into_response()
}

async fn export(State(s): State<Arc<AppState>>) -> Response {
    let store = s.store.lock().expect("store lock");
    Json(ExportView {
        verdicts: store.log().to_vec(),
        stats: store.stats(s.total()),
    })
    .into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/candidates", get(candidates))
        .route("/api/crop/{image}/{component}", get(crop))
        .route("/api/verdict", post(verdict))
        .route("/api/stats", get(stats_handler))
        .route("/api/export", get(export))
        .with_state(state)
}

pub fn serve(bundle_dir: &Path, verdicts: &Path, reviewer: &str, addr: SocketAddr) -> anyhow::Result<()> {
    let state = Arc::new(AppState::new(Bundle::load(bundle_dir)?, verdicts, reviewer)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        info!("serving {} on http://{}", bundle_dir.display(), listener.local_addr()?);
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}
