//! HTTP review backend: candidate pages with raster chips, label
//! submission and progress.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use barnmap::error::Error;
use barnmap::features::FeatureTable;
use barnmap::geometry::{polygon_area, Ring};
use barnmap::labels::{active_labels, append_label, now_ms, read_labels, Label, LabelRecord};
use barnmap::pipeline::{read_candidates, Candidate, Layers, PipelineConfig};
use barnmap::raster::read_real;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{Mutex, RwLock};

use crate::commands::load_config;
use crate::ConfigFlags;

const CHIP_MARGIN_M: f64 = 30.0;
const MAX_PAGE: usize = 500;

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Candidate polygons; defaults to candidates.geojson in the output directory.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
}

struct AppState {
    candidates: Vec<Candidate>,
    position: HashMap<u64, usize>,
    features: Vec<BTreeMap<String, f64>>,
    prob_dir: Option<PathBuf>,
    labels_path: PathBuf,
    labels: RwLock<BTreeMap<u64, Label>>,
    writer: Mutex<()>,
}

type Shared = Arc<AppState>;

fn feature_maps(cfg: &PipelineConfig, candidates: &[Candidate]) -> Result<Vec<BTreeMap<String, f64>>> {
    let to_maps = |t: &FeatureTable| -> Vec<BTreeMap<String, f64>> {
        let by_id: HashMap<u64, &Vec<f64>> = t.ids.iter().copied().zip(&t.rows).collect();
        candidates
            .iter()
            .map(|c| {
                by_id
                    .get(&c.id)
                    .map(|row| t.columns.iter().cloned().zip(row.iter().copied()).collect())
                    .unwrap_or_default()
            })
            .collect()
    };
    let stored = cfg.output_dir.join("candidate_features.csv");
    if stored.exists() {
        return Ok(to_maps(&FeatureTable::read(&stored)?));
    }
    if cfg.landcover.is_some() && cfg.legend.is_some() && cfg.roads.is_some() {
        let layers = Layers::load(cfg)?;
        let radii = [cfg.radii[0]];
        let rings: Vec<Ring> = candidates.iter().map(|c| c.ring.clone()).collect();
        let ids: Vec<u64> = candidates.iter().map(|c| c.id).collect();
        let feats = layers.features(&rings, &radii)?;
        return Ok(to_maps(&layers.feature_table(&ids, &feats, &radii)?));
    }
    Ok(vec![BTreeMap::new(); candidates.len()])
}

fn load_state(a: &ServeArgs, cfg: &PipelineConfig) -> Result<AppState> {
    let path = a.candidates.clone().unwrap_or_else(|| cfg.output_dir.join("candidates.geojson"));
    if !path.exists() {
        return Err(Error::Config(format!("candidates file {} does not exist", path.display())).into());
    }
    let candidates = read_candidates(&path)?;
    let labels_path = cfg.labels_path();
    let labels = active_labels(&read_labels(&labels_path)?);
    Ok(AppState {
        position: candidates.iter().enumerate().map(|(i, c)| (c.id, i)).collect(),
        features: feature_maps(cfg, &candidates)?,
        prob_dir: cfg.prob_dir.clone(),
        candidates,
        labels_path,
        labels: RwLock::new(labels),
        writer: Mutex::new(()),
    })
}

pub fn serve(a: &ServeArgs, flags: &ConfigFlags) -> Result<()> {
    let cfg = load_config(flags)?;
    let state = Arc::new(load_state(a, &cfg)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().context("listen address")?;
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state)).await.context("server")
    })
}

fn router(state: Shared) -> Router {
    Router::new()
        .route("/candidates", get(list_candidates))
        .route("/labels", post(post_label))
        .route("/progress", get(progress))
        .with_state(state)
}

fn error(status: StatusCode, reason: impl Into<String>) -> Response {
    (status, Json(json!({ "error": reason.into() }))).into_response()
}

#[derive(Debug, Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    50
}

#[derive(Debug, Serialize)]
struct ChipWindow {
    width: usize,
    height: usize,
    origin: [f64; 2],
    pixel_size: f64,
    /// Row-major, north row first; null marks pixels outside the raster.
    values: Vec<Option<f32>>,
}

fn chip_window(prob_dir: &Path, chip: &str, ring: &Ring) -> Option<ChipWindow> {
    let r = read_real(&prob_dir.join(format!("{chip}.bgrd"))).ok()?;
    let b = ring.bbox().expanded(CHIP_MARGIN_M);
    let (c0, r0) = r.spec.to_grid(barnmap::geometry::Point::new(b.min.x, b.max.y));
    let (c1, r1) = r.spec.to_grid(barnmap::geometry::Point::new(b.max.x, b.min.y));
    let (c0, r0) = (c0.floor() as i64, r0.floor() as i64);
    let (w, h) = ((c1.ceil() as i64 - c0).max(1) as usize, (r1.ceil() as i64 - r0).max(1) as usize);
    let win = r.window(c0, r0, w, h);
    Some(ChipWindow {
        width: w,
        height: h,
        origin: [win.spec.origin.x, win.spec.origin.y],
        pixel_size: win.spec.pixel_size,
        values: win.values.iter().map(|v| (!v.is_nan()).then_some(*v)).collect(),
    })
}

fn candidate_json(s: &AppState, i: usize, labels: &BTreeMap<u64, Label>) -> Value {
    let c = &s.candidates[i];
    let ring: Vec<[f64; 2]> = c.ring.vertices().iter().map(|p| [p.x, p.y]).collect();
    let chip = s.prob_dir.as_deref().and_then(|d| chip_window(d, &c.chip, &c.ring));
    json!({
        "id": c.id,
        "chip_name": c.chip,
        "ring": ring,
        "area_m2": polygon_area(&c.ring).ok(),
        "features": s.features[i],
        "label": labels.get(&c.id),
        "chip": chip,
    })
}

async fn list_candidates(State(s): State<Shared>, page: Result<Query<Page>, axum::extract::rejection::QueryRejection>) -> Response {
    let Ok(Query(page)) = page else {
        return error(StatusCode::BAD_REQUEST, "offset and limit must be non-negative integers");
    };
    let labels = s.labels.read().await;
    let end = page.offset.saturating_add(page.limit.min(MAX_PAGE)).min(s.candidates.len());
    let items: Vec<Value> = (page.offset.min(end)..end).map(|i| candidate_json(&s, i, &labels)).collect();
    Json(json!({
        "total": s.candidates.len(),
        "offset": page.offset,
        "items": items,
    }))
    .into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    candidate_id: u64,
    label: Label,
    #[serde(default)]
    annotator: String,
}

#[derive(Debug, Serialize)]
struct Progress {
    labeled: usize,
    total: usize,
    barn: usize,
    false_positive: usize,
}

fn progress_of(labels: &BTreeMap<u64, Label>, total: usize) -> Progress {
    let barn = labels.values().filter(|&&l| l == Label::Barn).count();
    Progress {
        labeled: labels.len(),
        total,
        barn,
        false_positive: labels.len() - barn,
    }
}

async fn post_label(State(s): State<Shared>, body: Bytes) -> Response {
    let body: LabelBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    if !s.position.contains_key(&body.candidate_id) {
        return error(StatusCode::NOT_FOUND, format!("unknown candidate {}", body.candidate_id));
    }
    let _guard = s.writer.lock().await;
    let rec = LabelRecord {
        candidate_id: body.candidate_id,
        label: body.label,
        annotator: body.annotator,
        timestamp_ms: now_ms(),
    };
    let path = s.labels_path.clone();
    let written = tokio::task::spawn_blocking(move || append_label(&path, &rec)).await;
    match written {
        Ok(Ok(())) => {}
        Ok(Err(e)) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
    let mut labels = s.labels.write().await;
    labels.insert(body.candidate_id, body.label);
    Json(progress_of(&labels, s.candidates.len())).into_response()
}

async fn progress(State(s): State<Shared>) -> Json<Progress> {
    Json(progress_of(&*s.labels.read().await, s.candidates.len()))
}
