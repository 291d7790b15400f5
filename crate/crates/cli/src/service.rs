//! Single-session HTTP service behind the manual cleanup UI.
//!
//! One annotator edits one cloud. Mutations (edit, undo, save) go through a
//! write lock and are appended to a JSON-lines journal, flushed to disk,
//! before the state changes and the request is acknowledged. Reads clone an
//! `Arc` of the current cloud and never wait on a mutation's I/O.
//!
//! Endpoints:
//! - `GET /session`: ids and counts
//! - `GET /cloud?max_points=N`: binary PLY, decimated by a fixed stride
//! - `GET /render?width=..&height=..&fx=..&fy=..&cx=..&cy=..[&pose=16 values][&splat=r][&format=png|pfm]`
//! - `POST /edit {polygon, depth_range, view[, base_edits]}`
//! - `POST /undo {[base_edits]}`
//! - `POST /save {[name]}`: PLY plus edit-log JSON in the output directory
//!
//! `base_edits` is the edit count the client last saw; a mismatch means the
//! client is out of date and the request is refused with 409.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use anyhow::{bail, Context};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use serde::{Deserialize, Serialize};

use focuskit_core::io::{pfm, ply, png};
use focuskit_core::lidar::{project_zbuffer, region_mask, CameraView, Intrinsics, PointCloud, RegionEdit};
use focuskit_core::raster::{DepthMap, RgbImage};

use crate::artifact::{sha256_hex, OutputSet, Provenance};

/// The cloud under edit and the ordered log of edits applied to it.
#[derive(Debug, Clone)]
pub struct CleanupSession {
    id: String,
    original: Arc<PointCloud>,
    current: Arc<PointCloud>,
    edits: Vec<RegionEdit>,
    dirty: bool,
}

impl CleanupSession {
    pub fn new(id: impl Into<String>, cloud: PointCloud) -> Self {
        let original = Arc::new(cloud);
        CleanupSession {
            id: id.into(),
            current: original.clone(),
            original,
            edits: Vec::new(),
            dirty: false,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn original(&self) -> &Arc<PointCloud> {
        &self.original
    }

    pub fn current(&self) -> &Arc<PointCloud> {
        &self.current
    }

    pub fn edits(&self) -> &[RegionEdit] {
        &self.edits
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    /// The cloud left after applying `edits` in order to `original`.
    pub fn replay(original: &PointCloud, edits: &[RegionEdit]) -> focuskit_core::Result<PointCloud> {
        let mut cloud = original.clone();
        for e in edits {
            cloud = apply_edit(&cloud, e)?.0;
        }
        Ok(cloud)
    }

    /// Result of applying `edit`, without committing it.
    pub fn preview(&self, edit: &RegionEdit) -> focuskit_core::Result<(PointCloud, usize)> {
        apply_edit(&self.current, edit)
    }

    fn commit_edit(&mut self, edit: RegionEdit, cloud: PointCloud) {
        self.edits.push(edit);
        self.current = Arc::new(cloud);
        self.dirty = true;
    }

    /// Drops the last edit; the cloud is rebuilt from the original so it
    /// stays equal to the replay of the remaining log.
    pub fn undo(&mut self) -> focuskit_core::Result<Option<RegionEdit>> {
        let Some(last) = self.edits.pop() else {
            return Ok(None);
        };
        match Self::replay(&self.original, &self.edits) {
            Ok(cloud) => {
                self.current = Arc::new(cloud);
                self.dirty = true;
                Ok(Some(last))
            }
            Err(e) => {
                self.edits.push(last);
                Err(e)
            }
        }
    }

    pub fn apply(&mut self, edit: RegionEdit) -> focuskit_core::Result<usize> {
        let (cloud, removed) = self.preview(&edit)?;
        self.commit_edit(edit, cloud);
        Ok(removed)
    }
}

fn apply_edit(cloud: &PointCloud, edit: &RegionEdit) -> focuskit_core::Result<(PointCloud, usize)> {
    let hit = region_mask(cloud, edit)?;
    let keep: Vec<bool> = hit.iter().map(|h| !h).collect();
    let removed = hit.iter().filter(|h| **h).count();
    Ok((cloud.retain_mask(&keep), removed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum JournalEntry {
    Open { session_id: String, cloud_sha256: String, points: usize },
    Edit { edit: RegionEdit },
    Undo,
    Save { ply: String, edit_log: String },
}

/// Append-only journal; each entry is synced before `append` returns.
#[derive(Debug)]
pub struct Journal {
    file: File,
}

impl Journal {
    /// Opens `path`, replaying an existing journal into `session` when it
    /// belongs to the same cloud.
    pub fn open(path: &Path, session: &mut CleanupSession, cloud_sha256: &str) -> anyhow::Result<Journal> {
        if path.exists() {
            let entries = read_journal(path)?;
            match entries.first() {
                Some(JournalEntry::Open { cloud_sha256: h, .. }) if h == cloud_sha256 => {}
                _ => bail!(
                    "journal {} belongs to a different cloud; move it away to start over",
                    path.display()
                ),
            }
            for (i, e) in entries.iter().enumerate().skip(1) {
                match e {
                    JournalEntry::Edit { edit } => {
                        session.apply(edit.clone()).with_context(|| format!("journal entry {i}"))?;
                    }
                    JournalEntry::Undo => {
                        session.undo()?;
                    }
                    JournalEntry::Save { .. } => session.dirty = false,
                    JournalEntry::Open { .. } => bail!("journal entry {i}: repeated header"),
                }
            }
            if !session.edits.is_empty() {
                info!("resumed {} edits from {}", session.edits.len(), path.display());
            }
            let file = OpenOptions::new().append(true).open(path)?;
            return Ok(Journal { file });
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut journal = Journal {
            file: OpenOptions::new().create_new(true).append(true).open(path)?,
        };
        journal.append(&JournalEntry::Open {
            session_id: session.id.clone(),
            cloud_sha256: cloud_sha256.to_string(),
            points: session.original.len(),
        })?;
        Ok(journal)
    }

    pub fn append(&mut self, entry: &JournalEntry) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }
}

pub fn read_journal(path: &Path) -> anyhow::Result<Vec<JournalEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("journal line {}", i + 1))?);
    }
    Ok(out)
}

struct Inner {
    session: CleanupSession,
    journal: Journal,
}

pub struct AppState {
    inner: RwLock<Inner>,
    out_dir: PathBuf,
    /// Header comments of the loaded PLY, reused on save so an unedited
    /// cloud saves byte-identical to its source file.
    comments: Vec<String>,
    cloud_sha256: String,
}

impl AppState {
    /// Loads `cloud_path` and opens (or resumes) `<out_dir>/cleanup.journal.jsonl`.
    pub fn load(cloud_path: &Path, out_dir: &Path) -> anyhow::Result<Arc<AppState>> {
        let bytes = std::fs::read(cloud_path).with_context(|| format!("reading {}", cloud_path.display()))?;
        let file = ply::decode(&bytes).with_context(|| format!("decoding {}", cloud_path.display()))?;
        Self::new(file.cloud, file.comments, &sha256_hex(&bytes), out_dir)
    }

    pub fn new(cloud: PointCloud, comments: Vec<String>, cloud_sha256: &str, out_dir: &Path) -> anyhow::Result<Arc<AppState>> {
        let mut session = CleanupSession::new(&cloud_sha256[..12.min(cloud_sha256.len())], cloud);
        let journal = Journal::open(&out_dir.join("cleanup.journal.jsonl"), &mut session, cloud_sha256)?;
        Ok(Arc::new(AppState {
            inner: RwLock::new(Inner { session, journal }),
            out_dir: out_dir.to_path_buf(),
            comments,
            cloud_sha256: cloud_sha256.to_string(),
        }))
    }

    pub fn session(&self) -> CleanupSession {
        self.read().session.clone()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug)]
pub enum ApiError {
    Invalid(String),
    Conflict(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::Invalid(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(serde_json::json!({ "error": msg }))).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::Internal(e.to_string())
}

fn check_base(base: Option<usize>, actual: usize) -> Result<(), ApiError> {
    match base {
        Some(b) if b != actual => Err(ApiError::Conflict(format!(
            "client expected {b} edits but the session has {actual}"
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub original_points: usize,
    pub current_points: usize,
    pub edits: usize,
    pub dirty: bool,
}

async fn get_session(State(state): State<Arc<AppState>>) -> Json<SessionInfo> {
    let g = state.read();
    let s = &g.session;
    Json(SessionInfo {
        session_id: s.id.clone(),
        original_points: s.original.len(),
        current_points: s.current.len(),
        edits: s.edits.len(),
        dirty: s.dirty,
    })
}

#[derive(Debug, Deserialize)]
struct CloudQuery {
    max_points: Option<usize>,
}

async fn get_cloud(State(state): State<Arc<AppState>>, Query(q): Query<CloudQuery>) -> Result<Response, ApiError> {
    let cloud = state.read().session.current.clone();
    let n = cloud.len();
    let stride = match q.max_points {
        Some(0) => return Err(ApiError::Invalid("max_points must be >= 1".into())),
        Some(m) if n > m => n.div_ceil(m),
        _ => 1,
    };
    let sent = if stride == 1 {
        (*cloud).clone()
    } else {
        let keep: Vec<bool> = (0..n).map(|i| i % stride == 0).collect();
        cloud.retain_mask(&keep)
    };
    let body = ply::encode(&sent, &[format!("decimation_stride {stride}")]);
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_string()),
            (header::HeaderName::from_static("x-total-points"), n.to_string()),
        ],
        body,
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
struct RenderQuery {
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major camera-from-cloud matrix, 16 comma-separated values.
    pose: Option<String>,
    #[serde(default)]
    splat: usize,
    format: Option<String>,
}

const MAX_RENDER_PIXELS: usize = 4096 * 4096;

async fn get_render(State(state): State<Arc<AppState>>, Query(q): Query<RenderQuery>) -> Result<Response, ApiError> {
    if q.width * q.height > MAX_RENDER_PIXELS {
        return Err(ApiError::Invalid("requested preview is too large".into()));
    }
    let intrinsics = Intrinsics {
        fx: q.fx,
        fy: q.fy,
        cx: q.cx,
        cy: q.cy,
    };
    let view = match &q.pose {
        None => CameraView::identity(intrinsics),
        Some(s) => {
            let v: Vec<f64> = s
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| ApiError::Invalid(format!("pose: {e}")))?;
            if v.len() != 16 {
                return Err(ApiError::Invalid(format!("pose needs 16 values, got {}", v.len())));
            }
            let mut m = [[0.0; 4]; 4];
            for (i, x) in v.into_iter().enumerate() {
                m[i / 4][i % 4] = x;
            }
            CameraView {
                intrinsics,
                camera_from_cloud: m,
            }
        }
    };
    let cloud = state.read().session.current.clone();
    let bad = |e: focuskit_core::Error| ApiError::Invalid(e.to_string());
    let pose = view.transform(cloud.frame()).map_err(bad)?;
    let cam = pose.transform_cloud(&cloud).map_err(bad)?;
    let depth = project_zbuffer(&cam, &intrinsics, q.width, q.height, q.splat).map_err(bad)?;
    match q.format.as_deref().unwrap_or("png") {
        "pfm" => Ok(([(header::CONTENT_TYPE, "application/octet-stream")], pfm::encode_depth(&depth)).into_response()),
        "png" => {
            let img = depth_preview(&depth).map_err(internal)?;
            let bytes = png::encode(&img).map_err(internal)?;
            Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
        }
        other => Err(ApiError::Invalid(format!("unknown format {other:?}"))),
    }
}

/// Gray inverse-depth image, near bright, invalid black.
pub fn depth_preview(depth: &DepthMap) -> focuskit_core::Result<RgbImage> {
    let inv: Vec<f64> = depth.valid_values().iter().map(|d| 1.0 / d).collect();
    let lo = inv.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = inv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    RgbImage::from_fn(depth.width(), depth.height(), |x, y| match depth.get(x, y) {
        Some(d) => [(0.2 + 0.8 * (1.0 / d - lo) / span) as f32; 3],
        None => [0.0; 3],
    })
}

#[derive(Debug, Deserialize)]
pub struct EditRequest {
    #[serde(flatten)]
    pub edit: RegionEdit,
    pub base_edits: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub removed: usize,
    pub remaining: usize,
    pub edits: usize,
}

async fn post_edit(State(state): State<Arc<AppState>>, Json(req): Json<EditRequest>) -> Result<Json<EditResponse>, ApiError> {
    req.edit.validate().map_err(|e| ApiError::Invalid(e.to_string()))?;
    let mut g = state.write();
    check_base(req.base_edits, g.session.edits.len())?;
    let (cloud, removed) = g.session.preview(&req.edit).map_err(|e| ApiError::Invalid(e.to_string()))?;
    g.journal
        .append(&JournalEntry::Edit { edit: req.edit.clone() })
        .map_err(internal)?;
    g.session.commit_edit(req.edit, cloud);
    Ok(Json(EditResponse {
        removed,
        remaining: g.session.current.len(),
        edits: g.session.edits.len(),
    }))
}

#[derive(Debug, Default, Deserialize)]
pub struct UndoRequest {
    pub base_edits: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndoResponse {
    pub restored: usize,
    pub remaining: usize,
    pub edits: usize,
}

async fn post_undo(State(state): State<Arc<AppState>>, body: Option<Json<UndoRequest>>) -> Result<Json<UndoResponse>, ApiError> {
    let req = body.map(|b| b.0).unwrap_or_default();
    let mut g = state.write();
    check_base(req.base_edits, g.session.edits.len())?;
    if g.session.edits.is_empty() {
        return Err(ApiError::Conflict("nothing to undo".into()));
    }
    let before = g.session.current.len();
    let mut next = g.session.clone();
    next.undo().map_err(internal)?;
    g.journal.append(&JournalEntry::Undo).map_err(internal)?;
    g.session = next;
    Ok(Json(UndoResponse {
        restored: g.session.current.len() - before,
        remaining: g.session.current.len(),
        edits: g.session.edits.len(),
    }))
}

#[derive(Debug, Default, Deserialize)]
pub struct SaveRequest {
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaveResponse {
    pub ply: String,
    pub edit_log: String,
    pub points: usize,
}

#[derive(Debug, Serialize)]
struct EditLog<'a> {
    provenance: Provenance,
    session_id: &'a str,
    original_sha256: &'a str,
    original_points: usize,
    points: usize,
    edits: &'a [RegionEdit],
}

async fn post_save(State(state): State<Arc<AppState>>, body: Option<Json<SaveRequest>>) -> Result<Json<SaveResponse>, ApiError> {
    let req = body.map(|b| b.0).unwrap_or_default();
    let name = req.name.unwrap_or_else(|| "cleaned".into());
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(ApiError::Invalid("save name may only use letters, digits, '_' and '-'".into()));
    }
    let mut g = state.write();
    let s = &g.session;
    let log = EditLog {
        provenance: Provenance::new(&(state.cloud_sha256.as_str(), s.edits.as_slice()), None).map_err(internal)?,
        session_id: &s.id,
        original_sha256: &state.cloud_sha256,
        original_points: s.original.len(),
        points: s.current.len(),
        edits: &s.edits,
    };
    let ply_name = format!("{name}.ply");
    let log_name = format!("{name}.edits.json");
    let ply_bytes = ply::encode(&s.current, &state.comments);
    let points = s.current.len();
    let mut out = OutputSet::create(&state.out_dir).map_err(internal)?;
    out.write_json(&log_name, &log).map_err(internal)?;
    out.write(&ply_name, &ply_bytes).map_err(internal)?;
    g.journal
        .append(&JournalEntry::Save {
            ply: ply_name.clone(),
            edit_log: log_name.clone(),
        })
        .map_err(internal)?;
    g.session.dirty = false;
    info!("saved {points} points to {ply_name}");
    Ok(Json(SaveResponse {
        ply: ply_name,
        edit_log: log_name,
        points,
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/session", get(get_session))
        .route("/cloud", get(get_cloud))
        .route("/render", get(get_render))
        .route("/edit", post(post_edit))
        .route("/undo", post(post_undo))
        .route("/save", post(post_save))
        .with_state(state)
}

pub async fn serve(cloud: &Path, out_dir: &Path, host: &str, port: u16) -> anyhow::Result<()> {
    let state = AppState::load(cloud, out_dir)?;
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .with_context(|| format!("binding {host}:{port}"))?;
    info!("cleanup service on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
