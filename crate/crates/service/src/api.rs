//! HTTP/JSON interface over annotation sessions.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/api/sessions` | `{imageId}` |
//! | GET | `/api/sessions/{id}` | |
//! | POST | `/api/sessions/{id}/clicks` | `{kind, regionId, revision}` |
//! | POST | `/api/sessions/{id}/commit` | `{revision}` |
//! | GET | `/api/images/{id}` | |
//! | GET | `/api/sets` | |
//!
//! A session is named after its image. Every mutation must quote the
//! session's current revision; a stale one gets 409.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex, PoisonError, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use maskforge::annotate::{prepare_session, record_flips, write_click_log, AnnotationSession, ClickKind, FlipDictionaries};
use maskforge::imaging::{load_image, save_mask_png};
use maskforge::retrieval::{AgentKnowledge, Manifest};
use maskforge::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::workspace::{write_json, Layout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegionView {
    pub id: u32,
    /// Coarse region this one belongs to (itself when coarse).
    pub coarse: u32,
    /// Run-length encoding of the region over the whole image.
    pub rle: Vec<u32>,
    pub label: bool,
    pub probability: f64,
    pub auto_flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionView {
    pub session_id: String,
    pub image_id: String,
    pub set_id: String,
    pub width: u32,
    pub height: u32,
    pub revision: u64,
    pub sealed: bool,
    pub click_count: usize,
    pub regions: Vec<RegionView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClickDelta {
    pub revision: u64,
    pub click_count: usize,
    /// Regions that became active or changed label.
    pub changed: Vec<RegionView>,
    /// Regions that are no longer active.
    pub removed: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommitResult {
    pub revision: u64,
    pub mask_path: String,
    pub mask_pixels: usize,
    pub false_positives: Vec<u32>,
    pub false_negatives: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SetSummary {
    pub set_id: String,
    pub tags: Vec<String>,
    pub annotated: bool,
    pub prepared: bool,
    pub image_ids: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreateSession {
    pub image_id: String,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClickRequest {
    pub kind: ClickKind,
    pub region_id: u32,
    pub revision: u64,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommitRequest {
    pub revision: u64,
}

pub fn region_view(session: &AnnotationSession, id: u32) -> Result<RegionView> {
    let coarse = session.coarse_of(id)?;
    Ok(RegionView {
        id,
        coarse,
        rle: session.region_mask(id)?.to_rle(),
        label: session.label(id)?,
        probability: session.probabilities()[coarse as usize],
        auto_flipped: session.auto_flipped().contains(&coarse),
    })
}

pub fn session_view(set_id: &str, session: &AnnotationSession) -> Result<SessionView> {
    let regions = session
        .active_regions()
        .into_iter()
        .map(|id| region_view(session, id))
        .collect::<Result<_>>()?;
    Ok(SessionView {
        session_id: session.image_id().to_string(),
        image_id: session.image_id().to_string(),
        set_id: set_id.to_string(),
        width: session.coarse().width(),
        height: session.coarse().height(),
        revision: session.revision(),
        sealed: session.is_sealed(),
        click_count: session.clicks().len(),
        regions,
    })
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        use maskforge::Error as E;
        let message = e.to_string();
        let (status, code) = match &e {
            ServiceError::Core(E::InactiveRegion(_) | E::InvalidRegion(_)) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "InactiveRegion")
            }
            ServiceError::Core(E::AlreadyDivided(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "AlreadyDivided"),
            ServiceError::Core(E::SessionSealed) => (StatusCode::CONFLICT, "AlreadySealed"),
            ServiceError::SetNotPrepared(_) => (StatusCode::UNPROCESSABLE_ENTITY, "SetNotPrepared"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "PipelineFailure"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{message}");
        }
        ApiError::new(status, code, message)
    }
}

impl From<maskforge::Error> for ApiError {
    fn from(e: maskforge::Error) -> Self {
        ServiceError::from(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.code, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

type Shared<T> = Arc<Mutex<T>>;

/// Everything the handlers share. Sessions persisted in the workspace are
/// loaded on start.
pub struct AppState {
    layout: Layout,
    manifest: Manifest,
    cfg: PipelineConfig,
    knowledge: Mutex<HashMap<String, Arc<AgentKnowledge>>>,
    flips: Mutex<HashMap<String, Shared<FlipDictionaries>>>,
    sessions: RwLock<HashMap<String, Shared<AnnotationSession>>>,
    creating: Mutex<HashSet<String>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

impl AppState {
    pub fn open(layout: Layout, cfg: PipelineConfig) -> Result<Self> {
        let manifest = layout.manifest()?;
        let mut sessions = HashMap::new();
        let dir = layout.sessions_dir();
        if dir.is_dir() {
            let mut paths: Vec<_> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            for path in paths {
                let bytes = std::fs::read(&path)?;
                let session: AnnotationSession = serde_json::from_slice(&bytes)
                    .map_err(|e| ServiceError::Data(format!("{}: {e}", path.display())))?;
                sessions.insert(session.image_id().to_string(), Arc::new(Mutex::new(session)));
            }
        }
        log::info!("workspace {}: {} stored sessions", layout.root().display(), sessions.len());
        Ok(AppState {
            layout,
            manifest,
            cfg,
            knowledge: Mutex::new(HashMap::new()),
            flips: Mutex::new(HashMap::new()),
            sessions: RwLock::new(sessions),
            creating: Mutex::new(HashSet::new()),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn set_of(&self, image_id: &str) -> ApiResult<String> {
        self.manifest
            .image(image_id)
            .map(|(set, _)| set.set_id.clone())
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownImage", format!("no image {image_id:?}")))
    }

    fn knowledge(&self, set_id: &str) -> Result<Arc<AgentKnowledge>> {
        let mut cache = lock(&self.knowledge);
        if let Some(k) = cache.get(set_id) {
            return Ok(k.clone());
        }
        let k = Arc::new(self.layout.knowledge(set_id)?);
        cache.insert(set_id.to_string(), k.clone());
        Ok(k)
    }

    fn flips(&self, set_id: &str, knowledge: &AgentKnowledge) -> Result<Shared<FlipDictionaries>> {
        let mut cache = lock(&self.flips);
        if let Some(f) = cache.get(set_id) {
            return Ok(f.clone());
        }
        let f = Arc::new(Mutex::new(self.layout.flips(set_id, knowledge, &self.cfg)?));
        cache.insert(set_id.to_string(), f.clone());
        Ok(f)
    }

    fn session(&self, id: &str) -> ApiResult<Shared<AnnotationSession>> {
        self.sessions
            .read()
            .unwrap_or_else(PoisonError::into_inner)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session {id:?}")))
    }

    fn persist(&self, session: &AnnotationSession) -> Result<()> {
        let id = session.image_id();
        std::fs::create_dir_all(self.layout.sessions_dir())?;
        write_json(&self.layout.session_path(id), session)?;
        write_click_log(&self.layout.click_log_path(id), session.clicks())?;
        Ok(())
    }

    fn create(&self, image_id: &str) -> ApiResult<SessionView> {
        let set_id = self.set_of(image_id)?;
        let exists = || ApiError::new(StatusCode::CONFLICT, "SessionExists", format!("session {image_id:?} exists"));
        if self.session(image_id).is_ok() || !lock(&self.creating).insert(image_id.to_string()) {
            return Err(exists());
        }
        let built = self.build(image_id, &set_id);
        lock(&self.creating).remove(image_id);
        let session = built?;
        let view = session_view(&set_id, &session)?;
        let mut sessions = self.sessions.write().unwrap_or_else(PoisonError::into_inner);
        if sessions.contains_key(image_id) {
            return Err(exists());
        }
        sessions.insert(image_id.to_string(), Arc::new(Mutex::new(session)));
        Ok(view)
    }

    fn build(&self, image_id: &str, set_id: &str) -> Result<AnnotationSession> {
        let knowledge = self.knowledge(set_id)?;
        let flips = lock(&*self.flips(set_id, &knowledge)?).clone();
        let (_, entry) = self.manifest.image(image_id).expect("image checked by caller");
        let img = load_image(&entry.path)?;
        let session = prepare_session(image_id, &img, &knowledge, Some(&flips), &self.cfg)?;
        self.persist(&session)?;
        log::info!(
            "session {image_id}: {} coarse regions, {} auto-flipped",
            session.coarse_count(),
            session.auto_flipped().len()
        );
        Ok(session)
    }

    fn view(&self, id: &str) -> ApiResult<SessionView> {
        let set_id = self.set_of(id)?;
        let shared = self.session(id)?;
        let session = lock(&shared);
        Ok(session_view(&set_id, &session)?)
    }

    fn check_revision(session: &AnnotationSession, revision: u64) -> ApiResult<()> {
        if session.is_sealed() {
            return Err(ApiError::new(StatusCode::CONFLICT, "AlreadySealed", "session is sealed"));
        }
        if revision != session.revision() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "StaleRevision",
                format!("revision {revision} is stale, current is {}", session.revision()),
            ));
        }
        Ok(())
    }

    fn click(&self, id: &str, req: &ClickRequest) -> ApiResult<ClickDelta> {
        let shared = self.session(id)?;
        let mut session = lock(&shared);
        Self::check_revision(&session, req.revision)?;
        let mut next = session.clone();
        next.apply_click(req.kind, req.region_id)?;
        let (changed, removed) = match req.kind {
            ClickKind::LeftFlip => (vec![region_view(&next, req.region_id)?], Vec::new()),
            ClickKind::RightDivide => (
                next.children_of(req.region_id)?
                    .into_iter()
                    .map(|c| region_view(&next, c))
                    .collect::<Result<_>>()?,
                vec![req.region_id],
            ),
        };
        self.persist(&next)?;
        *session = next;
        Ok(ClickDelta {
            revision: session.revision(),
            click_count: session.clicks().len(),
            changed,
            removed,
        })
    }

    fn commit(&self, id: &str, req: &CommitRequest) -> ApiResult<CommitResult> {
        let set_id = self.set_of(id)?;
        let shared = self.session(id)?;
        let mut session = lock(&shared);
        Self::check_revision(&session, req.revision)?;
        let knowledge = self.knowledge(&set_id)?;
        let (_, entry) = self.manifest.image(id).expect("session image is in the manifest");
        let img = load_image(&entry.path)?;

        let record = {
            let flips = self.flips(&set_id, &knowledge)?;
            let mut flips = lock(&flips);
            let mut updated = flips.clone();
            let record = record_flips(
                &session,
                &img,
                &mut updated,
                &knowledge.pca,
                self.cfg.context_scales,
                &set_id,
            )?;
            if !record.is_empty() {
                updated.save(&self.layout.flips_dir(&set_id))?;
                *flips = updated;
            }
            record
        };

        let mask = session.export_mask();
        let mask_path = self.layout.mask_path(id);
        std::fs::create_dir_all(mask_path.parent().expect("mask path has a parent")).map_err(ServiceError::from)?;
        save_mask_png(&mask, &mask_path)?;
        let mut next = session.clone();
        next.seal()?;
        self.persist(&next)?;
        *session = next;
        log::info!(
            "committed {id}: {} px, {} false positives, {} false negatives",
            mask.count(),
            record.false_positives.len(),
            record.false_negatives.len()
        );
        Ok(CommitResult {
            revision: session.revision(),
            mask_path: mask_path.display().to_string(),
            mask_pixels: mask.count(),
            false_positives: record.false_positives,
            false_negatives: record.false_negatives,
        })
    }

    fn image_png(&self, id: &str) -> ApiResult<Vec<u8>> {
        let (_, entry) = self
            .manifest
            .image(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownImage", format!("no image {id:?}")))?;
        Ok(load_image(&entry.path)?.encode_png()?)
    }

    fn sets(&self) -> Vec<SetSummary> {
        self.manifest
            .sets
            .iter()
            .map(|s| SetSummary {
                set_id: s.set_id.clone(),
                tags: s.tags.clone(),
                annotated: s.annotated,
                prepared: self.layout.set_dir(&s.set_id).join("index.json").exists(),
                image_ids: s.images.iter().map(|i| i.id.clone()).collect(),
            })
            .collect()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "PipelineFailure", e.to_string()))?
}

async fn create_session(State(state): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> ApiResult<Json<SessionView>> {
    blocking(move || state.create(&req.image_id)).await.map(Json)
}

async fn get_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionView>> {
    state.view(&id).map(Json)
}

async fn post_click(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<ClickRequest>,
) -> ApiResult<Json<ClickDelta>> {
    blocking(move || state.click(&id, &req)).await.map(Json)
}

async fn post_commit(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<CommitRequest>,
) -> ApiResult<Json<CommitResult>> {
    blocking(move || state.commit(&id, &req)).await.map(Json)
}

async fn get_image(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let png = blocking(move || state.image_png(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn get_sets(State(state): State<Arc<AppState>>) -> Json<Vec<SetSummary>> {
    Json(state.sets())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/clicks", post(post_click))
        .route("/api/sessions/{id}/commit", post(post_commit))
        .route("/api/images/{id}", get(get_image))
        .route("/api/sets", get(get_sets))
        .with_state(state)
}

/// Serves the API until interrupted.
pub async fn serve(state: Arc<AppState>, addr: std::net::SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
