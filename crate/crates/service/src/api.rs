//! HTTP routes, wire types and handlers.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock as StdRwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use otoar_core::Landmark;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;
use tokio::sync::RwLock;

use crate::error::ServiceError;
use crate::session::{Registration, Session};

pub const PPM_MEDIA_TYPE: &str = "image/x-portable-pixmap";
pub const PGM_MEDIA_TYPE: &str = "image/x-portable-graymap";

/// Geometry number, written with 17 significant digits; non-finite values
/// become `null`.
#[derive(Debug, Clone, Copy)]
pub struct G(pub f64);

impl Serialize for G {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        RawValue::from_string(format!("{:.16e}", self.0))
            .map_err(serde::ser::Error::custom)?
            .serialize(s)
    }
}

#[derive(Debug, Serialize)]
pub struct PickView {
    pub name: &'static str,
    pub u: G,
    pub v: G,
}

#[derive(Debug, Serialize)]
pub struct ResidualView {
    pub name: &'static str,
    pub residual_px: G,
}

#[derive(Debug, Serialize)]
pub struct RegistrationView {
    /// Row-major 3×4 projection, unit Frobenius norm.
    pub camera: Vec<G>,
    pub residuals: Vec<ResidualView>,
    pub rms_px: G,
}

impl From<&Registration> for RegistrationView {
    fn from(r: &Registration) -> Self {
        Self {
            camera: r.camera.to_row_major().iter().map(|&v| G(v)).collect(),
            residuals: r
                .residuals
                .iter()
                .map(|&(l, v)| ResidualView {
                    name: l.key(),
                    residual_px: G(v),
                })
                .collect(),
            rms_px: G(r.rms),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TrackView {
    pub frame: usize,
    pub status: &'static str,
    pub inliers: Option<usize>,
    pub mean_residual_px: G,
}

#[derive(Debug, Serialize)]
pub struct SessionView {
    pub id: String,
    pub case: String,
    pub frames: String,
    pub case_id: String,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub revision: u64,
    pub pickable: Vec<&'static str>,
    pub picks: Vec<PickView>,
    pub registration: Option<RegistrationView>,
    pub track: Option<TrackView>,
}

impl From<&Session> for SessionView {
    fn from(s: &Session) -> Self {
        Self {
            id: s.id.clone(),
            case: s.case_path.clone(),
            frames: s.frames_path.clone(),
            case_id: s.case_id.clone(),
            frame_count: s.frame_count,
            width: s.width,
            height: s.height,
            revision: s.revision,
            pickable: Landmark::REGISTRATION.iter().map(|l| l.key()).collect(),
            picks: s
                .picks
                .iter()
                .map(|(l, uv)| PickView {
                    name: l.key(),
                    u: G(uv[0]),
                    v: G(uv[1]),
                })
                .collect(),
            registration: s.registration.as_ref().map(RegistrationView::from),
            track: s.track_state().map(|t| TrackView {
                frame: t.frame,
                status: t.status.as_str(),
                inliers: t.inliers,
                mean_residual_px: G(t.mean_residual),
            }),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PickResponse {
    pub name: String,
    pub count: usize,
    pub revision: u64,
}

#[derive(Debug, Serialize)]
pub struct RegisterResponse {
    #[serde(flatten)]
    pub registration: RegistrationView,
    pub revision: u64,
}

#[derive(Debug, Deserialize)]
struct CreateRequest {
    /// Case sidecar, relative to the data root.
    case: String,
    /// Frame directory, relative to the data root.
    frames: String,
}

#[derive(Debug, Deserialize)]
struct PickRequest {
    u: f64,
    v: f64,
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

#[derive(Debug, Serialize)]
struct ErrorEnvelope<'a> {
    error: ErrorBody<'a>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorEnvelope {
            error: ErrorBody {
                code: self.code(),
                message: self.to_string(),
            },
        };
        (self.status(), Json(body)).into_response()
    }
}

pub struct AppState {
    root: PathBuf,
    sessions: StdRwLock<HashMap<String, Arc<RwLock<Session>>>>,
    next_id: AtomicU64,
}

type Shared = Arc<AppState>;

impl AppState {
    pub fn new(root: PathBuf) -> Self {
        Self {
            root,
            sessions: StdRwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<RwLock<Session>>, ServiceError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::SessionNotFound(id.to_string()))
    }
}

pub fn router(root: PathBuf) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/picks/{name}", put(put_pick).delete(delete_pick))
        .route("/sessions/{id}/register", post(register))
        .route("/sessions/{id}/frames/{n}/raw", get(raw_frame))
        .route("/sessions/{id}/frames/{n}/overlay", get(overlay_frame))
        .with_state(Arc::new(AppState::new(root)))
}

fn parse_body<'a, T: Deserialize<'a>>(body: &'a [u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::InvalidRequest(format!("bad request body: {e}")))
}

fn parse_index(n: &str) -> Result<usize, ServiceError> {
    n.parse()
        .map_err(|_| ServiceError::InvalidRequest(format!("frame index `{n}` is not a non-negative integer")))
}

/// Runs CPU or disk work off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn create_session(State(app): State<Shared>, body: Bytes) -> Result<impl IntoResponse, ServiceError> {
    let req: CreateRequest = parse_body(&body)?;
    let id = format!("s{}", app.next_id.fetch_add(1, Ordering::Relaxed));
    let root = app.root.clone();
    let session = blocking(move || Session::create(id, &root, &req.case, &req.frames)).await?;
    let view = SessionView::from(&session);
    app.sessions
        .write()
        .expect("session map lock")
        .insert(session.id.clone(), Arc::new(RwLock::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>, ServiceError> {
    let s = app.session(&id)?;
    let s = s.read().await;
    Ok(Json(SessionView::from(&*s)))
}

async fn put_pick(
    State(app): State<Shared>,
    Path((id, name)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<PickResponse>, ServiceError> {
    let req: PickRequest = parse_body(&body)?;
    let s = app.session(&id)?;
    let mut s = s.write().await;
    let count = s.set_pick(&name, [req.u, req.v])?;
    Ok(Json(PickResponse {
        name,
        count,
        revision: s.revision,
    }))
}

async fn delete_pick(
    State(app): State<Shared>,
    Path((id, name)): Path<(String, String)>,
) -> Result<Json<PickResponse>, ServiceError> {
    let s = app.session(&id)?;
    let mut s = s.write().await;
    let count = s.delete_pick(&name)?;
    Ok(Json(PickResponse {
        name,
        count,
        revision: s.revision,
    }))
}

async fn register(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<RegisterResponse>, ServiceError> {
    let mut s = app.session(&id)?.write_owned().await;
    blocking(move || {
        let registration = RegistrationView::from(s.register()?);
        Ok(Json(RegisterResponse {
            registration,
            revision: s.revision,
        }))
    })
    .await
}

fn image(media_type: &'static str, bytes: Vec<u8>, mut headers: HeaderMap) -> Response {
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static(media_type));
    (headers, bytes).into_response()
}

async fn raw_frame(State(app): State<Shared>, Path((id, n)): Path<(String, String)>) -> Result<Response, ServiceError> {
    let n = parse_index(&n)?;
    let s = app.session(&id)?.read_owned().await;
    let bytes = blocking(move || s.raw_frame(n)).await?;
    Ok(image(PGM_MEDIA_TYPE, bytes, HeaderMap::new()))
}

async fn overlay_frame(State(app): State<Shared>, Path((id, n)): Path<(String, String)>) -> Result<Response, ServiceError> {
    let n = parse_index(&n)?;
    let mut s = app.session(&id)?.write_owned().await;
    let out = blocking(move || s.overlay_frame(n)).await?;
    let mut headers = HeaderMap::new();
    let value = |v: String| HeaderValue::from_str(&v).expect("ascii header");
    headers.insert("x-track-status", HeaderValue::from_static(out.state.status.as_str()));
    headers.insert(
        "x-inlier-count",
        value(out.state.inliers.map_or_else(|| "none".to_string(), |c| c.to_string())),
    );
    headers.insert("x-revision", value(out.revision.to_string()));
    headers.insert("x-frame", value(n.to_string()));
    Ok(image(PPM_MEDIA_TYPE, out.ppm, headers))
}
