//! HTTP JSON interface to the editor.
//!
//! Images travel as base64 PNG (any decodable format is accepted on input);
//! inputs of any size are center-cropped and resized to model resolution and
//! the applied [`Geometry`] is echoed back. Masks must already be at model
//! resolution. Every error body is `{code, field, message}`.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::config::ServeConfig;
use crate::edit::{linspace, CodeKind, EditSession, Editor, HistoryEntry};
use crate::error::Error;
use crate::imageio::{decode_image, encode_png, tensor_to_rgb, Geometry};
use crate::mask::RegionMask;
use crate::tensor::ImageTensor;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub code: String,
    pub field: Option<String>,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, field: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                field: field.map(str::to_string),
                message: message.into(),
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match &e {
            Error::Rejected { field, message } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_input",
                Some(field),
                message.clone(),
            ),
            Error::UnknownSession(id) => Self::new(
                StatusCode::NOT_FOUND,
                "unknown_session",
                Some("session_id"),
                format!("no session {id}"),
            ),
            Error::NoModel => Self::new(StatusCode::SERVICE_UNAVAILABLE, "no_model", None, e.to_string()),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", None, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct Sessions {
    map: HashMap<String, Arc<Mutex<EditSession>>>,
    order: VecDeque<String>,
    max: usize,
}

#[derive(Clone)]
pub struct AppState {
    editor: Arc<Editor>,
    sessions: Arc<Mutex<Sessions>>,
}

impl AppState {
    pub fn new(editor: Editor, max_sessions: usize) -> Self {
        Self {
            editor: Arc::new(editor),
            sessions: Arc::new(Mutex::new(Sessions {
                map: HashMap::new(),
                order: VecDeque::new(),
                max: max_sessions.max(1),
            })),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<EditSession>>, ApiError> {
        self.sessions
            .lock()
            .expect("session table poisoned")
            .map
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(id.to_string()).into())
    }

    fn insert(&self, s: EditSession) {
        let mut t = self.sessions.lock().expect("session table poisoned");
        while t.map.len() >= t.max {
            match t.order.pop_front() {
                Some(old) => {
                    t.map.remove(&old);
                }
                None => break,
            }
        }
        t.order.push_back(s.id.clone());
        t.map.insert(s.id.clone(), Arc::new(Mutex::new(s)));
    }
}

fn b64_decode(field: &str, s: &str) -> Result<Vec<u8>, ApiError> {
    let s = s.split_once("base64,").map_or(s, |(_, rest)| rest);
    B64.decode(s.trim())
        .map_err(|e| Error::rejected(field, format!("invalid base64: {e}")).into())
}

fn load_image(editor: &Editor, field: &str, b64: &str) -> Result<(ImageTensor, Geometry), ApiError> {
    let bytes = b64_decode(field, b64)?;
    let img = decode_image(&bytes, field)?;
    Ok(editor.prepare(&img))
}

fn load_mask(field: &str, b64: &str, res: i64) -> Result<RegionMask, ApiError> {
    let bytes = b64_decode(field, b64)?;
    let m = RegionMask::from_png_bytes(&bytes).map_err(|e| match e {
        Error::Rejected { message, .. } => Error::rejected(field, message),
        other => other,
    })?;
    if m.height() != res || m.width() != res {
        return Err(Error::rejected(
            field,
            format!("mask is {}x{}, model images are {res}x{res}", m.width(), m.height()),
        )
        .into());
    }
    Ok(m)
}

fn png_b64(img: &ImageTensor) -> Result<String, ApiError> {
    Ok(B64.encode(encode_png(&tensor_to_rgb(img, 0))?))
}

/// Runs blocking model work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", None, e.to_string())
    })?
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub format: String,
    pub resolution: i64,
}

async fn healthz(State(st): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        format: st.editor.format_tag().to_string(),
        resolution: st.editor.resolution(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub image_png: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub reconstruction_png: String,
    pub base_png: String,
    pub geometry: Geometry,
}

async fn create_session(
    State(st): State<AppState>,
    Json(req): Json<CreateSession>,
) -> ApiResult<SessionCreated> {
    let st2 = st.clone();
    let out = blocking(move || {
        let ed = &st2.editor;
        let (img, geometry) = load_image(ed, "image_png", &req.image_png)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut s = EditSession::new(ed, id.clone(), img)?;
        s.geometry = Some(geometry);
        let rec = s.reconstruction(ed)?;
        let resp = SessionCreated {
            session_id: id,
            reconstruction_png: png_b64(&rec)?,
            base_png: png_b64(s.base())?,
            geometry,
        };
        st2.insert(s);
        Ok(resp)
    })
    .await?;
    Ok(Json(out))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SwapRequest {
    pub content_png: String,
    pub style_png: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SwapResponse {
    pub image_png: String,
    pub content_geometry: Geometry,
    pub style_geometry: Geometry,
}

async fn swap(State(st): State<AppState>, Json(req): Json<SwapRequest>) -> ApiResult<SwapResponse> {
    let out = blocking(move || {
        let ed = &st.editor;
        let (c, cg) = load_image(ed, "content_png", &req.content_png)?;
        let (s, sg) = load_image(ed, "style_png", &req.style_png)?;
        Ok(SwapResponse {
            image_png: png_b64(&ed.swap_styles(&c, &s)?)?,
            content_geometry: cg,
            style_geometry: sg,
        })
    })
    .await?;
    Ok(Json(out))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RegionEditRequest {
    pub session_id: String,
    pub style_png: String,
    pub mask_png: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RegionEditResponse {
    pub image_png: String,
    pub step: usize,
    pub history_len: usize,
    pub style_geometry: Geometry,
}

async fn region_edit(
    State(st): State<AppState>,
    Json(req): Json<RegionEditRequest>,
) -> ApiResult<RegionEditResponse> {
    let session = st.session(&req.session_id)?;
    let out = blocking(move || {
        let ed = &st.editor;
        let (style, sg) = load_image(ed, "style_png", &req.style_png)?;
        let mask = load_mask("mask_png", &req.mask_png, ed.resolution())?;
        // One writer per session; other sessions proceed in parallel.
        let mut s = session.lock().expect("session poisoned");
        let result = s.apply(ed, &style, &mask)?;
        Ok(RegionEditResponse {
            image_png: png_b64(&result)?,
            step: s.history().len() - 1,
            history_len: s.history().len(),
            style_geometry: sg,
        })
    })
    .await?;
    Ok(Json(out))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InterpolateRequest {
    pub kind: String,
    pub image_a: String,
    pub image_b: String,
    /// A single `t`; ignored when `frames` is given.
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub frames: Option<usize>,
    pub fixed_counterpart_image: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InterpolateResponse {
    pub t: Vec<f64>,
    pub frames_png: Vec<String>,
}

async fn interpolate(
    State(st): State<AppState>,
    Json(req): Json<InterpolateRequest>,
) -> ApiResult<InterpolateResponse> {
    let out = blocking(move || {
        let ed = &st.editor;
        let kind: CodeKind = req.kind.parse()?;
        let ts = match (req.frames, req.t) {
            (Some(n), _) if (1..=64).contains(&n) => linspace(n),
            (Some(n), _) => {
                return Err(Error::rejected("frames", format!("must be in 1..=64, got {n}")).into())
            }
            (None, Some(t)) => vec![t],
            (None, None) => return Err(Error::rejected("t", "give either t or frames").into()),
        };
        let (a, _) = load_image(ed, "image_a", &req.image_a)?;
        let (b, _) = load_image(ed, "image_b", &req.image_b)?;
        let (f, _) = load_image(ed, "fixed_counterpart_image", &req.fixed_counterpart_image)?;
        let frames = ed.interpolate_frames(kind, &a, &b, &f, &ts)?;
        Ok(InterpolateResponse {
            t: ts,
            frames_png: frames.iter().map(png_b64).collect::<Result<_, _>>()?,
        })
    })
    .await?;
    Ok(Json(out))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HistoryResponse {
    pub session_id: String,
    pub entries: Vec<HistoryEntry>,
    pub base_png: String,
    pub geometry: Option<Geometry>,
}

async fn history(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<HistoryResponse> {
    let session = st.session(&id)?;
    let out = blocking(move || {
        let s = session.lock().expect("session poisoned");
        Ok(HistoryResponse {
            session_id: s.id.clone(),
            entries: s.history().to_vec(),
            base_png: png_b64(s.base())?,
            geometry: s.geometry,
        })
    })
    .await?;
    Ok(Json(out))
}

/// Rejections raised by axum's JSON extractor, reshaped into the common
/// error body.
async fn json_errors(req: axum::extract::Request, next: axum::middleware::Next) -> Response {
    let resp = next.run(req).await;
    let status = resp.status();
    let is_json = resp
        .headers()
        .get(axum::http::header::CONTENT_TYPE)
        .is_some_and(|v| v.as_bytes().starts_with(b"application/json"));
    if (status.is_client_error() || status.is_server_error()) && !is_json {
        let bytes = axum::body::to_bytes(resp.into_body(), 64 << 10)
            .await
            .unwrap_or_default();
        let code = match status {
            StatusCode::NOT_FOUND => "not_found",
            StatusCode::PAYLOAD_TOO_LARGE => "payload_too_large",
            _ => "bad_request",
        };
        return ApiError::new(status, code, None, String::from_utf8_lossy(&bytes)).into_response();
    }
    resp
}

pub fn router(state: AppState, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/history", get(history))
        .route("/v1/swap", post(swap))
        .route("/v1/region_edit", post(region_edit))
        .route("/v1/interpolate", post(interpolate))
        .layer(axum::middleware::from_fn(json_errors))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

/// Binds the listener and serves until the process receives Ctrl-C.
pub async fn serve(editor: Editor, cfg: &ServeConfig) -> crate::error::Result<()> {
    let addr: SocketAddr = format!("{}:{}", cfg.host, cfg.port)
        .parse()
        .map_err(|e| Error::config("serve.host", format!("{e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let app = router(AppState::new(editor, cfg.max_sessions), cfg.max_body_bytes);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
