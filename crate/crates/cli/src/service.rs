//! JSON-over-HTTP service around one loaded bundle.

use std::collections::HashMap;
use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::de::DeserializeOwned;

use seedsplat::edit::{EditRequest, EditSession};
use seedsplat::io::{image, splats};
use seedsplat::pipeline::Pipeline;
use seedsplat::render::{rasterize, GaussianPrimitive, RenderedImage};

use crate::api::*;
use crate::commands::sha256_hex;
use crate::store::{SessionSlot, SessionStore, DEFAULT_CAPACITY};

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub inline_renders: bool,
    /// Where referenced files are written, one subdirectory per session.
    pub render_dir: PathBuf,
    pub capacity: usize,
    pub deterministic: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            inline_renders: false,
            render_dir: PathBuf::from("renders"),
            capacity: DEFAULT_CAPACITY,
            deterministic: false,
        }
    }
}

pub struct AppInner {
    pub pipeline: Arc<Pipeline>,
    pub store: SessionStore,
    pub opts: ServeOptions,
}

#[derive(Clone)]
pub struct AppState(pub Arc<AppInner>);

impl AppState {
    pub fn new(pipeline: Pipeline, opts: ServeOptions) -> Self {
        Self(Arc::new(AppInner {
            pipeline: Arc::new(pipeline),
            store: SessionStore::new(opts.capacity),
            opts,
        }))
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn fields(fields: Vec<FieldError>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: "malformed request".into(),
                stage: None,
                fields,
            },
        }
    }

    fn field(field: &str, message: impl Into<String>) -> Self {
        Self::fields(vec![FieldError {
            field: field.into(),
            message: message.into(),
        }])
    }

    fn not_found(id: &str) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            body: ErrorBody {
                error: format!("unknown session {id}"),
                stage: None,
                fields: vec![],
            },
        }
    }

    fn busy(id: &str) -> Self {
        Self {
            status: StatusCode::CONFLICT,
            body: ErrorBody {
                error: format!("session {id} is busy with another edit"),
                stage: None,
                fields: vec![],
            },
        }
    }

    fn internal(stage: &str, err: impl std::fmt::Display) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                error: err.to_string(),
                stage: Some(stage.into()),
                fields: vec![],
            },
        }
    }

    fn pipeline(err: seedsplat::Error) -> Self {
        let stage = err.stage().unwrap_or("pipeline");
        Self::internal(stage, err)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "body".to_string() } else { path };
        ApiError::field(&field, e.into_inner().to_string())
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal("internal", e))?
}

impl AppInner {
    fn artifact(&self, session: &str, name: &str, media_type: &str, bytes: Vec<u8>) -> Result<Artifact, ApiError> {
        let sha256 = sha256_hex(&bytes);
        let n = bytes.len();
        if self.opts.inline_renders {
            return Ok(Artifact {
                path: None,
                base64: Some(B64.encode(&bytes)),
                media_type: media_type.into(),
                bytes: n,
                sha256,
            });
        }
        let dir = self.opts.render_dir.join(session);
        let write = || -> std::io::Result<PathBuf> {
            fs::create_dir_all(&dir)?;
            let p = dir.join(name);
            fs::write(&p, &bytes)?;
            Ok(fs::canonicalize(&p).unwrap_or(p))
        };
        let path = write().map_err(|e| ApiError::internal("write", e))?;
        Ok(Artifact {
            path: Some(path.display().to_string()),
            base64: None,
            media_type: media_type.into(),
            bytes: n,
            sha256,
        })
    }

    fn render_refs(&self, session: &str, prefix: &str, views: &[usize], count: usize, images: &[RenderedImage]) -> Result<Vec<RenderRef>, ApiError> {
        views
            .iter()
            .zip(images)
            .map(|(&view, img)| {
                let png = image::encode_png(img).map_err(|e| ApiError::internal("render", e))?;
                Ok(RenderRef {
                    view,
                    views: count,
                    image: self.artifact(session, &format!("{prefix}_view{view:02}.png"), "image/png", png)?,
                })
            })
            .collect()
    }

    fn splat_artifact(&self, session: &str, prefix: &str, prims: &[GaussianPrimitive]) -> Result<Artifact, ApiError> {
        self.artifact(session, &format!("{prefix}_splats.bin"), "application/octet-stream", splats::write_binary(prims))
    }
}

async fn healthz() -> Json<Health> {
    Json(Health { status: "ok".into() })
}

pub fn meta_of(app: &AppInner) -> Meta {
    let p = &app.pipeline;
    Meta {
        version: p.version.clone(),
        config: serde_json::to_value(&p.cfg).expect("config serializes"),
        trained_steps: TrainedSteps {
            seed: p.seed_gen.trained_steps,
            mapper: p.mapper.trained_steps,
        },
        seed_count: p.cfg.seed.seeds,
        gaussian_count: p.cfg.vae.gaussian_count(),
        session_capacity: app.store.capacity(),
        inline_renders: app.opts.inline_renders,
        deterministic: app.opts.deterministic,
    }
}

async fn meta(State(app): State<AppState>) -> Json<Meta> {
    Json(meta_of(&app.0))
}

fn decode_image(p: &Pipeline, b64: &str) -> Result<RenderedImage, ApiError> {
    let bytes = B64
        .decode(b64.trim())
        .map_err(|e| ApiError::field("image", format!("not base64: {e}")))?;
    let img = image::decode_png(&bytes).map_err(|e| ApiError::field("image", e.to_string()))?;
    p.check_image(&img).map_err(|e| ApiError::field("image", e.to_string()))?;
    Ok(img)
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> ApiResult<CreateSessionResponse> {
    let req: CreateSessionRequest = parse_body(&body)?;
    let p = app.0.pipeline.clone();
    let img = decode_image(&p, &req.image)?;
    let views = req.views.unwrap_or(p.cfg.rig.views);
    if views == 0 {
        return Err(ApiError::field("views", "must be at least 1"));
    }
    let seed = req.seed;
    let (session, renders) = blocking(move || {
        let s = EditSession::create(&p, img, seed).map_err(ApiError::pipeline)?;
        let r = p.render_views(&s.last.primitives, views).map_err(ApiError::pipeline)?;
        Ok((s, r))
    })
    .await?;
    let seeds = session.original().seeds.clone();
    let prims = session.last.primitives.clone();
    let (id, slot) = app.0.store.insert(session, views);
    let all: Vec<usize> = (0..views).collect();
    let prefix = next_prefix(&slot, "initial");
    Ok(Json(CreateSessionResponse {
        renders: app.0.render_refs(&id, &prefix, &all, views, &renders)?,
        splats: app.0.splat_artifact(&id, &prefix, &prims)?,
        session_id: id,
        bundle_version: app.0.pipeline.version.clone(),
        seed,
        gaussian_count: prims.len(),
        seeds,
    }))
}

fn next_prefix(slot: &SessionSlot, what: &str) -> String {
    let mut st = slot.state();
    st.files += 1;
    format!("{:04}_{what}", st.files)
}

/// Range checks that need the session; reported per field.
fn validate_edit(req: &EditRequest, seeds: usize, views: usize) -> Result<(), ApiError> {
    let mut fields = Vec::new();
    let mut bad = |field: String, message: String| fields.push(FieldError { field, message });
    for (i, op) in req.ops.iter().enumerate() {
        if op.seed_index >= seeds {
            bad(format!("ops[{i}].seed_index"), format!("{} is out of range for {seeds} seeds", op.seed_index));
        }
        if op.target.iter().any(|v| !v.is_finite()) {
            bad(format!("ops[{i}].target"), "coordinates must be finite".into());
        }
        if !(op.falloff.is_finite() && op.falloff >= 0.0) {
            bad(format!("ops[{i}].falloff"), "must be finite and non-negative".into());
        }
    }
    if let Some(m) = &req.mask {
        if m.len() != seeds {
            bad("mask".into(), format!("has {} entries for {seeds} seeds", m.len()));
        }
    }
    for (i, &v) in req.views.iter().enumerate() {
        if v >= views {
            bad(format!("views[{i}]"), format!("view {v} of {views}"));
        }
    }
    if fields.is_empty() {
        Ok(())
    } else {
        Err(ApiError::fields(fields))
    }
}

async fn edit_session(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<EditResponse> {
    let slot = app.0.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let mut req: EditRequest = parse_body(&body)?;
    let guard = slot.try_acquire().ok_or_else(|| ApiError::busy(&id))?;
    let views = {
        let st = slot.state();
        validate_edit(&req, st.session.original().seeds.len(), st.views)?;
        st.views
    };
    if req.views.is_empty() {
        req.views = (0..views).collect();
    }
    let p = app.0.pipeline.clone();
    let req2 = req.clone();
    let (result, edit) = blocking(move || {
        let mut st = guard.slot().state();
        let r = st.session.apply(&p, &req2, views).map_err(ApiError::pipeline)?;
        st.edits += 1;
        Ok((r, st.edits))
    })
    .await?;
    let prefix = next_prefix(&slot, &format!("edit{edit}"));
    Ok(Json(EditResponse {
        renders: app.0.render_refs(&id, &prefix, &req.views, views, &result.renders)?,
        splats: app.0.splat_artifact(&id, &prefix, &result.decoded.primitives)?,
        session_id: id,
        edit,
        gaussian_count: result.decoded.primitives.len(),
        seeds: result.seeds,
        mask: result.mask,
    }))
}

fn query_usize(q: &HashMap<String, String>, key: &str) -> Result<Option<usize>, ApiError> {
    q.get(key)
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| ApiError::field(key, format!("expected a non-negative integer, got {v:?}")))
        })
        .transpose()
}

async fn render_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<RenderResponse> {
    let slot = app.0.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let view = query_usize(&q, "view")?.ok_or_else(|| ApiError::field("view", "required"))?;
    let views = match query_usize(&q, "views")? {
        Some(v) => v,
        None => slot.state().views,
    };
    if view >= views {
        return Err(ApiError::field("view", format!("view {view} of {views}")));
    }
    let p = app.0.pipeline.clone();
    let s2 = slot.clone();
    let img = blocking(move || {
        let st = s2.state();
        let cam = p.view_camera(view, views).map_err(ApiError::pipeline)?;
        rasterize(&st.session.last.primitives, &cam, &p.render_options()).map_err(|e| ApiError::internal("render", e))
    })
    .await?;
    let prefix = next_prefix(&slot, "render");
    let mut refs = app.0.render_refs(&id, &prefix, &[view], views, &[img])?;
    Ok(Json(RenderResponse {
        session_id: id,
        render: refs.remove(0),
    }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/meta", get(meta))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/edit", post(edit_session))
        .route("/sessions/{id}/render", get(render_session))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
