//! Request and response bodies of the HTTP service.

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use seedsplat::edit::{DragOperation, EditMask, EditRequest};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Health {
    pub status: String,
}

/// A produced file, either referenced on disk or inlined as base64.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base64: Option<String>,
    pub media_type: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRef {
    pub view: usize,
    pub views: usize,
    pub image: Artifact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    /// Base64-encoded PNG of the input view.
    pub image: String,
    #[serde(default)]
    pub seed: u64,
    /// Ring views rendered per response; defaults to the bundle rig.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub views: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionResponse {
    pub session_id: String,
    pub bundle_version: String,
    pub seed: u64,
    pub seeds: Vec<[f64; 3]>,
    pub gaussian_count: usize,
    pub splats: Artifact,
    pub renders: Vec<RenderRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditResponse {
    pub session_id: String,
    /// 1 for the first edit of a session.
    pub edit: usize,
    pub seeds: Vec<[f64; 3]>,
    pub mask: EditMask,
    pub gaussian_count: usize,
    pub splats: Artifact,
    pub renders: Vec<RenderRef>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderResponse {
    pub session_id: String,
    pub render: RenderRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedSteps {
    pub seed: usize,
    pub mapper: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub version: String,
    /// Bundle configuration as stored in the bundle.
    pub config: Value,
    pub trained_steps: TrainedSteps,
    pub seed_count: usize,
    pub gaussian_count: usize,
    pub session_capacity: usize,
    pub inline_renders: bool,
    pub deterministic: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldError {
    /// Path into the request body, such as `ops[0].target`.
    pub field: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}
