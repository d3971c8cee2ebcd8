//! JSON bodies exchanged over HTTP.

use serde::{Deserialize, Serialize};
use streamdesk_core::backend::BackendKind;
use streamdesk_core::kea::KeaConfig;
use streamdesk_core::memory::MemoryEntry;
use streamdesk_core::offline::{Copy, CopyStyle, ProductRecord, PurificationReport, RawMaterial};
use streamdesk_core::ses::{FrameFeature, SesConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductRequest {
    #[serde(default)]
    pub product_id: Option<String>,
    pub materials: Vec<RawMaterial>,
    #[serde(default)]
    pub external_snippets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductResponse {
    pub record: ProductRecord,
    /// Record fields the purifier changed before the record was saved.
    pub purified_fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopyRequest {
    pub product_id: String,
    pub style: CopyStyle,
    /// Sample text whose voice the copy should follow.
    #[serde(default)]
    pub exemplar: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyResponse {
    pub copy: Copy,
    pub body_report: PurificationReport,
    pub phrase_reports: Vec<PurificationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PurifyRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurifyResponse {
    pub text: String,
    pub report: PurificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRequest {
    pub product_id: String,
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub product_id: String,
    pub ses: SesConfig,
    pub kea: KeaConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramesRequest {
    pub frames: Vec<FrameFeature>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramesResponse {
    pub accepted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClickRequest {
    /// Overlay frame the click refers to; the latest overlay when absent.
    #[serde(default)]
    pub frame_id: Option<u64>,
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickReply {
    pub frame_id: u64,
    /// Message the click resolved to geometrically.
    pub message_id: String,
    pub question: String,
    pub answer: String,
    /// Purification applied to the answer.
    pub purification_report: PurificationReport,
    /// Purification applied to the transcribed question.
    pub question_report: PurificationReport,
    pub retrieved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryQuery {
    #[serde(default)]
    pub recent: Option<usize>,
    #[serde(default)]
    pub t0: Option<f64>,
    #[serde(default)]
    pub t1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReply {
    pub version: u64,
    pub entries: Vec<MemoryEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlushReply {
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub backend: BackendKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}
