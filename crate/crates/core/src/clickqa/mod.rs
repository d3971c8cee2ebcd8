//! Online click-to-question answering.
//!
//! A click on the live frame is resolved to the bullet message under it,
//! transcribed by the model (with a cursor composited at the click),
//! answered from the product record and recent history, optionally
//! supplemented by retrieval, and purified before delivery.

mod eval;
mod qa;
mod reward;
mod visual;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{evaluate_dataset, CategoryMetrics, EvalOptions, EvalReport, EvalSample, REFERENCE_QRA, REFERENCE_RQ};
pub use qa::{
    answer_question, extract_question, maybe_retrieve, respond_to_click, ClickContext, ClickResponse, FixtureRetriever,
    QaError, Retriever, RetrievalError,
};
pub use reward::{reward, AcceptAllJudge, ExactMatchJudge, Judge, JudgeError, JudgeKind, ModelJudge, QAExchange};
pub use image::RgbaImage;
pub use visual::{compose_visual_prompt, render_overlay, CursorIcon};

/// Near-miss radius for clicks that land outside every message box.
pub const NEAR_MISS_RADIUS: f64 = 24.0;

/// Pixel rectangle `(x_min, y_min, x_max, y_max)`, half-open on the max side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (f64::from(self.x_min) + f64::from(self.x_max)) / 2.0,
            (f64::from(self.y_min) + f64::from(self.y_max)) / 2.0,
        )
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x_min < other.x_max && other.x_min < self.x_max && self.y_min < other.y_max && other.y_min < self.y_max
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }
}

impl From<(u32, u32, u32, u32)> for BBox {
    fn from((a, b, c, d): (u32, u32, u32, u32)) -> Self {
        Self::new(a, b, c, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulletMessage {
    pub message_id: String,
    pub text: String,
    pub bbox: BBox,
}

impl BulletMessage {
    pub fn new(id: impl Into<String>, text: impl Into<String>, bbox: impl Into<BBox>) -> Self {
        Self {
            message_id: id.into(),
            text: text.into(),
            bbox: bbox.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOverlay {
    pub frame_id: u64,
    pub width: u32,
    pub height: u32,
    pub messages: Vec<BulletMessage>,
}

impl FrameOverlay {
    pub fn validate(&self) -> Result<(), ClickError> {
        let mut seen = std::collections::HashSet::new();
        for m in &self.messages {
            if m.text.trim().is_empty() {
                return Err(ClickError::InvalidOverlay(format!("message {} has empty text", m.message_id)));
            }
            if !m.bbox.is_valid() || m.bbox.x_max > self.width || m.bbox.y_max > self.height {
                return Err(ClickError::InvalidOverlay(format!(
                    "message {} box {:?} outside {}x{} frame",
                    m.message_id, m.bbox, self.width, self.height
                )));
            }
            if !seen.insert(m.message_id.as_str()) {
                return Err(ClickError::InvalidOverlay(format!("duplicate message id {}", m.message_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickEvent {
    pub frame_id: u64,
    pub x: u32,
    pub y: u32,
}

impl ClickEvent {
    pub fn new(frame_id: u64, x: u32, y: u32) -> Self {
        Self { frame_id, x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClickError {
    #[error("click ({x}, {y}) outside {width}x{height} frame")]
    OutOfBounds { x: u32, y: u32, width: u32, height: u32 },
    #[error("click targets frame {click} but overlay is frame {overlay}")]
    FrameMismatch { click: u64, overlay: u64 },
    #[error("no message at click; nearest is {nearest:?} at {distance:.1}px")]
    NoMessageAtClick { nearest: Option<String>, distance: f64 },
    #[error("invalid overlay: {0}")]
    InvalidOverlay(String),
    #[error("cursor icon {icon_w}x{icon_h} larger than frame {frame_w}x{frame_h}")]
    IconTooLarge { icon_w: u32, icon_h: u32, frame_w: u32, frame_h: u32 },
}

fn center_distance(m: &BulletMessage, x: u32, y: u32) -> f64 {
    let (cx, cy) = m.bbox.center();
    (cx - f64::from(x)).hypot(cy - f64::from(y))
}

/// Message under the click, with the default [`NEAR_MISS_RADIUS`].
pub fn resolve_click<'a>(overlay: &'a FrameOverlay, click: &ClickEvent) -> Result<&'a BulletMessage, ClickError> {
    resolve_click_within(overlay, click, NEAR_MISS_RADIUS)
}

/// Message under the click.
///
/// Among boxes containing the click the nearest centre wins; if none contains
/// it, the nearest centre within `radius` pixels wins. Ties go to the lowest
/// `message_id`, so message order never matters.
pub fn resolve_click_within<'a>(
    overlay: &'a FrameOverlay,
    click: &ClickEvent,
    radius: f64,
) -> Result<&'a BulletMessage, ClickError> {
    if click.frame_id != overlay.frame_id {
        return Err(ClickError::FrameMismatch {
            click: click.frame_id,
            overlay: overlay.frame_id,
        });
    }
    if click.x >= overlay.width || click.y >= overlay.height {
        return Err(ClickError::OutOfBounds {
            x: click.x,
            y: click.y,
            width: overlay.width,
            height: overlay.height,
        });
    }
    let nearest = |candidates: &mut dyn Iterator<Item = &'a BulletMessage>| {
        candidates
            .map(|m| (center_distance(m, click.x, click.y), m))
            .min_by(|(da, a), (db, b)| da.total_cmp(db).then_with(|| a.message_id.cmp(&b.message_id)))
    };
    if let Some((_, m)) = nearest(&mut overlay.messages.iter().filter(|m| m.bbox.contains(click.x, click.y))) {
        return Ok(m);
    }
    match nearest(&mut overlay.messages.iter()) {
        Some((d, m)) if d <= radius => Ok(m),
        Some((d, m)) => Err(ClickError::NoMessageAtClick {
            nearest: Some(m.message_id.clone()),
            distance: d,
        }),
        None => Err(ClickError::NoMessageAtClick {
            nearest: None,
            distance: f64::INFINITY,
        }),
    }
}
