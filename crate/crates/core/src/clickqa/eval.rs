use std::collections::BTreeMap;

use image::RgbaImage;
use serde::{Deserialize, Serialize};

use super::{answer_question, NEAR_MISS_RADIUS, extract_question, render_overlay, ClickEvent, CursorIcon, FrameOverlay, Judge};
use crate::backend::ModelBackend;
use crate::text::same_text;

/// Question recognition accuracy of the best published configuration.
/// Reported alongside results for orientation; never a pass criterion.
pub const REFERENCE_QRA: f64 = 0.913;
/// Response quality of the same configuration.
pub const REFERENCE_RQ: f64 = 0.876;

const UNCATEGORISED: &str = "uncategorised";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub overlay: FrameOverlay,
    pub click: ClickEvent,
    pub question_gold: String,
    pub answer_gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_qa_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Render each overlay and composite the cursor before transcription.
    pub visual_prompt: bool,
    #[serde(default = "default_radius")]
    pub near_miss_radius: f64,
}

fn default_radius() -> f64 {
    NEAR_MISS_RADIUS
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            visual_prompt: true,
            near_miss_radius: NEAR_MISS_RADIUS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub count: usize,
    pub qra: f64,
    pub rq: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Default)]
struct Tally {
    count: usize,
    recognised: usize,
    accepted: usize,
    reward: f64,
}

impl Tally {
    fn add(&mut self, recognised: bool, accepted: bool, reward: f64) {
        self.count += 1;
        self.recognised += usize::from(recognised);
        self.accepted += usize::from(accepted);
        self.reward += reward;
    }

    fn metrics(&self) -> CategoryMetrics {
        if self.count == 0 {
            return CategoryMetrics::default();
        }
        let n = self.count as f64;
        CategoryMetrics {
            count: self.count,
            qra: self.recognised as f64 / n,
            rq: self.accepted as f64 / n,
            mean_reward: self.reward / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: CategoryMetrics,
    pub per_category: BTreeMap<String, CategoryMetrics>,
    /// Samples whose transcription failed (counted as unrecognised).
    pub extraction_failures: usize,
    /// Samples whose answer could not be produced or judged (counted as rejected).
    pub answer_failures: usize,
    pub reference_qra: f64,
    pub reference_rq: f64,
}

/// QRA and RQ over a labelled click set.
///
/// QRA is the fraction of transcriptions equal to the gold question; RQ is the
/// fraction of answers the judge accepts. Both are reported per category and
/// overall (sample-weighted).
pub fn evaluate_dataset(
    samples: &[EvalSample],
    backend: &dyn ModelBackend,
    judge: &dyn Judge,
    options: &EvalOptions,
) -> EvalReport {
    let cursor = CursorIcon::arrow();
    let mut overall = Tally::default();
    let mut per_category: BTreeMap<String, Tally> = BTreeMap::new();
    let mut extraction_failures = 0;
    let mut answer_failures = 0;
    let mut cached: Option<(&FrameOverlay, RgbaImage)> = None;

    for s in samples {
        let frame = if options.visual_prompt {
            if cached.as_ref().is_none_or(|(ov, _)| *ov != &s.overlay) {
                cached = Some((&s.overlay, render_overlay(&s.overlay)));
            }
            cached.as_ref().map(|(_, img)| img)
        } else {
            None
        };
        let (recognised, accepted) = match extract_question(backend, frame, Some(&s.overlay), &s.click, &cursor, options.near_miss_radius) {
            Err(e) => {
                tracing::debug!(error = %e, "transcription failed");
                extraction_failures += 1;
                (false, false)
            }
            Ok(q_hat) => {
                let recognised = same_text(&q_hat, &s.question_gold);
                let verdict = answer_question(backend, &q_hat, None, &[], None)
                    .map_err(|e| e.to_string())
                    .and_then(|a_hat| {
                        judge
                            .accepts(&s.question_gold, &a_hat, &s.answer_gold)
                            .map_err(|e| e.to_string())
                    });
                match verdict {
                    Ok(v) => (recognised, v),
                    Err(e) => {
                        tracing::debug!(error = %e, "answer or verdict failed");
                        answer_failures += 1;
                        (recognised, false)
                    }
                }
            }
        };
        let reward = match (recognised, accepted) {
            (false, _) => 0.0,
            (true, true) => 1.0,
            (true, false) => 0.5,
        };
        overall.add(recognised, accepted, reward);
        let cat = s.category.as_deref().unwrap_or(UNCATEGORISED).to_string();
        per_category.entry(cat).or_default().add(recognised, accepted, reward);
    }

    EvalReport {
        overall: overall.metrics(),
        per_category: per_category.into_iter().map(|(k, t)| (k, t.metrics())).collect(),
        extraction_failures,
        answer_failures,
        reference_qra: REFERENCE_QRA,
        reference_rq: REFERENCE_RQ,
    }
}
