use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, JudgePrompt, ModelBackend};
use crate::text::same_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeKind {
    ExactMatch,
    ExternalModel,
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("gold {0} is empty")]
    EmptyGold(&'static str),
    #[error("external judge failed: {0}")]
    Backend(#[from] BackendError),
}

/// Decides whether a predicted answer is acceptable against the gold answer.
pub trait Judge: Send + Sync {
    fn kind(&self) -> JudgeKind;
    fn accepts(&self, question: &str, predicted: &str, gold: &str) -> Result<bool, JudgeError>;
}

/// Whitespace-normalised exact match.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchJudge;

impl Judge for ExactMatchJudge {
    fn kind(&self) -> JudgeKind {
        JudgeKind::ExactMatch
    }

    fn accepts(&self, _question: &str, predicted: &str, gold: &str) -> Result<bool, JudgeError> {
        Ok(same_text(predicted, gold))
    }
}

/// Accepts every answer. The most lenient judge possible.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAllJudge;

impl Judge for AcceptAllJudge {
    fn kind(&self) -> JudgeKind {
        JudgeKind::ExactMatch
    }

    fn accepts(&self, _question: &str, _predicted: &str, _gold: &str) -> Result<bool, JudgeError> {
        Ok(true)
    }
}

/// Delegates the verdict to a model backend. Failures surface as errors.
pub struct ModelJudge {
    backend: Arc<dyn ModelBackend>,
}

impl ModelJudge {
    pub fn new(backend: Arc<dyn ModelBackend>) -> Self {
        Self { backend }
    }
}

impl Judge for ModelJudge {
    fn kind(&self) -> JudgeKind {
        JudgeKind::ExternalModel
    }

    fn accepts(&self, question: &str, predicted: &str, gold: &str) -> Result<bool, JudgeError> {
        Ok(self.backend.judge(&JudgePrompt {
            question,
            predicted,
            gold,
        })?)
    }
}

/// Score of one exchange: 1 for the right question and an accepted answer,
/// 0.5 for the right question and a rejected answer, 0 otherwise.
pub fn reward(q_hat: &str, a_hat: &str, q_star: &str, a_star: &str, judge: &dyn Judge) -> Result<f64, JudgeError> {
    if q_star.trim().is_empty() {
        return Err(JudgeError::EmptyGold("question"));
    }
    if a_star.trim().is_empty() {
        return Err(JudgeError::EmptyGold("answer"));
    }
    if !same_text(q_hat, q_star) {
        return Ok(0.0);
    }
    Ok(if judge.accepts(q_star, a_hat, a_star)? { 1.0 } else { 0.5 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExchange {
    pub question_predicted: String,
    pub answer_predicted: String,
    pub question_gold: String,
    pub answer_gold: String,
    pub reward: f64,
}

impl QAExchange {
    pub fn score(
        question_predicted: impl Into<String>,
        answer_predicted: impl Into<String>,
        question_gold: impl Into<String>,
        answer_gold: impl Into<String>,
        judge: &dyn Judge,
    ) -> Result<Self, JudgeError> {
        let (qp, ap, qg, ag) = (
            question_predicted.into(),
            answer_predicted.into(),
            question_gold.into(),
            answer_gold.into(),
        );
        let r = reward(&qp, &ap, &qg, &ag, judge)?;
        Ok(Self {
            question_predicted: qp,
            answer_predicted: ap,
            question_gold: qg,
            answer_gold: ag,
            reward: r,
        })
    }
}
