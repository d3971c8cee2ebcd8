//! Chat-completion client for OpenAI-compatible inference servers.
//!
//! Requests go to `{endpoint}/v1/chat/completions` with `temperature: 0`.
//! Images travel as PNG data URLs. Token log-probabilities are requested
//! only for caption scoring and read from `choices[0].logprobs.content`.

use std::time::Duration;

use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use ureq::Agent;

use super::{
    AnswerPrompt, BackendError, CaptionPrompt, ChatMessage, ClickPrompt, CopyDraft, CopyPrompt,
    IntegrationPrompt, JudgePrompt, ModelBackend, RewritePrompt,
};
use crate::kea::{trace_from_pairs, TokenScore};

pub struct HttpBackend {
    endpoint: String,
    model: String,
    timeout: Duration,
    retry: u32,
    agent: Agent,
}

#[derive(Debug, Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ReplyMessage,
    #[serde(default)]
    logprobs: Option<LogProbs>,
}

#[derive(Debug, Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct LogProbs {
    #[serde(default)]
    content: Vec<TokenLogProb>,
}

#[derive(Debug, Deserialize)]
struct TokenLogProb {
    token: String,
    logprob: f64,
}

struct Reply {
    text: String,
    logprobs: Vec<TokenLogProb>,
}

fn message_json(m: &ChatMessage) -> Value {
    match &m.image {
        None => json!({"role": m.role, "content": m.text}),
        Some(png) => {
            let url = format!(
                "data:image/png;base64,{}",
                base64::engine::general_purpose::STANDARD.encode(png)
            );
            json!({
                "role": m.role,
                "content": [
                    {"type": "text", "text": m.text},
                    {"type": "image_url", "image_url": {"url": url}},
                ],
            })
        }
    }
}

/// Strip a surrounding markdown code fence, if any.
fn unfence(text: &str) -> &str {
    let t = text.trim();
    let Some(inner) = t.strip_prefix("```") else {
        return t;
    };
    let inner = inner.trim_start_matches(|c: char| c.is_ascii_alphabetic());
    inner.strip_suffix("```").unwrap_or(inner).trim()
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, timeout: Duration, retry: u32) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            timeout,
            retry,
            agent,
        }
    }

    fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.endpoint)
    }

    fn complete(&self, messages: &[ChatMessage], logprobs: bool) -> Result<Reply, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": messages.iter().map(message_json).collect::<Vec<_>>(),
            "temperature": 0,
            "stream": false,
            "logprobs": logprobs,
        });
        let mut last_err = BackendError::Transport("no attempt made".into());
        for _ in 0..=self.retry {
            match self.agent.post(&self.url()).send_json(&body) {
                Ok(mut resp) => {
                    let parsed: Completion = resp
                        .body_mut()
                        .read_json()
                        .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
                    let choice = parsed
                        .choices
                        .into_iter()
                        .next()
                        .ok_or_else(|| BackendError::InvalidResponse("no choices".into()))?;
                    return Ok(Reply {
                        text: choice.message.content.unwrap_or_default(),
                        logprobs: choice.logprobs.map(|l| l.content).unwrap_or_default(),
                    });
                }
                Err(ureq::Error::Timeout(_)) => last_err = BackendError::Timeout(self.timeout),
                Err(ureq::Error::StatusCode(code)) if code < 500 => {
                    return Err(BackendError::Transport(format!("http status {code}")));
                }
                Err(e) => last_err = BackendError::Transport(e.to_string()),
            }
        }
        Err(last_err)
    }

    fn text(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        Ok(self.complete(messages, false)?.text.trim().to_string())
    }
}

impl ModelBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn read_click(&self, prompt: &ClickPrompt<'_>) -> Result<String, BackendError> {
        self.text(&prompt.messages())
    }

    fn answer(&self, prompt: &AnswerPrompt<'_>) -> Result<String, BackendError> {
        self.text(&prompt.messages())
    }

    fn integrate(&self, prompt: &IntegrationPrompt<'_>) -> Result<String, BackendError> {
        let reply = self.text(&prompt.messages())?;
        Ok(unfence(&reply).to_string())
    }

    fn write_copy(&self, prompt: &CopyPrompt<'_>) -> Result<CopyDraft, BackendError> {
        let reply = self.text(&prompt.messages())?;
        serde_json::from_str(unfence(&reply)).map_err(|e| BackendError::InvalidResponse(format!("copy: {e}")))
    }

    fn rewrite(&self, prompt: &RewritePrompt<'_>) -> Result<String, BackendError> {
        self.text(&prompt.messages())
    }

    fn caption(&self, prompt: &CaptionPrompt<'_>) -> Result<String, BackendError> {
        let reply = self.text(&prompt.messages())?;
        match prompt.prefix {
            Some(prefix) if !prefix.is_empty() => {
                let joined = prefix.join(" ");
                if reply.starts_with(&joined) {
                    Ok(reply)
                } else {
                    Ok(format!("{joined} {reply}"))
                }
            }
            _ => Ok(reply),
        }
    }

    fn score_caption(&self, caption: &str) -> Result<Vec<TokenScore>, BackendError> {
        let messages = [
            ChatMessage::system("Repeat the user's text exactly, with nothing else."),
            ChatMessage::user(caption),
        ];
        let reply = self.complete(&messages, true)?;
        if reply.logprobs.is_empty() {
            return Err(BackendError::InvalidResponse("server returned no token log-probabilities".into()));
        }
        Ok(trace_from_pairs(
            reply.logprobs.into_iter().map(|t| (t.token, t.logprob)),
        ))
    }

    fn judge(&self, prompt: &JudgePrompt<'_>) -> Result<bool, BackendError> {
        let reply = self.text(&prompt.messages())?.to_lowercase();
        if reply.starts_with("yes") {
            Ok(true)
        } else if reply.starts_with("no") {
            Ok(false)
        } else {
            Err(BackendError::InvalidResponse(format!("judge reply not yes/no: {reply}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unfence_strips_code_blocks() {
        assert_eq!(unfence("```json\n{\"a\":1}\n```"), "{\"a\":1}");
        assert_eq!(unfence(" {\"a\":1} "), "{\"a\":1}");
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        // port 9 (discard) is closed on loopback in the sandbox
        let b = HttpBackend::new("http://127.0.0.1:9", "m", Duration::from_millis(500), 0);
        let err = b.rewrite(&RewritePrompt { sentence: "x", flagged: &[] }).unwrap_err();
        assert!(matches!(err, BackendError::Transport(_) | BackendError::Timeout(_)));
    }
}
