//! Refinement through an OpenAI-compatible chat completions endpoint.
//!
//! Every failure (transport, timeout, bad status, unparseable or empty
//! reply) falls back to the top N-best hypothesis so a batch never aborts.

use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::datasmith::prompt::{format_input, INSTRUCTION};
use crate::records::{NBestEntry, RefineSource};

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("environment variable {0} holding the API token is not set")]
    MissingToken(String),
    #[error("max_in_flight must be at least 1")]
    Concurrency,
    #[error("cannot build HTTP client: {0}")]
    Client(#[from] reqwest::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatEndpoint {
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding a bearer token.
    pub token_env: Option<String>,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    /// Append N-best log scores to the candidate lines.
    pub include_scores: bool,
}

impl Default for ChatEndpoint {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".to_string(),
            model: "refiner".to_string(),
            token_env: None,
            timeout_ms: 30_000,
            max_in_flight: 4,
            include_scores: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatJob {
    pub utt: String,
    pub pinyin: String,
    pub nbest: Vec<NBestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatOutcome {
    pub utt: String,
    pub text: String,
    pub source: RefineSource,
    /// Why the fallback was taken.
    pub failure: Option<String>,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

pub struct ChatClient {
    endpoint: ChatEndpoint,
    http: reqwest::Client,
    token: Option<String>,
}

impl ChatClient {
    pub fn new(endpoint: ChatEndpoint) -> Result<Self, ChatError> {
        if endpoint.max_in_flight == 0 {
            return Err(ChatError::Concurrency);
        }
        let token = match &endpoint.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| ChatError::MissingToken(var.clone()))?),
            None => None,
        };
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()?;
        Ok(Self {
            endpoint,
            http,
            token,
        })
    }

    pub fn endpoint(&self) -> &ChatEndpoint {
        &self.endpoint
    }

    async fn request(&self, job: &ChatJob) -> Result<String, String> {
        let texts: Vec<&str> = job.nbest.iter().map(|e| e.text.as_str()).collect();
        let scores: Vec<f64> = job.nbest.iter().map(|e| e.log_score).collect();
        let input = format_input(
            &job.pinyin,
            &texts,
            self.endpoint.include_scores.then_some(scores.as_slice()),
        );
        let body = json!({
            "model": self.endpoint.model,
            "messages": [
                {"role": "system", "content": INSTRUCTION},
                {"role": "user", "content": input},
            ],
            "temperature": 0,
        });
        let mut req = self.http.post(&self.endpoint.url).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let send = async {
            let resp = req.send().await.map_err(|e| format!("transport: {e}"))?;
            let status = resp.status();
            if !status.is_success() {
                return Err(format!("status {status}"));
            }
            resp.json::<Completion>()
                .await
                .map_err(|e| format!("unparseable reply: {e}"))
        };
        let completion = tokio::time::timeout(Duration::from_millis(self.endpoint.timeout_ms), send)
            .await
            .map_err(|_| "timeout".to_string())??;
        let text = completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .map(|s| s.trim().to_string())
            .unwrap_or_default();
        if text.is_empty() {
            return Err("empty reply".to_string());
        }
        Ok(text)
    }

    pub async fn refine_one(&self, job: &ChatJob) -> ChatOutcome {
        match self.request(job).await {
            Ok(text) => ChatOutcome {
                utt: job.utt.clone(),
                text,
                source: RefineSource::Chat,
                failure: None,
            },
            Err(reason) => {
                tracing::warn!(utt = %job.utt, %reason, "chat refinement fell back to top hypothesis");
                ChatOutcome {
                    utt: job.utt.clone(),
                    text: job.nbest.first().map(|e| e.text.clone()).unwrap_or_default(),
                    source: RefineSource::Fallback,
                    failure: Some(reason),
                }
            }
        }
    }

    /// Runs at most `max_in_flight` requests at once; results keep input order.
    pub async fn refine_batch(&self, jobs: &[ChatJob]) -> Vec<ChatOutcome> {
        stream::iter(jobs)
            .map(|job| self.refine_one(job))
            .buffered(self.endpoint.max_in_flight)
            .collect()
            .await
    }
}
