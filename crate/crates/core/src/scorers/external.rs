//! HTTP client for scorers hosted outside this process.
//!
//! `POST {endpoint}/score` with `{"mode", "items": [{"context", "current",
//! "role"?}]}`; the reply is `{"scores": [...]}` for discriminative mode and
//! `{"log_probs": [...]}` for generative mode, one value per item in order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DiscriminativeScorer, GenerativeScorer, ScoreError};
use crate::model::Role;
use crate::transcript::TrainingExample;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
const DEFAULT_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Discriminative,
    Generative,
}

#[derive(Serialize)]
struct Item<'a> {
    context: &'a [String],
    current: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    role: Option<Role>,
}

#[derive(Serialize)]
struct Request<'a> {
    mode: ScoreMode,
    items: Vec<Item<'a>>,
}

#[derive(Debug, Clone)]
pub struct ExternalScorer {
    url: String,
    agent: ureq::Agent,
    max_in_flight: usize,
    batch_size: usize,
}

impl ExternalScorer {
    /// `endpoint` is the server base URL, e.g. `http://127.0.0.1:8500`.
    pub fn new(endpoint: &str) -> Self {
        Self::with_options(endpoint, DEFAULT_TIMEOUT, DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_options(endpoint: &str, timeout: Duration, max_in_flight: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: format!("{}/score", endpoint.trim_end_matches('/')),
            agent,
            max_in_flight: max_in_flight.max(1),
            batch_size: DEFAULT_BATCH,
        }
    }

    /// Items per request.
    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    fn post(&self, mode: ScoreMode, items: Vec<Item<'_>>) -> Result<Vec<f64>, ScoreError> {
        let n = items.len();
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&Request { mode, items })
            .map_err(map_transport)?;
        let status = resp.status().as_u16();
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| match map_transport(e) {
                ScoreError::Transport(m) => ScoreError::MalformedResponse(m),
                other => other,
            })?;
        if status != 200 {
            let msg = body.get("error").and_then(Value::as_str).unwrap_or("no message");
            return Err(ScoreError::Transport(format!("status {status}: {msg}")));
        }
        let field = match mode {
            ScoreMode::Discriminative => "scores",
            ScoreMode::Generative => "log_probs",
        };
        let values = body
            .get(field)
            .and_then(Value::as_array)
            .ok_or_else(|| ScoreError::MalformedResponse(format!("missing `{field}` array")))?;
        if values.len() != n {
            return Err(ScoreError::MalformedResponse(format!("expected {n} values, got {}", values.len())));
        }
        values
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| ScoreError::MalformedResponse(format!("non-numeric value {v}")))
            })
            .collect()
    }

    /// Scores `examples` in request-sized chunks, at most `max_in_flight`
    /// at a time, and validates every value.
    pub fn score(&self, mode: ScoreMode, examples: &[TrainingExample]) -> Result<Vec<f64>, ScoreError> {
        let chunks: Vec<&[TrainingExample]> = examples.chunks(self.batch_size).collect();
        let results: Mutex<Vec<Option<Result<Vec<f64>, ScoreError>>>> =
            Mutex::new((0..chunks.len()).map(|_| None).collect());
        let cursor = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..self.max_in_flight.min(chunks.len()) {
                s.spawn(|| loop {
                    let i = cursor.fetch_add(1, Ordering::Relaxed);
                    let Some(chunk) = chunks.get(i) else { break };
                    let items = chunk
                        .iter()
                        .map(|e| Item {
                            context: &e.context,
                            current: &e.current,
                            role: (mode == ScoreMode::Generative).then_some(e.assumed_role),
                        })
                        .collect();
                    let r = self.post(mode, items);
                    results.lock().expect("no poisoned workers")[i] = Some(r);
                });
            }
        });
        let mut out = Vec::with_capacity(examples.len());
        for r in results.into_inner().expect("no poisoned workers") {
            out.extend(r.expect("every chunk scored")?);
        }
        for (index, &value) in out.iter().enumerate() {
            let ok = match mode {
                ScoreMode::Discriminative => (0.0..=1.0).contains(&value),
                ScoreMode::Generative => value.is_finite() && value <= 0.0,
            };
            if !ok {
                return Err(ScoreError::OutOfRangeScore { index, value });
            }
        }
        Ok(out)
    }
}

fn map_transport(e: ureq::Error) -> ScoreError {
    match e {
        ureq::Error::Timeout(_) => ScoreError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => ScoreError::Timeout,
        other => ScoreError::Transport(other.to_string()),
    }
}

fn single(context: &[String], current: &str, role: Role) -> TrainingExample {
    TrainingExample {
        game_id: Default::default(),
        player: Default::default(),
        utterance_index: 0,
        context: context.to_vec(),
        current: current.to_owned(),
        assumed_role: role,
        label: true,
    }
}

impl DiscriminativeScorer for ExternalScorer {
    fn prob_mafia(&self, context: &[String], current: &str) -> Result<f64, ScoreError> {
        Ok(self.score(ScoreMode::Discriminative, &[single(context, current, Role::Mafioso)])?[0])
    }

    fn prob_mafia_batch(&self, examples: &[TrainingExample]) -> Result<Vec<f64>, ScoreError> {
        self.score(ScoreMode::Discriminative, examples)
    }
}

impl GenerativeScorer for ExternalScorer {
    fn log_prob(&self, context: &[String], current: &str, role: Role) -> Result<f64, ScoreError> {
        Ok(self.score(ScoreMode::Generative, &[single(context, current, role)])?[0])
    }

    fn log_prob_batch(&self, examples: &[TrainingExample]) -> Result<Vec<f64>, ScoreError> {
        self.score(ScoreMode::Generative, examples)
    }
}
