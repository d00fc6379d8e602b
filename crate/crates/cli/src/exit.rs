//! Exit codes: 0 ok, 1 usage, 2 data error, 3 runtime.

use mafia_core::botsim::BotsimError;
use mafia_core::features::FeatureError;
use mafia_core::inference::InferenceError;
use mafia_core::metrics::MetricsError;
use mafia_core::model::RecordError;
use mafia_core::pipeline::PipelineError;
use mafia_core::scorers::ScoreError;
use mafia_core::transcript::{ExampleError, TranscriptError};
use mafia_server::{ConfigError, ServerError};

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const RUNTIME: u8 = 3;

/// Bad flag values that clap cannot catch.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn score_code(e: &ScoreError) -> u8 {
    match e {
        ScoreError::Transport(_) | ScoreError::Timeout => RUNTIME,
        _ => DATA,
    }
}

fn wrapped_score<'a>(cause: &'a (dyn std::error::Error + 'static)) -> Option<&'a ScoreError> {
    let from_inference = |e: &'a InferenceError| match e {
        InferenceError::Score(s) => Some(s),
        _ => None,
    };
    if let Some(e) = cause.downcast_ref::<ScoreError>() {
        return Some(e);
    }
    if let Some(e) = cause.downcast_ref::<InferenceError>() {
        return from_inference(e);
    }
    match cause.downcast_ref::<PipelineError>()? {
        PipelineError::Score(s) => Some(s),
        PipelineError::Inference(e) => from_inference(e),
        _ => None,
    }
}

pub fn code(err: &anyhow::Error) -> u8 {
    // Scorer failures arrive wrapped (transparently) in inference and
    // pipeline errors; they decide between bad data and an unreachable service.
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return USAGE;
        }
        if let Some(e) = wrapped_score(cause) {
            return score_code(e);
        }
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e {
                PipelineError::NoScorerLoaded(_) => USAGE,
                _ => DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<ServerError>() {
            return match e {
                ServerError::Bind { .. } => RUNTIME,
                _ => DATA,
            };
        }
        if cause.is::<TranscriptError>()
            || cause.is::<RecordError>()
            || cause.is::<ExampleError>()
            || cause.is::<FeatureError>()
            || cause.is::<MetricsError>()
            || cause.is::<InferenceError>()
            || cause.is::<BotsimError>()
            || cause.is::<ConfigError>()
            || cause.is::<serde_json::Error>()
            || cause.is::<std::io::Error>()
        {
            return DATA;
        }
    }
    RUNTIME
}
