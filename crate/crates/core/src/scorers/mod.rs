//! Per-utterance scoring backends.
//!
//! A [`DiscriminativeScorer`] estimates the probability that a rendered
//! utterance's role tag is correct; a [`GenerativeScorer`] gives the log
//! likelihood of an utterance under an assumed role. Both read the rendered
//! `"<tag> <name>: <message>"` strings produced by the transcript pipeline.

mod external;
mod naive_bayes;
mod ngram;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::model::Role;
use crate::transcript::TrainingExample;

pub use external::{ExternalScorer, ScoreMode, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TIMEOUT};
pub use naive_bayes::{train_discriminative, NaiveBayesClassifier, NaiveBayesParams};
pub use ngram::{train_generative, NgramLm, NgramParams, BOS, UNK};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("degenerate training corpus: {0}")]
    DegenerateCorpus(String),
    #[error("scorer has no training data for {0}")]
    UntrainedScorer(Role),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("scorer request timed out")]
    Timeout,
    #[error("malformed scorer response: {0}")]
    MalformedResponse(String),
    #[error("score {value} at position {index} is out of range")]
    OutOfRangeScore { index: usize, value: f64 },
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("invalid model file: {0}")]
    Format(#[from] serde_json::Error),
}

pub trait DiscriminativeScorer: Send + Sync {
    /// P(the tag on `current` is the speaker's true role | context).
    fn prob_mafia(&self, context: &[String], current: &str) -> Result<f64, ScoreError>;

    fn prob_mafia_batch(&self, examples: &[TrainingExample]) -> Result<Vec<f64>, ScoreError> {
        examples
            .iter()
            .map(|e| self.prob_mafia(&e.context, &e.current))
            .collect()
    }
}

pub trait GenerativeScorer: Send + Sync {
    /// Natural-log probability of `current` given context and role.
    fn log_prob(&self, context: &[String], current: &str, role: Role) -> Result<f64, ScoreError>;

    /// Scores each example under its `assumed_role`.
    fn log_prob_batch(&self, examples: &[TrainingExample]) -> Result<Vec<f64>, ScoreError> {
        examples
            .iter()
            .map(|e| self.log_prob(&e.context, &e.current, e.assumed_role))
            .collect()
    }
}

impl<T: DiscriminativeScorer + ?Sized> DiscriminativeScorer for &T {
    fn prob_mafia(&self, context: &[String], current: &str) -> Result<f64, ScoreError> {
        (**self).prob_mafia(context, current)
    }

    fn prob_mafia_batch(&self, examples: &[TrainingExample]) -> Result<Vec<f64>, ScoreError> {
        (**self).prob_mafia_batch(examples)
    }
}

impl<T: GenerativeScorer + ?Sized> GenerativeScorer for &T {
    fn log_prob(&self, context: &[String], current: &str, role: Role) -> Result<f64, ScoreError> {
        (**self).log_prob(context, current, role)
    }

    fn log_prob_batch(&self, examples: &[TrainingExample]) -> Result<Vec<f64>, ScoreError> {
        (**self).log_prob_batch(examples)
    }
}

pub(crate) fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ScoreError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, value)?;
    Ok(())
}

pub(crate) fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, ScoreError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}
