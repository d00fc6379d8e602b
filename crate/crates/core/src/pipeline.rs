//! Game-level train/validation split, model training and ranking
//! evaluation of the four inference methods.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{infer_random, rank_players, score_game, InferenceError, Method, Prior, Scorer, SuspicionScore};
use crate::metrics::{evaluate_ranking, EvaluationReport, MetricsError};
use crate::model::{GameId, GameRecord, PlayerId, Role};
use crate::scorers::{
    train_discriminative, train_generative, DiscriminativeScorer, GenerativeScorer, NaiveBayesClassifier,
    NaiveBayesParams, NgramLm, NgramParams, ScoreError,
};
use crate::transcript::{build_corpus_examples, ContextWindow, ExampleMode};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot hold out {requested} of {available} games")]
    BadSplit { requested: usize, available: usize },
    #[error("no scorer loaded for {0}")]
    NoScorerLoaded(Method),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<GameRecord>,
    pub validation: Vec<GameRecord>,
}

/// Seeded shuffle of whole games, then the last `n_validation` are held
/// out. Utterances of one game never straddle the split.
pub fn split_games(records: &[GameRecord], n_validation: usize, seed: u64) -> Result<Split, PipelineError> {
    if n_validation == 0 || n_validation >= records.len() {
        return Err(PipelineError::BadSplit {
            requested: n_validation,
            available: records.len(),
        });
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = records.len() - n_validation;
    let pick = |idx: &[usize]| idx.iter().map(|i| records[*i].clone()).collect();
    Ok(Split {
        train: pick(&order[..cut]),
        validation: pick(&order[cut..]),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub naive_bayes: NaiveBayesParams,
    pub ngram: NgramParams,
    pub window: ContextWindow,
}

/// Everything the three learned methods need.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub std_class: NaiveBayesClassifier,
    pub utt_class: NaiveBayesClassifier,
    pub utt_gen: NgramLm,
    /// Role ratio of the training games.
    pub prior: Prior,
}

pub fn train_models(train: &[GameRecord], params: &TrainParams) -> Result<TrainedModels, PipelineError> {
    let standard = build_corpus_examples(train, ExampleMode::Standard, params.window);
    let classification = build_corpus_examples(train, ExampleMode::Classification, params.window);
    let generation = build_corpus_examples(train, ExampleMode::Generation, params.window);
    Ok(TrainedModels {
        std_class: train_discriminative(&standard, params.naive_bayes)?,
        utt_class: train_discriminative(&classification, params.naive_bayes)?,
        utt_gen: train_generative(&generation, params.ngram)?,
        prior: Prior::from_records(train)?,
    })
}

/// Borrowed scorers for evaluation; any may be external.
#[derive(Clone, Copy)]
pub struct ScorerSet<'a> {
    pub std_class: Option<&'a dyn DiscriminativeScorer>,
    pub utt_class: Option<&'a dyn DiscriminativeScorer>,
    pub utt_gen: Option<&'a dyn GenerativeScorer>,
    pub prior: Prior,
}

impl TrainedModels {
    pub fn scorers(&self) -> ScorerSet<'_> {
        ScorerSet {
            std_class: Some(&self.std_class),
            utt_class: Some(&self.utt_class),
            utt_gen: Some(&self.utt_gen),
            prior: self.prior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub methods: Vec<Method>,
    /// Top-k cut; defaults to the number of true mafiosi evaluated.
    pub k: Option<usize>,
    /// Overrides the scorer set's prior.
    pub prior: Option<Prior>,
    pub seed: u64,
    pub window: ContextWindow,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            k: None,
            prior: None,
            seed: 0,
            window: ContextWindow::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub report: EvaluationReport,
    /// Pooled ranking, most suspicious first.
    pub ranking: Vec<SuspicionScore>,
}

type Key = (GameId, PlayerId);

fn key(s: &SuspicionScore) -> Key {
    (s.game_id.clone(), s.player.clone())
}

/// Scores for every player of every game under one method.
pub fn score_games(records: &[GameRecord], method: Method, set: &ScorerSet<'_>, settings: &EvalSettings) -> Result<Vec<SuspicionScore>, PipelineError> {
    let prior = settings.prior.unwrap_or(set.prior);
    let mut out = Vec::new();
    if method == Method::Random {
        // One stream across games in order, so the draw is reproducible.
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        for r in records {
            out.extend(infer_random(&r.dialog(), prior, &mut rng));
        }
        return Ok(out);
    }
    let scorer = match method {
        Method::StdClass => Scorer::StdClass(set.std_class.ok_or(PipelineError::NoScorerLoaded(method))?),
        Method::UttClass => Scorer::UttClass(set.utt_class.ok_or(PipelineError::NoScorerLoaded(method))?),
        Method::UttGen => Scorer::UttGen(set.utt_gen.ok_or(PipelineError::NoScorerLoaded(method))?, prior),
        Method::Random => unreachable!("handled above"),
    };
    for r in records {
        out.extend(score_game(&r.dialog(), scorer, settings.window)?);
    }
    Ok(out)
}

/// Pooled and per-game ranking metrics for each requested method.
pub fn evaluate(records: &[GameRecord], set: &ScorerSet<'_>, settings: &EvalSettings) -> Result<Vec<MethodResult>, PipelineError> {
    let truth: BTreeMap<Key, Role> = records
        .iter()
        .flat_map(|r| r.players.iter().map(|p| ((r.game_id.clone(), p.id.clone()), p.role)))
        .collect();
    let n_mafia = truth.values().filter(|r| **r == Role::Mafioso).count();
    let k = settings.k.unwrap_or(n_mafia);
    settings
        .methods
        .iter()
        .map(|&method| {
            let scores = score_games(records, method, set, settings)?;
            let pooled = rank_players(&scores);
            let pooled_keys: Vec<Key> = pooled.iter().map(key).collect();
            let per_game: Vec<Vec<Key>> = records
                .iter()
                .map(|r| {
                    let game: Vec<SuspicionScore> = scores.iter().filter(|s| s.game_id == r.game_id).cloned().collect();
                    rank_players(&game).iter().map(key).collect()
                })
                .collect();
            let sampled: Option<BTreeMap<Key, Role>> = (method == Method::Random).then(|| {
                scores
                    .iter()
                    .map(|s| (key(s), if s.p_mafia >= 1.0 { Role::Mafioso } else { Role::Bystander }))
                    .collect()
            });
            let report = evaluate_ranking(method.label(), &pooled_keys, &per_game, &truth, k, sampled.as_ref())?;
            Ok(MethodResult { report, ranking: pooled })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::botsim::{generate_corpus, SimConfig, TemplatePack};

    #[test]
    fn split_is_by_game_and_seeded() {
        let recs = generate_corpus(&SimConfig::default(), &TemplatePack::default(), 10).unwrap();
        let a = split_games(&recs, 3, 7).unwrap();
        let b = split_games(&recs, 3, 7).unwrap();
        assert_eq!(a.train.len(), 7);
        assert_eq!(a.validation.len(), 3);
        let ids = |v: &[GameRecord]| v.iter().map(|r| r.game_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.validation), ids(&b.validation));
        assert!(ids(&a.validation).iter().all(|g| !ids(&a.train).contains(g)));
        assert!(matches!(split_games(&recs, 10, 0), Err(PipelineError::BadSplit { .. })));
        assert!(matches!(split_games(&recs, 0, 0), Err(PipelineError::BadSplit { .. })));
    }

    #[test]
    fn evaluation_produces_all_rows() {
        let recs = generate_corpus(&SimConfig::default(), &TemplatePack::default(), 12).unwrap();
        let split = split_games(&recs, 3, 1).unwrap();
        let models = train_models(&split.train, &TrainParams::default()).unwrap();
        let results = evaluate(&split.validation, &models.scorers(), &EvalSettings::default()).unwrap();
        assert_eq!(results.len(), 4);
        for r in &results {
            assert_eq!(r.report.n_players_evaluated, 30);
            assert_eq!(r.report.k, 6);
            assert_eq!(r.ranking.len(), 30);
        }
        assert!(results[0].report.sampled_labels);
        let again = evaluate(&split.validation, &models.scorers(), &EvalSettings::default()).unwrap();
        assert_eq!(results, again);
    }

    #[test]
    fn missing_scorer_is_reported() {
        let recs = generate_corpus(&SimConfig::default(), &TemplatePack::default(), 4).unwrap();
        let set = ScorerSet {
            std_class: None,
            utt_class: None,
            utt_gen: None,
            prior: Prior::DEFAULT,
        };
        let settings = EvalSettings {
            methods: vec![Method::UttGen],
            ..Default::default()
        };
        assert!(matches!(evaluate(&recs, &set, &settings), Err(PipelineError::NoScorerLoaded(Method::UttGen))));
    }
}
