//! Live suspicion hints from saved scorers.

use std::collections::BTreeMap;

use mafia_core::inference::{rank_players, score_game, Method, Prior, Scorer};
use mafia_core::scorers::{NaiveBayesClassifier, NgramLm, ScoreError};
use mafia_core::transcript::ContextWindow;
use mafia_core::{Dialog, Role};

use crate::config::ScorerPaths;
use crate::protocol::{SuspicionReport, WireError};

#[derive(Debug, Default)]
pub struct LoadedScorers {
    pub std_class: Option<NaiveBayesClassifier>,
    pub utt_class: Option<NaiveBayesClassifier>,
    pub utt_gen: Option<NgramLm>,
    pub prior: Prior,
    pub window: ContextWindow,
}

impl LoadedScorers {
    /// Loads whatever `paths` names. Random hints need no files, so this
    /// always yields a value.
    pub fn load(paths: &ScorerPaths) -> Result<Self, ScoreError> {
        let prior = match paths.prior {
            Some(p) => Prior::new(p).map_err(|e| ScoreError::DegenerateCorpus(e.to_string()))?,
            None => Prior::DEFAULT,
        };
        Ok(Self {
            std_class: paths.std_class.as_ref().map(NaiveBayesClassifier::load).transpose()?,
            utt_class: paths.utt_class.as_ref().map(NaiveBayesClassifier::load).transpose()?,
            utt_gen: paths.utt_gen.as_ref().map(NgramLm::load).transpose()?,
            prior,
            window: paths.window_tokens.map(ContextWindow::new).unwrap_or_default(),
        })
    }

    pub fn scorer(&self, method: Method, seed: u64) -> Result<Scorer<'_>, WireError> {
        let missing = || WireError::new("no_scorer_loaded", format!("no {} scorer loaded", method.label()));
        Ok(match method {
            Method::Random => Scorer::Random {
                prior: self.prior,
                seed,
            },
            Method::StdClass => Scorer::StdClass(self.std_class.as_ref().ok_or_else(missing)?),
            Method::UttClass => Scorer::UttClass(self.utt_class.as_ref().ok_or_else(missing)?),
            Method::UttGen => Scorer::UttGen(self.utt_gen.as_ref().ok_or_else(missing)?, self.prior),
        })
    }

    /// Ranks every player of `dialog` by the chosen method.
    pub fn report(&self, dialog: &Dialog<'_>, method: Method, seed: u64) -> Result<SuspicionReport, WireError> {
        let scorer = self.scorer(method, seed)?;
        let scores = score_game(dialog, scorer, self.window)
            .map_err(|e| WireError::new("suspicion_failed", e.to_string()))?;
        let names: BTreeMap<_, _> = dialog
            .players
            .iter()
            .map(|p| (p.id.clone(), p.fake_name.clone()))
            .collect();
        Ok(SuspicionReport::from_ranked(method, &rank_players(&scores), &names))
    }
}

/// Who asked for hints: a spectator (`None`) or a player with a role.
pub fn permit(viewer: Option<Role>, assist_mode: bool) -> Result<(), WireError> {
    match viewer {
        None => Ok(()),
        Some(Role::Bystander) if assist_mode => Ok(()),
        Some(Role::Bystander) => Err(WireError::new(
            "forbidden",
            "suspicion hints are off for this game",
        )),
        Some(Role::Mafioso) => Err(WireError::new("forbidden", "suspicion hints are not served to mafia")),
    }
}
