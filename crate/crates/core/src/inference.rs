//! Player-level role inference from per-utterance or per-player scores.

use std::cmp::Ordering;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dialog, GameId, GameRecord, PlayerId, Role};
use crate::scorers::{DiscriminativeScorer, GenerativeScorer, ScoreError};
use crate::transcript::{build_prediction_pair, concatenate_player_text, ContextWindow, ExampleError};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("prior {0} is outside the open interval (0, 1)")]
    DegeneratePrior(f64),
    #[error(transparent)]
    Example(#[from] ExampleError),
    #[error("non-finite likelihood for player {0}")]
    NonFiniteLikelihood(PlayerId),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    StdClass,
    UttClass,
    UttGen,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Random, Method::StdClass, Method::UttClass, Method::UttGen];

    /// Table label, e.g. "Utt Class".
    pub fn label(self) -> &'static str {
        match self {
            Method::Random => "Random",
            Method::StdClass => "Std Class",
            Method::UttClass => "Utt Class",
            Method::UttGen => "Utt Gen",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        match norm.as_str() {
            "random" => Ok(Method::Random),
            "stdclass" => Ok(Method::StdClass),
            "uttclass" => Ok(Method::UttClass),
            "uttgen" => Ok(Method::UttGen),
            _ => Err(format!("unknown method `{s}` (random, std_class, utt_class, utt_gen)")),
        }
    }
}

/// Marginal probability that a player is a mafioso.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Prior(f64);

impl Prior {
    /// 87 mafiosi among 421 players in the reference corpus.
    pub const DEFAULT: Prior = Prior(87.0 / 421.0);

    pub fn new(p: f64) -> Result<Self, InferenceError> {
        if p > 0.0 && p < 1.0 {
            Ok(Prior(p))
        } else {
            Err(InferenceError::DegeneratePrior(p))
        }
    }

    /// Ratio of mafiosi among all players of `records`.
    pub fn from_records(records: &[GameRecord]) -> Result<Self, InferenceError> {
        let (mafia, total) = records.iter().flat_map(|r| &r.players).fold((0usize, 0usize), |(m, t), p| {
            (m + usize::from(p.role == Role::Mafioso), t + 1)
        });
        if total == 0 {
            return Err(InferenceError::DegeneratePrior(f64::NAN));
        }
        Prior::new(mafia as f64 / total as f64)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Prior {
    fn default() -> Self {
        Prior::DEFAULT
    }
}

impl TryFrom<f64> for Prior {
    type Error = InferenceError;

    fn try_from(p: f64) -> Result<Self, Self::Error> {
        Prior::new(p)
    }
}

impl From<Prior> for f64 {
    fn from(p: Prior) -> f64 {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspicionScore {
    pub game_id: GameId,
    pub player: PlayerId,
    pub p_mafia: f64,
    pub method: Method,
    /// Daytime utterances by the player; 0 marks a silent player.
    pub n_utterances: usize,
}

impl SuspicionScore {
    pub fn is_silent(&self) -> bool {
        self.n_utterances == 0
    }
}

fn daytime_count(dialog: &Dialog<'_>, player: &PlayerId) -> usize {
    dialog.daytime().iter().filter(|u| &u.author == player).count()
}

fn silent(dialog: &Dialog<'_>, player: &PlayerId, method: Method) -> SuspicionScore {
    SuspicionScore {
        game_id: dialog.game_id.clone(),
        player: player.clone(),
        p_mafia: 0.0,
        method,
        n_utterances: 0,
    }
}

/// Draws a label for each speaking player with probability `prior`;
/// sampled mafiosi score 1, everyone else 0. Players are visited in id
/// order so a seeded `rng` gives reproducible draws.
pub fn infer_random<R: Rng + ?Sized>(dialog: &Dialog<'_>, prior: Prior, rng: &mut R) -> Vec<SuspicionScore> {
    let speakers = dialog.speaking_players();
    let mut ids: Vec<&PlayerId> = dialog.players.iter().map(|p| &p.id).collect();
    ids.sort();
    ids.into_iter()
        .map(|id| {
            if !speakers.contains(id) {
                return silent(dialog, id, Method::Random);
            }
            let p = if rng.gen_bool(prior.value()) { 1.0 } else { 0.0 };
            SuspicionScore {
                game_id: dialog.game_id.clone(),
                player: id.clone(),
                p_mafia: p,
                method: Method::Random,
                n_utterances: daytime_count(dialog, id),
            }
        })
        .collect()
}

/// Scores the player's concatenated daytime text as a single document.
pub fn infer_std_class(
    dialog: &Dialog<'_>,
    player: &PlayerId,
    scorer: &dyn DiscriminativeScorer,
) -> Result<SuspicionScore, InferenceError> {
    let text = concatenate_player_text(dialog, player)?;
    let p = scorer.prob_mafia(&[], &text)?;
    Ok(SuspicionScore {
        game_id: dialog.game_id.clone(),
        player: player.clone(),
        p_mafia: p,
        method: Method::StdClass,
        n_utterances: daytime_count(dialog, player),
    })
}

/// Mean over the player's daytime utterances of P(utterance by a mafioso).
pub fn infer_utt_class(
    dialog: &Dialog<'_>,
    player: &PlayerId,
    scorer: &dyn DiscriminativeScorer,
    window: ContextWindow,
) -> Result<SuspicionScore, InferenceError> {
    let (as_mafioso, _) = build_prediction_pair(dialog, player, window)?;
    let probs = scorer.prob_mafia_batch(&as_mafioso)?;
    let p = probs.iter().sum::<f64>() / probs.len() as f64;
    Ok(SuspicionScore {
        game_id: dialog.game_id.clone(),
        player: player.clone(),
        p_mafia: p,
        method: Method::UttClass,
        n_utterances: probs.len(),
    })
}

/// prior·e^lm / (prior·e^lm + (1−prior)·e^lb), with the exponentials
/// taken only of non-positive log-likelihood differences.
pub fn posterior(prior: Prior, log_lik_mafioso: f64, log_lik_bystander: f64) -> f64 {
    let p = prior.value();
    let d = log_lik_mafioso - log_lik_bystander;
    if d >= 0.0 {
        p / (p + (1.0 - p) * (-d).exp())
    } else {
        let m = p * d.exp();
        m / (m + (1.0 - p))
    }
}

/// Bayes posterior from the summed log-likelihoods of the player's
/// utterances under each assumed role.
pub fn infer_utt_gen(
    dialog: &Dialog<'_>,
    player: &PlayerId,
    scorer: &dyn GenerativeScorer,
    prior: Prior,
    window: ContextWindow,
) -> Result<SuspicionScore, InferenceError> {
    let (as_m, as_b) = build_prediction_pair(dialog, player, window)?;
    let lm: f64 = scorer.log_prob_batch(&as_m)?.iter().sum();
    let lb: f64 = scorer.log_prob_batch(&as_b)?.iter().sum();
    if !lm.is_finite() || !lb.is_finite() {
        return Err(InferenceError::NonFiniteLikelihood(player.clone()));
    }
    Ok(SuspicionScore {
        game_id: dialog.game_id.clone(),
        player: player.clone(),
        p_mafia: posterior(prior, lm, lb),
        method: Method::UttGen,
        n_utterances: as_m.len(),
    })
}

/// Total order used for rankings: speakers before silent players, then
/// descending score, then player id and game id.
pub fn ranking_order(a: &SuspicionScore, b: &SuspicionScore) -> Ordering {
    a.is_silent()
        .cmp(&b.is_silent())
        .then_with(|| b.p_mafia.total_cmp(&a.p_mafia))
        .then_with(|| a.player.cmp(&b.player))
        .then_with(|| a.game_id.cmp(&b.game_id))
}

/// Scores sorted from most to least suspicious; position + 1 is the rank.
pub fn rank_players(scores: &[SuspicionScore]) -> Vec<SuspicionScore> {
    let mut out = scores.to_vec();
    out.sort_by(ranking_order);
    out
}

/// A configured inference method.
#[derive(Clone, Copy)]
pub enum Scorer<'a> {
    Random { prior: Prior, seed: u64 },
    StdClass(&'a dyn DiscriminativeScorer),
    UttClass(&'a dyn DiscriminativeScorer),
    UttGen(&'a dyn GenerativeScorer, Prior),
}

impl Scorer<'_> {
    pub fn method(&self) -> Method {
        match self {
            Scorer::Random { .. } => Method::Random,
            Scorer::StdClass(_) => Method::StdClass,
            Scorer::UttClass(_) => Method::UttClass,
            Scorer::UttGen(..) => Method::UttGen,
        }
    }
}

/// Scores every player of one game; silent players get 0.
pub fn score_game(dialog: &Dialog<'_>, scorer: Scorer<'_>, window: ContextWindow) -> Result<Vec<SuspicionScore>, InferenceError> {
    if let Scorer::Random { prior, seed } = scorer {
        return Ok(infer_random(dialog, prior, &mut ChaCha8Rng::seed_from_u64(seed)));
    }
    let speakers = dialog.speaking_players();
    let mut ids: Vec<&PlayerId> = dialog.players.iter().map(|p| &p.id).collect();
    ids.sort();
    ids.par_iter()
        .map(|id| {
            if !speakers.contains(*id) {
                return Ok(silent(dialog, id, scorer.method()));
            }
            match scorer {
                Scorer::StdClass(s) => infer_std_class(dialog, id, s),
                Scorer::UttClass(s) => infer_utt_class(dialog, id, s, window),
                Scorer::UttGen(s, prior) => infer_utt_gen(dialog, id, s, prior, window),
                Scorer::Random { .. } => unreachable!("handled above"),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::small_record;
    use crate::transcript::TrainingExample;
    use proptest::prelude::*;
    use std::sync::Mutex;

    struct Constant(f64);

    impl DiscriminativeScorer for Constant {
        fn prob_mafia(&self, _: &[String], _: &str) -> Result<f64, ScoreError> {
            Ok(self.0)
        }
    }

    /// Returns queued probabilities in call order and logs the inputs.
    struct Scripted {
        queue: Mutex<Vec<f64>>,
        seen: Mutex<Vec<String>>,
    }

    impl DiscriminativeScorer for Scripted {
        fn prob_mafia(&self, _: &[String], current: &str) -> Result<f64, ScoreError> {
            self.seen.lock().unwrap().push(current.to_owned());
            Ok(self.queue.lock().unwrap().remove(0))
        }
    }

    struct RoleBlind;

    impl GenerativeScorer for RoleBlind {
        fn log_prob(&self, _: &[String], current: &str, _: Role) -> Result<f64, ScoreError> {
            Ok(-(crate::transcript::split_rendered(current).message.len() as f64))
        }
    }

    struct Fixed {
        mafioso: f64,
        bystander: f64,
    }

    impl GenerativeScorer for Fixed {
        fn log_prob(&self, _: &[String], _: &str, role: Role) -> Result<f64, ScoreError> {
            Ok(match role {
                Role::Mafioso => self.mafioso,
                Role::Bystander => self.bystander,
            })
        }
    }

    fn pid(s: &str) -> PlayerId {
        PlayerId::new(s)
    }

    #[test]
    fn degenerate_priors_rejected() {
        assert!(Prior::new(0.0).is_err());
        assert!(Prior::new(1.0).is_err());
        assert!(Prior::new(f64::NAN).is_err());
        assert!((Prior::DEFAULT.value() - 0.2067).abs() < 1e-4);
        let r = small_record();
        assert_eq!(Prior::from_records(&[r]).unwrap().value(), 0.2);
        assert!(Prior::from_records(&[]).is_err());
        assert!(serde_json::from_str::<Prior>("1.5").is_err());
    }

    #[test]
    fn random_mafia_count_matches_binomial() {
        // 39 speakers, prior 0.2067: mean count 39 * 0.2067 = 8.06.
        let mut rec = small_record();
        let template = rec.players[2].clone();
        rec.players = (0..39)
            .map(|i| {
                let mut p = template.clone();
                p.id = PlayerId::new(format!("p{i:02}"));
                p
            })
            .collect();
        rec.utterances = (0..39)
            .map(|i| crate::model::fixtures::utt(i, &format!("p{i:02}"), crate::model::Phase::Day, 1, "hi"))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prior = Prior::new(0.2067).unwrap();
        let trials = 10_000;
        let total: f64 = (0..trials)
            .map(|_| infer_random(&rec.dialog(), prior, &mut rng).iter().map(|s| s.p_mafia).sum::<f64>())
            .sum();
        let mean = total / trials as f64;
        assert!((mean - 39.0 * 0.2067).abs() < 0.3, "{mean}");
    }

    #[test]
    fn random_leaves_silent_at_zero() {
        let rec = small_record();
        let scores = infer_random(&rec.dialog(), Prior::new(0.999).unwrap(), &mut ChaCha8Rng::seed_from_u64(0));
        let b1 = scores.iter().find(|s| s.player == pid("b1")).unwrap();
        assert_eq!((b1.p_mafia, b1.n_utterances), (0.0, 0));
    }

    #[test]
    fn std_class_scores_concatenation() {
        let rec = small_record();
        let d = rec.dialog();
        let s = infer_std_class(&d, &pid("m"), &Constant(0.5)).unwrap();
        assert_eq!(s.p_mafia, 0.5);
        let logger = Scripted {
            queue: Mutex::new(vec![0.3]),
            seen: Mutex::new(vec![]),
        };
        infer_std_class(&d, &pid("b3"), &logger).unwrap();
        assert_eq!(logger.seen.lock().unwrap()[0], "I bet it's Mandy... </s>");
        assert!(matches!(
            infer_std_class(&d, &pid("b1"), &Constant(0.5)),
            Err(InferenceError::Example(ExampleError::SilentPlayer(_)))
        ));
    }

    #[test]
    fn utt_class_is_mean_of_mafioso_renderings() {
        let mut rec = small_record();
        rec.utterances.push(crate::model::fixtures::utt(6, "m", crate::model::Phase::Day, 1, "trust me"));
        let logger = Scripted {
            queue: Mutex::new(vec![0.2, 0.4, 0.9]),
            seen: Mutex::new(vec![]),
        };
        let s = infer_utt_class(&rec.dialog(), &pid("m"), &logger, ContextWindow::default()).unwrap();
        assert!((s.p_mafia - 0.5).abs() < 1e-15);
        assert_eq!(s.n_utterances, 3);
        assert!(logger.seen.lock().unwrap().iter().all(|c| c.starts_with("[MAFIOSO] Mandy: ")));
    }

    #[test]
    fn utt_gen_hand_values() {
        let rec = small_record();
        let d = rec.dialog();
        let half = Prior::new(0.5).unwrap();
        // b3 has one utterance: e^lm = 0.2, e^lb = 0.1 -> 2/3.
        let s = infer_utt_gen(
            &d,
            &pid("b3"),
            &Fixed {
                mafioso: 0.2f64.ln(),
                bystander: 0.1f64.ln(),
            },
            half,
            ContextWindow::default(),
        )
        .unwrap();
        assert!((s.p_mafia - 2.0 / 3.0).abs() < 1e-15);
        for id in ["m", "b2", "b3", "b4"].map(pid).iter().filter(|id| d.speaking_players().contains(*id)) {
            let s = infer_utt_gen(&d, id, &RoleBlind, Prior::DEFAULT, ContextWindow::default()).unwrap();
            assert_eq!(s.p_mafia, Prior::DEFAULT.value());
        }
        let bad = Fixed {
            mafioso: f64::NEG_INFINITY,
            bystander: -1.0,
        };
        assert!(matches!(
            infer_utt_gen(&d, &pid("b3"), &bad, half, ContextWindow::default()),
            Err(InferenceError::NonFiniteLikelihood(_))
        ));
    }

    #[test]
    fn posterior_extremes() {
        let p = Prior::new(0.3).unwrap();
        let lo = posterior(p, -1000.0, -300.0);
        assert!(lo > 0.0 && lo < 1e-300 && lo.is_finite());
        let hi = posterior(p, -300.0, -1000.0);
        assert_eq!(hi, 1.0);
        assert_eq!(posterior(p, -5.0, -5.0), 0.3);
    }

    fn score(player: &str, p: f64, n: usize) -> SuspicionScore {
        SuspicionScore {
            game_id: GameId::new("g"),
            player: pid(player),
            p_mafia: p,
            method: Method::UttClass,
            n_utterances: n,
        }
    }

    #[test]
    fn ranking_examples() {
        let r = rank_players(&[score("A", 0.9, 1), score("B", 0.1, 1), score("C", 0.5, 1)]);
        let ids: Vec<_> = r.iter().map(|s| s.player.as_str()).collect();
        assert_eq!(ids, ["A", "C", "B"]);
        let r = rank_players(&[score("C", 0.5, 1), score("A", 0.5, 1), score("B", 0.5, 1)]);
        let ids: Vec<_> = r.iter().map(|s| s.player.as_str()).collect();
        assert_eq!(ids, ["A", "B", "C"]);
        // Silent players trail even speakers scored 0.
        let r = rank_players(&[score("A", 0.0, 0), score("B", 0.0, 2)]);
        assert_eq!(r[0].player.as_str(), "B");
    }

    #[test]
    fn score_game_covers_all_players() {
        let rec = small_record();
        let scores = score_game(&rec.dialog(), Scorer::StdClass(&Constant(0.4)), ContextWindow::default()).unwrap();
        assert_eq!(scores.len(), 5);
        assert_eq!(scores.iter().filter(|s| s.is_silent()).count(), 2);
        assert!(scores.iter().all(|s| s.p_mafia == if s.is_silent() { 0.0 } else { 0.4 }));
        let r1 = score_game(&rec.dialog(), Scorer::Random { prior: Prior::DEFAULT, seed: 4 }, ContextWindow::default()).unwrap();
        let r2 = score_game(&rec.dialog(), Scorer::Random { prior: Prior::DEFAULT, seed: 4 }, ContextWindow::default()).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn batch_default_uses_assumed_role() {
        let ex = |role| TrainingExample {
            game_id: GameId::new("g"),
            player: pid("p"),
            utterance_index: 0,
            context: vec![],
            current: String::new(),
            assumed_role: role,
            label: true,
        };
        let f = Fixed {
            mafioso: -1.0,
            bystander: -2.0,
        };
        assert_eq!(f.log_prob_batch(&[ex(Role::Mafioso), ex(Role::Bystander)]).unwrap(), vec![-1.0, -2.0]);
    }

    proptest! {
        #[test]
        fn ranking_is_permutation_invariant(ps in proptest::collection::vec((0u8..5, 0usize..3), 1..30), seed in any::<u64>()) {
            let scores: Vec<_> = ps.iter().enumerate()
                .map(|(i, (p, n))| score(&format!("p{i:02}"), f64::from(*p) / 4.0, *n))
                .collect();
            let mut shuffled = scores.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(rank_players(&scores), rank_players(&shuffled));
        }

        #[test]
        fn monotone_transform_keeps_ranking(ps in proptest::collection::vec(0.0f64..1.0, 1..30)) {
            let a: Vec<_> = ps.iter().enumerate().map(|(i, p)| score(&format!("p{i:02}"), *p, 1)).collect();
            let b: Vec<_> = ps.iter().enumerate().map(|(i, p)| score(&format!("p{i:02}"), p.powi(3) * 0.5 + 0.1, 1)).collect();
            let ids = |v: Vec<SuspicionScore>| v.into_iter().map(|s| s.player).collect::<Vec<_>>();
            prop_assert_eq!(ids(rank_players(&a)), ids(rank_players(&b)));
        }

        #[test]
        fn utt_class_within_bounds(qs in proptest::collection::vec(0.0f64..=1.0, 3)) {
            let mut rec = small_record();
            rec.utterances.push(crate::model::fixtures::utt(6, "m", crate::model::Phase::Day, 1, "x"));
            let s = Scripted { queue: Mutex::new(qs.clone()), seen: Mutex::new(vec![]) };
            let out = infer_utt_class(&rec.dialog(), &pid("m"), &s, ContextWindow::default()).unwrap();
            let lo = qs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.p_mafia >= lo - 1e-15 && out.p_mafia <= hi + 1e-15);
        }
    }
}
