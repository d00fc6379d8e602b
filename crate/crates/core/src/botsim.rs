//! Rule-driven bots that play complete games through the engine.
//!
//! Every daytime line is drawn from the shared template pack, or with
//! probability `signal_strength` from the speaker's role pack. At 0 the
//! two roles talk identically; at 1 their vocabularies are disjoint.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, Game, GamePhase};
use crate::model::{GameConfig, GameId, GameRecord, PlayerId, Role};
use crate::scorers::{NgramLm, ScoreError};

#[derive(Debug, Error)]
pub enum BotsimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid simulation settings: {0}")]
    Settings(String),
    #[error("template pack: {0}")]
    Templates(String),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
}

/// Utterance templates; `{target}` is replaced by another player's name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatePack {
    pub shared: Vec<String>,
    pub mafioso: Vec<String>,
    pub bystander: Vec<String>,
    /// Mafia-only night chat.
    pub night: Vec<String>,
}

const DEFAULT_TEMPLATES: &str = include_str!("../data/templates.json");

impl Default for TemplatePack {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TEMPLATES).expect("bundled templates parse")
    }
}

impl TemplatePack {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BotsimError> {
        let pack: Self =
            serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| BotsimError::Templates(e.to_string()))?;
        pack.validate()?;
        Ok(pack)
    }

    pub fn validate(&self) -> Result<(), BotsimError> {
        for (name, list) in [
            ("shared", &self.shared),
            ("mafioso", &self.mafioso),
            ("bystander", &self.bystander),
            ("night", &self.night),
        ] {
            if list.is_empty() || list.iter().any(|t| t.trim().is_empty()) {
                return Err(BotsimError::Templates(format!("`{name}` needs at least one non-empty template")));
            }
        }
        Ok(())
    }

    fn role_pack(&self, role: Role) -> &[String] {
        match role {
            Role::Mafioso => &self.mafioso,
            Role::Bystander => &self.bystander,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BystanderVotes {
    /// Vote for the most-accused living player, with noise.
    Heuristic,
    /// Uniformly random living player.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub game: GameConfig,
    /// Probability that a daytime line comes from the role pack.
    pub signal_strength: f64,
    /// Mean daytime lines per living speaker per day.
    pub utterance_rate: f64,
    /// Multiplier on `utterance_rate` for mafiosi.
    pub mafia_rate_scale: f64,
    /// Mean night lines per living mafioso.
    pub night_rate: f64,
    /// Chance that a player never speaks during the day, per role
    /// (mafioso, bystander).
    pub lurker_probability: (f64, f64),
    pub bystander_votes: BystanderVotes,
    /// Mafiosi agree on one night victim: the least-accused bystander.
    pub coordinated_mafia: bool,
    /// Uniform noise added to accusation counts when bots pick a vote.
    pub vote_noise: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            game: GameConfig::new(10, 2),
            signal_strength: 0.6,
            utterance_rate: 2.0,
            mafia_rate_scale: 1.0,
            night_rate: 1.0,
            lurker_probability: (0.02, 0.1),
            bystander_votes: BystanderVotes::Heuristic,
            coordinated_mafia: true,
            vote_noise: 1.5,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), BotsimError> {
        self.game.validate().map_err(|e| BotsimError::Settings(e.to_string()))?;
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.signal_strength) {
            return Err(BotsimError::Settings("signal_strength must lie in [0, 1]".into()));
        }
        if !unit(self.lurker_probability.0) || !unit(self.lurker_probability.1) {
            return Err(BotsimError::Settings("lurker probabilities must lie in [0, 1]".into()));
        }
        for (name, x) in [
            ("utterance_rate", self.utterance_rate),
            ("mafia_rate_scale", self.mafia_rate_scale),
            ("night_rate", self.night_rate),
            ("vote_noise", self.vote_noise),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(BotsimError::Settings(format!("{name} must be a non-negative number")));
            }
        }
        Ok(())
    }
}

/// Per-game random stream: the master seed with the game index as stream.
pub fn game_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

struct Bots<'a> {
    cfg: &'a SimConfig,
    pack: &'a TemplatePack,
    game: Game,
    rng: ChaCha8Rng,
    lurkers: Vec<PlayerId>,
    /// Times each player was named in someone's line.
    accused: BTreeMap<PlayerId, f64>,
    now: i64,
}

impl Bots<'_> {
    fn living(&self, filter: impl Fn(Role) -> bool) -> Vec<PlayerId> {
        self.game
            .players()
            .iter()
            .filter(|p| self.game.is_alive(&p.id) && filter(p.role))
            .map(|p| p.id.clone())
            .collect()
    }

    fn role(&self, id: &PlayerId) -> Role {
        self.game.player(id).expect("bots only act for roster players").role
    }

    fn name(&self, id: &PlayerId) -> String {
        self.game.player(id).expect("roster player").fake_name.clone()
    }

    fn fill(&mut self, template: &str, candidates: &[PlayerId]) -> String {
        if !template.contains("{target}") {
            return template.to_owned();
        }
        let target = candidates.choose(&mut self.rng).expect("someone else is alive").clone();
        *self.accused.entry(target.clone()).or_insert(0.0) += 1.0;
        template.replace("{target}", &self.name(&target))
    }

    fn day_line(&mut self, speaker: &PlayerId) -> String {
        let role = self.role(speaker);
        let others: Vec<PlayerId> = self.living(|_| true).into_iter().filter(|p| p != speaker).collect();
        if self.rng.gen_bool(self.cfg.signal_strength) {
            let template = self.pack.role_pack(role).choose(&mut self.rng).expect("validated").clone();
            // Role lines from mafiosi point at bystanders they know to be innocent.
            let targets: Vec<PlayerId> = if role == Role::Mafioso {
                others.iter().filter(|p| self.role(p) == Role::Bystander).cloned().collect()
            } else {
                others
            };
            self.fill(&template, &targets)
        } else {
            let template = self.pack.shared.choose(&mut self.rng).expect("validated").clone();
            self.fill(&template, &others)
        }
    }

    fn pick(&mut self, candidates: &[PlayerId], sign: f64) -> Option<PlayerId> {
        let noise = self.cfg.vote_noise;
        let scored: Vec<(f64, &PlayerId)> = candidates
            .iter()
            .map(|p| {
                let base = self.accused.get(p).copied().unwrap_or(0.0);
                (sign * base + noise * self.rng.gen::<f64>(), p)
            })
            .collect();
        scored
            .into_iter()
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(a.1)))
            .map(|(_, p)| p.clone())
    }

    fn talk(&mut self, lines: Vec<(PlayerId, String)>, span_ms: i64) -> Result<(), EngineError> {
        let n = lines.len() as i64;
        let start = self.now;
        for (i, (who, text)) in lines.into_iter().enumerate() {
            let t = start + span_ms * (i as i64 + 1) / (n + 2);
            self.game.post_chat(&who, &text, t)?;
        }
        self.now = start + span_ms * (n + 1) / (n + 2);
        Ok(())
    }

    fn night(&mut self) -> Result<(), EngineError> {
        let mafia = self.living(|r| r == Role::Mafioso);
        let victims = self.living(|r| r == Role::Bystander);
        let mut lines = Vec::new();
        for m in &mafia {
            for _ in 0..poisson(self.cfg.night_rate, &mut self.rng) {
                let template = self.pack.night.choose(&mut self.rng).expect("validated").clone();
                let text = self.fill(&template, &victims);
                lines.push((m.clone(), text));
            }
        }
        // Night mentions are private; drop them from the public accusation tally.
        let snapshot = self.accused.clone();
        lines.shuffle(&mut self.rng);
        self.talk(lines, i64::from(self.game.config().night_seconds) * 1000 / 2)?;
        self.accused = snapshot;

        let shared = if self.cfg.coordinated_mafia {
            self.pick(&victims, -1.0)
        } else {
            None
        };
        for m in &mafia {
            let target = match &shared {
                Some(t) => Some(t.clone()),
                None => victims.choose(&mut self.rng).cloned(),
            };
            if let Some(t) = target {
                self.game.cast_vote(m, &t)?;
            }
        }
        Ok(())
    }

    fn day(&mut self) -> Result<(), EngineError> {
        let living = self.living(|_| true);
        let mut lines = Vec::new();
        for p in &living {
            if self.lurkers.contains(p) {
                continue;
            }
            let scale = if self.role(p) == Role::Mafioso {
                self.cfg.mafia_rate_scale
            } else {
                1.0
            };
            for _ in 0..poisson(self.cfg.utterance_rate * scale, &mut self.rng) {
                lines.push(p.clone());
            }
        }
        lines.shuffle(&mut self.rng);
        let lines: Vec<(PlayerId, String)> = lines
            .into_iter()
            .map(|p| {
                let text = self.day_line(&p);
                (p, text)
            })
            .collect();
        self.talk(lines, i64::from(self.game.config().day_seconds) * 1000 / 2)?;

        for voter in &living {
            let others: Vec<PlayerId> = living.iter().filter(|p| *p != voter).cloned().collect();
            let target = match (self.role(voter), self.cfg.bystander_votes) {
                (Role::Mafioso, _) => {
                    let innocents: Vec<PlayerId> =
                        others.iter().filter(|p| self.role(p) == Role::Bystander).cloned().collect();
                    self.pick(&innocents, 1.0)
                }
                (Role::Bystander, BystanderVotes::Heuristic) => self.pick(&others, 1.0),
                (Role::Bystander, BystanderVotes::Random) => others.choose(&mut self.rng).cloned(),
            };
            if let Some(t) = target {
                self.game.cast_vote(voter, &t)?;
            }
        }
        Ok(())
    }
}

/// Plays one game to completion.
pub fn simulate_game(cfg: &SimConfig, pack: &TemplatePack, index: u64) -> Result<GameRecord, BotsimError> {
    let mut rng = game_rng(cfg.seed, index);
    let game_id = GameId::new(format!("sim-{}-{index:04}", cfg.seed));
    let ids: Vec<PlayerId> = (0..cfg.game.n_players).map(|i| PlayerId::new(format!("p{i:02}"))).collect();
    let started = 1_600_000_000_000 + index as i64 * 3_600_000;
    let (game, _) = Game::start(game_id, cfg.game.clone(), &ids, started, &mut rng)?;
    let lurkers = game
        .players()
        .iter()
        .filter(|p| {
            let prob = match p.role {
                Role::Mafioso => cfg.lurker_probability.0,
                Role::Bystander => cfg.lurker_probability.1,
            };
            rng.gen_bool(prob)
        })
        .map(|p| p.id.clone())
        .collect();
    let mut bots = Bots {
        cfg,
        pack,
        game,
        rng,
        lurkers,
        accused: BTreeMap::new(),
        now: started,
    };
    // Every phase ends in an elimination, so this bound is never reached.
    for _ in 0..4 * cfg.game.n_players {
        match bots.game.state().phase {
            GamePhase::Night(_) => bots.night()?,
            GamePhase::Day(_) => bots.day()?,
            GamePhase::Finished(_) => break,
            GamePhase::Waiting => return Err(EngineError::NotStarted.into()),
        }
        let deadline = bots.game.state().deadline_ms.unwrap_or(bots.now);
        bots.now = bots.now.min(deadline);
        let close_at = bots.now;
        bots.game.close_phase(close_at, &mut bots.rng)?;
    }
    Ok(bots.game.to_record()?)
}

/// `n_games` games, simulated in parallel, each from its own stream.
pub fn generate_corpus(cfg: &SimConfig, pack: &TemplatePack, n_games: usize) -> Result<Vec<GameRecord>, BotsimError> {
    cfg.validate()?;
    pack.validate()?;
    (0..n_games as u64)
        .into_par_iter()
        .map(|i| simulate_game(cfg, pack, i))
        .collect()
}

/// Ancestral sample from the role-conditioned model, continuing `prompt`.
pub fn sample_conditioned_utterance<R: Rng + ?Sized>(
    lm: &NgramLm,
    prompt: &str,
    role: Role,
    rng: &mut R,
    max_tokens: usize,
    temperature: f64,
) -> Result<String, ScoreError> {
    lm.sample(role, prompt, rng, max_tokens, temperature)
}
