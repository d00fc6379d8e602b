//! Deterministic game state machine.
//!
//! Every mutating operation validates its command, emits [`GameEvent`]s and
//! applies them through the same `apply` path that [`Game::replay`] uses, so
//! a stored event log always reconstructs the live state exactly.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    check_win, ConfigError, Dialog, Elimination, GameConfig, GameId, GameRecord, Phase, Player,
    PlayerId, Role, Utterance, Vote, Winner,
};

/// Names handed out at game start. Longer than the largest game so draws
/// never repeat.
pub const NAME_POOL: [&str; 16] = [
    "Alice", "Bianca", "Carlos", "Dana", "Erin", "Felix", "Gwen", "Hector", "Iris", "Jonathan",
    "Kira", "Leo", "Mandy", "Nadia", "Oscar", "Priya",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum GamePhase {
    Waiting,
    Night(u32),
    Day(u32),
    Finished(Winner),
}

impl GamePhase {
    pub fn phase(self) -> Option<Phase> {
        match self {
            GamePhase::Night(_) => Some(Phase::Night),
            GamePhase::Day(_) => Some(Phase::Day),
            _ => None,
        }
    }

    pub fn is_finished(self) -> bool {
        matches!(self, GamePhase::Finished(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameState {
    pub phase: GamePhase,
    pub round: u32,
    pub alive: BTreeSet<PlayerId>,
    pub pending_votes: BTreeMap<PlayerId, PlayerId>,
    pub deadline_ms: Option<i64>,
}

impl Default for GameState {
    fn default() -> Self {
        Self {
            phase: GamePhase::Waiting,
            round: 0,
            alive: BTreeSet::new(),
            pending_votes: BTreeMap::new(),
            deadline_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GameEvent {
    PlayerJoined {
        player: PlayerId,
    },
    GameStarted {
        game_id: GameId,
        started_at_ms: i64,
        config: GameConfig,
        players: Vec<Player>,
    },
    ChatPosted {
        utterance: Utterance,
    },
    VoteCast {
        vote: Vote,
    },
    PlayerEliminated {
        player: PlayerId,
        phase: Phase,
        round: u32,
        role_revealed: Option<Role>,
    },
    PhaseChanged {
        phase: GamePhase,
        deadline_ms: Option<i64>,
    },
    ConnectionChanged {
        player: PlayerId,
        connected: bool,
    },
    GameEnded {
        winner: Winner,
    },
}

/// Who may see an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Audience {
    /// Living mafiosi only.
    Mafia,
    /// Everyone in the room.
    Everyone,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("expected {expected} players, got {found}")]
    WrongPlayerCount { expected: u32, found: usize },
    #[error(transparent)]
    InvalidConfig(#[from] ConfigError),
    #[error("duplicate player id {0}")]
    DuplicatePlayer(PlayerId),
    #[error("unknown player {0}")]
    UnknownPlayer(PlayerId),
    #[error("{0} has been eliminated")]
    DeadPlayer(PlayerId),
    #[error("{0} is not eligible to act in this phase")]
    DeadTarget(PlayerId),
    #[error("bystanders cannot speak at night")]
    WrongPhaseSpeaker,
    #[error("only mafiosi vote at night")]
    NotMafiaAtNight,
    #[error("players cannot vote for themselves")]
    SelfVote,
    #[error("message is empty")]
    EmptyText,
    #[error("game is over")]
    GameOver,
    #[error("game has not started")]
    NotStarted,
    #[error("operation not valid in the current phase")]
    WrongPhase,
    #[error("event log has no GameEnded event")]
    IncompleteLog,
    #[error("event cannot be applied: {0}")]
    InvalidEvent(String),
}

/// One game: roster, state and the event log that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    game_id: GameId,
    started_at_ms: i64,
    config: GameConfig,
    joined: Vec<PlayerId>,
    players: Vec<Player>,
    state: GameState,
    utterances: Vec<Utterance>,
    votes: Vec<Vote>,
    eliminations: Vec<Elimination>,
    log: Vec<GameEvent>,
}

impl Game {
    fn empty() -> Self {
        Self {
            game_id: GameId::new(""),
            started_at_ms: 0,
            config: GameConfig::new(0, 0),
            joined: Vec::new(),
            players: Vec::new(),
            state: GameState::default(),
            utterances: Vec::new(),
            votes: Vec::new(),
            eliminations: Vec::new(),
            log: Vec::new(),
        }
    }

    /// Assigns roles and fake names and opens night 1.
    ///
    /// Exactly `config.n_mafia` players drawn uniformly by `rng` become
    /// mafiosi; names come from [`NAME_POOL`] without repeats.
    pub fn start<R: Rng + ?Sized>(
        game_id: GameId,
        config: GameConfig,
        player_ids: &[PlayerId],
        started_at_ms: i64,
        rng: &mut R,
    ) -> Result<(Game, Vec<GameEvent>), EngineError> {
        config.validate()?;
        if player_ids.len() != config.n_players as usize {
            return Err(EngineError::WrongPlayerCount {
                expected: config.n_players,
                found: player_ids.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for id in player_ids {
            if !seen.insert(id) {
                return Err(EngineError::DuplicatePlayer(id.clone()));
            }
        }

        let mafia: BTreeSet<usize> = sample(rng, player_ids.len(), config.n_mafia as usize)
            .into_iter()
            .collect();
        let mut names: Vec<&str> = NAME_POOL.to_vec();
        names.shuffle(rng);

        let players = player_ids
            .iter()
            .enumerate()
            .map(|(i, id)| Player {
                id: id.clone(),
                fake_name: names[i].to_owned(),
                role: if mafia.contains(&i) {
                    Role::Mafioso
                } else {
                    Role::Bystander
                },
                alive: true,
                connected: true,
            })
            .collect();

        let deadline = started_at_ms + i64::from(config.night_seconds) * 1000;
        let mut events: Vec<GameEvent> = player_ids
            .iter()
            .map(|id| GameEvent::PlayerJoined { player: id.clone() })
            .collect();
        events.push(GameEvent::GameStarted {
            game_id,
            started_at_ms,
            config,
            players,
        });
        events.push(GameEvent::PhaseChanged {
            phase: GamePhase::Night(1),
            deadline_ms: Some(deadline),
        });

        let mut game = Game::empty();
        game.commit(&events)?;
        Ok((game, events))
    }

    /// Rebuilds a game from its event log.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a GameEvent>) -> Result<Game, EngineError> {
        let mut game = Game::empty();
        for ev in events {
            game.apply(ev)?;
            game.log.push(ev.clone());
        }
        Ok(game)
    }

    pub fn game_id(&self) -> &GameId {
        &self.game_id
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn players(&self) -> &[Player] {
        &self.players
    }

    pub fn player(&self, id: &PlayerId) -> Option<&Player> {
        self.players.iter().find(|p| &p.id == id)
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn log(&self) -> &[GameEvent] {
        &self.log
    }

    pub fn dialog(&self) -> Dialog<'_> {
        Dialog {
            game_id: &self.game_id,
            players: &self.players,
            utterances: &self.utterances,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.state.phase.is_finished()
    }

    pub fn is_alive(&self, id: &PlayerId) -> bool {
        self.state.alive.contains(id)
    }

    fn role(&self, id: &PlayerId) -> Result<Role, EngineError> {
        self.player(id)
            .map(|p| p.role)
            .ok_or_else(|| EngineError::UnknownPlayer(id.clone()))
    }

    fn living_counts(&self) -> (usize, usize) {
        self.players
            .iter()
            .filter(|p| self.state.alive.contains(&p.id))
            .fold((0, 0), |(m, b), p| match p.role {
                Role::Mafioso => (m + 1, b),
                Role::Bystander => (m, b + 1),
            })
    }

    fn current_phase(&self) -> Result<(Phase, u32), EngineError> {
        match self.state.phase {
            GamePhase::Waiting => Err(EngineError::NotStarted),
            GamePhase::Finished(_) => Err(EngineError::GameOver),
            GamePhase::Night(r) => Ok((Phase::Night, r)),
            GamePhase::Day(r) => Ok((Phase::Day, r)),
        }
    }

    /// Posts one chat line. Night chat is mafia-only.
    pub fn post_chat(
        &mut self,
        author: &PlayerId,
        text: &str,
        now_ms: i64,
    ) -> Result<GameEvent, EngineError> {
        let (phase, round) = self.current_phase()?;
        let role = self.role(author)?;
        if !self.is_alive(author) {
            return Err(EngineError::DeadPlayer(author.clone()));
        }
        if phase == Phase::Night && role != Role::Mafioso {
            return Err(EngineError::WrongPhaseSpeaker);
        }
        if text.trim().is_empty() {
            return Err(EngineError::EmptyText);
        }
        let last_ts = self.utterances.last().map_or(i64::MIN, |u| u.timestamp_ms);
        let event = GameEvent::ChatPosted {
            utterance: Utterance {
                index: self.utterances.len() as u32,
                author: author.clone(),
                phase,
                round,
                timestamp_ms: now_ms.max(last_ts),
                text: text.to_owned(),
            },
        };
        self.commit(std::slice::from_ref(&event))?;
        Ok(event)
    }

    /// Records or overwrites `voter`'s ballot for the current phase.
    pub fn cast_vote(&mut self, voter: &PlayerId, target: &PlayerId) -> Result<GameEvent, EngineError> {
        let (phase, round) = self.current_phase()?;
        let role = self.role(voter)?;
        self.role(target)?;
        if !self.is_alive(voter) {
            return Err(EngineError::DeadPlayer(voter.clone()));
        }
        if phase == Phase::Night && role != Role::Mafioso {
            return Err(EngineError::NotMafiaAtNight);
        }
        if voter == target {
            return Err(EngineError::SelfVote);
        }
        if !self.is_alive(target) {
            return Err(EngineError::DeadTarget(target.clone()));
        }
        let event = GameEvent::VoteCast {
            vote: Vote {
                voter: voter.clone(),
                target: target.clone(),
                phase,
                round,
            },
        };
        self.commit(std::slice::from_ref(&event))?;
        Ok(event)
    }

    /// Players whose ballot is expected this phase.
    pub fn eligible_voters(&self) -> BTreeSet<PlayerId> {
        let night = matches!(self.state.phase, GamePhase::Night(_));
        self.players
            .iter()
            .filter(|p| self.state.alive.contains(&p.id))
            .filter(|p| !night || p.role == Role::Mafioso)
            .map(|p| p.id.clone())
            .collect()
    }

    pub fn all_votes_in(&self) -> bool {
        self.state.phase.phase().is_some()
            && self
                .eligible_voters()
                .iter()
                .all(|v| self.state.pending_votes.contains_key(v))
    }

    /// Ends the current phase: plurality tally, uniform tie-break, win check,
    /// then the next phase.
    pub fn close_phase<R: Rng + ?Sized>(
        &mut self,
        now_ms: i64,
        rng: &mut R,
    ) -> Result<Vec<GameEvent>, EngineError> {
        let (phase, round) = match self.state.phase {
            GamePhase::Night(r) => (Phase::Night, r),
            GamePhase::Day(r) => (Phase::Day, r),
            _ => return Err(EngineError::WrongPhase),
        };

        let mut tally: BTreeMap<&PlayerId, u32> = BTreeMap::new();
        for target in self.state.pending_votes.values() {
            *tally.entry(target).or_default() += 1;
        }
        let victim = tally.values().copied().max().map(|top| {
            let tied: Vec<&PlayerId> = tally
                .iter()
                .filter(|(_, &n)| n == top)
                .map(|(p, _)| *p)
                .collect();
            let pick = if tied.len() == 1 {
                0
            } else {
                rng.gen_range(0..tied.len())
            };
            tied[pick].clone()
        });

        let mut events = Vec::new();
        let (mut mafia, mut bystanders) = self.living_counts();
        if let Some(victim) = victim {
            let role = self.role(&victim)?;
            match role {
                Role::Mafioso => mafia -= 1,
                Role::Bystander => bystanders -= 1,
            }
            events.push(GameEvent::PlayerEliminated {
                player: victim,
                phase,
                round,
                role_revealed: (phase == Phase::Day).then_some(role),
            });
        }

        if let Some(winner) = check_win(mafia, bystanders) {
            events.push(GameEvent::GameEnded { winner });
        } else {
            let (next, seconds) = match phase {
                Phase::Night => (GamePhase::Day(round), self.config.day_seconds),
                Phase::Day => (GamePhase::Night(round + 1), self.config.night_seconds),
            };
            events.push(GameEvent::PhaseChanged {
                phase: next,
                deadline_ms: Some(now_ms + i64::from(seconds) * 1000),
            });
        }
        self.commit(&events)?;
        Ok(events)
    }

    /// Marks a player's connection status. Allowed until the game ends.
    pub fn set_connected(&mut self, player: &PlayerId, connected: bool) -> Result<GameEvent, EngineError> {
        if self.is_finished() {
            return Err(EngineError::GameOver);
        }
        self.role(player)?;
        let event = GameEvent::ConnectionChanged {
            player: player.clone(),
            connected,
        };
        self.commit(std::slice::from_ref(&event))?;
        Ok(event)
    }

    /// Which sessions may observe `event`.
    pub fn audience(event: &GameEvent) -> Audience {
        match event {
            GameEvent::ChatPosted { utterance } if utterance.phase == Phase::Night => Audience::Mafia,
            GameEvent::VoteCast { vote } if vote.phase == Phase::Night => Audience::Mafia,
            _ => Audience::Everyone,
        }
    }

    fn commit(&mut self, events: &[GameEvent]) -> Result<(), EngineError> {
        for ev in events {
            self.apply(ev)?;
            self.log.push(ev.clone());
        }
        Ok(())
    }

    fn apply(&mut self, event: &GameEvent) -> Result<(), EngineError> {
        let invalid = |msg: &str| EngineError::InvalidEvent(msg.to_owned());
        match event {
            GameEvent::PlayerJoined { player } => {
                if self.state.phase != GamePhase::Waiting {
                    return Err(invalid("join after start"));
                }
                self.joined.push(player.clone());
            }
            GameEvent::GameStarted {
                game_id,
                started_at_ms,
                config,
                players,
            } => {
                if self.state.phase != GamePhase::Waiting {
                    return Err(invalid("second start"));
                }
                self.game_id = game_id.clone();
                self.started_at_ms = *started_at_ms;
                self.config = config.clone();
                self.players = players.clone();
                self.state.alive = players.iter().filter(|p| p.alive).map(|p| p.id.clone()).collect();
            }
            GameEvent::ChatPosted { utterance } => {
                if utterance.index as usize != self.utterances.len() {
                    return Err(invalid("utterance index out of sequence"));
                }
                self.utterances.push(utterance.clone());
            }
            GameEvent::VoteCast { vote } => {
                self.state
                    .pending_votes
                    .insert(vote.voter.clone(), vote.target.clone());
                self.votes.push(vote.clone());
            }
            GameEvent::PlayerEliminated {
                player,
                phase,
                round,
                role_revealed,
            } => {
                if !self.state.alive.remove(player) {
                    return Err(invalid("eliminating a dead player"));
                }
                if let Some(p) = self.players.iter_mut().find(|p| &p.id == player) {
                    p.alive = false;
                }
                self.eliminations.push(Elimination {
                    round: *round,
                    phase: *phase,
                    player: player.clone(),
                    role_revealed: role_revealed.is_some(),
                });
            }
            GameEvent::PhaseChanged { phase, deadline_ms } => {
                self.state.phase = *phase;
                if let GamePhase::Night(r) | GamePhase::Day(r) = phase {
                    self.state.round = *r;
                }
                self.state.pending_votes.clear();
                self.state.deadline_ms = *deadline_ms;
            }
            GameEvent::ConnectionChanged { player, connected } => {
                let p = self
                    .players
                    .iter_mut()
                    .find(|p| &p.id == player)
                    .ok_or_else(|| invalid("unknown player"))?;
                p.connected = *connected;
            }
            GameEvent::GameEnded { winner } => {
                self.state.phase = GamePhase::Finished(*winner);
                self.state.pending_votes.clear();
                self.state.deadline_ms = None;
            }
        }
        Ok(())
    }

    /// Record of a finished game.
    pub fn to_record(&self) -> Result<GameRecord, EngineError> {
        let GamePhase::Finished(winner) = self.state.phase else {
            return Err(EngineError::IncompleteLog);
        };
        Ok(GameRecord {
            game_id: self.game_id.clone(),
            started_at_ms: self.started_at_ms,
            config: self.config.clone(),
            players: self.players.clone(),
            utterances: self.utterances.clone(),
            votes: self.votes.clone(),
            eliminations: self.eliminations.clone(),
            winner,
        })
    }
}

/// Folds an event log into the finished game's record.
pub fn finalize_record(events: &[GameEvent]) -> Result<GameRecord, EngineError> {
    if !events.iter().any(|e| matches!(e, GameEvent::GameEnded { .. })) {
        return Err(EngineError::IncompleteLog);
    }
    Game::replay(events)?.to_record()
}
