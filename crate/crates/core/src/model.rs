//! Domain types shared by every other module.
//!
//! Records are plain immutable values. Validation lives here so that the
//! archive loader, the engine and the simulator all agree on what a
//! well-formed game looks like.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A player's secret allegiance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Mafioso,
    Bystander,
}

impl Role {
    pub const ALL: [Role; 2] = [Role::Mafioso, Role::Bystander];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Mafioso => "mafioso",
            Role::Bystander => "bystander",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mafioso" | "mafia" | "m" => Ok(Role::Mafioso),
            "bystander" | "b" => Ok(Role::Bystander),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Opaque player identifier, unique within a record.
    PlayerId
);
string_id!(
    /// Opaque game identifier.
    GameId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Night,
    Day,
}

impl Phase {
    /// Position of `(round, phase)` on the game timeline. Night precedes day
    /// within a round.
    pub fn ordinal(self, round: u32) -> u64 {
        u64::from(round) * 2 + u64::from(self == Phase::Day)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Night => f.write_str("night"),
            Phase::Day => f.write_str("day"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Player {
    pub id: PlayerId,
    pub fake_name: String,
    pub role: Role,
    pub alive: bool,
    pub connected: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: u32,
    pub author: PlayerId,
    pub phase: Phase,
    pub round: u32,
    pub timestamp_ms: i64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub voter: PlayerId,
    pub target: PlayerId,
    pub phase: Phase,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub n_players: u32,
    pub n_mafia: u32,
    #[serde(default = "default_night_seconds")]
    pub night_seconds: u32,
    #[serde(default = "default_day_seconds")]
    pub day_seconds: u32,
    #[serde(default)]
    pub rng_seed: Option<u64>,
}

fn default_night_seconds() -> u32 {
    60
}

fn default_day_seconds() -> u32 {
    150
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("player count {0} outside 4..=10")]
    PlayerCount(u32),
    #[error("mafia count {0} outside 1..=2")]
    MafiaCount(u32),
    #[error("{n_mafia} mafia need strictly more bystanders among {n_players} players")]
    TooFewBystanders { n_players: u32, n_mafia: u32 },
    #[error("phase timers must be positive")]
    ZeroTimer,
}

impl GameConfig {
    pub fn new(n_players: u32, n_mafia: u32) -> Self {
        Self {
            n_players,
            n_mafia,
            night_seconds: default_night_seconds(),
            day_seconds: default_day_seconds(),
            rng_seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(4..=10).contains(&self.n_players) {
            return Err(ConfigError::PlayerCount(self.n_players));
        }
        if !(1..=2).contains(&self.n_mafia) {
            return Err(ConfigError::MafiaCount(self.n_mafia));
        }
        if self.n_mafia >= self.n_players - self.n_mafia {
            return Err(ConfigError::TooFewBystanders {
                n_players: self.n_players,
                n_mafia: self.n_mafia,
            });
        }
        if self.night_seconds == 0 || self.day_seconds == 0 {
            return Err(ConfigError::ZeroTimer);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    MafiaWin,
    BystanderWin,
}

impl fmt::Display for Winner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Winner::MafiaWin => f.write_str("mafia win"),
            Winner::BystanderWin => f.write_str("bystanders win"),
        }
    }
}

/// Winner implied by the living population, if any.
///
/// Bystanders win once no mafioso is alive; the mafia win once they are at
/// least as many as the bystanders.
pub fn check_win(living_mafia: usize, living_bystanders: usize) -> Option<Winner> {
    if living_mafia == 0 {
        Some(Winner::BystanderWin)
    } else if living_mafia >= living_bystanders {
        Some(Winner::MafiaWin)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Elimination {
    pub round: u32,
    pub phase: Phase,
    pub player: PlayerId,
    pub role_revealed: bool,
}

/// Complete replay of one finished game.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameRecord {
    pub game_id: GameId,
    pub started_at_ms: i64,
    pub config: GameConfig,
    pub players: Vec<Player>,
    pub utterances: Vec<Utterance>,
    pub votes: Vec<Vote>,
    pub eliminations: Vec<Elimination>,
    pub winner: Winner,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("empty identifier")]
    EmptyId,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{found} players listed, config says {expected}")]
    PlayerCount { expected: u32, found: usize },
    #[error("{found} mafiosi listed, config says {expected}")]
    MafiaCount { expected: u32, found: usize },
    #[error("duplicate player id {0}")]
    DuplicatePlayer(PlayerId),
    #[error("duplicate fake name {0}")]
    DuplicateName(String),
    #[error("unknown player {0}")]
    UnknownPlayer(PlayerId),
    #[error("utterance {index}: indices must be 0,1,2,... in order")]
    UtteranceOrder { index: u32 },
    #[error("utterance {index}: timestamp earlier than its predecessor")]
    TimestampOrder { index: u32 },
    #[error("utterance {index}: empty text")]
    EmptyText { index: u32 },
    #[error("utterance {index}: bystander {author} spoke at night")]
    NightSpeaker { index: u32, author: PlayerId },
    #[error("round 0 is not a valid round")]
    ZeroRound,
    #[error("{0} acted after being eliminated")]
    ActedWhileDead(PlayerId),
    #[error("night vote by non-mafioso {0}")]
    NightVoter(PlayerId),
    #[error("{0} voted for themselves")]
    SelfVote(PlayerId),
    #[error("{0} eliminated twice")]
    DoubleElimination(PlayerId),
    #[error("alive flag of {0} disagrees with eliminations")]
    AliveFlag(PlayerId),
    #[error("night elimination of {0} must not reveal the role")]
    NightReveal(PlayerId),
    #[error("game kept going after a side had already won")]
    PlayedPastWin,
    #[error("recorded winner {recorded} but survivors imply {implied:?}")]
    WinnerMismatch {
        recorded: Winner,
        implied: Option<Winner>,
    },
}

impl GameRecord {
    pub fn player(&self, id: &PlayerId) -> Option<&Player> {
        self.players.iter().find(|p| &p.id == id)
    }

    pub fn role_of(&self, id: &PlayerId) -> Option<Role> {
        self.player(id).map(|p| p.role)
    }

    pub fn roles(&self) -> BTreeMap<PlayerId, Role> {
        self.players.iter().map(|p| (p.id.clone(), p.role)).collect()
    }

    /// Borrowed dialog view used by the inference and example builders.
    pub fn dialog(&self) -> Dialog<'_> {
        Dialog {
            game_id: &self.game_id,
            players: &self.players,
            utterances: &self.utterances,
        }
    }

    /// Checks every structural invariant of a finished game.
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.game_id.as_str().is_empty() {
            return Err(RecordError::EmptyId);
        }
        self.config.validate()?;
        if self.players.len() != self.config.n_players as usize {
            return Err(RecordError::PlayerCount {
                expected: self.config.n_players,
                found: self.players.len(),
            });
        }
        let n_mafia = self.players.iter().filter(|p| p.role == Role::Mafioso).count();
        if n_mafia != self.config.n_mafia as usize {
            return Err(RecordError::MafiaCount {
                expected: self.config.n_mafia,
                found: n_mafia,
            });
        }

        let mut ids = HashSet::new();
        let mut names = HashSet::new();
        for p in &self.players {
            if p.id.as_str().is_empty() {
                return Err(RecordError::EmptyId);
            }
            if !ids.insert(&p.id) {
                return Err(RecordError::DuplicatePlayer(p.id.clone()));
            }
            if !names.insert(p.fake_name.as_str()) {
                return Err(RecordError::DuplicateName(p.fake_name.clone()));
            }
        }
        let roles = self.roles();

        // Elimination timeline: player -> phase ordinal at which they died.
        let mut died_at: BTreeMap<&PlayerId, u64> = BTreeMap::new();
        for e in &self.eliminations {
            if e.round == 0 {
                return Err(RecordError::ZeroRound);
            }
            if !roles.contains_key(&e.player) {
                return Err(RecordError::UnknownPlayer(e.player.clone()));
            }
            if e.phase == Phase::Night && e.role_revealed {
                return Err(RecordError::NightReveal(e.player.clone()));
            }
            if died_at.insert(&e.player, e.phase.ordinal(e.round)).is_some() {
                return Err(RecordError::DoubleElimination(e.player.clone()));
            }
        }
        for p in &self.players {
            if p.alive == died_at.contains_key(&p.id) {
                return Err(RecordError::AliveFlag(p.id.clone()));
            }
        }
        let acted_dead = |who: &PlayerId, phase: Phase, round: u32| {
            died_at
                .get(who)
                .is_some_and(|&t| phase.ordinal(round) > t)
        };

        let mut last_ts = i64::MIN;
        for (pos, u) in self.utterances.iter().enumerate() {
            if u.index as usize != pos {
                return Err(RecordError::UtteranceOrder { index: u.index });
            }
            if u.timestamp_ms < last_ts {
                return Err(RecordError::TimestampOrder { index: u.index });
            }
            last_ts = u.timestamp_ms;
            if u.round == 0 {
                return Err(RecordError::ZeroRound);
            }
            if u.text.trim().is_empty() {
                return Err(RecordError::EmptyText { index: u.index });
            }
            let role = *roles
                .get(&u.author)
                .ok_or_else(|| RecordError::UnknownPlayer(u.author.clone()))?;
            if u.phase == Phase::Night && role != Role::Mafioso {
                return Err(RecordError::NightSpeaker {
                    index: u.index,
                    author: u.author.clone(),
                });
            }
            if acted_dead(&u.author, u.phase, u.round) {
                return Err(RecordError::ActedWhileDead(u.author.clone()));
            }
        }

        for v in &self.votes {
            if v.round == 0 {
                return Err(RecordError::ZeroRound);
            }
            let role = *roles
                .get(&v.voter)
                .ok_or_else(|| RecordError::UnknownPlayer(v.voter.clone()))?;
            if !roles.contains_key(&v.target) {
                return Err(RecordError::UnknownPlayer(v.target.clone()));
            }
            if v.voter == v.target {
                return Err(RecordError::SelfVote(v.voter.clone()));
            }
            if v.phase == Phase::Night && role != Role::Mafioso {
                return Err(RecordError::NightVoter(v.voter.clone()));
            }
            if acted_dead(&v.voter, v.phase, v.round) {
                return Err(RecordError::ActedWhileDead(v.voter.clone()));
            }
        }

        // Replay eliminations in timeline order: no side may have won before
        // the last one, and the survivors must imply the recorded winner.
        let mut order: Vec<&Elimination> = self.eliminations.iter().collect();
        order.sort_by_key(|e| e.phase.ordinal(e.round));
        let mut mafia = n_mafia;
        let mut bystanders = self.players.len() - n_mafia;
        for e in &order {
            if check_win(mafia, bystanders).is_some() {
                return Err(RecordError::PlayedPastWin);
            }
            match roles[&e.player] {
                Role::Mafioso => mafia -= 1,
                Role::Bystander => bystanders -= 1,
            }
        }
        let implied = check_win(mafia, bystanders);
        if implied != Some(self.winner) {
            return Err(RecordError::WinnerMismatch {
                recorded: self.winner,
                implied,
            });
        }
        Ok(())
    }
}

/// Borrowed view over the parts of a game that inference reads. Live games
/// expose the same view before a winner exists.
#[derive(Debug, Clone, Copy)]
pub struct Dialog<'a> {
    pub game_id: &'a GameId,
    pub players: &'a [Player],
    pub utterances: &'a [Utterance],
}

impl<'a> Dialog<'a> {
    pub fn player(&self, id: &PlayerId) -> Option<&'a Player> {
        self.players.iter().find(|p| &p.id == id)
    }

    /// Daytime utterances in transcript order.
    pub fn daytime(&self) -> Vec<&'a Utterance> {
        self.utterances
            .iter()
            .filter(|u| u.phase == Phase::Day)
            .collect()
    }

    pub fn speaking_players(&self) -> BTreeSet<PlayerId> {
        self.utterances
            .iter()
            .filter(|u| u.phase == Phase::Day)
            .map(|u| u.author.clone())
            .collect()
    }
}

/// Daytime utterances of a record, order preserved.
pub fn daytime_dialog(record: &GameRecord) -> Vec<&Utterance> {
    record.dialog().daytime()
}

/// Players with at least one daytime utterance.
pub fn speaking_players(record: &GameRecord) -> BTreeSet<PlayerId> {
    record.dialog().speaking_players()
}

/// Ordinals of the utterances one player authored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlayerUtteranceIndex {
    pub player: PlayerId,
    pub indices: BTreeSet<u32>,
}

impl PlayerUtteranceIndex {
    /// Daytime-only index, the form inference uses.
    pub fn daytime(dialog: &Dialog<'_>, player: &PlayerId) -> Self {
        let indices = dialog
            .utterances
            .iter()
            .filter(|u| u.phase == Phase::Day && &u.author == player)
            .map(|u| u.index)
            .collect();
        Self {
            player: player.clone(),
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}
