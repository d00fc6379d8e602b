//! Wire frames. Every frame is one line of JSON shaped
//! `{"type": ..., "game_id": ..., "seq": ..., "payload": {...}}`.

use std::collections::BTreeMap;

use mafia_core::engine::EngineError;
use mafia_core::inference::{Method, SuspicionScore};
use mafia_core::{GameId, Phase, PlayerId, Role, Winner};
use serde::{Deserialize, Serialize};

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    #[serde(flatten)]
    pub body: ServerMsg,
    pub game_id: Option<GameId>,
    /// Strictly increasing per session, starting at 1.
    pub seq: u64,
}

impl Frame {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("frames always serialize")
    }

    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerMsg {
    Joined(Joined),
    Start(Start),
    Chat(ChatLine),
    Vote(VoteLine),
    Phase(PhaseInfo),
    Eliminated(Eliminated),
    Presence { player: PlayerId, connected: bool },
    Ended(Ended),
    Suspicion(SuspicionReport),
    Error(WireError),
    Pong,
}

impl ServerMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            ServerMsg::Joined(_) => "joined",
            ServerMsg::Start(_) => "start",
            ServerMsg::Chat(_) => "chat",
            ServerMsg::Vote(_) => "vote",
            ServerMsg::Phase(_) => "phase",
            ServerMsg::Eliminated(_) => "eliminated",
            ServerMsg::Presence { .. } => "presence",
            ServerMsg::Ended(_) => "ended",
            ServerMsg::Suspicion(_) => "suspicion",
            ServerMsg::Error(_) => "error",
            ServerMsg::Pong => "pong",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joined {
    pub token: String,
    /// Queue position in the lobby (1-based); absent for spectators and resumes.
    pub position: Option<usize>,
    pub n_players: u32,
    pub n_mafia: u32,
    pub assist_mode: bool,
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub player: PlayerId,
    pub fake_name: String,
    pub alive: bool,
}

/// Role card. Spectators get `player` and `role` unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Start {
    pub player: Option<PlayerId>,
    pub role: Option<Role>,
    pub fake_name: Option<String>,
    pub roster: Vec<RosterEntry>,
    /// Fellow mafiosi; empty for everyone else.
    #[serde(default)]
    pub teammates: Vec<PlayerId>,
    pub n_players: u32,
    pub n_mafia: u32,
    pub night_seconds: u32,
    pub day_seconds: u32,
    pub assist_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatLine {
    pub index: u32,
    pub author: PlayerId,
    pub fake_name: String,
    pub phase: Phase,
    pub round: u32,
    pub timestamp_ms: i64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteLine {
    pub voter: PlayerId,
    pub target: PlayerId,
    pub phase: Phase,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseInfo {
    pub phase: Phase,
    pub round: u32,
    pub deadline_ms: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eliminated {
    pub player: PlayerId,
    pub fake_name: String,
    pub phase: Phase,
    pub round: u32,
    /// Present for day eliminations only.
    pub role: Option<Role>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ended {
    pub winner: Winner,
    /// Full reveal once the game is over.
    pub roles: BTreeMap<PlayerId, Role>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspicionEntry {
    pub player: PlayerId,
    pub fake_name: String,
    pub p_mafia: f64,
    pub n_utterances: usize,
}

/// Players in ranking order, most suspicious first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspicionReport {
    pub method: Method,
    pub scores: Vec<SuspicionEntry>,
}

impl SuspicionReport {
    pub fn from_ranked(method: Method, ranked: &[SuspicionScore], names: &BTreeMap<PlayerId, String>) -> Self {
        Self {
            method,
            scores: ranked
                .iter()
                .map(|s| SuspicionEntry {
                    player: s.player.clone(),
                    fake_name: names.get(&s.player).cloned().unwrap_or_default(),
                    p_mafia: s.p_mafia,
                    n_utterances: s.n_utterances,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

impl WireError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_owned(),
            message: message.into(),
        }
    }
}

impl From<EngineError> for WireError {
    fn from(e: EngineError) -> Self {
        let code = match &e {
            EngineError::UnknownPlayer(_) => "unknown_player",
            EngineError::DeadPlayer(_) => "dead_player",
            EngineError::DeadTarget(_) => "dead_target",
            EngineError::WrongPhaseSpeaker => "night_chat_forbidden",
            EngineError::NotMafiaAtNight => "night_vote_forbidden",
            EngineError::SelfVote => "self_vote",
            EngineError::EmptyText => "empty_text",
            EngineError::GameOver => "game_over",
            EngineError::NotStarted => "not_started",
            EngineError::WrongPhase => "wrong_phase",
            _ => "engine_error",
        };
        WireError::new(code, e.to_string())
    }
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientFrame {
    #[serde(flatten)]
    pub body: ClientMsg,
    #[serde(default)]
    pub game_id: Option<GameId>,
    #[serde(default)]
    pub seq: Option<u64>,
}

impl ClientFrame {
    pub fn new(body: ClientMsg) -> Self {
        Self {
            body,
            game_id: None,
            seq: None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("frames always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ClientMsg {
    Join(JoinRequest),
    Spectate { game_id: GameId },
    Resume { token: String },
    Chat { text: String },
    Vote { target: PlayerId },
    Suspicion {
        method: Method,
        #[serde(default)]
        seed: Option<u64>,
    },
    Ping,
}

/// Lobby request; unset fields fall back to the server defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JoinRequest {
    pub token: Option<String>,
    pub n_players: Option<u32>,
    pub n_mafia: Option<u32>,
    pub assist_mode: Option<bool>,
}
