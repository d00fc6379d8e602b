//! Role-labeled Mafia game records and suspicion ranking.
//!
//! The crate covers the whole offline pipeline: the game engine that
//! produces records, the archive format, example builders for per-utterance
//! scorers, the four role-inference methods, evaluation metrics, the
//! feature-distance analysis and a rule-driven game simulator.

pub mod botsim;
pub mod engine;
pub mod features;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scorers;
pub mod text;
pub mod transcript;

pub use model::{
    check_win, daytime_dialog, speaking_players, Dialog, GameConfig, GameId, GameRecord, Phase,
    Player, PlayerId, PlayerUtteranceIndex, Role, Utterance, Vote, Winner,
};
