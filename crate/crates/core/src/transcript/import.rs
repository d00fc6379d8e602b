//! Ingest of externally collected games: a message table whose `contents`
//! column reads `"Name: message"` plus a roles table keyed by fake name.

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::TranscriptError;
use crate::model::{
    check_win, Elimination, GameConfig, GameId, GameRecord, Phase, Player, PlayerId, Role, Utterance,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMessage {
    pub creation_time: String,
    pub contents: String,
    #[serde(default)]
    pub phase: Option<Phase>,
    #[serde(default)]
    pub round: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRole {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub eliminated_round: Option<u32>,
    #[serde(default)]
    pub eliminated_phase: Option<Phase>,
}

/// Reads a headed CSV table into rows of `T`.
pub fn read_raw_csv<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, TranscriptError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| TranscriptError::Import(e.to_string()))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| TranscriptError::Import(e.to_string())))
        .collect()
}

/// Milliseconds since the epoch from an integer, RFC 3339 or
/// `YYYY-MM-DD HH:MM:SS[.fff]` (UTC) timestamp.
fn parse_time(s: &str) -> Result<i64, TranscriptError> {
    let s = s.trim();
    if let Ok(ms) = s.parse::<i64>() {
        return Ok(ms);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp_millis());
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f")
        .map(|t| t.and_utc().timestamp_millis())
        .map_err(|_| TranscriptError::Import(format!("unparseable creation_time `{s}`")))
}

/// Builds a validated record. Messages default to day 1 when the table has
/// no phase/round columns; the winner follows from the survivors.
pub fn import_raw(game_id: GameId, messages: &[RawMessage], roles: &[RawRole]) -> Result<GameRecord, TranscriptError> {
    let err = |m: String| TranscriptError::Import(m);
    let id_of = |name: &str| PlayerId::new(format!("{game_id}/{name}"));
    let by_name: HashMap<&str, &RawRole> = roles.iter().map(|r| (r.name.as_str(), r)).collect();

    let mut timed = Vec::with_capacity(messages.len());
    for m in messages {
        let (name, text) = m
            .contents
            .split_once(": ")
            .ok_or_else(|| err(format!("contents without `Name: ` prefix: {:?}", m.contents)))?;
        if !by_name.contains_key(name) {
            return Err(err(format!("message from unknown player `{name}`")));
        }
        timed.push((parse_time(&m.creation_time)?, name, text, m.phase, m.round));
    }
    timed.sort_by_key(|t| t.0);

    let utterances = timed
        .iter()
        .enumerate()
        .map(|(i, (ts, name, text, phase, round))| Utterance {
            index: i as u32,
            author: id_of(name),
            phase: phase.unwrap_or(Phase::Day),
            round: round.unwrap_or(1),
            timestamp_ms: *ts,
            text: (*text).to_owned(),
        })
        .collect();

    let mut eliminations = Vec::new();
    let players = roles
        .iter()
        .map(|r| {
            let alive = match (r.eliminated_round, r.eliminated_phase) {
                (Some(round), phase) => {
                    let phase = phase.unwrap_or(Phase::Day);
                    eliminations.push(Elimination {
                        round,
                        phase,
                        player: id_of(&r.name),
                        role_revealed: phase == Phase::Day,
                    });
                    false
                }
                (None, _) => true,
            };
            Player {
                id: id_of(&r.name),
                fake_name: r.name.clone(),
                role: r.role,
                alive,
                connected: true,
            }
        })
        .collect::<Vec<_>>();
    eliminations.sort_by_key(|e| e.phase.ordinal(e.round));

    let living = |role| players.iter().filter(|p| p.alive && p.role == role).count();
    let winner = check_win(living(Role::Mafioso), living(Role::Bystander))
        .ok_or_else(|| err("survivors do not determine a winner".into()))?;
    let n_mafia = players.iter().filter(|p| p.role == Role::Mafioso).count() as u32;
    let record = GameRecord {
        game_id: game_id.clone(),
        started_at_ms: timed.first().map_or(0, |t| t.0),
        config: GameConfig::new(players.len() as u32, n_mafia),
        players,
        utterances,
        votes: Vec::new(),
        eliminations,
        winner,
    };
    record
        .validate()
        .map_err(|e| err(format!("imported game is inconsistent: {e}")))?;
    Ok(record)
}
