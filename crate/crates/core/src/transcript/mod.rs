//! Record persistence and the pipelines that turn records into
//! role-conditioned examples for per-utterance scorers.
//!
//! Every example renders utterances as `"<tag> <fake_name>: <message>"`.
//! The target player's utterances carry the role being assumed for them;
//! everyone else is `[UNKNOWN]`, mirroring what a bystander actually knows.

mod archive;
mod import;
mod stats;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dialog, GameId, GameRecord, PlayerId, RecordError, Role, Utterance};
use crate::text::{self, SEPARATOR, TAG_BYSTANDER, TAG_MAFIOSO, TAG_UNKNOWN};

pub use archive::{append_record, encode_record, load_records, save_records, SCHEMA};
pub use import::{import_raw, read_raw_csv, RawMessage, RawRole};
pub use stats::{corpus_stats, CorpusStats, RoleStats};

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("unsupported archive schema `{found}`, expected `{SCHEMA}`")]
    SchemaVersionMismatch { found: String },
    #[error("line {line}: {reason}")]
    CorruptLine { line: usize, reason: String },
    #[error("line {line}: invalid record: {source}")]
    InvalidRecord { line: usize, source: RecordError },
    #[error("import: {0}")]
    Import(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExampleError {
    #[error("unknown player {0}")]
    UnknownPlayer(PlayerId),
    #[error("player {0} has no daytime utterances")]
    SilentPlayer(PlayerId),
}

/// Role tag prefixed to a rendered utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoleTag {
    Mafioso,
    Bystander,
    Unknown,
}

impl RoleTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::Mafioso => TAG_MAFIOSO,
            RoleTag::Bystander => TAG_BYSTANDER,
            RoleTag::Unknown => TAG_UNKNOWN,
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            TAG_MAFIOSO => Some(RoleTag::Mafioso),
            TAG_BYSTANDER => Some(RoleTag::Bystander),
            TAG_UNKNOWN => Some(RoleTag::Unknown),
            _ => None,
        }
    }
}

impl From<Role> for RoleTag {
    fn from(role: Role) -> Self {
        match role {
            Role::Mafioso => RoleTag::Mafioso,
            Role::Bystander => RoleTag::Bystander,
        }
    }
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn render_utterance(tag: RoleTag, fake_name: &str, message: &str) -> String {
    format!("{tag} {fake_name}: {message}")
}

/// Parts of a rendered utterance. Strings without a leading tag come back
/// with `tag: None` and the whole text as the message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderedParts<'a> {
    pub tag: Option<RoleTag>,
    pub speaker: Option<&'a str>,
    pub message: &'a str,
}

pub fn split_rendered(rendered: &str) -> RenderedParts<'_> {
    let Some((head, rest)) = rendered.split_once(' ') else {
        return RenderedParts {
            tag: RoleTag::parse(rendered),
            speaker: None,
            message: if RoleTag::parse(rendered).is_some() { "" } else { rendered },
        };
    };
    match RoleTag::parse(head) {
        Some(tag) => match rest.split_once(": ") {
            Some((speaker, message)) => RenderedParts {
                tag: Some(tag),
                speaker: Some(speaker),
                message,
            },
            None => RenderedParts {
                tag: Some(tag),
                speaker: None,
                message: rest,
            },
        },
        None => RenderedParts {
            tag: None,
            speaker: None,
            message: rendered,
        },
    }
}

/// Token budget for the prior-conversation context of one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub max_tokens: usize,
}

impl ContextWindow {
    pub const fn new(max_tokens: usize) -> Self {
        Self { max_tokens }
    }

    pub const fn unlimited() -> Self {
        Self {
            max_tokens: usize::MAX,
        }
    }
}

impl Default for ContextWindow {
    fn default() -> Self {
        Self::new(512)
    }
}

/// One scorer input: prior context, current utterance and the role assumed
/// for the target player.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub game_id: GameId,
    pub player: PlayerId,
    pub utterance_index: u32,
    pub context: Vec<String>,
    pub current: String,
    pub assumed_role: Role,
    pub label: bool,
}

struct Renderer<'a> {
    dialog: Dialog<'a>,
    daytime: Vec<&'a Utterance>,
    names: HashMap<&'a PlayerId, &'a str>,
    /// Token cost of each daytime utterance in context: tag, body and
    /// the separator that follows it.
    cost: Vec<usize>,
}

impl<'a> Renderer<'a> {
    fn new(dialog: Dialog<'a>) -> Self {
        let daytime = dialog.daytime();
        let names: HashMap<&PlayerId, &str> = dialog
            .players
            .iter()
            .map(|p| (&p.id, p.fake_name.as_str()))
            .collect();
        let cost = daytime
            .iter()
            .map(|u| {
                let name = names.get(&u.author).copied().unwrap_or("?");
                2 + text::token_count(&format!("{name}: {}", u.text))
            })
            .collect();
        Self {
            dialog,
            daytime,
            names,
            cost,
        }
    }

    fn check_target(&self, target: &PlayerId) -> Result<Role, ExampleError> {
        let player = self
            .dialog
            .player(target)
            .ok_or_else(|| ExampleError::UnknownPlayer(target.clone()))?;
        if !self.daytime.iter().any(|u| &u.author == target) {
            return Err(ExampleError::SilentPlayer(target.clone()));
        }
        Ok(player.role)
    }

    fn render(&self, u: &Utterance, target: &PlayerId, assumed: Role) -> String {
        let tag = if &u.author == target {
            RoleTag::from(assumed)
        } else {
            RoleTag::Unknown
        };
        let name = self.names.get(&u.author).copied().unwrap_or("?");
        render_utterance(tag, name, &u.text)
    }

    /// Examples for every daytime utterance by `target`, under `assumed`.
    fn examples(&self, target: &PlayerId, true_role: Role, assumed: Role, window: ContextWindow) -> Vec<TrainingExample> {
        self.daytime
            .iter()
            .enumerate()
            .filter(|(_, u)| &u.author == target)
            .map(|(pos, u)| {
                // Keep the most recent context that fits the budget.
                let mut used = 0usize;
                let mut start = pos;
                while start > 0 {
                    let c = self.cost[start - 1];
                    if used + c > window.max_tokens {
                        break;
                    }
                    used += c;
                    start -= 1;
                }
                TrainingExample {
                    game_id: self.dialog.game_id.clone(),
                    player: target.clone(),
                    utterance_index: u.index,
                    context: self.daytime[start..pos]
                        .iter()
                        .map(|c| self.render(c, target, assumed))
                        .collect(),
                    current: self.render(u, target, assumed),
                    assumed_role: assumed,
                    label: assumed == true_role,
                }
            })
            .collect()
    }
}

/// Utterance-classification examples: two per daytime utterance of
/// `target`, one assuming each role, labelled by whether the assumption
/// matches the truth. Output is interleaved mafioso/bystander per utterance.
pub fn build_classification_examples(
    dialog: &Dialog<'_>,
    target: &PlayerId,
    window: ContextWindow,
) -> Result<Vec<TrainingExample>, ExampleError> {
    let renderer = Renderer::new(*dialog);
    let role = renderer.check_target(target)?;
    let as_m = renderer.examples(target, role, Role::Mafioso, window);
    let as_b = renderer.examples(target, role, Role::Bystander, window);
    Ok(as_m.into_iter().zip(as_b).flat_map(|(m, b)| [m, b]).collect())
}

/// Utterance-generation training examples: one per daytime utterance,
/// rendered with the player's true role.
pub fn build_generation_examples(
    dialog: &Dialog<'_>,
    target: &PlayerId,
    window: ContextWindow,
) -> Result<Vec<TrainingExample>, ExampleError> {
    let renderer = Renderer::new(*dialog);
    let role = renderer.check_target(target)?;
    Ok(renderer.examples(target, role, role, window))
}

/// The two parallel prediction lists (assumed mafioso, assumed bystander).
pub fn build_prediction_pair(
    dialog: &Dialog<'_>,
    target: &PlayerId,
    window: ContextWindow,
) -> Result<(Vec<TrainingExample>, Vec<TrainingExample>), ExampleError> {
    let renderer = Renderer::new(*dialog);
    let role = renderer.check_target(target)?;
    Ok((
        renderer.examples(target, role, Role::Mafioso, window),
        renderer.examples(target, role, Role::Bystander, window),
    ))
}

/// All daytime messages of `player`, each followed by the separator token.
pub fn concatenate_player_text(dialog: &Dialog<'_>, player: &PlayerId) -> Result<String, ExampleError> {
    dialog
        .player(player)
        .ok_or_else(|| ExampleError::UnknownPlayer(player.clone()))?;
    let parts: Vec<String> = dialog
        .daytime()
        .into_iter()
        .filter(|u| &u.author == player)
        .map(|u| format!("{} {SEPARATOR}", u.text))
        .collect();
    if parts.is_empty() {
        return Err(ExampleError::SilentPlayer(player.clone()));
    }
    Ok(parts.join(" "))
}

/// Player-level examples for standard classification: one per speaking
/// player, the concatenated text labelled by whether they are a mafioso.
pub fn build_standard_examples(record: &GameRecord) -> Vec<TrainingExample> {
    let dialog = record.dialog();
    dialog
        .speaking_players()
        .into_iter()
        .filter_map(|id| {
            let current = concatenate_player_text(&dialog, &id).ok()?;
            let last = dialog
                .daytime()
                .into_iter()
                .filter(|u| u.author == id)
                .map(|u| u.index)
                .next_back()?;
            Some(TrainingExample {
                game_id: record.game_id.clone(),
                label: record.role_of(&id) == Some(Role::Mafioso),
                player: id,
                utterance_index: last,
                context: Vec::new(),
                current,
                assumed_role: Role::Mafioso,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleMode {
    Classification,
    Generation,
    Standard,
}

/// Examples of one kind for every speaking player of every record.
pub fn build_corpus_examples(records: &[GameRecord], mode: ExampleMode, window: ContextWindow) -> Vec<TrainingExample> {
    let mut out = Vec::new();
    for record in records {
        if mode == ExampleMode::Standard {
            out.extend(build_standard_examples(record));
            continue;
        }
        let dialog = record.dialog();
        for id in dialog.speaking_players() {
            let built = match mode {
                ExampleMode::Classification => build_classification_examples(&dialog, &id, window),
                _ => build_generation_examples(&dialog, &id, window),
            };
            out.extend(built.expect("speaking players are valid targets"));
        }
    }
    out
}
