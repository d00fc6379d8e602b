//! Four per-player dialog features, role centroids and the distance
//! D(u) = ‖u − v1‖² − ‖u − v2‖² (negative means closer to the mafia mean).
//!
//! Features, counted per utterance:
//! 1. refers to another player by name;
//! 2. expresses confusion;
//! 3. refers to another player for elimination;
//! 4. asks for suggestions on whom to eliminate.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::inference::{rank_players, SuspicionScore};
use crate::model::{GameId, GameRecord, Phase, PlayerId, Role};
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("game {game_id} has no utterance {index}")]
    UnknownUtteranceIndex { game_id: GameId, index: u32 },
    #[error("annotation line {line}: {reason}")]
    MalformedAnnotation { line: usize, reason: String },
    #[error("no labelled {0} vectors")]
    MissingRole(Role),
    #[error("scores, vectors and roles cover different players")]
    PopulationMismatch,
    #[error("i/o error")]
    Io(#[from] std::io::Error),
}

/// Feature counts f1..f4 for one player.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector(pub [u32; 4]);

impl FeatureVector {
    pub fn as_f64(&self) -> [f64; 4] {
        self.0.map(f64::from)
    }

    fn add_flags(&mut self, flags: [bool; 4]) {
        for (c, f) in self.0.iter_mut().zip(flags) {
            *c += u32::from(f);
        }
    }
}

/// Mean feature vectors of mafiosi (v1) and bystanders (v2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    pub v1: [f64; 4],
    pub v2: [f64; 4],
}

/// Averages hand-labelled on five reference training games.
pub const REFERENCE_CENTROIDS: Centroids = Centroids {
    v1: [2.00, 0.00, 1.30, 0.40],
    v2: [1.06, 0.27, 0.65, 0.10],
};

/// Phrase lists driving automatic annotation. Matching is on token
/// sequences, so "no idea" matches inside "i have no idea".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicons {
    pub confusion: Vec<String>,
    pub elimination: Vec<String>,
    pub interrogatives: Vec<String>,
}

const DEFAULT_LEXICONS: &str = include_str!("../data/lexicons.json");

impl Default for Lexicons {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_LEXICONS).expect("bundled lexicons parse")
    }
}

impl Lexicons {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| FeatureError::MalformedAnnotation {
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

fn contains_phrase(tokens: &[String], phrases: &[Vec<String>]) -> bool {
    phrases
        .iter()
        .any(|p| !p.is_empty() && tokens.windows(p.len()).any(|w| w == p.as_slice()))
}

struct Matcher {
    confusion: Vec<Vec<String>>,
    elimination: Vec<Vec<String>>,
    interrogatives: Vec<Vec<String>>,
}

impl Matcher {
    fn new(lex: &Lexicons) -> Self {
        let prep = |v: &[String]| v.iter().map(|p| tokenize(p)).collect();
        Self {
            confusion: prep(&lex.confusion),
            elimination: prep(&lex.elimination),
            interrogatives: prep(&lex.interrogatives),
        }
    }

    /// Flags of one utterance; `others` are lowercased names of the other
    /// players (self-reference does not count as referring to a player).
    fn flags(&self, text: &str, others: &HashSet<String>) -> [bool; 4] {
        let tokens = tokenize(text);
        let mentions = tokens.iter().any(|t| others.contains(t));
        let elimination = contains_phrase(&tokens, &self.elimination);
        let question = tokens.iter().any(|t| t.starts_with('?')) || contains_phrase(&tokens, &self.interrogatives);
        [
            mentions,
            contains_phrase(&tokens, &self.confusion),
            mentions && elimination,
            question && elimination,
        ]
    }
}

fn empty_vectors(record: &GameRecord) -> BTreeMap<PlayerId, FeatureVector> {
    record.players.iter().map(|p| (p.id.clone(), FeatureVector::default())).collect()
}

/// Keyword and name-match annotation of daytime utterances.
pub fn annotate_auto(record: &GameRecord, lexicons: &Lexicons) -> BTreeMap<PlayerId, FeatureVector> {
    let matcher = Matcher::new(lexicons);
    let mut out = empty_vectors(record);
    for u in record.utterances.iter().filter(|u| u.phase == Phase::Day) {
        let others: HashSet<String> = record
            .players
            .iter()
            .filter(|p| p.id != u.author)
            .flat_map(|p| tokenize(&p.fake_name))
            .collect();
        if let Some(v) = out.get_mut(&u.author) {
            v.add_flags(matcher.flags(&u.text, &others));
        }
    }
    out
}

/// One line of a manual annotation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub game_id: GameId,
    pub utterance_index: u32,
    #[serde(default, deserialize_with = "flag")]
    pub f1: bool,
    #[serde(default, deserialize_with = "flag")]
    pub f2: bool,
    #[serde(default, deserialize_with = "flag")]
    pub f3: bool,
    #[serde(default, deserialize_with = "flag")]
    pub f4: bool,
}

/// Accepts `true`/`false` or `0`/`1`.
fn flag<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Flag {
        B(bool),
        N(u8),
    }
    match Flag::deserialize(d)? {
        Flag::B(b) => Ok(b),
        Flag::N(0) => Ok(false),
        Flag::N(1) => Ok(true),
        Flag::N(n) => Err(serde::de::Error::custom(format!("flag must be 0 or 1, got {n}"))),
    }
}

pub fn parse_annotations(reader: impl BufRead) -> Result<Vec<Annotation>, FeatureError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| FeatureError::MalformedAnnotation {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>, FeatureError> {
    parse_annotations(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Sums annotated flags per author; entries for other games are ignored.
pub fn annotate_manual(record: &GameRecord, annotations: &[Annotation]) -> Result<BTreeMap<PlayerId, FeatureVector>, FeatureError> {
    let mut out = empty_vectors(record);
    for a in annotations.iter().filter(|a| a.game_id == record.game_id) {
        let u = record
            .utterances
            .iter()
            .find(|u| u.index == a.utterance_index)
            .ok_or_else(|| FeatureError::UnknownUtteranceIndex {
                game_id: a.game_id.clone(),
                index: a.utterance_index,
            })?;
        if let Some(v) = out.get_mut(&u.author) {
            v.add_flags([a.f1, a.f2, a.f3, a.f4]);
        }
    }
    Ok(out)
}

pub fn compute_centroids(labelled: &[([f64; 4], Role)]) -> Result<Centroids, FeatureError> {
    let mean = |role: Role| {
        let rows: Vec<&[f64; 4]> = labelled.iter().filter(|(_, r)| *r == role).map(|(v, _)| v).collect();
        if rows.is_empty() {
            return Err(FeatureError::MissingRole(role));
        }
        let mut m = [0.0; 4];
        for r in &rows {
            for (a, b) in m.iter_mut().zip(r.iter()) {
                *a += b;
            }
        }
        Ok(m.map(|x| x / rows.len() as f64))
    };
    Ok(Centroids {
        v1: mean(Role::Mafioso)?,
        v2: mean(Role::Bystander)?,
    })
}

pub fn distance_d(u: [f64; 4], c: &Centroids) -> f64 {
    let sq = |v: &[f64; 4]| u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    sq(&c.v1) - sq(&c.v2)
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either input is constant or the lengths differ.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub player: PlayerId,
    pub features: FeatureVector,
    pub d: f64,
    pub pred: f64,
    pub truth: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub centroids: Centroids,
    /// Sorted by descending predicted suspicion.
    pub rows: Vec<FeatureRow>,
    /// Spearman correlation of −D(u) with the prediction.
    pub spearman: Option<f64>,
}

pub fn suspicion_feature_table(
    scores: &[SuspicionScore],
    vectors: &BTreeMap<PlayerId, FeatureVector>,
    truth: &BTreeMap<PlayerId, Role>,
    centroids: &Centroids,
) -> Result<FeatureTable, FeatureError> {
    let ids: BTreeSet<&PlayerId> = scores.iter().map(|s| &s.player).collect();
    if ids.len() != scores.len()
        || ids.len() != vectors.len()
        || !vectors.keys().all(|k| ids.contains(k))
        || !ids.iter().all(|k| truth.contains_key(*k))
    {
        return Err(FeatureError::PopulationMismatch);
    }
    let rows: Vec<FeatureRow> = rank_players(scores)
        .into_iter()
        .map(|s| {
            let features = vectors[&s.player];
            FeatureRow {
                d: distance_d(features.as_f64(), centroids),
                pred: s.p_mafia,
                truth: truth[&s.player],
                features,
                player: s.player,
            }
        })
        .collect();
    let neg_d: Vec<f64> = rows.iter().map(|r| -r.d).collect();
    let pred: Vec<f64> = rows.iter().map(|r| r.pred).collect();
    Ok(FeatureTable {
        centroids: *centroids,
        spearman: spearman(&neg_d, &pred),
        rows,
    })
}

impl fmt::Display for FeatureTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16}{:>4}{:>4}{:>4}{:>4}{:>9}{:>7}{:>7}", "", "F1", "F2", "F3", "F4", "D(u)", "Pred", "Truth");
        for r in &self.rows {
            let [a, b, c, d] = r.features.0;
            let truth = match r.truth {
                Role::Mafioso => "M",
                Role::Bystander => "B",
            };
            let _ = writeln!(out, "{:<16}{a:>4}{b:>4}{c:>4}{d:>4}{:>9.2}{:>7.2}{truth:>7}", r.player.as_str(), r.d, r.pred);
        }
        match self.spearman {
            Some(rho) => write!(out, "Spearman(-D, Pred) = {rho:.3}"),
            None => write!(out, "Spearman(-D, Pred) undefined"),
        }?;
        f.write_str(&out)
    }
}
