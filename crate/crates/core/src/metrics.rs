//! Rank- and label-based evaluation of suspicion rankings.
//!
//! Functions are generic over the player key so the same code serves a
//! single game (`PlayerId`) and pooled games (`(GameId, PlayerId)`).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Role;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no true mafioso in the evaluated set")]
    NoMafiaInSet,
    #[error("k = {k} exceeds the {n} ranked players")]
    KTooLarge { k: usize, n: usize },
    #[error("no games to average over")]
    NoGames,
    #[error("labels and ground truth cover different players")]
    PopulationMismatch,
}

fn role_in<K: Ord>(truth: &BTreeMap<K, Role>, key: &K) -> Result<Role, MetricsError> {
    truth.get(key).copied().ok_or(MetricsError::PopulationMismatch)
}

/// Mean 1-based rank of the true mafiosi in `ranking`.
pub fn avg_mafia_rank<K: Ord>(ranking: &[K], truth: &BTreeMap<K, Role>) -> Result<f64, MetricsError> {
    let mut sum = 0usize;
    let mut n = 0usize;
    for (i, key) in ranking.iter().enumerate() {
        if role_in(truth, key)? == Role::Mafioso {
            sum += i + 1;
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::NoMafiaInSet);
    }
    Ok(sum as f64 / n as f64)
}

/// Unweighted mean over games of each game's average mafia rank.
pub fn avg_mafia_rank_per_game<K: Ord>(games: &[Vec<K>], truth: &BTreeMap<K, Role>) -> Result<f64, MetricsError> {
    if games.is_empty() {
        return Err(MetricsError::NoGames);
    }
    let mut total = 0.0;
    for g in games {
        total += avg_mafia_rank(g, truth)?;
    }
    Ok(total / games.len() as f64)
}

/// Labels the first `k` players of the ranking mafiosi.
pub fn top_k_labels<K: Ord + Clone>(ranking: &[K], k: usize) -> Result<BTreeMap<K, Role>, MetricsError> {
    if k > ranking.len() {
        return Err(MetricsError::KTooLarge { k, n: ranking.len() });
    }
    Ok(ranking
        .iter()
        .enumerate()
        .map(|(i, key)| (key.clone(), if i < k { Role::Mafioso } else { Role::Bystander }))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub accuracy: f64,
    pub f1_mafia: f64,
    pub f1_bystander: f64,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    // Zero when the class is never predicted or never present.
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

pub fn accuracy_f1<K: Ord>(labels: &BTreeMap<K, Role>, truth: &BTreeMap<K, Role>) -> Result<LabelScores, MetricsError> {
    if labels.len() != truth.len() || labels.is_empty() {
        return Err(MetricsError::PopulationMismatch);
    }
    // [predicted][actual], index 0 = mafioso.
    let mut m = [[0usize; 2]; 2];
    for (key, predicted) in labels {
        let actual = role_in(truth, key)?;
        m[usize::from(*predicted == Role::Bystander)][usize::from(actual == Role::Bystander)] += 1;
    }
    let n = labels.len() as f64;
    Ok(LabelScores {
        accuracy: (m[0][0] + m[1][1]) as f64 / n,
        f1_mafia: f1(m[0][0], m[0][1], m[1][0]),
        f1_bystander: f1(m[1][1], m[1][0], m[0][1]),
    })
}

/// Ranking metrics for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub avg_rank_pooled: f64,
    pub avg_rank_per_game: f64,
    pub accuracy: f64,
    pub f1_mafia: f64,
    pub f1_bystander: f64,
    pub k: usize,
    pub n_players_evaluated: usize,
    pub n_mafia: usize,
    /// Labels came from the method's own draws instead of top-k.
    #[serde(default)]
    pub sampled_labels: bool,
}

/// Builds a report from a pooled ranking and per-game rankings of the same
/// players. `sampled` replaces top-k labels when given.
pub fn evaluate_ranking<K: Ord + Clone>(
    method: &str,
    pooled: &[K],
    per_game: &[Vec<K>],
    truth: &BTreeMap<K, Role>,
    k: usize,
    sampled: Option<&BTreeMap<K, Role>>,
) -> Result<EvaluationReport, MetricsError> {
    let labels = match sampled {
        Some(l) => l.clone(),
        None => top_k_labels(pooled, k)?,
    };
    let scores = accuracy_f1(&labels, truth)?;
    Ok(EvaluationReport {
        method: method.to_owned(),
        avg_rank_pooled: avg_mafia_rank(pooled, truth)?,
        avg_rank_per_game: avg_mafia_rank_per_game(per_game, truth)?,
        accuracy: scores.accuracy,
        f1_mafia: scores.f1_mafia,
        f1_bystander: scores.f1_bystander,
        k,
        n_players_evaluated: pooled.len(),
        n_mafia: truth.values().filter(|r| **r == Role::Mafioso).count(),
        sampled_labels: sampled.is_some(),
    })
}

/// Fixed-width text table, one row per method.
pub fn render_report_table(reports: &[EvaluationReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12}{:>10}{:>16}{:>10}{:>14}{:>14}",
        "Method", "Avg Rank", "Avg Rank/Game", "Accuracy", "Maf F1-score", "Bys F1-score"
    );
    for r in reports {
        let mark = if r.sampled_labels { "*" } else { "" };
        let _ = writeln!(
            out,
            "{:<12}{:>10.1}{:>16.2}{:>10.2}{:>14.2}{:>14.2}",
            format!("{}{mark}", r.method),
            r.avg_rank_pooled,
            r.avg_rank_per_game,
            r.accuracy,
            r.f1_mafia,
            r.f1_bystander
        );
    }
    if let Some(r) = reports.first() {
        let _ = writeln!(out, "{} players, {} mafiosi, k = {}", r.n_players_evaluated, r.n_mafia, r.k);
    }
    if reports.iter().any(|r| r.sampled_labels) {
        out.push_str("* accuracy and F1 use the method's sampled labels, not top-k\n");
    }
    out
}
