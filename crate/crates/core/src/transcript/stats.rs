use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{GameRecord, Phase, Role};

/// Per-role corpus statistics; utterance counts cover daytime dialog.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleStats {
    pub total_players: usize,
    pub avg_players_per_game: f64,
    pub std_players_per_game: f64,
    pub total_utterances: usize,
    pub avg_utterances_per_game: f64,
    pub std_utterances_per_game: f64,
    pub total_speakers: usize,
    /// Share of all silent players that hold this role.
    pub share_of_silent: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub games: usize,
    pub mafia: RoleStats,
    pub bystanders: RoleStats,
    pub total: RoleStats,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn corpus_stats(records: &[GameRecord]) -> CorpusStats {
    // Per game: players, utterances, speakers and silent counts per role.
    let per_game: Vec<[[usize; 4]; 2]> = records
        .iter()
        .map(|r| {
            let speakers = r.dialog().speaking_players();
            let mut row = [[0usize; 4]; 2];
            for p in &r.players {
                let k = usize::from(p.role == Role::Bystander);
                row[k][0] += 1;
                if speakers.contains(&p.id) {
                    row[k][2] += 1;
                } else {
                    row[k][3] += 1;
                }
            }
            for u in r.utterances.iter().filter(|u| u.phase == Phase::Day) {
                if let Some(role) = r.role_of(&u.author) {
                    row[usize::from(role == Role::Bystander)][1] += 1;
                }
            }
            row
        })
        .collect();

    let silent_total: usize = per_game.iter().map(|g| g[0][3] + g[1][3]).sum();
    let build = |pick: &dyn Fn(&[[usize; 4]; 2], usize) -> usize| {
        let players: Vec<f64> = per_game.iter().map(|g| pick(g, 0) as f64).collect();
        let utts: Vec<f64> = per_game.iter().map(|g| pick(g, 1) as f64).collect();
        let (avg_p, std_p) = mean_std(&players);
        let (avg_u, std_u) = mean_std(&utts);
        let silent: usize = per_game.iter().map(|g| pick(g, 3)).sum();
        RoleStats {
            total_players: per_game.iter().map(|g| pick(g, 0)).sum(),
            avg_players_per_game: avg_p,
            std_players_per_game: std_p,
            total_utterances: per_game.iter().map(|g| pick(g, 1)).sum(),
            avg_utterances_per_game: avg_u,
            std_utterances_per_game: std_u,
            total_speakers: per_game.iter().map(|g| pick(g, 2)).sum(),
            share_of_silent: if silent_total == 0 {
                0.0
            } else {
                silent as f64 / silent_total as f64
            },
        }
    };

    CorpusStats {
        games: records.len(),
        mafia: build(&|g, c| g[0][c]),
        bystanders: build(&|g, c| g[1][c]),
        total: build(&|g, c| g[0][c] + g[1][c]),
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, Box<dyn Fn(&RoleStats) -> String>); 8] = [
            ("Total #players", Box::new(|s| s.total_players.to_string())),
            ("Avg #players per game", Box::new(|s| format!("{:.2}", s.avg_players_per_game))),
            ("Std #players per game", Box::new(|s| format!("{:.2}", s.std_players_per_game))),
            ("Total #utt", Box::new(|s| s.total_utterances.to_string())),
            ("Avg #utt per game", Box::new(|s| format!("{:.2}", s.avg_utterances_per_game))),
            ("Std #utt per game", Box::new(|s| format!("{:.2}", s.std_utterances_per_game))),
            ("Total #players w/ utt", Box::new(|s| s.total_speakers.to_string())),
            ("Perc players w/o utt", Box::new(|s| format!("{:.3}", s.share_of_silent))),
        ];
        writeln!(f, "{:<24}{:>10}{:>10}{:>10}", "", "M", "B", "T")?;
        for (label, cell) in rows.iter() {
            writeln!(
                f,
                "{:<24}{:>10}{:>10}{:>10}",
                label,
                cell(&self.mafia),
                cell(&self.bystanders),
                cell(&self.total)
            )?;
        }
        write!(f, "({} games)", self.games)
    }
}
