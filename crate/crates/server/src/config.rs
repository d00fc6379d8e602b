//! Server configuration: a TOML file plus `MAFIA_*` environment overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use mafia_core::model::ConfigError as GameConfigError;
use mafia_core::GameConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("environment variable {var}={value:?} is not valid")]
    Env { var: String, value: String },
    #[error("invalid listen address {0:?}")]
    Listen(String),
    #[error("invalid game settings: {0}")]
    Game(#[from] GameConfigError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timers {
    pub night_seconds: u32,
    pub day_seconds: u32,
}

impl Default for Timers {
    fn default() -> Self {
        let g = GameConfig::new(10, 2);
        Self {
            night_seconds: g.night_seconds,
            day_seconds: g.day_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LobbyDefaults {
    pub n_players: u32,
    pub n_mafia: u32,
}

impl Default for LobbyDefaults {
    fn default() -> Self {
        Self {
            n_players: 10,
            n_mafia: 2,
        }
    }
}

/// Saved scorer files for live suspicion hints. All optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerPaths {
    pub std_class: Option<PathBuf>,
    pub utt_class: Option<PathBuf>,
    pub utt_gen: Option<PathBuf>,
    /// Mafia prior for Utt Gen and Random; the default training ratio if unset.
    pub prior: Option<f64>,
    pub window_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    /// HTTP and WebSocket listener.
    pub listen: String,
    /// Optional raw TCP listener speaking the same line protocol.
    pub tcp_listen: Option<String>,
    pub archive_path: Option<PathBuf>,
    /// Default for games created without an explicit choice.
    pub assist_mode: bool,
    pub early_close: bool,
    pub reconnect_grace_secs: u64,
    /// Most sessions allowed to wait in lobbies at once.
    pub lobby_capacity: usize,
    /// Seeds role assignment and tie-breaks; random if unset.
    pub seed: Option<u64>,
    pub game: LobbyDefaults,
    pub timers: Timers,
    pub scorers: ScorerPaths,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            tcp_listen: None,
            archive_path: None,
            assist_mode: false,
            early_close: true,
            reconnect_grace_secs: 60,
            lobby_capacity: 10_000,
            seed: None,
            game: LobbyDefaults::default(),
            timers: Timers::default(),
            scorers: ScorerPaths::default(),
        }
    }
}

fn parse_env<T: std::str::FromStr>(var: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Env {
        var: var.to_owned(),
        value: value.to_owned(),
    })
}

fn parse_bool(var: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Env {
            var: var.to_owned(),
            value: value.to_owned(),
        }),
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` (if given), applies the process environment and validates.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_owned(),
                    source,
                })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `MAFIA_*` overrides from `vars`; unrelated variables are ignored.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (var, value) in vars {
            let v = value.as_str();
            match var.as_str() {
                "MAFIA_LISTEN" => self.listen = value.clone(),
                "MAFIA_TCP_LISTEN" => self.tcp_listen = Some(value.clone()).filter(|s| !s.is_empty()),
                "MAFIA_ARCHIVE" => self.archive_path = Some(PathBuf::from(v)),
                "MAFIA_ASSIST_MODE" => self.assist_mode = parse_bool(&var, v)?,
                "MAFIA_EARLY_CLOSE" => self.early_close = parse_bool(&var, v)?,
                "MAFIA_RECONNECT_GRACE_SECS" => self.reconnect_grace_secs = parse_env(&var, v)?,
                "MAFIA_LOBBY_CAPACITY" => self.lobby_capacity = parse_env(&var, v)?,
                "MAFIA_SEED" => self.seed = Some(parse_env(&var, v)?),
                "MAFIA_N_PLAYERS" => self.game.n_players = parse_env(&var, v)?,
                "MAFIA_N_MAFIA" => self.game.n_mafia = parse_env(&var, v)?,
                "MAFIA_NIGHT_SECONDS" => self.timers.night_seconds = parse_env(&var, v)?,
                "MAFIA_DAY_SECONDS" => self.timers.day_seconds = parse_env(&var, v)?,
                "MAFIA_STD_CLASS" => self.scorers.std_class = Some(PathBuf::from(v)),
                "MAFIA_UTT_CLASS" => self.scorers.utt_class = Some(PathBuf::from(v)),
                "MAFIA_UTT_GEN" => self.scorers.utt_gen = Some(PathBuf::from(v)),
                "MAFIA_PRIOR" => self.scorers.prior = Some(parse_env(&var, v)?),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.listen_addr()?;
        if let Some(tcp) = &self.tcp_listen {
            tcp.parse::<SocketAddr>()
                .map_err(|_| ConfigError::Listen(tcp.clone()))?;
        }
        self.game_config(self.game.n_players, self.game.n_mafia).validate()?;
        if self.lobby_capacity == 0 {
            return Err(ConfigError::Invalid("lobby_capacity must be positive".into()));
        }
        if let Some(p) = self.scorers.prior {
            if !(p > 0.0 && p < 1.0) {
                return Err(ConfigError::Invalid(format!("prior {p} outside (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn listen_addr(&self) -> Result<SocketAddr, ConfigError> {
        self.listen
            .parse()
            .map_err(|_| ConfigError::Listen(self.listen.clone()))
    }

    /// Game settings for a lobby of the given size, with the timer overrides.
    pub fn game_config(&self, n_players: u32, n_mafia: u32) -> GameConfig {
        let mut g = GameConfig::new(n_players, n_mafia);
        g.night_seconds = self.timers.night_seconds;
        g.day_seconds = self.timers.day_seconds;
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_env() {
        let mut cfg = ServerConfig::from_toml(
            r#"
            listen = "0.0.0.0:9000"
            assist_mode = true
            [game]
            n_players = 4
            n_mafia = 1
            [timers]
            night_seconds = 5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.timers.day_seconds, 150);
        assert!(cfg.assist_mode);
        cfg.apply_env([
            ("MAFIA_ASSIST_MODE".to_string(), "off".to_string()),
            ("MAFIA_DAY_SECONDS".to_string(), "30".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ])
        .unwrap();
        assert!(!cfg.assist_mode);
        assert_eq!(cfg.timers.day_seconds, 30);
        cfg.validate().unwrap();
        assert_eq!(cfg.game_config(4, 1).night_seconds, 5);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(ServerConfig::from_toml("listen = 3").is_err());
        assert!(ServerConfig::from_toml("bogus = 1").is_err());
        let cfg = ServerConfig {
            listen: "nowhere".into(),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(ConfigError::Listen(_))));
        let mut cfg = ServerConfig::default();
        cfg.game.n_mafia = 3;
        assert!(matches!(cfg.validate(), Err(ConfigError::Game(_))));
        let mut cfg = ServerConfig::default();
        assert!(matches!(
            cfg.apply_env([("MAFIA_SEED".to_string(), "x".to_string())]),
            Err(ConfigError::Env { .. })
        ));
    }
}
