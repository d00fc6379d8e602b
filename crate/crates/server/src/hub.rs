//! Cross-game state: sessions, lobbies and the directory of rooms.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use mafia_core::engine::{Game, GameEvent};
use mafia_core::inference::Method;
use mafia_core::{GameConfig, GameId, GameRecord, PlayerId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::sync::mpsc;
use tokio::time::Duration;

use crate::config::ServerConfig;
use crate::protocol::{ClientMsg, Frame, JoinRequest, Joined, ServerMsg, SuspicionReport, WireError};
use crate::room::{game_over, GameCmd, GameInfo, GameSummary, Room, RoomSettings};
use crate::session::{Clock, SessionOut};
use crate::sink::ArchiveSink;
use crate::suspicion::{permit, LoadedScorers};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct LobbyKey {
    n_players: u32,
    n_mafia: u32,
    assist_mode: bool,
}

#[derive(Debug, Clone)]
enum Place {
    Lobby(LobbyKey),
    Player { game_id: GameId, player: PlayerId },
    Spectator(GameId),
}

struct SessionEntry {
    out: Arc<SessionOut>,
    place: Place,
}

struct GameEntry {
    tx: mpsc::UnboundedSender<GameCmd>,
    info: Arc<Mutex<GameInfo>>,
}

#[derive(Default)]
struct HubState {
    sessions: HashMap<String, SessionEntry>,
    lobbies: BTreeMap<LobbyKey, Vec<String>>,
    waiting: usize,
    games: BTreeMap<GameId, GameEntry>,
    next_game: u64,
}

pub struct Hub {
    cfg: ServerConfig,
    clock: Clock,
    scorers: Arc<LoadedScorers>,
    sink: Option<ArchiveSink>,
    rng: Mutex<ChaCha8Rng>,
    state: Mutex<HubState>,
}

impl Hub {
    /// Must be called inside a tokio runtime; rooms are spawned as tasks.
    pub fn new(cfg: ServerConfig, scorers: LoadedScorers, sink: Option<ArchiveSink>) -> Arc<Self> {
        Self::with_clock(cfg, scorers, sink, Clock::system())
    }

    pub fn with_clock(cfg: ServerConfig, scorers: LoadedScorers, sink: Option<ArchiveSink>, clock: Clock) -> Arc<Self> {
        let seed = cfg.seed.unwrap_or_else(rand::random);
        Arc::new(Self {
            cfg,
            clock,
            scorers: Arc::new(scorers),
            sink,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            state: Mutex::new(HubState::default()),
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.cfg
    }

    pub fn sink(&self) -> Option<&ArchiveSink> {
        self.sink.as_ref()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HubState> {
        self.state.lock().expect("hub lock")
    }

    /// Queues a new session. Returns its token.
    pub fn join(&self, out: Arc<SessionOut>, req: JoinRequest) -> Result<String, WireError> {
        let key = LobbyKey {
            n_players: req.n_players.unwrap_or(self.cfg.game.n_players),
            n_mafia: req.n_mafia.unwrap_or(self.cfg.game.n_mafia),
            assist_mode: req.assist_mode.unwrap_or(self.cfg.assist_mode),
        };
        self.cfg
            .game_config(key.n_players, key.n_mafia)
            .validate()
            .map_err(|e| WireError::new("invalid_config", e.to_string()))?;

        let mut st = self.lock();
        let token = req.token.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        if st.sessions.contains_key(&token) {
            return Err(WireError::new("duplicate_token", "token already in use"));
        }
        if st.waiting >= self.cfg.lobby_capacity {
            return Err(WireError::new("lobby_full", "the lobby is full"));
        }
        st.sessions.insert(
            token.clone(),
            SessionEntry {
                out: out.clone(),
                place: Place::Lobby(key),
            },
        );
        st.waiting += 1;
        let queue = st.lobbies.entry(key).or_default();
        queue.push(token.clone());
        let position = queue.len();
        out.send(
            None,
            ServerMsg::Joined(Joined {
                token: token.clone(),
                position: Some(position),
                n_players: key.n_players,
                n_mafia: key.n_mafia,
                assist_mode: key.assist_mode,
                resumed: false,
            }),
        );
        if position == key.n_players as usize {
            let tokens = st.lobbies.remove(&key).unwrap_or_default();
            st.waiting -= tokens.len();
            self.start_game(&mut st, key, tokens);
        }
        Ok(token)
    }

    fn start_game(&self, st: &mut HubState, key: LobbyKey, tokens: Vec<String>) {
        st.next_game += 1;
        let game_id = GameId::new(format!("game-{:06}", st.next_game));
        let seed: u64 = self.rng.lock().expect("rng lock").gen();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config: GameConfig = self.cfg.game_config(key.n_players, key.n_mafia);
        let ids: Vec<PlayerId> = (1..=tokens.len()).map(|i| PlayerId::new(format!("p{i:02}"))).collect();
        let (game, _) = match Game::start(game_id.clone(), config, &ids, self.clock.now_ms(), &mut rng) {
            Ok(g) => g,
            Err(e) => {
                // Validated at join; reaching here is a bug, so fail the sessions loudly.
                for t in &tokens {
                    if let Some(s) = st.sessions.remove(t) {
                        s.out.send(None, ServerMsg::Error(WireError::new("engine_error", e.to_string())));
                    }
                }
                return;
            }
        };
        let mut players = BTreeMap::new();
        for (token, id) in tokens.iter().zip(&ids) {
            if let Some(s) = st.sessions.get_mut(token) {
                s.place = Place::Player {
                    game_id: game_id.clone(),
                    player: id.clone(),
                };
                players.insert(id.clone(), s.out.clone());
            }
        }
        let room = Room::new(
            game,
            rng,
            players,
            RoomSettings {
                assist_mode: key.assist_mode,
                early_close: self.cfg.early_close,
                reconnect_grace: Duration::from_secs(self.cfg.reconnect_grace_secs),
                clock: self.clock,
                scorers: self.scorers.clone(),
                sink: self.sink.clone(),
            },
        );
        let (tx, rx) = mpsc::unbounded_channel();
        st.games.insert(game_id, GameEntry { tx, info: room.info() });
        tokio::spawn(room.run(rx));
    }

    /// Adds a spectator session to a live game.
    pub fn spectate(&self, out: Arc<SessionOut>, game_id: &GameId) -> Result<String, WireError> {
        let mut st = self.lock();
        let entry = st.games.get(game_id).ok_or_else(unknown_game)?;
        let tx = entry.tx.clone();
        let (n_players, n_mafia, assist_mode) = {
            let info = entry.info.lock().expect("info lock");
            (info.summary.n_players, info.summary.n_mafia, info.summary.assist_mode)
        };
        let token = uuid::Uuid::new_v4().to_string();
        st.sessions.insert(
            token.clone(),
            SessionEntry {
                out: out.clone(),
                place: Place::Spectator(game_id.clone()),
            },
        );
        drop(st);
        out.send(
            Some(game_id),
            ServerMsg::Joined(Joined {
                token: token.clone(),
                position: None,
                n_players,
                n_mafia,
                assist_mode,
                resumed: false,
            }),
        );
        if let Err(e) = tx.send(GameCmd::Spectate { out }) {
            game_over(game_id, e.0);
        }
        Ok(token)
    }

    /// Reattaches an existing session to a new connection. Returns the
    /// session's outbound handle; buffered frames are flushed to `tx`.
    pub fn resume(&self, token: &str, tx: mpsc::UnboundedSender<Frame>) -> Result<Arc<SessionOut>, WireError> {
        let st = self.lock();
        let entry = st
            .sessions
            .get(token)
            .ok_or_else(|| WireError::new("unknown_token", "no session with that token"))?;
        if entry.out.is_attached() {
            return Err(WireError::new("duplicate_token", "session is attached elsewhere"));
        }
        let out = entry.out.clone();
        let place = entry.place.clone();
        let (game_id, key) = match &place {
            Place::Lobby(key) => (None, *key),
            Place::Player { game_id, .. } | Place::Spectator(game_id) => {
                let s = st.games.get(game_id).map(|g| g.info.lock().expect("info lock").summary.clone());
                let key = s.map_or(LobbyKey { n_players: 0, n_mafia: 0, assist_mode: false }, |s| LobbyKey {
                    n_players: s.n_players,
                    n_mafia: s.n_mafia,
                    assist_mode: s.assist_mode,
                });
                (Some(game_id.clone()), key)
            }
        };
        let game_tx = match &place {
            Place::Player { game_id, .. } => st.games.get(game_id).map(|g| g.tx.clone()),
            _ => None,
        };
        drop(st);
        out.attach(tx);
        out.send(
            game_id.as_ref(),
            ServerMsg::Joined(Joined {
                token: token.to_owned(),
                position: None,
                n_players: key.n_players,
                n_mafia: key.n_mafia,
                assist_mode: key.assist_mode,
                resumed: true,
            }),
        );
        if let (Place::Player { player, .. }, Some(tx)) = (place, game_tx) {
            let _ = tx.send(GameCmd::Attached { player });
        }
        Ok(out)
    }

    /// Marks a session's connection as gone. Lobby sessions leave the queue;
    /// players get the reconnect grace period.
    pub fn detach(&self, token: &str) {
        let mut st = self.lock();
        let Some(entry) = st.sessions.get(token) else { return };
        entry.out.detach();
        match entry.place.clone() {
            Place::Lobby(key) => {
                st.sessions.remove(token);
                let removed = st.lobbies.get_mut(&key).map_or(0, |q| {
                    let before = q.len();
                    q.retain(|t| t != token);
                    before - q.len()
                });
                st.waiting -= removed;
            }
            Place::Player { game_id, player } => {
                if let Some(g) = st.games.get(&game_id) {
                    let _ = g.tx.send(GameCmd::Detached { player });
                }
            }
            Place::Spectator(_) => {
                st.sessions.remove(token);
            }
        }
    }

    /// Routes an in-game command from session `token`.
    pub fn command(&self, token: &str, msg: ClientMsg) -> Result<(), WireError> {
        let st = self.lock();
        let entry = st
            .sessions
            .get(token)
            .ok_or_else(|| WireError::new("unknown_token", "no session with that token"))?;
        let out = entry.out.clone();
        let place = entry.place.clone();
        let (game_id, player) = match &place {
            Place::Lobby(_) => return Err(WireError::new("not_in_game", "waiting for players")),
            Place::Player { game_id, player } => (game_id.clone(), Some(player.clone())),
            Place::Spectator(g) => (g.clone(), None),
        };
        let game = st.games.get(&game_id).ok_or_else(unknown_game)?;
        let tx = game.tx.clone();
        let info = game.info.clone();
        drop(st);

        let cmd = match msg {
            ClientMsg::Chat { text } => GameCmd::Chat {
                player: player.ok_or_else(spectator_only)?,
                text,
                reply: out,
            },
            ClientMsg::Vote { target } => GameCmd::Vote {
                player: player.ok_or_else(spectator_only)?,
                target,
                reply: out,
            },
            ClientMsg::Suspicion { method, seed } => {
                let seed = seed.unwrap_or(0);
                // Finished games are answered from the stored record.
                let finished = info.lock().expect("info lock").record.clone();
                if let Some(record) = finished {
                    let role = player.as_ref().and_then(|p| record.role_of(p));
                    let assist = info.lock().expect("info lock").summary.assist_mode;
                    let msg = permit(role, assist)
                        .and_then(|_| self.scorers.report(&record.dialog(), method, seed))
                        .map_or_else(ServerMsg::Error, ServerMsg::Suspicion);
                    out.send(Some(&game_id), msg);
                    return Ok(());
                }
                GameCmd::Suspicion {
                    viewer: player,
                    method,
                    seed,
                    reply: out,
                }
            }
            _ => return Err(WireError::new("bad_request", "not an in-game command")),
        };
        if let Err(e) = tx.send(cmd) {
            game_over(&game_id, e.0);
        }
        Ok(())
    }

    pub fn games(&self) -> Vec<GameSummary> {
        let st = self.lock();
        st.games
            .values()
            .map(|g| g.info.lock().expect("info lock").summary.clone())
            .collect()
    }

    pub fn summary(&self, game_id: &GameId) -> Option<GameSummary> {
        let st = self.lock();
        st.games
            .get(game_id)
            .map(|g| g.info.lock().expect("info lock").summary.clone())
    }

    /// Record of a finished game; `Ok(None)` while it is still running.
    pub fn record(&self, game_id: &GameId) -> Result<Option<GameRecord>, WireError> {
        let st = self.lock();
        let g = st.games.get(game_id).ok_or_else(unknown_game)?;
        let rec = g.info.lock().expect("info lock").record.clone();
        Ok(rec)
    }

    /// Final event log of a finished game.
    pub fn event_log(&self, game_id: &GameId) -> Option<Vec<GameEvent>> {
        let st = self.lock();
        let g = st.games.get(game_id)?;
        let log = g.info.lock().expect("info lock").log.clone();
        log
    }

    /// Suspicion for a finished game, as served to a spectator.
    pub fn finished_suspicion(&self, game_id: &GameId, method: Method, seed: u64) -> Result<SuspicionReport, WireError> {
        let rec = self
            .record(game_id)?
            .ok_or_else(|| WireError::new("game_live", "the game is still running"))?;
        self.scorers.report(&rec.dialog(), method, seed)
    }

    pub fn session_count(&self) -> usize {
        self.lock().sessions.len()
    }

    pub fn waiting(&self) -> usize {
        self.lock().waiting
    }
}

fn unknown_game() -> WireError {
    WireError::new("unknown_game", "no such game")
}

fn spectator_only() -> WireError {
    WireError::new("forbidden", "spectators cannot chat or vote")
}
