//! One live game: the serialized command loop that owns the engine, turns
//! events into frames for exactly the permitted audience, and runs the
//! phase and reconnect timers.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use mafia_core::engine::{Game, GameEvent, GamePhase};
use mafia_core::inference::Method;
use mafia_core::{GameId, GameRecord, Phase, PlayerId, Role, Winner};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tokio::sync::mpsc;
use tokio::time::{sleep_until, Duration, Instant};

use crate::protocol::{
    ChatLine, Eliminated, Ended, PhaseInfo, RosterEntry, ServerMsg, Start, VoteLine, WireError,
};
use crate::session::{Clock, SessionOut};
use crate::sink::ArchiveSink;
use crate::suspicion::{permit, LoadedScorers};

/// Public view of a game for listings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameSummary {
    pub game_id: GameId,
    pub n_players: u32,
    pub n_mafia: u32,
    pub assist_mode: bool,
    pub started_at_ms: i64,
    pub phase: Option<Phase>,
    pub round: u32,
    pub alive: usize,
    pub finished: bool,
    pub winner: Option<Winner>,
}

/// Shared between the room task and the hub.
#[derive(Debug)]
pub struct GameInfo {
    pub summary: GameSummary,
    pub record: Option<GameRecord>,
    /// Final event log, kept for replay checks.
    pub log: Option<Vec<mafia_core::engine::GameEvent>>,
}

pub enum GameCmd {
    Chat {
        player: PlayerId,
        text: String,
        reply: Arc<SessionOut>,
    },
    Vote {
        player: PlayerId,
        target: PlayerId,
        reply: Arc<SessionOut>,
    },
    Suspicion {
        viewer: Option<PlayerId>,
        method: Method,
        seed: u64,
        reply: Arc<SessionOut>,
    },
    Spectate {
        out: Arc<SessionOut>,
    },
    Detached {
        player: PlayerId,
    },
    Attached {
        player: PlayerId,
    },
}

pub struct RoomSettings {
    pub assist_mode: bool,
    pub early_close: bool,
    pub reconnect_grace: Duration,
    pub clock: Clock,
    pub scorers: Arc<LoadedScorers>,
    pub sink: Option<ArchiveSink>,
}

pub struct Room {
    game: Game,
    rng: ChaCha8Rng,
    players: BTreeMap<PlayerId, Arc<SessionOut>>,
    spectators: Vec<Arc<SessionOut>>,
    grace: BTreeMap<PlayerId, Instant>,
    settings: RoomSettings,
    info: Arc<Mutex<GameInfo>>,
}

impl Room {
    /// Wraps a freshly started game and sends every player their role card
    /// and the opening phase.
    pub fn new(
        game: Game,
        rng: ChaCha8Rng,
        players: BTreeMap<PlayerId, Arc<SessionOut>>,
        settings: RoomSettings,
    ) -> Self {
        let cfg = game.config();
        let info = GameInfo {
            summary: GameSummary {
                game_id: game.game_id().clone(),
                n_players: cfg.n_players,
                n_mafia: cfg.n_mafia,
                assist_mode: settings.assist_mode,
                started_at_ms: 0,
                phase: None,
                round: 0,
                alive: 0,
                finished: false,
                winner: None,
            },
            record: None,
            log: None,
        };
        let room = Self {
            game,
            rng,
            players,
            spectators: Vec::new(),
            grace: BTreeMap::new(),
            settings,
            info: Arc::new(Mutex::new(info)),
        };
        if let Some(GameEvent::GameStarted { started_at_ms, .. }) = room
            .game
            .log()
            .iter()
            .find(|e| matches!(e, GameEvent::GameStarted { .. }))
        {
            room.info.lock().expect("info lock").summary.started_at_ms = *started_at_ms;
        }
        for (id, out) in &room.players {
            out.send(Some(room.game.game_id()), ServerMsg::Start(room.start_card(Some(id))));
        }
        room.send_phase_to(None);
        room.refresh_info();
        room
    }

    pub fn info(&self) -> Arc<Mutex<GameInfo>> {
        self.info.clone()
    }

    fn gid(&self) -> &GameId {
        self.game.game_id()
    }

    fn start_card(&self, viewer: Option<&PlayerId>) -> Start {
        let cfg = self.game.config();
        let me = viewer.and_then(|id| self.game.player(id));
        let teammates = match me {
            Some(p) if p.role == Role::Mafioso => self
                .game
                .players()
                .iter()
                .filter(|q| q.role == Role::Mafioso && q.id != p.id)
                .map(|q| q.id.clone())
                .collect(),
            _ => Vec::new(),
        };
        Start {
            player: me.map(|p| p.id.clone()),
            role: me.map(|p| p.role),
            fake_name: me.map(|p| p.fake_name.clone()),
            roster: self
                .game
                .players()
                .iter()
                .map(|p| RosterEntry {
                    player: p.id.clone(),
                    fake_name: p.fake_name.clone(),
                    alive: self.game.is_alive(&p.id),
                })
                .collect(),
            teammates,
            n_players: cfg.n_players,
            n_mafia: cfg.n_mafia,
            night_seconds: cfg.night_seconds,
            day_seconds: cfg.day_seconds,
            assist_mode: self.settings.assist_mode,
        }
    }

    fn phase_msg(&self) -> Option<ServerMsg> {
        let st = self.game.state();
        let phase = st.phase.phase()?;
        Some(ServerMsg::Phase(PhaseInfo {
            phase,
            round: st.round,
            deadline_ms: st.deadline_ms,
        }))
    }

    fn send_phase_to(&self, only: Option<&SessionOut>) {
        if let Some(msg) = self.phase_msg() {
            match only {
                Some(out) => out.send(Some(self.gid()), msg),
                None => self.broadcast_all(&msg),
            }
        }
    }

    fn fake_name(&self, id: &PlayerId) -> String {
        self.game.player(id).map(|p| p.fake_name.clone()).unwrap_or_default()
    }

    /// Every player session (dead or alive) and every spectator.
    fn broadcast_all(&self, msg: &ServerMsg) {
        for out in self.players.values().chain(self.spectators.iter()) {
            out.send(Some(self.gid()), msg.clone());
        }
    }

    /// Living players and spectators.
    fn broadcast_day(&self, msg: &ServerMsg) {
        for (id, out) in &self.players {
            if self.game.is_alive(id) {
                out.send(Some(self.gid()), msg.clone());
            }
        }
        for out in &self.spectators {
            out.send(Some(self.gid()), msg.clone());
        }
    }

    /// Living mafiosi only.
    fn broadcast_night(&self, msg: &ServerMsg) {
        for (id, out) in &self.players {
            let mafioso = self.game.player(id).is_some_and(|p| p.role == Role::Mafioso);
            if mafioso && self.game.is_alive(id) {
                out.send(Some(self.gid()), msg.clone());
            }
        }
    }

    fn deliver(&self, events: &[GameEvent]) {
        for ev in events {
            match ev {
                GameEvent::ChatPosted { utterance: u } => {
                    let msg = ServerMsg::Chat(ChatLine {
                        index: u.index,
                        author: u.author.clone(),
                        fake_name: self.fake_name(&u.author),
                        phase: u.phase,
                        round: u.round,
                        timestamp_ms: u.timestamp_ms,
                        text: u.text.clone(),
                    });
                    match u.phase {
                        Phase::Night => self.broadcast_night(&msg),
                        Phase::Day => self.broadcast_day(&msg),
                    }
                }
                GameEvent::VoteCast { vote } => {
                    let msg = ServerMsg::Vote(VoteLine {
                        voter: vote.voter.clone(),
                        target: vote.target.clone(),
                        phase: vote.phase,
                        round: vote.round,
                    });
                    match vote.phase {
                        Phase::Night => self.broadcast_night(&msg),
                        Phase::Day => self.broadcast_day(&msg),
                    }
                }
                GameEvent::PlayerEliminated {
                    player,
                    phase,
                    round,
                    role_revealed,
                } => self.broadcast_all(&ServerMsg::Eliminated(Eliminated {
                    player: player.clone(),
                    fake_name: self.fake_name(player),
                    phase: *phase,
                    round: *round,
                    role: *role_revealed,
                })),
                GameEvent::PhaseChanged {
                    phase: gp @ (GamePhase::Night(round) | GamePhase::Day(round)),
                    deadline_ms,
                } => self.broadcast_all(&ServerMsg::Phase(PhaseInfo {
                    phase: gp.phase().unwrap_or(Phase::Night),
                    round: *round,
                    deadline_ms: *deadline_ms,
                })),
                GameEvent::ConnectionChanged { player, connected } => self.broadcast_all(&ServerMsg::Presence {
                    player: player.clone(),
                    connected: *connected,
                }),
                GameEvent::GameEnded { winner } => self.broadcast_all(&ServerMsg::Ended(Ended {
                    winner: *winner,
                    roles: self.game.players().iter().map(|p| (p.id.clone(), p.role)).collect(),
                })),
                GameEvent::PhaseChanged { .. } | GameEvent::PlayerJoined { .. } | GameEvent::GameStarted { .. } => {}
            }
        }
    }

    fn refresh_info(&self) {
        let mut info = self.info.lock().expect("info lock");
        let st = self.game.state();
        info.summary.phase = st.phase.phase();
        info.summary.round = st.round;
        info.summary.alive = st.alive.len();
        if let GamePhase::Finished(w) = st.phase {
            info.summary.finished = true;
            info.summary.winner = Some(w);
        }
    }

    fn now_ms(&self) -> i64 {
        self.settings.clock.now_ms()
    }

    pub fn handle(&mut self, cmd: GameCmd) {
        match cmd {
            GameCmd::Chat { player, text, reply } => {
                let now = self.now_ms();
                match self.game.post_chat(&player, &text, now) {
                    Ok(ev) => self.deliver(&[ev]),
                    Err(e) => reply.send(Some(self.gid()), ServerMsg::Error(e.into())),
                }
            }
            GameCmd::Vote { player, target, reply } => match self.game.cast_vote(&player, &target) {
                Ok(ev) => self.deliver(&[ev]),
                Err(e) => reply.send(Some(self.gid()), ServerMsg::Error(e.into())),
            },
            GameCmd::Suspicion {
                viewer,
                method,
                seed,
                reply,
            } => {
                let role = viewer.as_ref().and_then(|v| self.game.player(v)).map(|p| p.role);
                let result = permit(role, self.settings.assist_mode)
                    .and_then(|_| self.settings.scorers.report(&self.game.dialog(), method, seed));
                let msg = match result {
                    Ok(report) => ServerMsg::Suspicion(report),
                    Err(e) => ServerMsg::Error(e),
                };
                reply.send(Some(self.gid()), msg);
            }
            GameCmd::Spectate { out } => {
                out.send(Some(self.gid()), ServerMsg::Start(self.start_card(None)));
                self.send_phase_to(Some(&out));
                self.spectators.push(out);
            }
            GameCmd::Detached { player } => {
                let until = Instant::now() + self.settings.reconnect_grace;
                self.grace.insert(player, until);
            }
            GameCmd::Attached { player } => {
                self.grace.remove(&player);
                let disconnected = self.game.player(&player).is_some_and(|p| !p.connected);
                if disconnected {
                    if let Ok(ev) = self.game.set_connected(&player, true) {
                        self.deliver(&[ev]);
                    }
                }
            }
        }
        self.maybe_close_early();
        self.refresh_info();
    }

    fn maybe_close_early(&mut self) {
        if self.settings.early_close && !self.game.is_finished() && self.game.all_votes_in() {
            self.close_phase();
        }
    }

    fn close_phase(&mut self) {
        let now = self.now_ms();
        match self.game.close_phase(now, &mut self.rng) {
            Ok(events) => self.deliver(&events),
            Err(e) => tracing::error!(game = %self.gid(), error = %e, "close_phase failed"),
        }
    }

    fn phase_deadline(&self) -> Option<Instant> {
        if self.game.is_finished() {
            return None;
        }
        self.game
            .state()
            .deadline_ms
            .map(|ms| self.settings.clock.instant_at(ms))
    }

    fn next_wake(&self) -> Option<Instant> {
        self.phase_deadline()
            .into_iter()
            .chain(self.grace.values().copied())
            .min()
    }

    fn on_timer(&mut self) {
        let now = Instant::now();
        let expired: Vec<PlayerId> = self
            .grace
            .iter()
            .filter(|(_, t)| **t <= now)
            .map(|(p, _)| p.clone())
            .collect();
        for p in expired {
            self.grace.remove(&p);
            if let Ok(ev) = self.game.set_connected(&p, false) {
                self.deliver(&[ev]);
            }
        }
        if self.phase_deadline().is_some_and(|d| d <= now) {
            self.close_phase();
        }
        self.refresh_info();
    }

    fn finish(&mut self) {
        match self.game.to_record() {
            Ok(record) => {
                {
                    let mut info = self.info.lock().expect("info lock");
                    info.record = Some(record.clone());
                    info.log = Some(self.game.log().to_vec());
                }
                if let Some(sink) = &self.settings.sink {
                    sink.submit(record);
                }
            }
            Err(e) => tracing::error!(game = %self.gid(), error = %e, "finished game has no record"),
        }
        self.refresh_info();
    }

    /// Runs the command loop until the game ends or every sender is gone.
    pub async fn run(mut self, mut rx: mpsc::UnboundedReceiver<GameCmd>) {
        while !self.game.is_finished() {
            let wake = self.next_wake();
            tokio::select! {
                cmd = rx.recv() => match cmd {
                    Some(cmd) => self.handle(cmd),
                    None => return,
                },
                _ = sleep_opt(wake) => self.on_timer(),
            }
        }
        self.finish();
        // Anything that raced with the final phase close gets a clear answer.
        rx.close();
        while let Ok(cmd) = rx.try_recv() {
            game_over(self.gid(), cmd);
        }
    }
}

/// Replies `game_over` to a command that reached a finished game.
pub(crate) fn game_over(game_id: &GameId, cmd: GameCmd) {
    let reply = match cmd {
        GameCmd::Chat { reply, .. } | GameCmd::Vote { reply, .. } | GameCmd::Suspicion { reply, .. } => reply,
        GameCmd::Spectate { out } => out,
        GameCmd::Detached { .. } | GameCmd::Attached { .. } => return,
    };
    reply.send(
        Some(game_id),
        ServerMsg::Error(WireError::new("game_over", "the game has ended")),
    );
}

async fn sleep_opt(at: Option<Instant>) {
    match at {
        Some(t) => sleep_until(t).await,
        None => std::future::pending().await,
    }
}
