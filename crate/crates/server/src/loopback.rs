//! In-process bots that play through [`Connection`]s, plus a delivery-log
//! audit. Used by load and secrecy tests; no network involved.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use mafia_core::{GameId, GameRecord, Phase, PlayerId, Role};
use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio::sync::mpsc;

use crate::connection::Connection;
use crate::hub::Hub;
use crate::protocol::{ClientMsg, Frame, JoinRequest, ServerMsg};

/// Everything one bot saw and said.
#[derive(Debug, Clone, Default)]
pub struct BotLog {
    pub player: Option<PlayerId>,
    pub role: Option<Role>,
    pub game_id: Option<GameId>,
    pub frames: Vec<Frame>,
    pub sent_chats: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PlayedGame {
    pub game_id: GameId,
    pub bots: Vec<BotLog>,
    pub spectator: BotLog,
}

#[derive(Default)]
struct View {
    me: Option<PlayerId>,
    role: Option<Role>,
    teammates: BTreeSet<PlayerId>,
    alive: BTreeSet<PlayerId>,
}

fn act(conn: &mut Connection, view: &View, phase: Phase, round: u32, rng: &mut ChaCha8Rng, log: &mut BotLog) {
    let (Some(me), Some(role)) = (&view.me, view.role) else { return };
    if !view.alive.contains(me) || (phase == Phase::Night && role != Role::Mafioso) {
        return;
    }
    let target = view
        .alive
        .iter()
        .filter(|p| *p != me && !(phase == Phase::Night && view.teammates.contains(*p)))
        .choose(rng)
        .cloned();
    let Some(target) = target else { return };
    let game = log.game_id.as_ref().map_or("", |g| g.as_str()).to_owned();
    let text = format!("{game} {phase:?} {round} {me} suspects {target}");
    conn.handle(ClientMsg::Chat { text: text.clone() });
    log.sent_chats.push(text);
    conn.handle(ClientMsg::Vote { target });
}

/// Reads frames until the game ends (or the session errors out of it),
/// chatting once and voting once per phase while alive and eligible.
async fn run_bot(mut conn: Connection, mut rx: mpsc::UnboundedReceiver<Frame>, seed: u64, started: Option<mpsc::UnboundedSender<GameId>>) -> BotLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut view = View::default();
    let mut log = BotLog::default();
    while let Some(frame) = rx.recv().await {
        log.frames.push(frame.clone());
        match &frame.body {
            ServerMsg::Start(s) => {
                view.me = s.player.clone();
                view.role = s.role;
                view.teammates = s.teammates.iter().cloned().collect();
                view.alive = s.roster.iter().filter(|r| r.alive).map(|r| r.player.clone()).collect();
                log.player = s.player.clone();
                log.role = s.role;
                log.game_id = frame.game_id.clone();
                if let (Some(tx), Some(g)) = (&started, &frame.game_id) {
                    let _ = tx.send(g.clone());
                }
            }
            ServerMsg::Eliminated(e) => {
                view.alive.remove(&e.player);
            }
            ServerMsg::Phase(p) => act(&mut conn, &view, p.phase, p.round, &mut rng, &mut log),
            ServerMsg::Ended(_) => break,
            ServerMsg::Error(e) if matches!(e.code.as_str(), "game_over" | "unknown_game") => break,
            _ => {}
        }
    }
    log
}

/// Fills one lobby of `(n_players, n_mafia)` with bots and plays the game to
/// the end. Not safe to run concurrently with other joins to the same lobby.
pub async fn play_game(hub: &Arc<Hub>, n_players: u32, n_mafia: u32, seed: u64) -> PlayedGame {
    let (started_tx, mut started_rx) = mpsc::unbounded_channel();
    let mut handles = Vec::new();
    for i in 0..n_players {
        let (mut conn, rx) = Connection::open(hub.clone());
        conn.handle(ClientMsg::Join(JoinRequest {
            n_players: Some(n_players),
            n_mafia: Some(n_mafia),
            ..Default::default()
        }));
        let bot_seed = seed.wrapping_mul(1_000).wrapping_add(u64::from(i));
        handles.push(tokio::spawn(run_bot(conn, rx, bot_seed, Some(started_tx.clone()))));
    }
    drop(started_tx);
    let game_id = started_rx.recv().await.expect("a game started");

    let (mut conn, rx) = Connection::open(hub.clone());
    conn.handle(ClientMsg::Spectate {
        game_id: game_id.clone(),
    });
    let spectator = tokio::spawn(run_bot(conn, rx, seed, None));

    let mut bots = Vec::new();
    for h in handles {
        bots.push(h.await.expect("bot task"));
    }
    PlayedGame {
        game_id,
        bots,
        spectator: spectator.await.expect("spectator task"),
    }
}

/// Checks one played game against its final record:
/// night chat reaches living mafiosi only, no frame before the end reveals
/// another player's role except a day elimination, sequence numbers are
/// gapless, and every chat a bot sent is in the record exactly once.
pub fn audit(game: &PlayedGame, record: &GameRecord) -> Result<(), String> {
    let roles = record.roles();
    let night_texts: BTreeSet<&str> = record
        .utterances
        .iter()
        .filter(|u| u.phase == Phase::Night)
        .map(|u| u.text.as_str())
        .collect();

    for bot in game.bots.iter().chain(std::iter::once(&game.spectator)) {
        let who = bot.player.as_ref().map_or("spectator".to_owned(), |p| p.to_string());
        for (i, f) in bot.frames.iter().enumerate() {
            if f.seq != i as u64 + 1 {
                return Err(format!("{who}: seq {} at position {i}", f.seq));
            }
        }
        let mafioso = bot.role == Some(Role::Mafioso);
        if let Some(p) = &bot.player {
            if roles.get(p) != bot.role.as_ref() {
                return Err(format!("{who}: told role {:?}, true role {:?}", bot.role, roles.get(p)));
            }
        }
        for f in &bot.frames {
            match &f.body {
                ServerMsg::Ended(_) => break,
                ServerMsg::Start(s) => {
                    if s.player != bot.player || s.role != bot.role {
                        return Err(format!("{who}: start card for someone else"));
                    }
                    if !mafioso && !s.teammates.is_empty() {
                        return Err(format!("{who}: non-mafioso told teammates"));
                    }
                    if s.teammates.iter().any(|t| roles.get(t) != Some(&Role::Mafioso)) {
                        return Err(format!("{who}: teammate list wrong"));
                    }
                }
                ServerMsg::Eliminated(e) => match (e.phase, e.role) {
                    (Phase::Night, Some(_)) => return Err(format!("{who}: night elimination revealed a role")),
                    (Phase::Day, Some(r)) if roles.get(&e.player) != Some(&r) => {
                        return Err(format!("{who}: wrong reveal for {}", e.player))
                    }
                    _ => {}
                },
                ServerMsg::Chat(c) if !mafioso && c.phase == Phase::Night => {
                    return Err(format!("{who}: received night chat {}", c.index))
                }
                ServerMsg::Vote(v) if !mafioso && v.phase == Phase::Night => {
                    return Err(format!("{who}: received a night vote"))
                }
                _ => {}
            }
            if !mafioso {
                let line = f.to_line();
                if let Some(t) = night_texts.iter().find(|t| line.contains(*t)) {
                    return Err(format!("{who}: night text leaked: {t}"));
                }
            }
        }
    }

    let mut in_record: BTreeMap<&str, usize> = BTreeMap::new();
    for u in &record.utterances {
        *in_record.entry(u.text.as_str()).or_default() += 1;
    }
    for bot in &game.bots {
        for text in &bot.sent_chats {
            if in_record.get(text.as_str()) != Some(&1) {
                return Err(format!("chat {text:?} appears {:?} times", in_record.get(text.as_str())));
            }
        }
    }
    let sent: usize = game.bots.iter().map(|b| b.sent_chats.len()).sum();
    if sent != record.utterances.len() {
        return Err(format!("{sent} chats sent, {} recorded", record.utterances.len()));
    }
    Ok(())
}
