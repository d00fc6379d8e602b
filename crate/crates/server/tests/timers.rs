use std::sync::Arc;
use std::time::Duration;

use mafia_core::{Phase, Role};
use mafia_server::protocol::{Frame, PhaseInfo, ServerMsg};
use mafia_server::session::Clock;
use mafia_server::{ClientMsg, Connection, Hub, JoinRequest, LoadedScorers, ServerConfig};
use tokio::sync::mpsc::UnboundedReceiver;
use tokio::time::Instant;

struct Player {
    conn: Option<Connection>,
    rx: UnboundedReceiver<Frame>,
    id: mafia_core::PlayerId,
    role: Role,
    token: String,
}

async fn setup(early_close: bool) -> (Arc<Hub>, Vec<Player>) {
    let cfg = ServerConfig {
        seed: Some(2),
        early_close,
        ..Default::default()
    };
    let hub = Hub::with_clock(cfg, LoadedScorers::default(), None, Clock::new(0));
    let mut players = Vec::new();
    for _ in 0..4 {
        let (mut conn, rx) = Connection::open(hub.clone());
        conn.handle(ClientMsg::Join(JoinRequest {
            n_players: Some(4),
            n_mafia: Some(1),
            ..Default::default()
        }));
        players.push((conn, rx));
    }
    let mut out = Vec::new();
    for (conn, mut rx) in players {
        let mut id = None;
        let mut role = None;
        let mut token = String::new();
        while let Ok(f) = rx.try_recv() {
            match f.body {
                ServerMsg::Start(s) => {
                    id = s.player;
                    role = s.role;
                }
                ServerMsg::Joined(j) => token = j.token,
                _ => {}
            }
        }
        out.push(Player {
            conn: Some(conn),
            rx,
            id: id.unwrap(),
            role: role.unwrap(),
            token,
        });
    }
    (hub, out)
}

/// Waits (in virtual time) for the next phase frame and reports when it came.
async fn next_phase(rx: &mut UnboundedReceiver<Frame>) -> (PhaseInfo, Instant, Vec<Frame>) {
    let mut seen = Vec::new();
    loop {
        let f = rx.recv().await.expect("open");
        if let ServerMsg::Phase(p) = &f.body {
            return (p.clone(), Instant::now(), seen);
        }
        seen.push(f);
    }
}

#[tokio::test(start_paused = true)]
async fn early_close_when_all_votes_are_in() {
    let start = Instant::now();
    let (_hub, mut ps) = setup(true).await;
    let m = ps.iter().position(|p| p.role == Role::Mafioso).unwrap();
    let victim = ps[(m + 1) % 4].id.clone();
    tokio::time::sleep(Duration::from_secs(10)).await;
    ps[m].conn.as_mut().unwrap().handle(ClientMsg::Vote { target: victim.clone() });
    let (phase, at, before) = next_phase(&mut ps[0].rx).await;
    assert_eq!(phase.phase, Phase::Day);
    assert_eq!(at - start, Duration::from_secs(10));
    assert_eq!(phase.deadline_ms, Some(10_000 + 150_000));
    assert!(before
        .iter()
        .any(|f| matches!(&f.body, ServerMsg::Eliminated(e) if e.player == victim && e.role.is_none())));
}

#[tokio::test(start_paused = true)]
async fn deadline_without_votes_advances_phase() {
    let start = Instant::now();
    let (_hub, mut ps) = setup(true).await;
    let (phase, at, before) = next_phase(&mut ps[0].rx).await;
    assert_eq!((phase.phase, phase.round), (Phase::Day, 1));
    let late = (at - start).as_millis() as i64 - 60_000;
    assert!(late.abs() <= 100, "fired {late} ms off");
    assert!(!before.iter().any(|f| matches!(f.body, ServerMsg::Eliminated(_))));

    let (phase, at, _) = next_phase(&mut ps[0].rx).await;
    assert_eq!((phase.phase, phase.round), (Phase::Night, 2));
    let late = (at - start).as_millis() as i64 - 210_000;
    assert!(late.abs() <= 100, "fired {late} ms off");
}

#[tokio::test(start_paused = true)]
async fn no_early_close_when_disabled() {
    let start = Instant::now();
    let (_hub, mut ps) = setup(false).await;
    let m = ps.iter().position(|p| p.role == Role::Mafioso).unwrap();
    let victim = ps[(m + 1) % 4].id.clone();
    ps[m].conn.as_mut().unwrap().handle(ClientMsg::Vote { target: victim });
    let (_, at, before) = next_phase(&mut ps[0].rx).await;
    assert_eq!(at - start, Duration::from_secs(60));
    assert!(before.iter().any(|f| matches!(f.body, ServerMsg::Eliminated(_))));
}

#[tokio::test(start_paused = true)]
async fn reconnect_within_grace_is_silent() {
    let (hub, mut ps) = setup(false).await;
    let token = ps[1].token.clone();
    ps[1].conn = None;
    tokio::time::sleep(Duration::from_secs(30)).await;
    let (mut conn, mut rx) = Connection::open(hub.clone());
    conn.handle(ClientMsg::Resume { token });
    tokio::time::sleep(Duration::from_secs(40)).await;
    let frames: Vec<Frame> = std::iter::from_fn(|| rx.try_recv().ok()).collect();
    assert!(matches!(&frames[0].body, ServerMsg::Joined(j) if j.resumed));
    assert!(frames.iter().any(|f| matches!(f.body, ServerMsg::Phase(_))));
    let others: Vec<Frame> = std::iter::from_fn(|| ps[0].rx.try_recv().ok()).collect();
    assert!(!others.iter().any(|f| matches!(f.body, ServerMsg::Presence { .. })));
    // Sequence numbers continue across the reconnect.
    let seqs: Vec<u64> = frames.iter().map(|f| f.seq).collect();
    assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1));
    assert!(seqs[0] > 3);
}

#[tokio::test(start_paused = true)]
async fn grace_expiry_marks_disconnected_and_buffers() {
    let start = Instant::now();
    let (hub, mut ps) = setup(false).await;
    let gone = ps[2].id.clone();
    let token = ps[2].token.clone();
    ps[2].conn = None;
    loop {
        let f = ps[0].rx.recv().await.unwrap();
        if let ServerMsg::Presence { player, connected } = f.body {
            assert_eq!(player, gone);
            assert!(!connected);
            break;
        }
    }
    assert_eq!(Instant::now() - start, Duration::from_secs(60));
    // Still in the game; frames sent meanwhile arrive on resume.
    let (mut conn, mut rx) = Connection::open(hub.clone());
    conn.handle(ClientMsg::Resume { token });
    tokio::task::yield_now().await;
    let frames: Vec<Frame> = std::iter::from_fn(|| rx.try_recv().ok()).collect();
    assert!(frames.iter().any(|f| matches!(f.body, ServerMsg::Phase(ref p) if p.phase == Phase::Day)));
    loop {
        let f = ps[0].rx.recv().await.unwrap();
        if let ServerMsg::Presence { player, connected } = f.body {
            assert_eq!(player, gone);
            assert!(connected);
            break;
        }
    }
}
