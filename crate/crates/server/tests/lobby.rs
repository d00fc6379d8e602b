use std::collections::BTreeMap;
use std::sync::Arc;

use mafia_server::protocol::{Frame, ServerMsg};
use mafia_server::session::{Clock, SessionOut};
use mafia_server::{ClientMsg, Connection, Hub, JoinRequest, LoadedScorers, ServerConfig};

fn hub(cfg: ServerConfig) -> Arc<Hub> {
    Hub::with_clock(cfg, LoadedScorers::default(), None, Clock::new(0))
}

fn req(n: u32, m: u32) -> JoinRequest {
    JoinRequest {
        n_players: Some(n),
        n_mafia: Some(m),
        ..Default::default()
    }
}

fn kinds(rx: &mut tokio::sync::mpsc::UnboundedReceiver<Frame>) -> Vec<&'static str> {
    std::iter::from_fn(|| rx.try_recv().ok()).map(|f| f.kind()).collect()
}

#[tokio::test(start_paused = true)]
async fn fourth_joiner_starts_the_game() {
    let hub = hub(ServerConfig::default());
    let mut conns = Vec::new();
    for i in 0..4 {
        let (mut c, mut rx) = Connection::open(hub.clone());
        c.handle(ClientMsg::Join(req(4, 1)));
        if i < 3 {
            assert_eq!(kinds(&mut rx), ["joined"]);
            assert!(hub.games().is_empty());
        }
        conns.push((c, rx));
    }
    assert_eq!(hub.games().len(), 1);
    assert_eq!(hub.waiting(), 0);
    for (_, rx) in &mut conns {
        let k = kinds(rx);
        assert!(k.ends_with(&["start", "phase"]), "{k:?}");
    }
}

#[tokio::test(start_paused = true)]
async fn duplicate_token_rejected() {
    let hub = hub(ServerConfig::default());
    let (mut a, _rxa) = Connection::open(hub.clone());
    let (mut b, mut rxb) = Connection::open(hub.clone());
    let r = JoinRequest {
        token: Some("t-1".into()),
        ..req(4, 1)
    };
    a.handle(ClientMsg::Join(r.clone()));
    b.handle(ClientMsg::Join(r));
    let f = rxb.try_recv().unwrap();
    assert!(matches!(f.body, ServerMsg::Error(ref e) if e.code == "duplicate_token"));
    assert_eq!(hub.waiting(), 1);
    // A second join on the same connection is refused as well.
    a.handle(ClientMsg::Join(req(4, 1)));
    assert_eq!(hub.waiting(), 1);
}

#[tokio::test(start_paused = true)]
async fn lobby_full_and_leaving() {
    let hub = hub(ServerConfig {
        lobby_capacity: 3,
        ..Default::default()
    });
    let mut keep = Vec::new();
    for _ in 0..3 {
        let (mut c, rx) = Connection::open(hub.clone());
        c.handle(ClientMsg::Join(req(10, 2)));
        keep.push((c, rx));
    }
    let (mut c, mut rx) = Connection::open(hub.clone());
    c.handle(ClientMsg::Join(req(10, 2)));
    assert!(matches!(rx.try_recv().unwrap().body, ServerMsg::Error(ref e) if e.code == "lobby_full"));
    // A waiting player disconnecting frees a slot.
    keep.pop();
    assert_eq!(hub.waiting(), 2);
    c.handle(ClientMsg::Join(req(10, 2)));
    assert!(matches!(rx.try_recv().unwrap().body, ServerMsg::Joined(_)));
}

#[tokio::test(start_paused = true)]
async fn bad_requests_get_error_frames() {
    let hub = hub(ServerConfig::default());
    let (mut c, mut rx) = Connection::open(hub.clone());
    c.handle_line("not json");
    c.handle(ClientMsg::Chat { text: "hi".into() });
    c.handle(ClientMsg::Join(req(4, 3)));
    c.handle_line(r#"{"type":"ping"}"#);
    let codes: Vec<String> = std::iter::from_fn(|| rx.try_recv().ok())
        .map(|f| match f.body {
            ServerMsg::Error(e) => e.code,
            other => other.kind().to_owned(),
        })
        .collect();
    assert_eq!(codes, ["bad_request", "not_joined", "invalid_config", "pong"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn ten_thousand_concurrent_joins() {
    let hub = hub(ServerConfig {
        seed: Some(1),
        ..Default::default()
    });
    let sizes = [(4u32, 1u32), (5, 1), (7, 2), (10, 2)];
    let mut tasks = Vec::new();
    for i in 0..10_000usize {
        let hub = hub.clone();
        let (n, m) = sizes[i % sizes.len()];
        tasks.push(tokio::spawn(async move {
            let out = Arc::new(SessionOut::new(None));
            hub.join(out.clone(), req(n, m)).unwrap();
            out
        }));
    }
    let mut outs = Vec::new();
    for t in tasks {
        outs.push(t.await.unwrap());
    }
    let games = hub.games();
    let mut per_size: BTreeMap<u32, usize> = BTreeMap::new();
    for g in &games {
        *per_size.entry(g.n_players).or_default() += 1;
    }
    // 2,500 joins per size; one 7-player joiner is left waiting.
    assert_eq!(per_size[&4], 625);
    assert_eq!(per_size[&5], 500);
    assert_eq!(per_size[&7], 357);
    assert_eq!(per_size[&10], 250);
    assert_eq!(hub.waiting(), 1);

    // Every started game got exactly its configured number of role cards.
    let mut cards: BTreeMap<String, usize> = BTreeMap::new();
    for out in &outs {
        let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();
        out.attach(tx);
        for f in std::iter::from_fn(|| rx.try_recv().ok()) {
            if let ServerMsg::Start(_) = f.body {
                *cards.entry(f.game_id.unwrap().to_string()).or_default() += 1;
            }
        }
    }
    assert_eq!(cards.len(), games.len());
    for g in &games {
        assert_eq!(cards[g.game_id.as_str()], g.n_players as usize);
    }
}
