use std::sync::Arc;
use std::time::Duration;

use mafia_core::transcript::{append_record, load_records};
use mafia_server::loopback::{play_game, PlayedGame};
use mafia_server::session::Clock;
use mafia_server::{ArchiveSink, Hub, LoadedScorers, ServerConfig};

fn hub(seed: u64, sink: ArchiveSink) -> Arc<Hub> {
    let cfg = ServerConfig {
        seed: Some(seed),
        ..Default::default()
    };
    Hub::with_clock(cfg, LoadedScorers::default(), Some(sink), Clock::new(0))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_endings_all_persist() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("games.jsonl");
    let sink = ArchiveSink::spawn(path.clone(), Duration::from_millis(5));
    // Separate hubs so the games run truly in parallel against one sink.
    let mut tasks = Vec::new();
    for i in 0..8u64 {
        let h = hub(i, sink.clone());
        tasks.push(tokio::spawn(async move { play_game(&h, 4, 1, i).await }));
    }
    let played: Vec<PlayedGame> = join_all(tasks).await;
    sink.flush().await;
    assert_eq!(sink.written(), 8);
    assert_eq!(sink.failed(), 0);
    let saved = load_records(&path).unwrap();
    assert_eq!(saved.len(), 8);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 9);
    // Game ids repeat across hubs; start times and rosters identify them.
    assert_eq!(played.len(), 8);
}

async fn join_all(tasks: Vec<tokio::task::JoinHandle<PlayedGame>>) -> Vec<PlayedGame> {
    let mut out = Vec::new();
    for t in tasks {
        out.push(t.await.unwrap());
    }
    out
}

#[tokio::test(start_paused = true)]
async fn failing_writes_are_retried_then_counted() {
    let dir = tempfile::tempdir().unwrap();
    // The parent "directory" is a file, so every attempt fails.
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "x").unwrap();
    let sink = ArchiveSink::spawn(blocker.join("games.jsonl"), Duration::from_millis(1));
    let h = hub(1, sink.clone());
    play_game(&h, 4, 1, 1).await;
    sink.flush().await;
    assert_eq!(sink.written(), 0);
    assert_eq!(sink.failed(), 1);
}

#[tokio::test(start_paused = true)]
async fn failed_append_leaves_archive_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("games.jsonl");
    let sink = ArchiveSink::spawn(path.clone(), Duration::from_millis(1));
    let h = hub(2, sink.clone());
    let first = play_game(&h, 5, 1, 2).await;
    sink.flush().await;
    let rec = h.record(&first.game_id).unwrap().unwrap();

    // Damage the archive: the next append must fail without touching it
    // or leaving temp files behind.
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 10);
    std::fs::write(&path, &bytes).unwrap();
    assert!(append_record(&path, &rec).is_err());
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}
