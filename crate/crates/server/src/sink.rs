//! Single serialized writer that appends finished games to the archive.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use mafia_core::transcript::append_record;
use mafia_core::GameRecord;
use tokio::sync::{mpsc, Notify};

pub const ATTEMPTS: u32 = 3;

#[derive(Debug, Default)]
struct Counters {
    pending: AtomicUsize,
    written: AtomicUsize,
    failed: AtomicUsize,
}

#[derive(Clone, Debug)]
pub struct ArchiveSink {
    tx: mpsc::UnboundedSender<GameRecord>,
    counters: Arc<Counters>,
    idle: Arc<Notify>,
}

impl ArchiveSink {
    /// Starts the writer task. `backoff` is the first retry delay; it doubles
    /// after each failed attempt.
    pub fn spawn(path: PathBuf, backoff: Duration) -> Self {
        let (tx, mut rx) = mpsc::unbounded_channel::<GameRecord>();
        let counters = Arc::new(Counters::default());
        let idle = Arc::new(Notify::new());
        let (c, n) = (counters.clone(), idle.clone());
        tokio::spawn(async move {
            while let Some(record) = rx.recv().await {
                let path = path.clone();
                let ok = tokio::task::spawn_blocking(move || write_with_retry(&path, &record, backoff))
                    .await
                    .unwrap_or(false);
                if ok {
                    c.written.fetch_add(1, Ordering::SeqCst);
                } else {
                    c.failed.fetch_add(1, Ordering::SeqCst);
                }
                c.pending.fetch_sub(1, Ordering::SeqCst);
                n.notify_waiters();
            }
        });
        Self { tx, counters, idle }
    }

    pub fn submit(&self, record: GameRecord) {
        self.counters.pending.fetch_add(1, Ordering::SeqCst);
        if self.tx.send(record).is_err() {
            self.counters.pending.fetch_sub(1, Ordering::SeqCst);
            self.counters.failed.fetch_add(1, Ordering::SeqCst);
        }
    }

    /// Waits until every submitted record is written or has failed.
    pub async fn flush(&self) {
        loop {
            let notified = self.idle.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            if self.counters.pending.load(Ordering::SeqCst) == 0 {
                return;
            }
            notified.await;
        }
    }

    pub fn written(&self) -> usize {
        self.counters.written.load(Ordering::SeqCst)
    }

    pub fn failed(&self) -> usize {
        self.counters.failed.load(Ordering::SeqCst)
    }
}

fn write_with_retry(path: &std::path::Path, record: &GameRecord, backoff: Duration) -> bool {
    let mut delay = backoff;
    for attempt in 1..=ATTEMPTS {
        match append_record(path, record) {
            Ok(_) => return true,
            Err(e) => {
                tracing::warn!(game = %record.game_id, attempt, error = %e, "archive append failed");
                if attempt < ATTEMPTS {
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
    tracing::error!(game = %record.game_id, "giving up on archive append");
    false
}
