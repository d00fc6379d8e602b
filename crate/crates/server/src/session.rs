use std::collections::VecDeque;
use std::sync::Mutex;

use mafia_core::GameId;
use tokio::sync::mpsc::UnboundedSender;
use tokio::time::{Duration, Instant};

use crate::protocol::{Frame, ServerMsg};

/// Frames kept for a detached session before the oldest are dropped.
const BACKLOG_LIMIT: usize = 4096;

/// Outbound side of a session. Assigns sequence numbers and buffers frames
/// while no connection is attached, so a resumed session sees a gapless
/// sequence.
#[derive(Debug)]
pub struct SessionOut {
    inner: Mutex<OutState>,
}

#[derive(Debug, Default)]
struct OutState {
    seq: u64,
    tx: Option<UnboundedSender<Frame>>,
    backlog: VecDeque<Frame>,
}

impl SessionOut {
    pub fn new(tx: Option<UnboundedSender<Frame>>) -> Self {
        Self {
            inner: Mutex::new(OutState {
                tx,
                ..Default::default()
            }),
        }
    }

    pub fn send(&self, game_id: Option<&GameId>, body: ServerMsg) {
        let mut st = self.inner.lock().expect("session lock");
        st.seq += 1;
        let frame = Frame {
            body,
            game_id: game_id.cloned(),
            seq: st.seq,
        };
        if let Some(tx) = &st.tx {
            match tx.send(frame) {
                Ok(()) => (),
                Err(e) => {
                    st.tx = None;
                    st.push_backlog(e.0);
                }
            }
        } else {
            st.push_backlog(frame);
        }
    }

    /// Attaches a connection and flushes anything buffered meanwhile.
    pub fn attach(&self, tx: UnboundedSender<Frame>) {
        let mut st = self.inner.lock().expect("session lock");
        for frame in st.backlog.drain(..) {
            if tx.send(frame).is_err() {
                return;
            }
        }
        st.tx = Some(tx);
    }

    pub fn detach(&self) {
        self.inner.lock().expect("session lock").tx = None;
    }

    pub fn is_attached(&self) -> bool {
        self.inner.lock().expect("session lock").tx.is_some()
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().expect("session lock").seq
    }
}

impl OutState {
    fn push_backlog(&mut self, frame: Frame) {
        if self.backlog.len() == BACKLOG_LIMIT {
            self.backlog.pop_front();
        }
        self.backlog.push_back(frame);
    }
}

/// Wall-clock milliseconds derived from tokio's monotonic clock, so paused
/// test time drives game timestamps and deadlines alike.
#[derive(Debug, Clone, Copy)]
pub struct Clock {
    base_ms: i64,
    base: Instant,
}

impl Clock {
    pub fn new(base_ms: i64) -> Self {
        Self {
            base_ms,
            base: Instant::now(),
        }
    }

    pub fn system() -> Self {
        let ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0);
        Self::new(ms)
    }

    pub fn now_ms(&self) -> i64 {
        self.base_ms + self.base.elapsed().as_millis() as i64
    }

    pub fn instant_at(&self, ms: i64) -> Instant {
        let offset = (ms - self.base_ms).max(0) as u64;
        self.base + Duration::from_millis(offset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tokio::sync::mpsc;

    #[test]
    fn buffered_frames_flush_in_order() {
        let out = SessionOut::new(None);
        out.send(None, ServerMsg::Pong);
        out.send(None, ServerMsg::Pong);
        let (tx, mut rx) = mpsc::unbounded_channel();
        out.attach(tx);
        out.send(None, ServerMsg::Pong);
        let seqs: Vec<u64> = std::iter::from_fn(|| rx.try_recv().ok()).map(|f| f.seq).collect();
        assert_eq!(seqs, [1, 2, 3]);
        drop(rx);
        out.send(None, ServerMsg::Pong);
        assert!(!out.is_attached());
        assert_eq!(out.last_seq(), 4);
    }

    #[tokio::test(start_paused = true)]
    async fn clock_follows_virtual_time() {
        let c = Clock::new(1_000);
        tokio::time::sleep(Duration::from_secs(5)).await;
        assert_eq!(c.now_ms(), 6_000);
        assert_eq!(c.instant_at(6_000), Instant::now());
    }
}
