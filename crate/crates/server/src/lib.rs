//! Live game service: lobby, per-game rooms with chat gating, phase timers,
//! archive persistence and suspicion hints. See `PROTOCOL.md` for the wire
//! format.

pub mod config;
pub mod connection;
pub mod http;
pub mod hub;
pub mod loopback;
pub mod protocol;
pub mod room;
pub mod session;
pub mod sink;
pub mod suspicion;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use mafia_core::scorers::ScoreError;
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

pub use config::{ConfigError, ServerConfig};
pub use connection::Connection;
pub use hub::Hub;
pub use protocol::{ClientFrame, ClientMsg, Frame, JoinRequest, ServerMsg, WireError};
pub use sink::ArchiveSink;
pub use suspicion::LoadedScorers;

/// First retry delay for archive appends.
pub const ARCHIVE_BACKOFF: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("loading scorers: {0}")]
    Scorer(#[from] ScoreError),
    #[error("binding {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
}

pub struct RunningServer {
    pub hub: Arc<Hub>,
    pub http_addr: SocketAddr,
    pub tcp_addr: Option<SocketAddr>,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningServer {
    /// Stops accepting connections, then waits for finished games to reach
    /// the archive.
    pub async fn shutdown(self) {
        for t in &self.tasks {
            t.abort();
        }
        if let Some(sink) = self.hub.sink() {
            sink.flush().await;
        }
    }
}

async fn bind(addr: &str) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|source| ServerError::Bind {
        addr: addr.to_owned(),
        source,
    })
}

/// Validates `cfg`, loads scorers, binds listeners and starts serving.
pub async fn start(cfg: ServerConfig) -> Result<RunningServer, ServerError> {
    cfg.validate()?;
    let scorers = LoadedScorers::load(&cfg.scorers)?;
    let sink = cfg
        .archive_path
        .clone()
        .map(|p| ArchiveSink::spawn(p, ARCHIVE_BACKOFF));
    let http = bind(&cfg.listen).await?;
    let tcp = match &cfg.tcp_listen {
        Some(a) => Some(bind(a).await?),
        None => None,
    };
    let hub = Hub::new(cfg, scorers, sink);

    let http_addr = http.local_addr().map_err(|source| ServerError::Bind {
        addr: hub.config().listen.clone(),
        source,
    })?;
    let app = http::router(hub.clone());
    let mut tasks = vec![tokio::spawn(async move {
        if let Err(e) = axum::serve(http, app).await {
            tracing::error!(error = %e, "http server stopped");
        }
    })];
    let mut tcp_addr = None;
    if let Some(listener) = tcp {
        tcp_addr = listener.local_addr().ok();
        tasks.push(tokio::spawn(accept_tcp(hub.clone(), listener)));
    }
    Ok(RunningServer {
        hub,
        http_addr,
        tcp_addr,
        tasks,
    })
}

async fn accept_tcp(hub: Arc<Hub>, listener: TcpListener) {
    loop {
        match listener.accept().await {
            Ok((stream, _)) => {
                tokio::spawn(serve_tcp(hub.clone(), stream));
            }
            Err(e) => tracing::warn!(error = %e, "tcp accept failed"),
        }
    }
}

/// Newline-delimited frames over a raw TCP stream.
pub async fn serve_tcp(hub: Arc<Hub>, stream: TcpStream) {
    let (read, mut write) = stream.into_split();
    let (mut conn, mut rx) = Connection::open(hub);
    let writer = async {
        while let Some(frame) = rx.recv().await {
            let mut line = frame.to_line();
            line.push('\n');
            if write.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
    };
    let reader = async {
        let mut lines = BufReader::new(read).lines();
        while let Ok(Some(line)) = lines.next_line().await {
            conn.handle_line(&line);
        }
    };
    tokio::select! {
        _ = reader => {}
        _ = writer => {}
    }
}
