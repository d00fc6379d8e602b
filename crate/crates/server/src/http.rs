//! Read-only HTTP endpoints and the WebSocket upgrade.

use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use mafia_core::inference::Method;
use mafia_core::GameId;
use serde::Deserialize;
use serde_json::json;

use crate::connection::Connection;
use crate::hub::Hub;
use crate::protocol::WireError;

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/games", get(games))
        .route("/games/{id}/record", get(record))
        .route("/games/{id}/suspicion", get(suspicion))
        .route("/ws", get(ws_upgrade))
        .with_state(hub)
}

async fn health(State(hub): State<Arc<Hub>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "games": hub.games().len(),
        "sessions": hub.session_count(),
        "waiting": hub.waiting(),
    }))
}

async fn games(State(hub): State<Arc<Hub>>) -> Response {
    Json(hub.games()).into_response()
}

fn error(status: StatusCode, e: WireError) -> Response {
    (status, Json(e)).into_response()
}

async fn record(State(hub): State<Arc<Hub>>, Path(id): Path<String>) -> Response {
    match hub.record(&GameId::new(id)) {
        Ok(Some(rec)) => Json(rec).into_response(),
        Ok(None) => error(
            StatusCode::CONFLICT,
            WireError::new("game_live", "the game is still running"),
        ),
        Err(e) => error(StatusCode::NOT_FOUND, e),
    }
}

#[derive(Deserialize)]
struct SuspicionQuery {
    method: Method,
    #[serde(default)]
    seed: u64,
}

/// Hints over HTTP are limited to finished games; live hints go through
/// sessions, where role permissions apply.
async fn suspicion(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    Query(q): Query<SuspicionQuery>,
) -> Response {
    match hub.finished_suspicion(&GameId::new(id), q.method, q.seed) {
        Ok(report) => Json(report).into_response(),
        Err(e) => {
            let status = match e.code.as_str() {
                "unknown_game" => StatusCode::NOT_FOUND,
                "game_live" => StatusCode::CONFLICT,
                "no_scorer_loaded" => StatusCode::SERVICE_UNAVAILABLE,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            };
            error(status, e)
        }
    }
}

async fn ws_upgrade(State(hub): State<Arc<Hub>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| serve_ws(hub, socket))
}

async fn serve_ws(hub: Arc<Hub>, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();
    let (mut conn, mut rx) = Connection::open(hub);
    let writer = async {
        while let Some(frame) = rx.recv().await {
            if sink.send(Message::Text(frame.to_line().into())).await.is_err() {
                break;
            }
        }
    };
    let reader = async {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                Message::Text(text) => {
                    for line in text.as_str().lines() {
                        conn.handle_line(line);
                    }
                }
                Message::Close(_) => break,
                _ => {}
            }
        }
    };
    tokio::select! {
        _ = reader => {}
        _ = writer => {}
    }
}
