//! Transport-independent connection handling. A transport feeds incoming
//! lines to [`Connection::handle_line`] and writes out whatever arrives on
//! the receiver returned by [`Connection::open`].

use std::sync::Arc;

use tokio::sync::mpsc;

use crate::hub::Hub;
use crate::protocol::{ClientFrame, ClientMsg, Frame, ServerMsg, WireError};
use crate::session::SessionOut;

pub struct Connection {
    hub: Arc<Hub>,
    tx: mpsc::UnboundedSender<Frame>,
    out: Arc<SessionOut>,
    token: Option<String>,
}

impl Connection {
    pub fn open(hub: Arc<Hub>) -> (Self, mpsc::UnboundedReceiver<Frame>) {
        let (tx, rx) = mpsc::unbounded_channel();
        let out = Arc::new(SessionOut::new(Some(tx.clone())));
        (
            Self {
                hub,
                tx,
                out,
                token: None,
            },
            rx,
        )
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    pub fn handle_line(&mut self, line: &str) {
        let line = line.trim();
        if line.is_empty() {
            return;
        }
        match serde_json::from_str::<ClientFrame>(line) {
            Ok(frame) => self.handle(frame.body),
            Err(e) => self.reply_error(WireError::new("bad_request", e.to_string())),
        }
    }

    pub fn handle(&mut self, msg: ClientMsg) {
        if let Err(e) = self.dispatch(msg) {
            self.reply_error(e);
        }
    }

    fn dispatch(&mut self, msg: ClientMsg) -> Result<(), WireError> {
        let already = || WireError::new("already_joined", "this connection already has a session");
        match msg {
            ClientMsg::Ping => {
                self.out.send(None, ServerMsg::Pong);
                Ok(())
            }
            ClientMsg::Join(req) => {
                if self.token.is_some() {
                    return Err(already());
                }
                self.token = Some(self.hub.join(self.out.clone(), req)?);
                Ok(())
            }
            ClientMsg::Spectate { game_id } => {
                if self.token.is_some() {
                    return Err(already());
                }
                self.token = Some(self.hub.spectate(self.out.clone(), &game_id)?);
                Ok(())
            }
            ClientMsg::Resume { token } => {
                if self.token.is_some() {
                    return Err(already());
                }
                self.out = self.hub.resume(&token, self.tx.clone())?;
                self.token = Some(token);
                Ok(())
            }
            other => {
                let token = self
                    .token
                    .as_deref()
                    .ok_or_else(|| WireError::new("not_joined", "join or resume first"))?;
                self.hub.command(token, other)
            }
        }
    }

    fn reply_error(&self, e: WireError) {
        self.out.send(None, ServerMsg::Error(e));
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(t) = &self.token {
            self.hub.detach(t);
        }
    }
}
