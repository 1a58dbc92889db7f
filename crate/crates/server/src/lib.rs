//! Real-time transport for human-in-the-loop sessions.
//!
//! Each WebSocket connection owns one [`Session`]. The session ticks on its own
//! thread at the configured rate. Frames fan out through a bounded broadcast
//! buffer, so a client that cannot keep up loses the oldest frames and the
//! simulation keeps its cadence.

use std::net::SocketAddr;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use log::{debug, info, warn};
use tokio::sync::broadcast;
use tokio::sync::mpsc as async_mpsc;

use psn::env::ActionId;
use psn::session::{ClientMessage, Frame, HumanInput, ServerMessage, Session, SessionConfig, SessionError};

#[derive(Clone, Debug)]
pub struct ServerOptions {
    /// Frames buffered per session before the oldest are dropped for slow clients.
    pub frame_buffer: usize,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self { frame_buffer: 16 }
    }
}

/// Commands from the transport to a session's tick loop.
#[derive(Clone, Debug, PartialEq)]
pub enum Control {
    Input(HumanInput),
    Reset,
    Heatmap(Option<[String; 2]>),
    Close,
}

/// A session running on its own tick thread.
pub struct SessionHandle {
    opened: ServerMessage,
    control: mpsc::Sender<Control>,
    frames: broadcast::Sender<Frame>,
    replies: async_mpsc::UnboundedReceiver<ServerMessage>,
    thread: Option<JoinHandle<()>>,
}

impl SessionHandle {
    /// Opens the session (loading checkpoints) and starts its tick loop.
    /// Blocks until the session is open or has failed to open.
    pub fn spawn(cfg: SessionConfig, opts: &ServerOptions) -> Result<Self, SessionError> {
        let (control, control_rx) = mpsc::channel();
        let (frames, _) = broadcast::channel(opts.frame_buffer.max(1));
        let (reply_tx, replies) = async_mpsc::unbounded_channel();
        let (ready_tx, ready_rx) = mpsc::channel();
        let tx = frames.clone();
        let thread = std::thread::Builder::new()
            .name("psn-session".into())
            .spawn(move || match Session::open(cfg) {
                Ok(session) => {
                    let _ = ready_tx.send(Ok(session.opened_message()));
                    run_loop(session, control_rx, tx, reply_tx);
                }
                Err(e) => {
                    let _ = ready_tx.send(Err(e));
                }
            })
            .map_err(|e| SessionError::InvalidConfig(format!("cannot start session thread: {e}")))?;
        let opened = ready_rx
            .recv()
            .map_err(|_| SessionError::InvalidConfig("session thread exited before opening".into()))??;
        Ok(Self { opened, control, frames, replies, thread: Some(thread) })
    }

    pub fn opened(&self) -> &ServerMessage {
        &self.opened
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Frame> {
        self.frames.subscribe()
    }

    /// Returns false once the tick loop has stopped.
    pub fn send(&self, c: Control) -> bool {
        self.control.send(c).is_ok()
    }

    /// Next non-frame message (heatmaps, errors, the close acknowledgement).
    pub async fn reply(&mut self) -> Option<ServerMessage> {
        self.replies.recv().await
    }

    /// Stops the loop and waits for the thread.
    pub fn close(mut self) {
        let _ = self.control.send(Control::Close);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for SessionHandle {
    fn drop(&mut self) {
        let _ = self.control.send(Control::Close);
    }
}

fn run_loop(
    mut session: Session,
    control: mpsc::Receiver<Control>,
    frames: broadcast::Sender<Frame>,
    replies: async_mpsc::UnboundedSender<ServerMessage>,
) {
    let period = session.config().tick_period();
    let mut next = Instant::now() + period;
    info!("session {} ticking every {:?}", session.id(), period);
    loop {
        // Serve commands until the tick is due.
        loop {
            let now = Instant::now();
            if now >= next {
                break;
            }
            match control.recv_timeout(next - now) {
                Ok(Control::Input(i)) => {
                    if let Err(e) = session.input(i) {
                        let _ = replies.send(ServerMessage::error(e.to_string()));
                    }
                }
                Ok(Control::Reset) => {
                    session.reset();
                }
                Ok(Control::Heatmap(axes)) => {
                    let _ = replies.send(heatmap_message(&session, axes));
                }
                Ok(Control::Close) | Err(RecvTimeoutError::Disconnected) => {
                    info!("session {} closed", session.id());
                    let _ = replies.send(ServerMessage::Closed);
                    return;
                }
                Err(RecvTimeoutError::Timeout) => break,
            }
        }
        match session.tick(None) {
            Ok(Some(frame)) => {
                // no subscriber is not an error
                let _ = frames.send(frame);
            }
            Ok(None) => {}
            Err(e) => {
                warn!("session {}: {e}", session.id());
                let _ = replies.send(ServerMessage::error(e.to_string()));
            }
        }
        next += period;
        let now = Instant::now();
        if now > next + period {
            // Fell more than a tick behind: resume from now rather than burst.
            next = now + period;
        }
    }
}

fn heatmap_message(session: &Session, axes: Option<[String; 2]>) -> ServerMessage {
    let [i, j] = axes.unwrap_or_else(|| ["x".into(), "y".into()]);
    match session.heatmap((&i, &j), 24) {
        Ok(h) => ServerMessage::Heatmap { axes: h.axes, grid: h.phi },
        Err(e) => ServerMessage::error(e.to_string()),
    }
}

pub fn router(opts: ServerOptions) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/health", get(|| async { "ok" }))
        .with_state(Arc::new(opts))
}

pub async fn serve(addr: SocketAddr, opts: ServerOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(opts)).await
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(opts): State<Arc<ServerOptions>>) -> Response {
    ws.on_upgrade(move |socket| handle_socket(socket, opts))
}

async fn send(sink: &mut futures::stream::SplitSink<WebSocket, Message>, msg: &ServerMessage) -> bool {
    sink.send(Message::Text(msg.to_json())).await.is_ok()
}

async fn handle_socket(socket: WebSocket, opts: Arc<ServerOptions>) {
    let (mut sink, mut stream) = socket.split();

    // Wait for a successful open; failures are reported and the client may retry.
    let mut handle = loop {
        let text = match stream.next().await {
            Some(Ok(Message::Text(t))) => t,
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
            Some(Ok(_)) => continue,
        };
        let cfg = match ClientMessage::parse(&text) {
            Ok(ClientMessage::Open { cfg }) => cfg,
            Ok(ClientMessage::Close) => return,
            Ok(_) => {
                if !send(&mut sink, &ServerMessage::error("no open session; send an open message first")).await {
                    return;
                }
                continue;
            }
            Err(e) => {
                if !send(&mut sink, &ServerMessage::error(e)).await {
                    return;
                }
                continue;
            }
        };
        let opts = opts.clone();
        match tokio::task::spawn_blocking(move || SessionHandle::spawn(cfg, &opts)).await {
            Ok(Ok(h)) => {
                if !send(&mut sink, h.opened()).await {
                    return;
                }
                break h;
            }
            Ok(Err(e)) => {
                if !send(&mut sink, &ServerMessage::error(e.to_string())).await {
                    return;
                }
            }
            Err(e) => {
                let _ = send(&mut sink, &ServerMessage::error(format!("session start failed: {e}"))).await;
                return;
            }
        }
    };

    let mut frames = handle.subscribe();
    let mut dropped: u64 = 0;
    loop {
        tokio::select! {
            incoming = stream.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let control = match ClientMessage::parse(&text) {
                    Ok(ClientMessage::Input { action, ts }) => Control::Input(HumanInput { action: ActionId(action), ts }),
                    Ok(ClientMessage::Reset) => Control::Reset,
                    Ok(ClientMessage::Heatmap { axes }) => Control::Heatmap(axes),
                    Ok(ClientMessage::Close) => Control::Close,
                    Ok(ClientMessage::Open { .. }) => {
                        if !send(&mut sink, &ServerMessage::error("session already open")).await {
                            break;
                        }
                        continue;
                    }
                    Err(e) => {
                        if !send(&mut sink, &ServerMessage::error(e)).await {
                            break;
                        }
                        continue;
                    }
                };
                if !handle.send(control) {
                    break;
                }
            }
            frame = frames.recv() => match frame {
                Ok(f) => {
                    if !send(&mut sink, &ServerMessage::Frame(f)).await {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    dropped += n;
                    debug!("client behind, dropped {n} frames");
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            reply = handle.reply() => match reply {
                Some(msg) => {
                    let closed = msg == ServerMessage::Closed;
                    if !send(&mut sink, &msg).await || closed {
                        break;
                    }
                }
                None => break,
            },
        }
    }
    if dropped > 0 {
        info!("connection closed after dropping {dropped} frames");
    }
    let _ = sink.close().await;
    let _ = tokio::time::timeout(Duration::from_secs(1), tokio::task::spawn_blocking(move || handle.close())).await;
}
