//! Live gateway: a paced engine loop streaming state frames over a
//! WebSocket and taking control commands back.
//!
//! The engine lives on one task. Sessions never touch it; they read the
//! latest frame from a watch channel and queue commands through an mpsc
//! channel that the loop drains once per tick.

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};
use tower_http::services::ServeDir;

use crate::engine::{ControlCommand, Engine, StateFrame};
use crate::scenario::{ScenarioError, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame(StateFrame),
    Ack { cmd: String },
    Reject { reason: String },
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
    /// Directory with the built console; a placeholder page is served without it.
    pub assets: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig { speed: 1.0, assets: None }
    }
}

type CommandRequest = (ControlCommand, oneshot::Sender<Result<(), String>>);

#[derive(Clone)]
struct AppState {
    frames: watch::Receiver<Arc<String>>,
    commands: mpsc::Sender<CommandRequest>,
}

fn command_name(cmd: &ControlCommand) -> String {
    serde_json::to_value(cmd)
        .ok()
        .and_then(|v| v.get("cmd").and_then(|c| c.as_str()).map(str::to_string))
        .unwrap_or_default()
}

fn encode(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}

/// Parse one client text message into a command.
pub fn parse_client_message(text: &str) -> Result<ControlCommand, String> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
    match v.get("type").and_then(|t| t.as_str()) {
        Some("cmd") => serde_json::from_value(v).map_err(|e| format!("malformed command: {e}")),
        Some(other) => Err(format!("unknown message type `{other}`")),
        None => Err("missing `type`".into()),
    }
}

pub async fn bind(port: u16) -> std::io::Result<TcpListener> {
    TcpListener::bind(("0.0.0.0", port)).await
}

/// Tick period for a step size and pacing speed.
pub fn tick_period(step_ms: u64, speed: f64) -> Duration {
    Duration::from_secs_f64(step_ms as f64 / 1000.0 / speed)
}

async fn pace(
    mut engine: Engine,
    speed: f64,
    frames: watch::Sender<Arc<String>>,
    mut commands: mpsc::Receiver<CommandRequest>,
) {
    let mut ticker = tokio::time::interval(tick_period(engine.spec().step_ms, speed));
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut paused = false;
    loop {
        ticker.tick().await;
        while let Ok((cmd, reply)) = commands.try_recv() {
            let res = engine.queue_command(cmd.clone()).map_err(|e| e.to_string());
            if res.is_ok() {
                match cmd {
                    ControlCommand::Pause => paused = true,
                    ControlCommand::Resume => paused = false,
                    _ => {}
                }
            }
            let _ = reply.send(res);
        }
        if !paused && !engine.finished() {
            engine.step();
        }
        let text = encode(&ServerMessage::Frame(engine.frame()));
        frames.send_replace(Arc::new(text));
    }
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| session(socket, state))
}

async fn session(mut socket: WebSocket, state: AppState) {
    let mut frames = state.frames.clone();
    frames.mark_changed();
    loop {
        tokio::select! {
            changed = frames.changed() => {
                if changed.is_err() {
                    return;
                }
                let text = frames.borrow_and_update().clone();
                if text.is_empty() {
                    continue;
                }
                if socket.send(Message::Text(text.as_str().into())).await.is_err() {
                    return;
                }
            }
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => continue,
                };
                let reply = match parse_client_message(text.as_str()) {
                    Err(reason) => ServerMessage::Reject { reason },
                    Ok(cmd) => {
                        let name = command_name(&cmd);
                        let (tx, rx) = oneshot::channel();
                        if state.commands.send((cmd, tx)).await.is_err() {
                            return;
                        }
                        match rx.await {
                            Ok(Ok(())) => ServerMessage::Ack { cmd: name },
                            Ok(Err(reason)) => ServerMessage::Reject { reason },
                            Err(_) => return,
                        }
                    }
                };
                if socket.send(Message::Text(encode(&reply).into())).await.is_err() {
                    return;
                }
            }
        }
    }
}

const PLACEHOLDER: &str = "<!doctype html><title>vrulink</title><p>Console assets not found. \
State frames are served on <code>/ws</code>.</p>";

/// Serve the gateway on an already bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: TcpListener,
    spec: ScenarioSpec,
    cfg: GatewayConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), GatewayError> {
    if !(cfg.speed.is_finite() && cfg.speed > 0.0) {
        return Err(GatewayError::Speed(cfg.speed));
    }
    let engine = Engine::new(spec)?;
    let (frame_tx, frame_rx) = watch::channel(Arc::new(String::new()));
    let (cmd_tx, cmd_rx) = mpsc::channel(64);
    let pacer = tokio::spawn(pace(engine, cfg.speed, frame_tx, cmd_rx));

    let state = AppState { frames: frame_rx, commands: cmd_tx };
    let mut app = Router::new().route("/ws", get(ws_handler));
    app = match cfg.assets.filter(|p| p.is_dir()) {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(PLACEHOLDER) })),
    };
    let result = axum::serve(listener, app.with_state(state)).with_graceful_shutdown(shutdown).await;
    pacer.abort();
    result.map_err(GatewayError::Io)
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("speed must be positive, got {0}")]
    Speed(f64),
    #[error("gateway i/o: {0}")]
    Io(std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages() {
        let c = parse_client_message(r#"{"type":"cmd","cmd":"set_vehicle_speed","id":"car","mps":17.8}"#).unwrap();
        assert_eq!(c, ControlCommand::SetVehicleSpeed { id: "car".into(), mps: 17.8 });
        assert_eq!(parse_client_message(r#"{"type":"cmd","cmd":"pause"}"#).unwrap(), ControlCommand::Pause);
        assert!(parse_client_message(r#"{"type":"hello"}"#).is_err());
        assert!(parse_client_message(r#"{"type":"cmd","cmd":"fly"}"#).is_err());
        assert!(parse_client_message("nope").is_err());
    }

    #[test]
    fn server_messages_are_tagged() {
        let s = encode(&ServerMessage::Ack { cmd: "pause".into() });
        assert_eq!(s, r#"{"type":"ack","cmd":"pause"}"#);
        let r = encode(&ServerMessage::Reject { reason: "x".into() });
        assert_eq!(r, r#"{"type":"reject","reason":"x"}"#);
    }

    #[test]
    fn ten_hertz_at_unit_speed() {
        assert_eq!(tick_period(100, 1.0), Duration::from_millis(100));
        assert_eq!(tick_period(100, 2.0), Duration::from_millis(50));
    }
}
