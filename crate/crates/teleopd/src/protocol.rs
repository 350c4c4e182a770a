//! Wire messages. One JSON object per WebSocket text frame.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteerEvent {
    /// Client timestamp in seconds; informational only.
    pub t: f64,
    /// Normalized pointer, each axis in [-1, 1]. `px` moves the wrist
    /// forward, `py` moves it up.
    pub px: f64,
    pub py: f64,
    /// Heading change in radians, applied on the next tick.
    pub dyaw: f64,
}

impl SteerEvent {
    pub fn validate(&self) -> Result<(), String> {
        let vals = [("t", self.t), ("px", self.px), ("py", self.py), ("dyaw", self.dyaw)];
        if let Some((name, _)) = vals.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("{name} must be finite"));
        }
        if self.px.abs() > 1.0 || self.py.abs() > 1.0 {
            return Err("pointer coordinates must lie in [-1, 1]".into());
        }
        if self.dyaw.abs() > std::f64::consts::PI {
            return Err("dyaw must lie in [-pi, pi]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Steer(SteerEvent),
    Recalibrate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    /// Session time in seconds.
    pub t: f64,
    pub x: Vec<f64>,
    /// Mean ensemble std of the upper-arm, lower-arm, and heading blocks.
    pub spread: [f64; 3],
    pub ee: [f64; 3],
    pub clamped: [bool; 3],
    pub hz: f64,
    /// Provisional frame produced while the filter window fills.
    pub warmup: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateFrame),
    Error { msg: String },
}

impl ServerMessage {
    pub fn error(msg: impl Into<String>) -> Self {
        ServerMessage::Error { msg: msg.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Parses and validates a client frame.
pub fn parse_client(text: &str) -> Result<ClientMessage, String> {
    let msg: ClientMessage = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
    if let ClientMessage::Steer(ev) = &msg {
        ev.validate()?;
    }
    Ok(msg)
}
