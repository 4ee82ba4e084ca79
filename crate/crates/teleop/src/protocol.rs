//! JSON frames exchanged over the socket.

use serde::{Deserialize, Serialize};

/// Messages from the operator. Unknown fields, including a `seq` on
/// non-command messages, are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    Cmd {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seq: Option<u64>,
        ah: Vec<f64>,
    },
    EpisodeStart {
        task: String,
    },
    EpisodeEnd,
    Retrain,
    SetBetaMax {
        v: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Idle,
    Running,
    Retraining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub t: f64,
    pub s: Vec<f64>,
    pub ar: Vec<f64>,
    pub beta: f64,
    pub blended: Vec<f64>,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalInfo {
    pub name: String,
    pub g: Vec<f64>,
    pub novel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillInfo {
    pub name: String,
    pub waypoints: Vec<Vec<f64>>,
    pub novel: bool,
}

/// Messages to clients, before sequencing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    State(StateFrame),
    RetrainDone { model_id: u64 },
    RetrainFailed { msg: String },
    Error { msg: String },
    World { goals: Vec<GoalInfo>, skills: Vec<SkillInfo> },
}

impl ServerMsg {
    pub fn error(msg: impl Into<String>) -> Self {
        ServerMsg::Error { msg: msg.into() }
    }
}

/// A server message with its per-connection sequence number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub seq: u64,
    #[serde(flatten)]
    pub msg: ServerMsg,
}
