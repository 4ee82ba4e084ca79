//! Live teleoperation of the simulator over a WebSocket, with SARI
//! assistance and retraining between episodes.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMsg, Frame, Mode, ServerMsg, StateFrame};
pub use server::{load_session, serve, ServeConfig, Service};
pub use session::{RetrainJob, Session, SessionConfig};
