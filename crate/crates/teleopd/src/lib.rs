//! Live teleoperation service: pointer steering drives a simulated arm whose
//! sensor stream is filtered and turned into robot end-effector targets.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{parse_client, ClientMessage, ServerMessage, SteerEvent, StateFrame};
pub use server::{router, run, serve, AppState, NewSession};
pub use session::{pointer_pose, PointerReach, Session, SessionConfig};
