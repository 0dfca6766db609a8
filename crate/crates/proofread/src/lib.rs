//! HTTP service for Top-K review of orphan spines.

pub mod api;
pub mod log;
pub mod render;
pub mod session;

pub use api::{router, serve, AppState};
pub use log::{read_log, DecisionLog};
pub use session::{Choice, DecisionRecord, DecisionRequest, Session, SessionData, SessionError, SessionPaths};
