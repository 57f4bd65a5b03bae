//! Interactive semantic face super-resolution: checkpoint registry,
//! exploration sessions, the HTTP service and the command-line tool.

pub mod cli;
pub mod error;
pub mod registry;
pub mod service;
pub mod session;

pub use error::{AppError, ErrorKind, Result};
pub use registry::{CheckpointInfo, Registry};
pub use service::{router, AppState};
pub use session::{Command, ExploreSession, SessionStore, SessionView};
