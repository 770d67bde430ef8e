//! HTTP facade over the stackd control plane.
//!
//! Every route is a thin adapter onto [`stackd_core::stack::Stack`]; bodies
//! are canonical JSON and errors carry the core error code.

mod handler;
mod server;

pub use handler::{status_for, Api, ApiRequest, ApiResponse, ACTOR_HEADER};
pub use server::{serve, shutdown_signal, ServeError, Server};
