//! Event store, HTTP API and operator CLI for the adherence engine.

pub mod api;
pub mod cli;
pub mod clock;
pub mod export;
pub mod service;
pub mod store;

pub use clock::{Clock, ManualClock, SystemClock};
pub use service::{Service, ServiceError};
