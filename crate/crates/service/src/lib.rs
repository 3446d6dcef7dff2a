//! Human-in-the-loop campaign service: event-logged campaigns served over
//! a JSON HTTP API.

pub mod api;
pub mod campaign;
pub mod config;
pub mod error;
pub mod service;
pub mod store;

pub use api::{router, serve};
pub use config::ServiceConfig;
pub use error::{ApiError, ErrorBody};
pub use service::Service;
