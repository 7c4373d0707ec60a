//! Collaborative workspace service: accounts, shared dataflows, execution,
//! selections, provenance and a long-poll event feed over REST.

pub mod http;
pub mod service;

pub use http::router;
pub use service::{Config, Service, ServiceError};
