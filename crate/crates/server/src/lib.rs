//! HTTP+JSON trace server and its client.

pub mod client;
pub mod server;
pub mod wire;

pub use client::{HttpSink, HttpTraceClient};
pub use server::{router, BoundServer, ServeError, ServerConfig, ServerHandle, DEFAULT_LISTEN};
