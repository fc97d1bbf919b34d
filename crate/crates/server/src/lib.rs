//! The gridfed federation server, the replica location service and the
//! HTTP clients used to reach both.

pub mod client;
pub mod cluster;
pub mod engine;
pub mod http;

pub use client::{HttpClient, RlsClient, Timeouts};
pub use engine::{Engine, Registration, ServerConfig, SpecSource};
pub use http::{bind, federation_router, rls_router, serve, serve_on, FederationServer, ServerHandle};
