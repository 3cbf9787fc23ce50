//! CLI verbs and the versioned HTTP service around the generation pipeline.

pub mod api;
pub mod commands;
pub mod server;

pub use api::{prepare, ErrorBody, GenerationRequest, GenerationResult, RequestError};
pub use server::{router, AppState, Health, LoadedModel, ServiceConfig};
