//! HTTP service: session lifecycle, streamed turns over server-sent events,
//! transcript and trace export. State lives in a data directory and is reloaded on start.

mod api;
mod registry;

pub use api::{router, TraceFilter};
pub use registry::{load_personas, Registry, RegistryError};
