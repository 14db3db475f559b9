pub mod clock;
pub mod collab;
pub mod engine;
pub mod ingest;
pub mod model;
mod persist;
pub mod scaffold;
pub mod sessions;
pub mod writing;
pub mod admin;
pub mod agents;
pub mod analyzer;
