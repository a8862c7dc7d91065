//! Configuration, persistence and reporting.

pub mod config;
pub mod frameset;
pub mod report;

pub use config::{ExperimentConfig, Protocol};
pub use report::Report;

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn serialize_hash<S: serde::Serializer>(hash: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex(hash))
}
