//! Structured run reports (JSON) and plottable tables (CSV).

use std::io::Write;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::frameset::csv_err;
use crate::error::{Error, Result};

/// Every report carries the configuration hash and seed of its run.
#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub protocol: String,
    pub seed: u64,
    pub config_hash: String,
    pub results: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(config: &ExperimentConfig, results: T) -> Self {
        let protocol = serde_json::to_value(config.protocol)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        Self::with_provenance(protocol, config.seed, config.hash_hex(), results)
    }

    pub fn with_provenance(protocol: impl Into<String>, seed: u64, config_hash: String, results: T) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            protocol: protocol.into(),
            seed,
            config_hash,
            results,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// One CSV row per item, columns from the item's fields.
pub fn write_table_csv<S: Serialize>(rows: &[S], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
