//! Localisation and recognition metrics.

mod localisation;
mod recognition;

pub use localisation::{
    eval_localisation, loc_inputs_from_rows, loc_inputs_from_spottings, ClipLocInput, ClipLocScore, LocReport, TimedToken, TimingSource,
};
pub use recognition::{topk_accuracy, topk_recognition, RecReport};

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Writes a report as pretty JSON.
pub fn write_json_report<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = serde_json::to_string_pretty(report)?;
    std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}
