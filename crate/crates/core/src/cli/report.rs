use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use super::manifest::RunManifest;
use crate::error::{Error, Result};

/// One localisation evaluation found under a run directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub run: String,
    pub store: String,
    pub strategy: String,
    pub aggregation: String,
    pub n_layers: Option<u64>,
    pub tolerance: Option<i64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub loc_acc: Option<f64>,
    pub n_sequences: Option<u64>,
    pub config_hash: String,
}

fn manifests_under(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    paths.sort();
    for p in paths {
        if p.is_dir() {
            manifests_under(&p, out)?;
        } else if p.to_string_lossy().ends_with(".manifest.json") {
            out.push(p);
        }
    }
    Ok(())
}

fn str_at<'a>(v: &'a Value, path: &[&str]) -> &'a Value {
    path.iter().fold(v, |node, key| &node[*key])
}

/// `path` relative to `root` when it lies below it, otherwise unchanged.
fn relative_to(root: &Path, path: &str) -> String {
    Path::new(path)
        .strip_prefix(root)
        .map(|r| r.to_string_lossy().into_owned())
        .unwrap_or_else(|_| path.to_string())
}

/// Collects every `eval-loc` manifest below `grid`, ordered by path.
pub fn collect_grid(grid: &Path) -> Result<Vec<GridRow>> {
    let mut paths = Vec::new();
    manifests_under(grid, &mut paths)?;
    let mut rows = Vec::new();
    for p in paths {
        let m = RunManifest::read(&p)?;
        if m.command != "eval-loc" {
            continue;
        }
        let d = &m.details;
        let up = str_at(d, &["upstream", "details"]);
        let text = |v: &Value| v.as_str().map(str::to_string).unwrap_or_default();
        let run = p
            .parent()
            .and_then(|parent| parent.strip_prefix(grid).ok())
            .map(|r| r.to_string_lossy().into_owned())
            .unwrap_or_default();
        rows.push(GridRow {
            run: if run.is_empty() { ".".into() } else { run },
            store: relative_to(grid, &text(&d["store"])),
            strategy: text(&up["strategy"]),
            aggregation: text(&up["aggregation"]),
            n_layers: up["n_layers"].as_u64(),
            tolerance: d["tolerance"].as_i64(),
            recall: str_at(d, &["report", "recall"]).as_f64(),
            precision: str_at(d, &["report", "precision"]).as_f64(),
            loc_acc: str_at(d, &["report", "loc_acc"]).as_f64(),
            n_sequences: str_at(d, &["report", "n_sequences"]).as_u64(),
            config_hash: m.config_hash,
        });
    }
    Ok(rows)
}

pub fn write_grid(rows: &[GridRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
