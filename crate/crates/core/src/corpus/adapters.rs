//! Format adapters that turn on-disk benchmark files into raw labeled rows.
//!
//! The canonical format is JSON lines: one `{"id", "label", "calls": [...]}`
//! object per line. Benchmark distributions with per-event CSV rows go through
//! [`CsvEventsAdapter`]; further formats can be registered at runtime.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use super::CorpusError;

/// One raw sample row before validation.
#[derive(Debug, Clone)]
pub struct RawRecord {
    /// 1-based line (or record) number in the source file, for diagnostics.
    pub line: usize,
    pub id: String,
    pub label: String,
    pub calls: Vec<String>,
}

pub trait DatasetAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn read(&self, path: &Path) -> Result<Vec<RawRecord>, CorpusError>;
}

/// Keyed collection of adapters; the canonical `jsonl` adapter plus a
/// `csv-events` adapter are always present.
pub struct AdapterRegistry {
    adapters: HashMap<String, Arc<dyn DatasetAdapter>>,
}

impl Default for AdapterRegistry {
    fn default() -> Self {
        let mut registry = Self {
            adapters: HashMap::new(),
        };
        registry.register(Arc::new(JsonlAdapter));
        registry.register(Arc::new(CsvEventsAdapter));
        registry
    }
}

impl AdapterRegistry {
    pub fn register(&mut self, adapter: Arc<dyn DatasetAdapter>) {
        self.adapters.insert(adapter.name().to_string(), adapter);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn DatasetAdapter>> {
        self.adapters.get(name).cloned()
    }

    pub fn names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.adapters.keys().map(String::as_str).collect();
        names.sort_unstable();
        names
    }
}

/// Canonical one-record-per-line JSON format.
pub struct JsonlAdapter;

#[derive(Deserialize)]
struct JsonlRow {
    id: serde_json::Value,
    label: String,
    calls: Vec<String>,
}

impl DatasetAdapter for JsonlAdapter {
    fn name(&self) -> &str {
        "jsonl"
    }

    fn read(&self, path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
        let file = File::open(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let reader = BufReader::new(file);
        let mut records = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<JsonlRow>(&line) {
                Ok(row) => records.push(RawRecord {
                    line: line_no,
                    id: json_id_to_string(&row.id),
                    label: row.label,
                    calls: row.calls,
                }),
                Err(e) => records.push(RawRecord {
                    line: line_no,
                    id: format!("<line {line_no}>"),
                    label: String::new(),
                    calls: vec![format!("<unparsable: {e}>")],
                }),
            }
        }
        Ok(records)
    }
}

fn json_id_to_string(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Per-event CSV rows (one API call per row) grouped into sequences by sample
/// id, preserving file order. Column names are matched case-insensitively:
/// id from {id, file_id, hash, sample_id}, label from {label, class, family},
/// call from {api, call, api_name}.
pub struct CsvEventsAdapter;

impl CsvEventsAdapter {
    fn find_column(headers: &csv::StringRecord, candidates: &[&str]) -> Option<usize> {
        headers.iter().position(|h| {
            let h = h.trim().to_ascii_lowercase();
            candidates.contains(&h.as_str())
        })
    }
}

impl DatasetAdapter for CsvEventsAdapter {
    fn name(&self) -> &str {
        "csv-events"
    }

    fn read(&self, path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
        let file = File::open(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::Reader::from_reader(BufReader::new(file));
        let headers = reader
            .headers()
            .map_err(|e| CorpusError::MalformedInput {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?
            .clone();
        let id_col = Self::find_column(&headers, &["id", "file_id", "hash", "sample_id"]);
        let label_col = Self::find_column(&headers, &["label", "class", "family"]);
        let call_col = Self::find_column(&headers, &["api", "call", "api_name"]);
        let (id_col, label_col, call_col) = match (id_col, label_col, call_col) {
            (Some(i), Some(l), Some(c)) => (i, l, c),
            _ => {
                return Err(CorpusError::MalformedInput {
                    path: path.to_path_buf(),
                    detail: format!(
                        "need id/label/api columns, found headers {:?}",
                        headers.iter().collect::<Vec<_>>()
                    ),
                })
            }
        };

        // Sequences keyed by sample id, kept in first-seen order.
        let mut order: Vec<String> = Vec::new();
        let mut grouped: HashMap<String, (usize, String, Vec<String>)> = HashMap::new();
        for (idx, row) in reader.records().enumerate() {
            let line_no = idx + 2; // header occupies line 1
            let row = row.map_err(|e| CorpusError::MalformedInput {
                path: path.to_path_buf(),
                detail: format!("record {line_no}: {e}"),
            })?;
            let id = row.get(id_col).unwrap_or("").trim().to_string();
            let label = row.get(label_col).unwrap_or("").trim().to_string();
            let call = row.get(call_col).unwrap_or("").trim().to_string();
            match grouped.get_mut(&id) {
                Some((_, _, calls)) => calls.push(call),
                None => {
                    order.push(id.clone());
                    grouped.insert(id, (line_no, label, vec![call]));
                }
            }
        }
        Ok(order
            .into_iter()
            .map(|id| {
                let (line, label, calls) = grouped.remove(&id).expect("grouped by construction");
                RawRecord {
                    line,
                    id,
                    label,
                    calls,
                }
            })
            .collect())
    }
}
