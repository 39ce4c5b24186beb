//! Persistent map from API-call name to sanitized explanatory text.
//!
//! Persisted as one UTF-8 JSON document; writes go through a temp file and an
//! atomic rename so a crash never leaves a half-written store behind.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    generate_text, ExplanatoryText, LlmParams, PromptTemplate, RetryPolicy, SourceError,
    TextError, TextProvenance, TextSource,
};
use crate::corpus::ApiVocabulary;

/// One persisted entry: the sanitized text plus its origin metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredText {
    pub text: String,
    pub source: TextProvenance,
    pub word_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<LlmParams>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TextStore {
    version: u64,
    entries: BTreeMap<String, StoredText>,
}

impl TextStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, api_name: &str) -> bool {
        self.entries.contains_key(api_name)
    }

    pub fn get(&self, api_name: &str) -> Option<&StoredText> {
        self.entries.get(api_name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Inserts or replaces an entry. The version is bumped only when the
    /// stored content actually changes.
    pub fn insert(&mut self, text: ExplanatoryText) -> bool {
        let entry = StoredText {
            text: text.text,
            source: text.source,
            word_count: text.word_count,
            params: None,
        };
        self.insert_entry(text.api_name, entry)
    }

    pub fn insert_entry(&mut self, api_name: String, entry: StoredText) -> bool {
        if self.entries.get(&api_name) == Some(&entry) {
            return false;
        }
        self.entries.insert(api_name, entry);
        self.version += 1;
        true
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("store serializes") + "\n"
    }

    /// Atomic persistence: write to `<path>.tmp`, then rename over `path`.
    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        let tmp = path.with_extension("tmp");
        let io_err = |source| TextError::StoreIo {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io_err)?;
            }
        }
        std::fs::write(&tmp, self.to_json()).map_err(io_err)?;
        std::fs::rename(&tmp, path).map_err(io_err)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        let raw = std::fs::read_to_string(path).map_err(|source| TextError::StoreIo {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|source| TextError::StoreFormat {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Loads the store at `path`, or starts an empty one when the file does
    /// not exist yet.
    pub fn load_or_default(path: &Path) -> Result<Self, TextError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }
}

/// Result of one populate pass over a vocabulary.
#[derive(Debug, Clone, Serialize)]
pub struct PopulateOutcome {
    /// Entries newly added in this pass.
    pub added: usize,
    /// Vocabulary entries already present before the pass.
    pub cached: usize,
    /// Vocabulary entries the source has no text for.
    pub missing: Vec<String>,
}

/// Fetches explanatory text for every vocabulary entry not already in the
/// store. Cached entries are never re-fetched; missing-text signals are
/// collected, not retried; transport errors retry per `retry` and then
/// propagate. Entries added before a propagated error stay in the store.
pub fn populate_store(
    vocab: &ApiVocabulary,
    source: &dyn TextSource,
    store: &mut TextStore,
    template: &PromptTemplate,
    retry: &RetryPolicy,
) -> Result<PopulateOutcome, TextError> {
    let mut outcome = PopulateOutcome {
        added: 0,
        cached: 0,
        missing: Vec::new(),
    };
    for name in vocab.iter() {
        if store.contains(name) {
            outcome.cached += 1;
            continue;
        }
        let api = crate::corpus::ApiCall::new(name).map_err(|_| TextError::TemplateInvalid {
            detail: format!("vocabulary entry {name:?} is not a valid API name"),
        })?;
        let fetched = retry.run(|| {
            generate_text(&api, source, template).map_err(|e| match e {
                TextError::Source { source, .. } => source,
                other => SourceError::Transport {
                    detail: other.to_string(),
                },
            })
        });
        match fetched {
            Ok(text) => {
                store.insert(text);
                outcome.added += 1;
            }
            Err(SourceError::Missing { api }) => outcome.missing.push(api),
            Err(e) => {
                return Err(TextError::Source {
                    source_name: source.name().to_string(),
                    api: name.to_string(),
                    source: e,
                })
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{CountingSource, LookupFileSource, StubLlmSource};

    fn vocab(names: &[&str]) -> ApiVocabulary {
        ApiVocabulary::from_names(names.iter().copied(), "test")
    }

    #[test]
    fn populate_fills_every_entry_from_stub() {
        let v = vocab(&["NtOpenFile", "NtClose", "WSASend", "RegOpenKeyExW", "CreateProcessA"]);
        let mut store = TextStore::new();
        let source = CountingSource::new(StubLlmSource);
        let outcome = populate_store(
            &v,
            &source,
            &mut store,
            &PromptTemplate::default(),
            &RetryPolicy::immediate(1),
        )
        .unwrap();
        assert_eq!(outcome.added, 5);
        assert!(outcome.missing.is_empty());
        assert_eq!(store.len(), 5);
        assert_eq!(source.fetch_count(), 5);
    }

    #[test]
    fn populate_is_idempotent_with_zero_fetches() {
        let v = vocab(&["A1", "B2", "C3"]);
        let mut store = TextStore::new();
        let template = PromptTemplate::default();
        let retry = RetryPolicy::immediate(1);

        let first = CountingSource::new(StubLlmSource);
        populate_store(&v, &first, &mut store, &template, &retry).unwrap();
        let snapshot = store.to_json();
        let version = store.version();

        let second = CountingSource::new(StubLlmSource);
        let outcome = populate_store(&v, &second, &mut store, &template, &retry).unwrap();
        assert_eq!(second.fetch_count(), 0);
        assert_eq!(outcome.added, 0);
        assert_eq!(outcome.cached, 3);
        assert_eq!(store.version(), version);
        assert_eq!(store.to_json(), snapshot);
    }

    #[test]
    fn populate_collects_missing_entries() {
        let v = vocab(&["Known", "Unknown1", "Unknown2"]);
        let src = LookupFileSource::from_entries(
            "dr",
            TextProvenance::DocumentRetrieval,
            [("Known".to_string(), "Does a known thing at runtime.".to_string())],
        );
        let mut store = TextStore::new();
        let outcome = populate_store(
            &v,
            &src,
            &mut store,
            &PromptTemplate::default(),
            &RetryPolicy::immediate(3),
        )
        .unwrap();
        assert_eq!(outcome.added, 1);
        assert_eq!(outcome.missing, vec!["Unknown1", "Unknown2"]);
        assert_eq!(super::super::missing_rate(&store, &v).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn version_bumps_only_on_change() {
        let mut store = TextStore::new();
        assert_eq!(store.version(), 0);
        let text = ExplanatoryText {
            api_name: "X".into(),
            text: "does x".into(),
            source: TextProvenance::Llm,
            word_count: 2,
        };
        assert!(store.insert(text.clone()));
        assert_eq!(store.version(), 1);
        assert!(!store.insert(text.clone()));
        assert_eq!(store.version(), 1);
        let changed = ExplanatoryText {
            text: "does y".into(),
            ..text
        };
        assert!(store.insert(changed));
        assert_eq!(store.version(), 2);
    }

    #[test]
    fn save_load_round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        let mut store = TextStore::new();
        store.insert(ExplanatoryText {
            api_name: "NtOpenFile".into(),
            text: "Opens a file object.".into(),
            source: TextProvenance::Llm,
            word_count: 4,
        });
        store.insert(ExplanatoryText {
            api_name: "WSASend".into(),
            text: "Sends data on a socket.".into(),
            source: TextProvenance::InternetSearch,
            word_count: 5,
        });
        store.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();

        let reloaded = TextStore::load(&path).unwrap();
        assert_eq!(reloaded, store);
        reloaded.save(&path).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn provenance_survives_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        let mut store = TextStore::new();
        store.insert_entry(
            "HttpOpenRequestW".into(),
            StoredText {
                text: "Opens an HTTP request handle.".into(),
                source: TextProvenance::DocumentRetrieval,
                word_count: 5,
                params: None,
            },
        );
        store.save(&path).unwrap();
        let reloaded = TextStore::load(&path).unwrap();
        assert_eq!(
            reloaded.get("HttpOpenRequestW").unwrap().source,
            TextProvenance::DocumentRetrieval
        );
    }

    #[test]
    fn word_limit_is_enforced_in_stored_entries() {
        let long_text: String = (0..300).map(|i| format!("word{i} ")).collect();
        let src = LookupFileSource::from_entries(
            "dr",
            TextProvenance::DocumentRetrieval,
            [("LongOne".to_string(), long_text)],
        );
        let mut store = TextStore::new();
        populate_store(
            &vocab(&["LongOne"]),
            &src,
            &mut store,
            &PromptTemplate::default(),
            &RetryPolicy::immediate(1),
        )
        .unwrap();
        assert_eq!(store.get("LongOne").unwrap().word_count, 100);
    }
}
