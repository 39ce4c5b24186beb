//! Explanatory-text acquisition: prompt rendering, pluggable text sources,
//! sanitation, and the persistent per-vocabulary text store.

mod sanitize;
mod source;
mod store;
mod template;

pub use sanitize::sanitize_text;
pub use source::{
    CountingSource, LlmClient, LlmParams, LookupFileSource, RetryPolicy, SourceError, StubLlmSource,
    TextSource,
};
pub use store::{PopulateOutcome, StoredText, TextStore};
pub use template::{render_prompt, PromptTemplate};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ApiCall, ApiVocabulary};

#[derive(Debug, Error)]
pub enum TextError {
    #[error("word limit must be positive")]
    InvalidWordLimit,
    #[error("text for {api:?} is empty after sanitation")]
    EmptyAfterSanitation { api: String },
    #[error("prompt template invalid: {detail}")]
    TemplateInvalid { detail: String },
    #[error("text source {source_name:?} failed for {api:?}: {source}")]
    Source {
        source_name: String,
        api: String,
        #[source]
        source: SourceError,
    },
    #[error("cannot access text store at {path}: {source}")]
    StoreIo {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("text store at {path} is not valid JSON: {source}")]
    StoreFormat {
        path: std::path::PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("vocabulary is empty")]
    EmptyVocabulary,
}

/// Where a stored explanatory text came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextProvenance {
    Llm,
    DocumentRetrieval,
    InternetSearch,
    FallbackTemplate,
}

impl std::fmt::Display for TextProvenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Llm => "llm",
            Self::DocumentRetrieval => "document-retrieval",
            Self::InternetSearch => "internet-search",
            Self::FallbackTemplate => "fallback-template",
        };
        f.write_str(s)
    }
}

/// A sanitized explanation of one API call, ready for tokenization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanatoryText {
    pub api_name: String,
    pub text: String,
    pub source: TextProvenance,
    pub word_count: usize,
}

/// Deterministic stand-in text for API calls with no stored explanation.
pub fn fallback_text(api_name: &str) -> String {
    format!("Explanation unavailable for {api_name}.")
}

/// Renders the prompt, fetches raw text from `source`, sanitizes it, and tags
/// it with the source's provenance. Transport failures and missing entries
/// arrive as distinct [`SourceError`] variants inside [`TextError::Source`].
pub fn generate_text(
    api: &ApiCall,
    source: &dyn TextSource,
    template: &PromptTemplate,
) -> Result<ExplanatoryText, TextError> {
    let prompt = render_prompt(template, api)?;
    let raw = source
        .fetch(api, &prompt)
        .map_err(|e| TextError::Source {
            source_name: source.name().to_string(),
            api: api.as_str().to_string(),
            source: e,
        })?;
    let text = sanitize_text(&raw, template.length_limit_words).map_err(|e| match e {
        TextError::EmptyAfterSanitation { .. } => TextError::EmptyAfterSanitation {
            api: api.as_str().to_string(),
        },
        other => other,
    })?;
    let word_count = text.split_whitespace().count();
    Ok(ExplanatoryText {
        api_name: api.as_str().to_string(),
        text,
        source: source.provenance(),
        word_count,
    })
}

/// Fraction of vocabulary entries with no stored text.
pub fn missing_rate(store: &TextStore, vocab: &ApiVocabulary) -> Result<f64, TextError> {
    if vocab.is_empty() {
        return Err(TextError::EmptyVocabulary);
    }
    let missing = vocab.iter().filter(|name| !store.contains(name)).count();
    Ok(missing as f64 / vocab.len() as f64)
}
