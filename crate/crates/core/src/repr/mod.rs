//! Turning explanatory texts into per-API embedding matrices and fixed-shape
//! per-sample sequence tensors, with a memoized per-API matrix cache.
//!
//! Shapes follow the pipeline defaults: each text becomes `m` content tokens
//! plus two specials, each token a `d`-vector, so one API call is an
//! `(m+2) x d` matrix and one sample is an `n x (m+2) x d` tensor. The
//! representation path is single precision throughout.

mod cache;
mod encoder;
mod tokenizer;

pub use cache::{CacheKey, MatrixCache};
pub use encoder::{
    ContextualConfig, ContextualEncoder, Encoder, EncoderMode, EncoderSpec, StaticEncoder,
};
pub use tokenizer::{WordPieceTokenizer, CLS_TOKEN, PAD_TOKEN, SEP_TOKEN, UNK_TOKEN};

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::{s, Array2, Array3};
use thiserror::Error;

use crate::corpus::{ApiCall, LabeledSequence};
use crate::text::{fallback_text, TextStore};

#[derive(Debug, Error)]
pub enum ReprError {
    #[error("invalid tokenizer vocabulary: {detail}")]
    InvalidVocab { detail: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenIdOutOfRange { id: u32, vocab: usize },
    #[error("matrix for {api:?} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        api: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("matrix for {api:?} contains non-finite values")]
    NonFinite { api: String },
    #[error("no stored text for {api:?} and the fallback is disabled")]
    MissingText { api: String },
    #[error("matrix cache manifest problem: {detail}")]
    CacheManifest { detail: String },
    #[error("invalid parameter: {detail}")]
    BadParam { detail: String },
    #[error(transparent)]
    Text(#[from] crate::text::TextError),
}

/// Fixed-length token ids: `[CLS]`, `m` content slots, `[SEP]`, with all
/// padding trailing after the end marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Trailing `[PAD]` slots (part of the `m` content positions).
    pub pad_count: usize,
    /// True when the text held more than `m` subword tokens.
    pub truncated: bool,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Index of the sequence-end special.
    pub fn sep_position(&self) -> usize {
        self.ids.len() - 1 - self.pad_count
    }
}

/// The `(m+2) x d` embedding matrix of one API call's explanatory text.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiMatrix {
    pub api_name: String,
    pub values: Array2<f32>,
}

impl ApiMatrix {
    pub fn new(api_name: String, values: Array2<f32>) -> Result<Self, ReprError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ReprError::NonFinite { api: api_name });
        }
        Ok(Self { api_name, values })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// The `n x (m+2) x d` representation of one sample: per-call matrices in
/// call order, zero matrices past the end of the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTensor {
    pub sample_id: String,
    pub values: Array3<f32>,
    pub truncated: bool,
    pub pad_rows: usize,
}

impl SequenceTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.values.dim()
    }
}

/// Anything that can turn a labeled sequence into its tensor.
pub trait TensorProvider: Sync {
    fn tensor(&self, seq: &LabeledSequence) -> Result<SequenceTensor, ReprError>;
    /// `(n, m+2, d)`
    fn dims(&self) -> (usize, usize, usize);
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// API-sequence truncation length.
    pub n: usize,
    /// Content-token length of each explanatory text.
    pub m: usize,
    /// Use the fallback template for API calls absent from the store.
    pub fallback_enabled: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n: 100,
            m: 100,
            fallback_enabled: true,
        }
    }
}

/// The end-to-end representation provider: text store + tokenizer + encoder
/// + memoized matrix cache. Immutable once built; safe to share across
/// threads.
pub struct Pipeline {
    config: PipelineConfig,
    tokenizer: WordPieceTokenizer,
    encoder: Encoder,
    store: TextStore,
    cache: MatrixCache,
    fallback_uses: AtomicUsize,
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        tokenizer: WordPieceTokenizer,
        encoder: Encoder,
        store: TextStore,
    ) -> Result<Self, ReprError> {
        if config.n == 0 || config.m == 0 {
            return Err(ReprError::BadParam {
                detail: "n and m must be at least 1".into(),
            });
        }
        let spec = encoder.spec().clone();
        let cache = MatrixCache::new(CacheKey {
            encoder: spec.name,
            mode: spec.mode,
            m: config.m,
            d: spec.dim,
            store_version: store.version(),
        });
        Ok(Self {
            config,
            tokenizer,
            encoder,
            store,
            cache,
            fallback_uses: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn encoder_spec(&self) -> &EncoderSpec {
        self.encoder.spec()
    }

    pub fn store(&self) -> &TextStore {
        &self.store
    }

    pub fn cache(&self) -> &MatrixCache {
        &self.cache
    }

    /// How often the fallback template stood in for a missing stored text.
    pub fn fallback_uses(&self) -> usize {
        self.fallback_uses.load(Ordering::SeqCst)
    }

    /// Tokenizes one explanatory text to the configured length.
    pub fn tokenize(&self, text: &str) -> Result<TokenSequence, ReprError> {
        self.tokenizer.encode(text, self.config.m)
    }

    /// The memoized `(m+2) x d` matrix for one API call. Missing texts use
    /// the fallback template when enabled and error otherwise.
    pub fn api_matrix(&self, api: &ApiCall) -> Result<Arc<ApiMatrix>, ReprError> {
        self.cache.sync_store_version(self.store.version());
        self.cache.get_or_build(api.as_str(), || {
            let text = match self.store.get(api.as_str()) {
                Some(entry) => entry.text.clone(),
                None if self.config.fallback_enabled => {
                    self.fallback_uses.fetch_add(1, Ordering::SeqCst);
                    fallback_text(api.as_str())
                }
                None => {
                    return Err(ReprError::MissingText {
                        api: api.as_str().to_string(),
                    })
                }
            };
            let tokens = self.tokenizer.encode(&text, self.config.m)?;
            let values = self.encoder.encode(&tokens)?;
            let expected = (self.config.m + 2, self.encoder.dim());
            if values.dim() != expected {
                return Err(ReprError::ShapeMismatch {
                    api: api.as_str().to_string(),
                    expected,
                    got: values.dim(),
                });
            }
            ApiMatrix::new(api.as_str().to_string(), values)
        })
    }

    /// Stacks per-call matrices into the `n x (m+2) x d` sample tensor;
    /// rows past the (possibly truncated) sequence end are zero.
    pub fn sequence_tensor(&self, seq: &LabeledSequence) -> Result<SequenceTensor, ReprError> {
        let n = self.config.n;
        let rows = self.config.m + 2;
        let d = self.encoder.dim();
        let used = seq.calls.len().min(n);
        let mut values = Array3::<f32>::zeros((n, rows, d));
        for (i, call) in seq.calls.iter().take(n).enumerate() {
            let matrix = self.api_matrix(call)?;
            values.slice_mut(s![i, .., ..]).assign(&matrix.values);
        }
        Ok(SequenceTensor {
            sample_id: seq.id.clone(),
            values,
            truncated: seq.calls.len() > n,
            pad_rows: n - used,
        })
    }
}

impl TensorProvider for Pipeline {
    fn tensor(&self, seq: &LabeledSequence) -> Result<SequenceTensor, ReprError> {
        self.sequence_tensor(seq)
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.config.n, self.config.m + 2, self.encoder.dim())
    }
}
