//! Greedy longest-match-first subword tokenization with fixed-length padding
//! and truncation, producing `[CLS] w1..wk [SEP] [PAD]...` sequences.

use std::collections::HashMap;
use std::path::Path;

use super::{ReprError, TokenSequence};

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

/// Subword tokenizer over a fixed vocabulary. Continuation pieces carry the
/// `##` prefix; words that cannot be segmented map to `[UNK]`.
#[derive(Debug)]
pub struct WordPieceTokenizer {
    vocab: HashMap<String, u32>,
    vocab_size: usize,
    pad_id: u32,
    unk_id: u32,
    cls_id: u32,
    sep_id: u32,
    lowercase: bool,
    max_chars_per_word: usize,
}

impl WordPieceTokenizer {
    /// Builds a tokenizer from an explicit token list; ids follow list order.
    /// The list must contain all four special tokens.
    pub fn new<I, S>(tokens: I, lowercase: bool) -> Result<Self, ReprError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = HashMap::new();
        for (i, token) in tokens.into_iter().enumerate() {
            vocab.insert(token.into(), i as u32);
        }
        let lookup = |name: &str| {
            vocab
                .get(name)
                .copied()
                .ok_or_else(|| ReprError::InvalidVocab {
                    detail: format!("special token {name} missing from vocabulary"),
                })
        };
        let pad_id = lookup(PAD_TOKEN)?;
        let unk_id = lookup(UNK_TOKEN)?;
        let cls_id = lookup(CLS_TOKEN)?;
        let sep_id = lookup(SEP_TOKEN)?;
        let vocab_size = vocab.len();
        Ok(Self {
            vocab,
            vocab_size,
            pad_id,
            unk_id,
            cls_id,
            sep_id,
            lowercase,
            max_chars_per_word: 100,
        })
    }

    /// Reads a one-token-per-line vocabulary file (ids = line numbers).
    pub fn from_vocab_file(path: &Path, lowercase: bool) -> Result<Self, ReprError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ReprError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::new(raw.lines().map(str::to_string), lowercase)
    }

    /// Convenience constructor for tests and fixtures: whole words plus the
    /// special tokens, no subword pieces.
    pub fn from_words<I, S>(words: I) -> Result<Self, ReprError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = vec![
            PAD_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
            CLS_TOKEN.to_string(),
            SEP_TOKEN.to_string(),
        ];
        for w in words {
            let w = w.into();
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        Self::new(tokens, true)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn cls_id(&self) -> u32 {
        self.cls_id
    }

    pub fn sep_id(&self) -> u32 {
        self.sep_id
    }

    /// Splits text into word-level tokens: whitespace separation plus
    /// punctuation split out as standalone tokens.
    fn basic_tokenize(&self, text: &str) -> Vec<String> {
        let prepared = if self.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        let mut words = Vec::new();
        for chunk in prepared.split_whitespace() {
            let mut current = String::new();
            for c in chunk.chars() {
                if c.is_ascii_punctuation() {
                    if !current.is_empty() {
                        words.push(std::mem::take(&mut current));
                    }
                    words.push(c.to_string());
                } else {
                    current.push(c);
                }
            }
            if !current.is_empty() {
                words.push(current);
            }
        }
        words
    }

    /// Greedy longest-match segmentation of one word into piece ids.
    fn wordpiece(&self, word: &str) -> Vec<u32> {
        if word.chars().count() > self.max_chars_per_word {
            return vec![self.unk_id];
        }
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut pieces = Vec::new();
        let mut start = 0usize;
        while start < word.len() {
            let mut end_idx = chars.len();
            let mut matched = None;
            while end_idx > 0 {
                let end = chars
                    .get(end_idx)
                    .map(|(i, _)| *i)
                    .unwrap_or(word.len());
                if end <= start {
                    break;
                }
                let piece = if start == 0 {
                    word[start..end].to_string()
                } else {
                    format!("##{}", &word[start..end])
                };
                if let Some(&id) = self.vocab.get(&piece) {
                    matched = Some((id, end));
                    break;
                }
                end_idx -= 1;
            }
            match matched {
                Some((id, end)) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![self.unk_id],
            }
        }
        pieces
    }

    /// Tokenizes `text` to exactly `m` content ids (truncating or padding),
    /// framed by the start/end specials: total length `m + 2`.
    pub fn encode(&self, text: &str, m: usize) -> Result<TokenSequence, ReprError> {
        if m == 0 {
            return Err(ReprError::BadParam {
                detail: "content length m must be at least 1".into(),
            });
        }
        let mut content: Vec<u32> = Vec::new();
        for word in self.basic_tokenize(text) {
            content.extend(self.wordpiece(&word));
            if content.len() > m {
                break;
            }
        }
        let truncated = content.len() > m;
        content.truncate(m);
        let pad_count = m - content.len();

        let mut ids = Vec::with_capacity(m + 2);
        ids.push(self.cls_id);
        ids.extend_from_slice(&content);
        ids.push(self.sep_id);
        ids.extend(std::iter::repeat(self.pad_id).take(pad_count));
        Ok(TokenSequence {
            ids,
            pad_count,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_tokenizer() -> WordPieceTokenizer {
        WordPieceTokenizer::new(
            [
                "[PAD]", "[UNK]", "[CLS]", "[SEP]", "open", "file", "close", "##s", "hand",
                "##le", "send", ".",
            ],
            true,
        )
        .unwrap()
    }

    #[test]
    fn single_word_is_padded_to_full_length() {
        let tok = fixture_tokenizer();
        let seq = tok.encode("open", 100).unwrap();
        assert_eq!(seq.ids.len(), 102);
        assert_eq!(seq.ids[0], tok.cls_id());
        assert_eq!(seq.ids[1], 4);
        assert_eq!(seq.ids[2], tok.sep_id());
        assert_eq!(seq.pad_count, 99);
        assert!(seq.ids[3..].iter().all(|&id| id == tok.pad_id()));
        assert!(!seq.truncated);
    }

    #[test]
    fn long_text_truncates_to_exactly_m_content_tokens() {
        let tok = fixture_tokenizer();
        let text = "open file ".repeat(80);
        let seq = tok.encode(&text, 100).unwrap();
        assert_eq!(seq.ids.len(), 102);
        assert!(seq.truncated);
        assert_eq!(seq.pad_count, 0);
        assert_eq!(seq.ids[101], tok.sep_id());
    }

    #[test]
    fn encoding_is_deterministic() {
        let tok = fixture_tokenizer();
        let a = tok.encode("opens handle. close file", 16).unwrap();
        let b = tok.encode("opens handle. close file", 16).unwrap();
        assert_eq!(a.ids, b.ids);
    }

    #[test]
    fn wordpiece_uses_continuation_pieces() {
        let tok = fixture_tokenizer();
        let seq = tok.encode("opens", 4).unwrap();
        // "opens" -> "open" + "##s"
        assert_eq!(&seq.ids[1..3], &[4, 7]);
    }

    #[test]
    fn unknown_word_maps_to_unk() {
        let tok = fixture_tokenizer();
        let seq = tok.encode("zzzz", 4).unwrap();
        assert_eq!(seq.ids[1], 1);
    }

    #[test]
    fn punctuation_splits_words() {
        let tok = fixture_tokenizer();
        let seq = tok.encode("file.close", 8).unwrap();
        assert_eq!(&seq.ids[1..4], &[5, 11, 6]);
    }

    #[test]
    fn missing_specials_rejected() {
        let err = WordPieceTokenizer::new(["a", "b"], true).unwrap_err();
        assert!(matches!(err, ReprError::InvalidVocab { .. }));
    }

    #[test]
    fn sep_position_and_trailing_pads_invariant() {
        let tok = fixture_tokenizer();
        for text in ["open", "open file close", "opens handle. send open file close"] {
            let seq = tok.encode(text, 6).unwrap();
            assert_eq!(seq.ids.len(), 8);
            assert_eq!(seq.ids[0], tok.cls_id());
            let sep_count = seq.ids.iter().filter(|&&id| id == tok.sep_id()).count();
            assert_eq!(sep_count, 1);
            assert_eq!(seq.sep_position(), seq.ids.len() - 1 - seq.pad_count);
            for &id in &seq.ids[seq.sep_position() + 1..] {
                assert_eq!(id, tok.pad_id());
            }
        }
    }
}
