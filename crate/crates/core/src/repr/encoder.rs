//! Text encoders that turn a token sequence into an `(m+2) x d` matrix:
//! a static embedding-table lookup, and a contextual transformer whose rows
//! are final-layer hidden states.

use std::path::Path;

use ndarray::{s, Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ReprError, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderMode {
    /// Rows are final-layer hidden states; each row depends on the whole text.
    Contextual,
    /// Rows are plain embedding-table lookups per token id.
    Static,
}

impl std::fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Contextual => f.write_str("contextual"),
            Self::Static => f.write_str("static"),
        }
    }
}

/// Identity of a text encoder; part of every cache key and artifact manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub name: String,
    pub dim: usize,
    pub mode: EncoderMode,
}

pub enum Encoder {
    Static(StaticEncoder),
    Contextual(ContextualEncoder),
}

impl Encoder {
    pub fn spec(&self) -> &EncoderSpec {
        match self {
            Encoder::Static(e) => &e.spec,
            Encoder::Contextual(e) => &e.spec,
        }
    }

    pub fn dim(&self) -> usize {
        self.spec().dim
    }

    pub fn encode(&self, tokens: &TokenSequence) -> Result<Array2<f32>, ReprError> {
        match self {
            Encoder::Static(e) => e.encode(tokens),
            Encoder::Contextual(e) => e.encode(tokens),
        }
    }
}

/// Embedding-table lookup encoder. Row 0 (the pad id by convention of the
/// seeded constructor) is all zeros; other rows are dense.
pub struct StaticEncoder {
    spec: EncoderSpec,
    table: Array2<f32>,
}

const STATIC_MAGIC: &[u8; 8] = b"ASEQEMB1";

impl StaticEncoder {
    pub fn new(name: impl Into<String>, table: Array2<f32>) -> Self {
        let dim = table.ncols();
        Self {
            spec: EncoderSpec {
                name: name.into(),
                dim,
                mode: EncoderMode::Static,
            },
            table,
        }
    }

    /// Deterministic random table: row `pad_id` zero, the rest N(0, 0.02).
    pub fn seeded(
        name: impl Into<String>,
        vocab_size: usize,
        dim: usize,
        pad_id: u32,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, 0.02).expect("valid stddev");
        let mut table = Array2::zeros((vocab_size, dim));
        for i in 0..vocab_size {
            if i as u32 == pad_id {
                continue;
            }
            for j in 0..dim {
                table[[i, j]] = normal.sample(&mut rng);
            }
        }
        Self::new(name, table)
    }

    pub fn table(&self) -> &Array2<f32> {
        &self.table
    }

    pub fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    fn encode(&self, tokens: &TokenSequence) -> Result<Array2<f32>, ReprError> {
        let mut out = Array2::zeros((tokens.len(), self.spec.dim));
        for (row, &id) in tokens.ids.iter().enumerate() {
            let id = id as usize;
            if id >= self.table.nrows() {
                return Err(ReprError::TokenIdOutOfRange {
                    id: id as u32,
                    vocab: self.table.nrows(),
                });
            }
            out.slice_mut(s![row, ..]).assign(&self.table.slice(s![id, ..]));
        }
        Ok(out)
    }

    /// Binary table format: magic, u32 vocab size, u32 dim, f32 LE values.
    pub fn save(&self, path: &Path) -> Result<(), ReprError> {
        let io_err = |source| ReprError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut bytes = Vec::with_capacity(16 + self.table.len() * 4);
        bytes.extend_from_slice(STATIC_MAGIC);
        bytes.extend_from_slice(&(self.table.nrows() as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.table.ncols() as u32).to_le_bytes());
        for v in self.table.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, ReprError> {
        let bytes = std::fs::read(path).map_err(|source| ReprError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if bytes.len() < 16 || &bytes[..8] != STATIC_MAGIC {
            return Err(ReprError::InvalidVocab {
                detail: format!("{} is not a static embedding table", path.display()),
            });
        }
        let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected = 16 + rows * cols * 4;
        if bytes.len() != expected {
            return Err(ReprError::InvalidVocab {
                detail: format!(
                    "table {} declares {rows}x{cols} but holds {} bytes",
                    path.display(),
                    bytes.len()
                ),
            });
        }
        let values: Vec<f32> = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let table = Array2::from_shape_vec((rows, cols), values).expect("shape checked");
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "static".into());
        Ok(Self::new(name, table))
    }
}

/// Deterministic seeded transformer encoder: token + position embeddings, a
/// stack of self-attention/feed-forward layers with layer norm, pad masking,
/// final hidden states out. Forward-only.
pub struct ContextualEncoder {
    spec: EncoderSpec,
    token_table: Array2<f32>,
    pos_table: Array2<f32>,
    layers: Vec<EncoderLayer>,
    heads: usize,
}

struct EncoderLayer {
    wq: Array2<f32>,
    wk: Array2<f32>,
    wv: Array2<f32>,
    wo: Array2<f32>,
    ln1_gain: Array1<f32>,
    ln1_bias: Array1<f32>,
    w_up: Array2<f32>,
    b_up: Array1<f32>,
    w_down: Array2<f32>,
    b_down: Array1<f32>,
    ln2_gain: Array1<f32>,
    ln2_bias: Array1<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextualConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl ContextualEncoder {
    pub fn seeded(name: impl Into<String>, cfg: &ContextualConfig) -> Result<Self, ReprError> {
        if cfg.dim % cfg.heads != 0 {
            return Err(ReprError::BadParam {
                detail: format!("dim {} not divisible by heads {}", cfg.dim, cfg.heads),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0f32, 0.02).expect("valid stddev");
        let mut mat = |r: usize, c: usize| {
            Array2::from_shape_simple_fn((r, c), || normal.sample(&mut rng))
        };
        let token_table = mat(cfg.vocab_size, cfg.dim);
        let pos_table = mat(cfg.max_len, cfg.dim);
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            layers.push(EncoderLayer {
                wq: mat(cfg.dim, cfg.dim),
                wk: mat(cfg.dim, cfg.dim),
                wv: mat(cfg.dim, cfg.dim),
                wo: mat(cfg.dim, cfg.dim),
                ln1_gain: Array1::ones(cfg.dim),
                ln1_bias: Array1::zeros(cfg.dim),
                w_up: mat(cfg.dim, cfg.ff_dim),
                b_up: Array1::zeros(cfg.ff_dim),
                w_down: mat(cfg.ff_dim, cfg.dim),
                b_down: Array1::zeros(cfg.dim),
                ln2_gain: Array1::ones(cfg.dim),
                ln2_bias: Array1::zeros(cfg.dim),
            });
        }
        Ok(Self {
            spec: EncoderSpec {
                name: name.into(),
                dim: cfg.dim,
                mode: EncoderMode::Contextual,
            },
            token_table,
            pos_table,
            layers,
            heads: cfg.heads,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.token_table.nrows()
    }

    fn encode(&self, tokens: &TokenSequence) -> Result<Array2<f32>, ReprError> {
        let len = tokens.len();
        let d = self.spec.dim;
        if len > self.pos_table.nrows() {
            return Err(ReprError::BadParam {
                detail: format!(
                    "sequence length {len} exceeds encoder max length {}",
                    self.pos_table.nrows()
                ),
            });
        }
        let mut x = Array2::<f32>::zeros((len, d));
        for (row, &id) in tokens.ids.iter().enumerate() {
            let id = id as usize;
            if id >= self.token_table.nrows() {
                return Err(ReprError::TokenIdOutOfRange {
                    id: id as u32,
                    vocab: self.token_table.nrows(),
                });
            }
            let emb = &self.token_table.slice(s![id, ..]) + &self.pos_table.slice(s![row, ..]);
            x.slice_mut(s![row, ..]).assign(&emb);
        }
        // Pad positions attend to nothing and are attended by nothing.
        let attend_len = len - tokens.pad_count;
        for layer in &self.layers {
            x = layer.forward(&x, attend_len, self.heads);
        }
        Ok(x)
    }
}

impl EncoderLayer {
    fn forward(&self, x: &Array2<f32>, attend_len: usize, heads: usize) -> Array2<f32> {
        let attn = self.attention(x, attend_len, heads);
        let h = layer_norm(&(x + &attn), &self.ln1_gain, &self.ln1_bias);
        let up = h.dot(&self.w_up) + &self.b_up;
        let act = up.mapv(gelu);
        let down = act.dot(&self.w_down) + &self.b_down;
        layer_norm(&(&h + &down), &self.ln2_gain, &self.ln2_bias)
    }

    fn attention(&self, x: &Array2<f32>, attend_len: usize, heads: usize) -> Array2<f32> {
        let (len, d) = x.dim();
        let dh = d / heads;
        let q = x.dot(&self.wq);
        let k = x.dot(&self.wk);
        let v = x.dot(&self.wv);
        let scale = 1.0 / (dh as f32).sqrt();

        let mut context = Array3::<f32>::zeros((heads, len, dh));
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(s![.., cols.clone()]);
            let kh = k.slice(s![.., cols.clone()]);
            let vh = v.slice(s![.., cols.clone()]);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            for i in 0..len {
                // softmax over the first attend_len key positions
                let mut row = scores.slice_mut(s![i, ..]);
                let max = row
                    .iter()
                    .take(attend_len)
                    .cloned()
                    .fold(f32::NEG_INFINITY, f32::max);
                let mut denom = 0.0f32;
                for j in 0..len {
                    if j < attend_len {
                        let e = (row[j] - max).exp();
                        row[j] = e;
                        denom += e;
                    } else {
                        row[j] = 0.0;
                    }
                }
                if denom > 0.0 {
                    row.mapv_inplace(|s| s / denom);
                }
            }
            context
                .slice_mut(s![h, .., ..])
                .assign(&scores.dot(&vh));
        }
        let mut merged = Array2::<f32>::zeros((len, d));
        for h in 0..heads {
            merged
                .slice_mut(s![.., h * dh..(h + 1) * dh])
                .assign(&context.slice(s![h, .., ..]));
        }
        merged.dot(&self.wo)
    }
}

fn layer_norm(x: &Array2<f32>, gain: &Array1<f32>, bias: &Array1<f32>) -> Array2<f32> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let mean = row.mean().unwrap_or(0.0);
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / row.len() as f32;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gain[j] + bias[j];
        }
    }
    out
}

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + ((2.0 / std::f32::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}
