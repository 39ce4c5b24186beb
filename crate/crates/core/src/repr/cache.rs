//! Memoized per-API embedding matrices, keyed by encoder identity, token
//! length and text-store version, with binary-blob persistence.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ApiMatrix, EncoderMode, ReprError};

/// Everything a cached matrix depends on besides the API name itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheKey {
    pub encoder: String,
    pub mode: EncoderMode,
    pub m: usize,
    pub d: usize,
    pub store_version: u64,
}

/// Concurrent-reader, single-writer map from API name to its matrix.
/// A store-version change invalidates the whole cache.
#[derive(Debug)]
pub struct MatrixCache {
    key: RwLock<CacheKey>,
    map: RwLock<HashMap<String, Arc<ApiMatrix>>>,
    hits: AtomicUsize,
    encodes: AtomicUsize,
}

impl MatrixCache {
    pub fn new(key: CacheKey) -> Self {
        Self {
            key: RwLock::new(key),
            map: RwLock::new(HashMap::new()),
            hits: AtomicUsize::new(0),
            encodes: AtomicUsize::new(0),
        }
    }

    pub fn key(&self) -> CacheKey {
        self.key.read().expect("cache key lock").clone()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Matrices served from memory without re-encoding.
    pub fn hit_count(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    /// Matrices built by running the encoder.
    pub fn encode_count(&self) -> usize {
        self.encodes.load(Ordering::SeqCst)
    }

    /// Drops every cached matrix if the store version moved.
    pub fn sync_store_version(&self, store_version: u64) {
        let mut key = self.key.write().expect("cache key lock");
        if key.store_version != store_version {
            key.store_version = store_version;
            self.map.write().expect("cache map lock").clear();
        }
    }

    /// Returns the cached matrix for `api_name` or builds it with `build`.
    pub fn get_or_build(
        &self,
        api_name: &str,
        build: impl FnOnce() -> Result<ApiMatrix, ReprError>,
    ) -> Result<Arc<ApiMatrix>, ReprError> {
        if let Some(hit) = self.map.read().expect("cache map lock").get(api_name) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(Arc::clone(hit));
        }
        let built = Arc::new(build()?);
        self.encodes.fetch_add(1, Ordering::SeqCst);
        let mut map = self.map.write().expect("cache map lock");
        // A concurrent writer may have raced us; keep the first value so all
        // readers share one allocation.
        let entry = map
            .entry(api_name.to_string())
            .or_insert_with(|| Arc::clone(&built));
        Ok(Arc::clone(entry))
    }

    fn sorted_names(&self) -> Vec<String> {
        let map = self.map.read().expect("cache map lock");
        let mut names: Vec<String> = map.keys().cloned().collect();
        names.sort_unstable();
        names
    }

    /// Persists as `<stem>.bin` (f32 LE matrices back to back) plus
    /// `<stem>.json` (manifest with the key and per-name offsets).
    pub fn save(&self, stem: &Path) -> Result<(), ReprError> {
        let names = self.sorted_names();
        let key = self.key();
        let rows = key.m + 2;
        let floats_per_matrix = rows * key.d;
        let mut blob: Vec<u8> = Vec::with_capacity(names.len() * floats_per_matrix * 4);
        let mut entries = Vec::with_capacity(names.len());
        {
            let map = self.map.read().expect("cache map lock");
            for name in &names {
                let matrix = map.get(name).expect("name from keys");
                entries.push(CacheManifestEntry {
                    name: name.clone(),
                    offset: blob.len() as u64,
                });
                for v in matrix.values.iter() {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let manifest = CacheManifest { key, entries };
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ReprError::Io { path, source }
        };
        let bin_path = stem.with_extension("bin");
        let json_path = stem.with_extension("json");
        if let Some(parent) = stem.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io_err(stem))?;
            }
        }
        std::fs::write(&bin_path, &blob).map_err(io_err(&bin_path))?;
        let manifest_json =
            serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(&json_path, manifest_json).map_err(io_err(&json_path))?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self, ReprError> {
        let bin_path = stem.with_extension("bin");
        let json_path = stem.with_extension("json");
        let manifest_raw =
            std::fs::read_to_string(&json_path).map_err(|source| ReprError::Io {
                path: json_path.clone(),
                source,
            })?;
        let manifest: CacheManifest =
            serde_json::from_str(&manifest_raw).map_err(|e| ReprError::CacheManifest {
                detail: format!("{}: {e}", json_path.display()),
            })?;
        let blob = std::fs::read(&bin_path).map_err(|source| ReprError::Io {
            path: bin_path.clone(),
            source,
        })?;
        let rows = manifest.key.m + 2;
        let bytes_per_matrix = rows * manifest.key.d * 4;
        if blob.len() != manifest.entries.len() * bytes_per_matrix {
            return Err(ReprError::CacheManifest {
                detail: format!(
                    "{} holds {} bytes, manifest expects {}",
                    bin_path.display(),
                    blob.len(),
                    manifest.entries.len() * bytes_per_matrix
                ),
            });
        }
        let mut map = HashMap::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            let start = entry.offset as usize;
            let end = start + bytes_per_matrix;
            if end > blob.len() {
                return Err(ReprError::CacheManifest {
                    detail: format!("offset {} out of range for {}", entry.offset, entry.name),
                });
            }
            let values: Vec<f32> = blob[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let matrix = Array2::from_shape_vec((rows, manifest.key.d), values)
                .expect("length checked above");
            map.insert(
                entry.name.clone(),
                Arc::new(ApiMatrix::new(entry.name.clone(), matrix)?),
            );
        }
        Ok(Self {
            key: RwLock::new(manifest.key),
            map: RwLock::new(map),
            hits: AtomicUsize::new(0),
            encodes: AtomicUsize::new(0),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CacheManifest {
    key: CacheKey,
    entries: Vec<CacheManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct CacheManifestEntry {
    name: String,
    offset: u64,
}
