use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use lru::LruCache;
use serde::{Deserialize, Serialize};

use super::{EmbedError, Embedding, EmbeddingProvider};

pub(crate) const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Serialize, Deserialize)]
struct CacheFile {
    entries: Vec<CacheRow>,
}

#[derive(Serialize, Deserialize)]
struct CacheRow {
    provider: String,
    text: String,
    vector: Embedding,
}

/// Size-bounded LRU of embeddings keyed by `(provider name, exact text)`,
/// optionally persisted as a JSON sidecar file.
pub struct EmbeddingCache {
    entries: Mutex<LruCache<(String, String), Embedding>>,
    path: Option<PathBuf>,
}

impl EmbeddingCache {
    pub fn in_memory(capacity: usize) -> Self {
        EmbeddingCache {
            entries: Mutex::new(LruCache::new(NonZeroUsize::new(capacity.max(1)).unwrap())),
            path: None,
        }
    }

    /// Opens a persistent cache, loading `path` if it exists.
    pub fn open(path: &Path, capacity: usize) -> Result<Self, EmbedError> {
        let mut cache = EmbeddingCache::in_memory(capacity);
        cache.path = Some(path.to_path_buf());
        if path.exists() {
            let err = |message: String| EmbedError::Cache {
                path: path.display().to_string(),
                message,
            };
            let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
            if !text.trim().is_empty() {
                let file: CacheFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
                let mut entries = cache.entries.lock().unwrap();
                for row in file.entries {
                    entries.put((row.provider, row.text), row.vector);
                }
            }
        }
        Ok(cache)
    }

    pub fn get(&self, provider: &str, text: &str) -> Option<Embedding> {
        self.entries
            .lock()
            .unwrap()
            .get(&(provider.to_string(), text.to_string()))
            .cloned()
    }

    pub fn put(&self, provider: &str, text: &str, vector: Embedding) {
        self.entries
            .lock()
            .unwrap()
            .put((provider.to_string(), text.to_string()), vector);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the sidecar file, least recently used entries first. No-op for
    /// in-memory caches.
    pub fn save(&self) -> Result<(), EmbedError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let file = {
            let entries = self.entries.lock().unwrap();
            CacheFile {
                entries: entries
                    .iter()
                    .rev()
                    .map(|((provider, text), vector)| CacheRow {
                        provider: provider.clone(),
                        text: text.clone(),
                        vector: vector.clone(),
                    })
                    .collect(),
            }
        };
        let json = serde_json::to_string(&file).expect("cache serialization is infallible");
        fs::write(path, json).map_err(|e| EmbedError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Wraps a provider with an [`EmbeddingCache`]. Misses are fetched in one
/// batch per call.
pub struct CachedProvider<P> {
    inner: P,
    cache: Arc<EmbeddingCache>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P, cache: Arc<EmbeddingCache>) -> Self {
        CachedProvider { inner, cache }
    }

    pub fn cache(&self) -> &Arc<EmbeddingCache> {
        &self.cache
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        let name = self.inner.name();
        let mut out: Vec<Option<Embedding>> = texts.iter().map(|t| self.cache.get(name, t)).collect();
        let mut missing: Vec<&str> = texts
            .iter()
            .zip(&out)
            .filter(|(_, hit)| hit.is_none())
            .map(|(t, _)| *t)
            .collect();
        missing.sort_unstable();
        missing.dedup();
        if !missing.is_empty() {
            let fetched = self.inner.embed(&missing)?;
            for (text, vector) in missing.iter().zip(fetched) {
                for (slot, t) in out.iter_mut().zip(texts) {
                    if slot.is_none() && t == text {
                        *slot = Some(vector.clone());
                    }
                }
                self.cache.put(name, text, vector);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every miss was fetched")).collect())
    }
}
