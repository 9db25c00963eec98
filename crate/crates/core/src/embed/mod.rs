//! Text similarity behind a provider abstraction.
//!
//! Real clinical encoders are reached through [`HttpEmbeddingProvider`];
//! hermetic runs use [`DeterministicProvider`] or a [`PairTable`] of fixed
//! pairwise values. A [`SimilarityEnsemble`] averages the clamped cosine of
//! all its members.

mod cache;
mod deterministic;
mod fixture;
mod http;

use std::sync::Arc;

use thiserror::Error;

pub use cache::{CachedProvider, EmbeddingCache};
pub use deterministic::DeterministicProvider;
pub use fixture::PairTable;
pub(crate) use http::{endpoint, post_json, with_retries};
pub use http::{make_http_provider, HttpEmbeddingProvider, RetryPolicy};

pub type Embedding = Vec<f64>;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding provider `{provider}` unavailable: {message}")]
    ProviderUnavailable { provider: String, message: String },
    #[error("embedding width changed from {expected} to {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("malformed embedding response: {0}")]
    MalformedResponse(String),
    #[error("embedding cache {path}: {message}")]
    Cache { path: String, message: String },
    #[error("invalid embedding configuration: {0}")]
    Config(String),
}

/// Maps texts to unit-norm vectors of a fixed width.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        (**self).embed(texts)
    }
}

/// One member of an ensemble: anything that can score a pair of texts.
pub trait SimilaritySource: Send + Sync {
    fn name(&self) -> &str;

    /// Raw cosine similarity in `[-1, 1]`.
    fn cosine(&self, a: &str, b: &str) -> Result<f64, EmbedError>;

    /// Warms any cache for `texts`. Default is a no-op.
    fn prefetch(&self, _texts: &[&str]) -> Result<(), EmbedError> {
        Ok(())
    }
}

/// Adapts an [`EmbeddingProvider`] into a [`SimilaritySource`].
pub struct EmbeddingSource<P>(pub P);

impl<P: EmbeddingProvider> SimilaritySource for EmbeddingSource<P> {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn cosine(&self, a: &str, b: &str) -> Result<f64, EmbedError> {
        let v = self.0.embed(&[a, b])?;
        match v.as_slice() {
            [x, y] => Ok(cosine(x, y)),
            _ => Err(EmbedError::MalformedResponse(format!(
                "expected 2 embeddings, got {}",
                v.len()
            ))),
        }
    }

    fn prefetch(&self, texts: &[&str]) -> Result<(), EmbedError> {
        if !texts.is_empty() {
            self.0.embed(texts)?;
        }
        Ok(())
    }
}

/// Cosine of two vectors; 0 when either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit length in place. Zero vectors are left unchanged.
pub fn normalize(v: &mut [f64]) {
    let n = l2_norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Mean of clamped cosine similarities over a non-empty set of sources.
#[derive(Clone)]
pub struct SimilarityEnsemble {
    members: Vec<Arc<dyn SimilaritySource>>,
}

impl std::fmt::Debug for SimilarityEnsemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.member_names()).finish()
    }
}

impl SimilarityEnsemble {
    pub fn new(members: Vec<Arc<dyn SimilaritySource>>) -> Result<Self, EmbedError> {
        if members.is_empty() {
            return Err(EmbedError::Config("ensemble needs at least one member".into()));
        }
        Ok(SimilarityEnsemble { members })
    }

    pub fn from_providers<P>(providers: Vec<P>) -> Result<Self, EmbedError>
    where
        P: EmbeddingProvider + 'static,
    {
        Self::new(
            providers
                .into_iter()
                .map(|p| Arc::new(EmbeddingSource(p)) as Arc<dyn SimilaritySource>)
                .collect(),
        )
    }

    pub fn single(member: impl SimilaritySource + 'static) -> Self {
        SimilarityEnsemble {
            members: vec![Arc::new(member)],
        }
    }

    /// Two deterministic providers with different seeds, mirroring the
    /// default two-encoder setup.
    pub fn deterministic(seed: u64, dim: usize) -> Self {
        Self::from_providers(vec![
            DeterministicProvider::new(seed, dim),
            DeterministicProvider::new(seed.wrapping_add(1), dim),
        ])
        .expect("two members")
    }

    pub fn member_names(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.name()).collect()
    }

    /// Similarity in `[0, 1]`. Empty (or whitespace-only) input on either side
    /// scores 0; identical non-empty strings score exactly 1.
    pub fn similarity(&self, a: &str, b: &str) -> Result<f64, EmbedError> {
        if a.trim().is_empty() || b.trim().is_empty() {
            return Ok(0.0);
        }
        if a == b {
            return Ok(1.0);
        }
        let mut total = 0.0;
        for m in &self.members {
            total += m.cosine(a, b)?.clamp(0.0, 1.0);
        }
        Ok(total / self.members.len() as f64)
    }

    /// Warms member caches so later pairwise calls avoid per-pair requests.
    pub fn prefetch(&self, texts: &[&str]) -> Result<(), EmbedError> {
        let mut unique: Vec<&str> = texts.iter().copied().filter(|t| !t.trim().is_empty()).collect();
        unique.sort_unstable();
        unique.dedup();
        for m in &self.members {
            m.prefetch(&unique)?;
        }
        Ok(())
    }
}

/// Settings for an ensemble of HTTP-backed encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct HttpEnsembleConfig {
    pub url: String,
    pub models: Vec<String>,
    pub cache_path: Option<std::path::PathBuf>,
}

pub const ENV_EMBED_URL: &str = "LUNGUAGE_EMBED_URL";
pub const ENV_EMBED_MODELS: &str = "LUNGUAGE_EMBED_MODELS";
pub const ENV_EMBED_CACHE: &str = "LUNGUAGE_EMBED_CACHE";

/// Default encoder pair used when no model list is configured.
pub const DEFAULT_MODELS: [&str; 2] = ["medcpt", "biolord"];

impl HttpEnsembleConfig {
    /// Reads the embedding environment variables. Returns `None` when no URL
    /// is configured.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(ENV_EMBED_URL).ok().filter(|u| !u.is_empty())?;
        let models = std::env::var(ENV_EMBED_MODELS)
            .ok()
            .map(|m| parse_model_list(&m))
            .filter(|m| !m.is_empty())
            .unwrap_or_else(|| DEFAULT_MODELS.iter().map(|s| s.to_string()).collect());
        let cache_path = std::env::var_os(ENV_EMBED_CACHE).map(Into::into);
        Some(HttpEnsembleConfig {
            url,
            models,
            cache_path,
        })
    }

    /// Builds one cached HTTP provider per model. All members share one
    /// cache, whose keys include the provider name.
    pub fn build(&self, policy: RetryPolicy) -> Result<(SimilarityEnsemble, Arc<EmbeddingCache>), EmbedError> {
        let cache = Arc::new(match &self.cache_path {
            Some(p) => EmbeddingCache::open(p, cache::DEFAULT_CAPACITY)?,
            None => EmbeddingCache::in_memory(cache::DEFAULT_CAPACITY),
        });
        let mut members: Vec<Arc<dyn SimilaritySource>> = Vec::new();
        for model in &self.models {
            let provider = HttpEmbeddingProvider::new(&self.url, model, policy.clone())?;
            members.push(Arc::new(EmbeddingSource(CachedProvider::new(
                provider,
                Arc::clone(&cache),
            ))));
        }
        Ok((SimilarityEnsemble::new(members)?, cache))
    }
}

pub fn parse_model_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_side_scores_zero() {
        let e = SimilarityEnsemble::deterministic(1, 32);
        assert_eq!(e.similarity("", "stable").unwrap(), 0.0);
        assert_eq!(e.similarity("stable", "  ").unwrap(), 0.0);
        assert_eq!(e.similarity("opacity", "opacity").unwrap(), 1.0);
    }

    #[test]
    fn ensemble_averages_clamped_members() {
        let p = PairTable::from_pairs([(("a", "b"), 0.8)]);
        let q = PairTable::from_pairs([(("a", "b"), -0.4)]);
        let e = SimilarityEnsemble::new(vec![Arc::new(p), Arc::new(q)]).unwrap();
        assert!((e.similarity("a", "b").unwrap() - 0.4).abs() < 1e-12);
        let q2 = PairTable::from_pairs([(("a", "b"), 0.3)]);
        let p2 = PairTable::from_pairs([(("a", "b"), 0.8)]);
        let e = SimilarityEnsemble::new(vec![Arc::new(p2), Arc::new(q2)]).unwrap();
        assert!((e.similarity("b", "a").unwrap() - 0.55).abs() < 1e-12);
    }

    #[test]
    fn empty_ensemble_rejected() {
        assert!(matches!(SimilarityEnsemble::new(vec![]), Err(EmbedError::Config(_))));
    }

    #[test]
    fn model_list_parsing() {
        assert_eq!(parse_model_list("medcpt, biolord,,"), ["medcpt", "biolord"]);
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((cosine(&[3.0, 4.0], &[3.0, 4.0]) - 1.0).abs() < 1e-12);
        let mut v = vec![3.0, 4.0];
        normalize(&mut v);
        assert_eq!(v, [0.6, 0.8]);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in "[a-e ]{0,12}", b in "[a-e ]{0,12}", seed in 0u64..4) {
            let e = SimilarityEnsemble::deterministic(seed, 16);
            let ab = e.similarity(&a, &b).unwrap();
            let ba = e.similarity(&b, &a).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
        }
    }
}
