use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{normalize, EmbedError, Embedding, EmbeddingProvider};

/// Bag-of-tokens embedder for hermetic runs.
///
/// Each lower-cased whitespace token maps to a pseudo-random unit vector
/// derived from `(seed, token)`; a text embeds to the normalized sum of its
/// token vectors. Token order is irrelevant and disjoint texts are nearly
/// orthogonal at large widths.
#[derive(Debug, Clone)]
pub struct DeterministicProvider {
    name: String,
    seed: u64,
    dim: usize,
}

impl DeterministicProvider {
    /// # Panics
    /// If `dim < 8`.
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim >= 8, "deterministic provider needs dim >= 8, got {dim}");
        DeterministicProvider {
            name: format!("deterministic-{seed}-{dim}"),
            seed,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn token_vector(&self, token: &str) -> Embedding {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let mut v: Embedding = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut v);
        v
    }

    pub fn embed_one(&self, text: &str) -> Embedding {
        let mut acc = vec![0.0; self.dim];
        for token in text.split_whitespace() {
            let tv = self.token_vector(&token.to_lowercase());
            acc.iter_mut().zip(&tv).for_each(|(a, t)| *a += t);
        }
        normalize(&mut acc);
        acc
    }
}

impl EmbeddingProvider for DeterministicProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
