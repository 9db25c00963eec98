use std::collections::HashMap;

use super::{EmbedError, SimilaritySource};

/// Fixed pairwise similarities, closed under symmetry.
///
/// Identical strings score 1 and unlisted pairs score 0.
#[derive(Debug, Clone, Default)]
pub struct PairTable {
    name: String,
    table: HashMap<(String, String), f64>,
}

impl PairTable {
    pub fn new() -> Self {
        PairTable {
            name: "fixture".into(),
            table: HashMap::new(),
        }
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = ((S, S), f64)>,
        S: Into<String>,
    {
        let mut t = PairTable::new();
        for ((a, b), v) in pairs {
            t.insert(a, b, v);
        }
        t
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn insert(&mut self, a: impl Into<String>, b: impl Into<String>, value: f64) {
        let (a, b) = (a.into(), b.into());
        self.table.insert((b.clone(), a.clone()), value);
        self.table.insert((a, b), value);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Loads `[{"a": str, "b": str, "score": float}, ...]`.
    pub fn from_json(text: &str) -> Result<Self, EmbedError> {
        #[derive(serde::Deserialize)]
        struct Row {
            a: String,
            b: String,
            score: f64,
        }
        let rows: Vec<Row> = serde_json::from_str(text).map_err(|e| EmbedError::Config(format!("pair table: {e}")))?;
        Ok(PairTable::from_pairs(rows.into_iter().map(|r| ((r.a, r.b), r.score))))
    }
}

impl SimilaritySource for PairTable {
    fn name(&self) -> &str {
        &self.name
    }

    fn cosine(&self, a: &str, b: &str) -> Result<f64, EmbedError> {
        if a == b {
            return Ok(1.0);
        }
        Ok(self.table.get(&(a.to_string(), b.to_string())).copied().unwrap_or(0.0))
    }
}
