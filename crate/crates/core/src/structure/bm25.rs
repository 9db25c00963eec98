//! Okapi BM25 retrieval of few-shot examples.

use std::collections::HashMap;

use crate::model::StructuredReport;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// One retrievable example: source text and its reference structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub text: String,
    pub report: StructuredReport,
}

#[derive(Debug, Clone)]
pub struct FewShotIndex {
    examples: Vec<Example>,
    term_freqs: Vec<HashMap<String, usize>>,
    doc_lens: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    avg_len: f64,
    k1: f64,
    b: f64,
}

impl Default for FewShotIndex {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl FewShotIndex {
    pub fn new(examples: Vec<Example>) -> Self {
        Self::with_params(examples, DEFAULT_K1, DEFAULT_B)
    }

    pub fn with_params(examples: Vec<Example>, k1: f64, b: f64) -> Self {
        let mut term_freqs = Vec::with_capacity(examples.len());
        let mut doc_lens = Vec::with_capacity(examples.len());
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for ex in &examples {
            let tokens = tokenize(&ex.text);
            doc_lens.push(tokens.len());
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            term_freqs.push(tf);
        }
        let total: usize = doc_lens.iter().sum();
        let avg_len = if examples.is_empty() {
            0.0
        } else {
            total as f64 / examples.len() as f64
        };
        FewShotIndex {
            examples,
            term_freqs,
            doc_lens,
            doc_freq,
            avg_len,
            k1,
            b,
        }
    }

    /// Builds an index from reports that carry their source text.
    /// Reports without it are skipped.
    pub fn from_reports<I: IntoIterator<Item = StructuredReport>>(reports: I) -> Self {
        Self::new(
            reports
                .into_iter()
                .filter_map(|r| {
                    let text = super::report_text(r.source_text.as_ref()?);
                    Some(Example { text, report: r })
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.examples.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// BM25 score of document `doc` for `query`. Repeated query terms count
    /// once per occurrence.
    pub fn score(&self, query: &str, doc: usize) -> f64 {
        let len_norm = if self.avg_len > 0.0 {
            self.doc_lens[doc] as f64 / self.avg_len
        } else {
            0.0
        };
        tokenize(query)
            .iter()
            .map(|t| {
                let tf = self.term_freqs[doc].get(t).copied().unwrap_or(0) as f64;
                if tf == 0.0 {
                    return 0.0;
                }
                self.idf(t) * tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * len_norm))
            })
            .sum()
    }

    /// Indices of the top `k` documents, best first. Ties keep corpus order.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<usize> {
        let mut scored: Vec<(usize, f64)> = (0..self.examples.len()).map(|i| (i, self.score(query, i))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.into_iter().take(k).map(|(i, _)| i).collect()
    }
}
