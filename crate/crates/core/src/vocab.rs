//! Task vocabulary and exact span matching over report sentences.
//!
//! Matching is case-sensitive and performs no normalization. Each sentence is
//! split into whitespace-delimited words; every contiguous word span, longest
//! first, is looked up verbatim. Overlapping hits are all kept.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyEntry {
    pub surface_form: String,
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_form: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy_path: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub umls_code: Option<String>,
}

impl VocabularyEntry {
    pub fn new<I, S>(surface_form: impl Into<String>, categories: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        VocabularyEntry {
            surface_form: surface_form.into(),
            categories: categories.into_iter().map(Into::into).collect(),
            normalized_form: None,
            taxonomy_path: None,
            umls_code: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("vocabulary entry has an empty surface form")]
    EmptySurfaceForm,
    #[error("vocabulary entry `{0}` has no categories")]
    EmptyCategories(String),
}

/// Surface-form lookup table. Keys are case-sensitive; categories registered
/// for the same surface form are merged.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entries: Vec<VocabularyEntry>,
    lookup: HashMap<String, Vec<String>>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<I>(entries: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = VocabularyEntry>,
    {
        let mut vocab = Vocabulary::new();
        for entry in entries {
            vocab.add(entry)?;
        }
        Ok(vocab)
    }

    /// Convenience constructor from `(surface, categories)` pairs.
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = (&'a str, &'a [&'a str])>,
    {
        Self::from_entries(
            pairs
                .into_iter()
                .map(|(s, cats)| VocabularyEntry::new(s, cats.iter().copied())),
        )
    }

    pub fn add(&mut self, entry: VocabularyEntry) -> Result<(), VocabError> {
        if entry.surface_form.is_empty() {
            return Err(VocabError::EmptySurfaceForm);
        }
        if entry.categories.is_empty() || entry.categories.iter().any(|c| c.is_empty()) {
            return Err(VocabError::EmptyCategories(entry.surface_form));
        }
        let cats = self.lookup.entry(entry.surface_form.clone()).or_default();
        for c in &entry.categories {
            if let Err(pos) = cats.binary_search(c) {
                cats.insert(pos, c.clone());
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    /// All categories registered for `surface`, sorted by name.
    pub fn lookup(&self, surface: &str) -> &[String] {
        self.lookup.get(surface).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.lookup.contains_key(surface)
    }

    /// Number of distinct surface forms.
    pub fn len(&self) -> usize {
        self.lookup.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lookup.is_empty()
    }

    pub fn entries(&self) -> &[VocabularyEntry] {
        &self.entries
    }

    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        self.lookup.keys().map(String::as_str)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonEntry {
    Categories(Vec<String>),
    Single(String),
    Detailed {
        categories: Vec<String>,
        #[serde(default)]
        normalized_form: Option<String>,
        #[serde(default)]
        taxonomy_path: Option<Vec<String>>,
        #[serde(default)]
        umls_code: Option<String>,
    },
}

/// Loads a vocabulary from JSON (`{surface: [category, ...]}`) or from a
/// tab-separated file with columns `surface`, `category`, and an optional
/// `normalized` form.
///
/// The format is chosen by extension (`.json` / `.tsv`), falling back to
/// sniffing for a leading `{`. Lines starting with `#` in TSV files are
/// comments.
pub fn load_vocabulary(path: &Path) -> Result<Vocabulary, VocabError> {
    let text = fs::read_to_string(path).map_err(|source| VocabError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let is_json = match ext {
        "json" => true,
        "tsv" | "txt" => false,
        _ => text.trim_start().starts_with('{'),
    };
    if is_json {
        parse_vocabulary_json(&text).map_err(|e| match e {
            VocabError::Format { message, .. } => VocabError::Format {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    } else {
        parse_vocabulary_tsv(&text)
    }
}

pub fn parse_vocabulary_json(text: &str) -> Result<Vocabulary, VocabError> {
    if text.trim().is_empty() {
        return Ok(Vocabulary::new());
    }
    // BTreeMap keeps entry order independent of file key order.
    let map: BTreeMap<String, JsonEntry> = serde_json::from_str(text).map_err(|e| VocabError::Format {
        path: PathBuf::new(),
        message: e.to_string(),
    })?;
    Vocabulary::from_entries(map.into_iter().map(|(surface, entry)| match entry {
        JsonEntry::Categories(categories) => VocabularyEntry::new(surface, categories),
        JsonEntry::Single(category) => VocabularyEntry::new(surface, [category]),
        JsonEntry::Detailed {
            categories,
            normalized_form,
            taxonomy_path,
            umls_code,
        } => VocabularyEntry {
            surface_form: surface,
            categories,
            normalized_form,
            taxonomy_path,
            umls_code,
        },
    }))
}

pub fn parse_vocabulary_tsv(text: &str) -> Result<Vocabulary, VocabError> {
    let mut vocab = Vocabulary::new();
    for line in text.lines() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let surface = cols.next().unwrap_or_default();
        let category = cols.next().unwrap_or_default();
        let normalized = cols.next().filter(|s| !s.is_empty());
        let mut entry = VocabularyEntry::new(surface, [category].into_iter().filter(|c| !c.is_empty()));
        entry.normalized_form = normalized.map(str::to_string);
        vocab.add(entry)?;
    }
    Ok(vocab)
}

/// A vocabulary hit inside one sentence. Offsets count Unicode scalar values
/// and are relative to the sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanMatch {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
    pub sent_idx: usize,
    pub matched_term: String,
    pub category: String,
}

pub trait SentenceSplitter {
    fn split<'a>(&self, text: &'a str) -> Vec<&'a str>;
}

/// Splits after a period that is followed by whitespace and then either an
/// upper-case letter or the end of the text.
#[derive(Debug, Clone, Copy, Default)]
pub struct PeriodSplitter;

impl SentenceSplitter for PeriodSplitter {
    fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        let mut start = 0;
        for (i, c) in text.char_indices() {
            if c != '.' || i < start {
                continue;
            }
            let rest = &text[i + 1..];
            if !rest.starts_with(char::is_whitespace) {
                continue;
            }
            let next = rest.trim_start();
            if next.is_empty() || next.starts_with(char::is_uppercase) {
                push_trimmed(&mut out, &text[start..=i]);
                start = text.len() - next.len();
            }
        }
        push_trimmed(&mut out, &text[start..]);
        out
    }
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, s: &'a str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s);
    }
}

/// Whitespace-delimited words as `(byte_start, byte_end)` pairs.
fn word_bounds(sentence: &str) -> Vec<(usize, usize)> {
    let mut words = Vec::new();
    let mut start = None;
    for (i, c) in sentence.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                words.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        words.push((s, sentence.len()));
    }
    words
}

/// Matches every sentence of `section_text`, split with [`PeriodSplitter`].
pub fn match_spans(vocab: &Vocabulary, section_text: &str) -> Vec<SpanMatch> {
    match_spans_with(vocab, section_text, &PeriodSplitter)
}

pub fn match_spans_with(vocab: &Vocabulary, section_text: &str, splitter: &dyn SentenceSplitter) -> Vec<SpanMatch> {
    splitter
        .split(section_text)
        .into_iter()
        .enumerate()
        .flat_map(|(i, s)| match_sentence(vocab, s, i + 1))
        .collect()
}

/// Matches one sentence. Output is ordered by descending span length in
/// words, then start word, then category name; duplicate (span, category)
/// pairs are emitted once.
pub fn match_sentence(vocab: &Vocabulary, sentence: &str, sent_idx: usize) -> Vec<SpanMatch> {
    let words = word_bounds(sentence);
    let n = words.len();
    let mut out = Vec::new();
    if vocab.is_empty() || n == 0 {
        return out;
    }
    // byte offset -> char offset
    let char_at: HashMap<usize, usize> = sentence
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(sentence.len()))
        .enumerate()
        .map(|(c, b)| (b, c))
        .collect();

    for len in (1..=n).rev() {
        for i in 0..=n - len {
            let (b_start, _) = words[i];
            let (_, b_end) = words[i + len - 1];
            let span = &sentence[b_start..b_end];
            let cats = vocab.lookup(span);
            if cats.is_empty() {
                continue;
            }
            // lookup() yields sorted, de-duplicated categories
            for category in cats {
                out.push(SpanMatch {
                    text: span.to_string(),
                    char_start: char_at[&b_start],
                    char_end: char_at[&b_end],
                    sent_idx,
                    matched_term: span.to_string(),
                    category: category.clone(),
                });
            }
        }
    }
    out
}

/// Candidate list for one sentence: matched terms in first-seen order with
/// their merged categories.
pub fn candidates(matches: &[SpanMatch]) -> Vec<(String, Vec<String>)> {
    let mut order: Vec<String> = Vec::new();
    let mut cats: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for m in matches {
        if !cats.contains_key(m.matched_term.as_str()) {
            order.push(m.matched_term.clone());
        }
        cats.entry(m.matched_term.as_str())
            .or_default()
            .insert(m.category.as_str());
    }
    order
        .into_iter()
        .map(|term| {
            let c = cats[term.as_str()].iter().map(|s| s.to_string()).collect();
            (term, c)
        })
        .collect()
}

/// Slices `sentence` by character offsets.
pub fn char_slice(sentence: &str, start: usize, end: usize) -> String {
    sentence.chars().skip(start).take(end - start).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(pairs: &[(&str, &[&str])]) -> Vocabulary {
        Vocabulary::from_pairs(pairs.iter().copied()).unwrap()
    }

    fn tuples(ms: &[SpanMatch]) -> Vec<(&str, &str)> {
        ms.iter().map(|m| (m.text.as_str(), m.category.as_str())).collect()
    }

    #[test]
    fn overlapping_categories_are_all_kept() {
        let v = vocab(&[("left lung", &["Location", "PF"]), ("opacity", &["PF"])]);
        let ms = match_sentence(&v, "left lung opacity", 1);
        assert_eq!(
            tuples(&ms),
            [("left lung", "Location"), ("left lung", "PF"), ("opacity", "PF")]
        );
        assert_eq!((ms[0].char_start, ms[0].char_end), (0, 9));
        assert_eq!((ms[2].char_start, ms[2].char_end), (10, 17));
    }

    #[test]
    fn case_sensitive() {
        let v = vocab(&[("opacity", &["PF"])]);
        assert!(match_sentence(&v, "Opacity persists", 1).is_empty());
    }

    #[test]
    fn nested_spans_retained() {
        let v = vocab(&[("pleural effusion", &["PF"]), ("effusion", &["PF"])]);
        let ms = match_sentence(&v, "small pleural effusion", 1);
        assert_eq!(tuples(&ms), [("pleural effusion", "PF"), ("effusion", "PF")]);
    }

    #[test]
    fn trailing_punctuation_does_not_match() {
        let v = vocab(&[("consolidation", &["Entity1"])]);
        assert!(match_sentence(&v, "no focal consolidation.", 1).is_empty());
        assert_eq!(match_sentence(&v, "no focal consolidation .", 1).len(), 1);
    }

    #[test]
    fn merged_categories_and_empty_input() {
        let mut v = Vocabulary::new();
        v.add(VocabularyEntry::new("left lung", ["Entity1"])).unwrap();
        v.add(VocabularyEntry::new("left lung", ["Location1", "Entity1"]))
            .unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.lookup("left lung"), ["Entity1", "Location1"]);
        assert!(match_spans(&v, "").is_empty());
        assert!(matches!(
            v.add(VocabularyEntry::new("", ["x"])),
            Err(VocabError::EmptySurfaceForm)
        ));
        assert!(matches!(
            v.add(VocabularyEntry::new("x", Vec::<String>::new())),
            Err(VocabError::EmptyCategories(_))
        ));
    }

    #[test]
    fn period_splitter() {
        let s = PeriodSplitter;
        assert_eq!(
            s.split("No effusion. Heart size is normal. "),
            ["No effusion.", "Heart size is normal."]
        );
        assert_eq!(s.split("Size 2.5 cm. stable"), ["Size 2.5 cm. stable"]);
        assert_eq!(
            s.split("Lines in place.  Tip at cavoatrial junction."),
            ["Lines in place.", "Tip at cavoatrial junction."]
        );
        assert!(s.split("   ").is_empty());
    }

    #[test]
    fn sentence_indices_and_unicode_offsets() {
        let v = vocab(&[("opacité", &["PF"]), ("effusion", &["PF"])]);
        let ms = match_spans(&v, "Une opacité . New effusion");
        assert_eq!(ms.len(), 2);
        assert_eq!((ms[0].sent_idx, ms[0].char_start, ms[0].char_end), (1, 4, 11));
        assert_eq!(ms[1].sent_idx, 2);
        assert_eq!(char_slice("Une opacité.", 4, 11), "opacité");
    }

    #[test]
    fn load_json_and_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("v.json");
        fs::write(&json, r#"{"opacity": ["Entity1"]}"#).unwrap();
        assert_eq!(load_vocabulary(&json).unwrap().len(), 1);

        let tsv = dir.path().join("v.tsv");
        fs::write(
            &tsv,
            "# surface\tcategory\tnormalized\nleft lung\tEntity1\nleft lung\tLocation1\tleft lung\n",
        )
        .unwrap();
        let v = load_vocabulary(&tsv).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.lookup("left lung"), ["Entity1", "Location1"]);

        let empty = dir.path().join("empty.json");
        fs::write(&empty, "").unwrap();
        assert!(load_vocabulary(&empty).unwrap().is_empty());

        let bad = dir.path().join("bad.json");
        fs::write(&bad, "{\"x\": 3}").unwrap();
        assert!(matches!(load_vocabulary(&bad), Err(VocabError::Format { .. })));
    }

    proptest! {
        #[test]
        fn offsets_reproduce_text(
            words in prop::collection::vec("[a-cA-C]{1,2}", 1..12),
            seps in prop::collection::vec(prop::sample::select(vec![" ", "  ", "\t"]), 12),
        ) {
            let mut sentence = String::new();
            for (i, w) in words.iter().enumerate() {
                if i > 0 { sentence.push_str(seps[i]); }
                sentence.push_str(w);
            }
            let v = Vocabulary::from_entries(
                words.iter().map(|w| VocabularyEntry::new(w.clone(), ["T"])),
            ).unwrap();
            let ms = match_sentence(&v, &sentence, 1);
            prop_assert!(!ms.is_empty());
            for m in &ms {
                prop_assert!(m.char_start < m.char_end);
                prop_assert_eq!(char_slice(&sentence, m.char_start, m.char_end), m.text.clone());
            }
            // deterministic
            prop_assert_eq!(ms, match_sentence(&v, &sentence, 1));
        }
    }
}
