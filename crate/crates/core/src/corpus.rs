//! Document ingestion, token normalization, vocabulary construction and
//! time slicing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Trains embeddings only.
    Background,
    /// Also analyzed as a team product.
    #[default]
    Project,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub year: i32,
    pub tokens: Vec<String>,
    pub creator_ids: Vec<String>,
    pub categories: Vec<String>,
    pub outcome: Option<f64>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationRules {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub min_token_len: usize,
}

impl Default for NormalizationRules {
    fn default() -> Self {
        NormalizationRules {
            lowercase: true,
            strip_punctuation: true,
            min_token_len: 2,
        }
    }
}

/// Split on whitespace, fold case, trim non-alphanumeric characters from
/// both ends of each token and drop tokens shorter than `min_token_len`
/// characters.
pub fn normalize_tokens(raw_text: &str, rules: &NormalizationRules) -> Vec<String> {
    raw_text
        .split_whitespace()
        .filter_map(|word| {
            let word = if rules.strip_punctuation {
                word.trim_matches(|c: char| !c.is_alphanumeric())
            } else {
                word
            };
            let word = if rules.lowercase {
                word.to_lowercase()
            } else {
                word.to_string()
            };
            (word.chars().count() >= rules.min_token_len).then_some(word)
        })
        .collect()
}

/// Input field names for [`ingest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldMap {
    pub doc_id: String,
    pub year: String,
    pub text: String,
    pub creators: String,
    pub categories: String,
    pub outcome: String,
    pub split: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            doc_id: "doc_id".into(),
            year: "year".into(),
            text: "text".into(),
            creators: "creators".into(),
            categories: "categories".into(),
            outcome: "outcome".into(),
            split: "split".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
    /// Lines that failed to parse into a document.
    pub skipped: usize,
}

fn string_list(value: Option<&Value>) -> Option<Vec<String>> {
    match value {
        None | Some(Value::Null) => Some(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect(),
        Some(_) => None,
    }
}

fn parse_record(line: &str, fields: &FieldMap, rules: &NormalizationRules) -> Option<Document> {
    let value: Value = serde_json::from_str(line).ok()?;
    let obj = value.as_object()?;
    let doc_id = obj.get(&fields.doc_id)?.as_str()?.to_string();
    let year = i32::try_from(obj.get(&fields.year)?.as_i64()?).ok()?;
    let text = obj.get(&fields.text)?.as_str()?;
    let creator_ids = string_list(obj.get(&fields.creators))?;
    let categories = string_list(obj.get(&fields.categories))?;
    let outcome = match obj.get(&fields.outcome) {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_f64()?),
    };
    let split = match obj.get(&fields.split) {
        None | Some(Value::Null) => Split::Project,
        Some(v) => match v.as_str()? {
            "background" => Split::Background,
            "project" => Split::Project,
            _ => return None,
        },
    };
    Some(Document {
        doc_id,
        year,
        tokens: normalize_tokens(text, rules),
        creator_ids,
        categories,
        outcome,
        split,
    })
}

/// Read line-delimited JSON records. Blank lines are ignored; lines that do
/// not parse are counted in [`Corpus::skipped`].
pub fn ingest(path: &Path, fields: &FieldMap, rules: &NormalizationRules) -> Result<Corpus> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let lines = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = lines
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .collect();

    let parsed = par::map_slice(&lines, |line| parse_record(line, fields, rules));
    let mut seen = HashSet::new();
    let mut corpus = Corpus::default();
    for doc in parsed {
        match doc {
            Some(doc) => {
                if !seen.insert(doc.doc_id.clone()) {
                    return Err(Error::DuplicateDocId(doc.doc_id));
                }
                corpus.documents.push(doc);
            }
            None => corpus.skipped += 1,
        }
    }
    if corpus.documents.is_empty() {
        return Err(Error::ZeroValidRecords(path.to_path_buf()));
    }
    if corpus.skipped > 0 {
        log::warn!("{}: skipped {} malformed lines", path.display(), corpus.skipped);
    }
    Ok(corpus)
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for doc in &documents {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(Error::DuplicateDocId(doc.doc_id.clone()));
            }
        }
        Ok(Corpus {
            documents,
            skipped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Drop documents without any in-vocabulary token; returns the number
    /// dropped.
    pub fn retain_in_vocab(&mut self, vocab: &Vocabulary) -> usize {
        let before = self.documents.len();
        self.documents
            .retain(|d| d.tokens.iter().any(|t| vocab.index_of(t).is_some()));
        before - self.documents.len()
    }

    /// Normalized documents, one JSON object per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&serde_json::to_string(doc).expect("document serializes"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let documents = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| Error::malformed("normalized corpus", e.to_string()))
            })
            .collect::<Result<Vec<Document>>>()?;
        Corpus::new(documents)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    frequencies: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from `(token, frequency)` pairs, ordering by descending
    /// frequency then token.
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (tok, _))| (tok.clone(), i as u32))
            .collect();
        let (tokens, frequencies) = entries.into_iter().unzip();
        Vocabulary {
            tokens,
            frequencies,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: u32) -> &str {
        &self.tokens[index as usize]
    }

    pub fn frequency(&self, index: u32) -> u64 {
        self.frequencies[index as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Indices of the in-vocabulary tokens of `tokens`, in order.
    pub fn encode<'a>(&'a self, tokens: &'a [String]) -> impl Iterator<Item = Option<u32>> + 'a {
        tokens.iter().map(|t| self.index_of(t))
    }

    /// `index\ttoken\tfrequency` lines sorted by index.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (tok, freq)) in self.tokens.iter().zip(&self.frequencies).enumerate() {
            writeln!(out, "{i}\t{tok}\t{freq}").unwrap();
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut frequencies = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let bad = || Error::malformed("vocabulary", format!("line {}", lineno + 1));
            let mut parts = line.split('\t');
            let idx: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let tok = parts.next().ok_or_else(bad)?;
            let freq: u64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if idx != tokens.len() || parts.next().is_some() {
                return Err(bad());
            }
            tokens.push(tok.to_string());
            frequencies.push(freq);
        }
        let index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        if index.len() != tokens.len() {
            return Err(Error::malformed("vocabulary", "duplicate token"));
        }
        Ok(Vocabulary {
            tokens,
            frequencies,
            index,
        })
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }

    /// SHA-256 over the ordered token list; binds embeddings to the
    /// vocabulary they were trained on.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for tok in &self.tokens {
            hasher.update(tok.as_bytes());
            hasher.update(b"\n");
        }
        hasher.finalize().into()
    }
}

fn count_tokens(docs: &[Document]) -> HashMap<String, u64> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in docs {
        for tok in &doc.tokens {
            *counts.entry(tok.clone()).or_default() += 1;
        }
    }
    counts
}

const COUNT_SHARD: usize = 256;

/// Keep every token whose total frequency is at least `min_freq`.
pub fn build_vocabulary(corpus: &Corpus, min_freq: u64) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let shards: Vec<&[Document]> = corpus.documents.chunks(COUNT_SHARD).collect();
    let partial = par::map_slice(&shards, |shard| count_tokens(shard));
    let mut counts: HashMap<String, u64> = HashMap::new();
    for shard in partial {
        for (tok, c) in shard {
            *counts.entry(tok).or_default() += c;
        }
    }
    let vocab = Vocabulary::from_counts(counts.into_iter().filter(|&(_, c)| c >= min_freq));
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary(min_freq));
    }
    Ok(vocab)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub index: usize,
    pub start_year: i32,
    pub end_year: i32,
    pub documents: Vec<Document>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicedCorpus {
    pub start_year: i32,
    pub end_year: i32,
    pub window_len: u32,
    pub slices: Vec<Slice>,
    /// Documents whose year fell outside the span.
    pub dropped: usize,
    creator_docs: BTreeMap<String, Vec<(usize, usize)>>,
}

/// Partition into `ceil(span / window_len)` contiguous windows; the last
/// window is truncated at `end_year`.
pub fn slice_corpus(corpus: &Corpus, start_year: i32, end_year: i32, window_len: u32) -> Result<SlicedCorpus> {
    if end_year < start_year {
        return Err(Error::InvalidArgument(format!(
            "end_year {end_year} before start_year {start_year}"
        )));
    }
    if window_len == 0 {
        return Err(Error::InvalidArgument("window_len must be >= 1".into()));
    }
    let span = (end_year - start_year + 1) as u32;
    let n_slices = span.div_ceil(window_len) as usize;
    let mut slices: Vec<Slice> = (0..n_slices)
        .map(|t| {
            let lo = start_year + (t as u32 * window_len) as i32;
            Slice {
                index: t,
                start_year: lo,
                end_year: (lo + window_len as i32 - 1).min(end_year),
                documents: Vec::new(),
            }
        })
        .collect();
    let mut dropped = 0;
    for doc in &corpus.documents {
        if doc.year < start_year || doc.year > end_year {
            dropped += 1;
            continue;
        }
        let t = ((doc.year - start_year) as u32 / window_len) as usize;
        slices[t].documents.push(doc.clone());
    }
    if dropped > 0 {
        log::info!("dropped {dropped} documents outside {start_year}-{end_year}");
    }
    let mut creator_docs: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for slice in &slices {
        for (d, doc) in slice.documents.iter().enumerate() {
            for c in &doc.creator_ids {
                creator_docs.entry(c.clone()).or_default().push((slice.index, d));
            }
        }
    }
    Ok(SlicedCorpus {
        start_year,
        end_year,
        window_len,
        slices,
        dropped,
        creator_docs,
    })
}

impl SlicedCorpus {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn total_documents(&self) -> usize {
        self.slices.iter().map(|s| s.documents.len()).sum()
    }

    pub fn creators(&self) -> impl Iterator<Item = &str> {
        self.creator_docs.keys().map(String::as_str)
    }

    /// All documents listing `creator_id` in slices `[first, last]`.
    pub fn creator_docs_in(&self, creator_id: &str, first: usize, last: usize) -> Vec<(usize, &Document)> {
        self.creator_docs
            .get(creator_id)
            .into_iter()
            .flatten()
            .filter(|&&(t, _)| t >= first && t <= last)
            .map(|&(t, d)| (t, &self.slices[t].documents[d]))
            .collect()
    }

    /// Documents listing `creator_id` from the `lookback` slices strictly
    /// before `as_of`, paired with their slice index.
    pub fn creator_history(&self, creator_id: &str, as_of: usize, lookback: usize) -> Vec<(usize, &Document)> {
        if as_of == 0 || lookback == 0 {
            return Vec::new();
        }
        self.creator_docs_in(creator_id, as_of.saturating_sub(lookback), as_of - 1)
    }
}
