//! Windowed co-occurrence counting and positive PMI matrices.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::{Document, Vocabulary};
use crate::error::{Error, Result};
use crate::par;
use crate::sparse::SymCsr;

/// Symmetric pair counts for one slice. Only pairs `i < j` are stored;
/// `count(i, j) == count(j, i)` and the diagonal is always zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CooccurrenceCounts {
    pub slice: usize,
    pub n: usize,
    pairs: BTreeMap<(u32, u32), u64>,
}

impl CooccurrenceCounts {
    pub fn new(slice: usize, n: usize) -> Self {
        CooccurrenceCounts {
            slice,
            n,
            pairs: BTreeMap::new(),
        }
    }

    /// Add `c` to both `(i, j)` and `(j, i)`. Self pairs are ignored.
    pub fn add(&mut self, i: u32, j: u32, c: u64) {
        if i == j || c == 0 {
            return;
        }
        let key = if i < j { (i, j) } else { (j, i) };
        *self.pairs.entry(key).or_default() += c;
    }

    pub fn count(&self, i: u32, j: u32) -> u64 {
        let key = if i < j { (i, j) } else { (j, i) };
        self.pairs.get(&key).copied().unwrap_or(0)
    }

    pub fn pairs(&self) -> impl Iterator<Item = ((u32, u32), u64)> + '_ {
        self.pairs.iter().map(|(&k, &v)| (k, v))
    }

    pub fn row_sums(&self) -> Vec<u64> {
        let mut sums = vec![0u64; self.n];
        for (&(i, j), &c) in &self.pairs {
            sums[i as usize] += c;
            sums[j as usize] += c;
        }
        sums
    }

    /// Sum over the full symmetric matrix (each unordered pair twice).
    pub fn total(&self) -> u64 {
        2 * self.pairs.values().sum::<u64>()
    }

    pub fn scaled(&self, factor: u64) -> Self {
        let mut out = self.clone();
        out.pairs.values_mut().for_each(|c| *c *= factor);
        out
    }
}

fn count_docs(docs: &[Document], vocab: &Vocabulary, window: usize) -> HashMap<(u32, u32), u64> {
    let mut counts = HashMap::new();
    for doc in docs {
        let ids: Vec<Option<u32>> = vocab.encode(&doc.tokens).collect();
        for (p, a) in ids.iter().enumerate() {
            let Some(a) = *a else { continue };
            for b in ids.iter().skip(p + 1).take(window).flatten() {
                if a != *b {
                    let key = if a < *b { (a, *b) } else { (*b, a) };
                    *counts.entry(key).or_default() += 1;
                }
            }
        }
    }
    counts
}

const DOC_SHARD: usize = 64;

/// Count every in-vocabulary pair within `window` positions of each other
/// in the same document. Out-of-vocabulary tokens still occupy positions.
pub fn count_cooccurrences(slice: usize, docs: &[Document], vocab: &Vocabulary, window: usize) -> Result<CooccurrenceCounts> {
    if window == 0 {
        return Err(Error::InvalidArgument("co-occurrence window must be >= 1".into()));
    }
    let shards: Vec<&[Document]> = docs.chunks(DOC_SHARD).collect();
    let partial = par::map_slice(&shards, |shard| count_docs(shard, vocab, window));
    let mut counts = CooccurrenceCounts::new(slice, vocab.len());
    for shard in partial {
        for ((i, j), c) in shard {
            counts.add(i, j, c);
        }
    }
    Ok(counts)
}

/// Positive PMI matrix `Y(t)`; every stored entry is finite and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PpmiMatrix {
    pub slice: usize,
    matrix: SymCsr,
}

/// `max(0, ln(c_ij * total / (r_i * r_j)) - shift)`, zeros dropped.
pub fn build_ppmi(counts: &CooccurrenceCounts, shift: f64) -> Result<PpmiMatrix> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::EmptyCooccurrence);
    }
    let rows = counts.row_sums();
    let total = total as f64;
    let entries = counts.pairs().filter_map(|((i, j), c)| {
        let ratio = (c as f64 * total) / (rows[i as usize] as f64 * rows[j as usize] as f64);
        let v = ratio.ln() - shift;
        (v > 0.0).then_some((i, j, v))
    });
    Ok(PpmiMatrix {
        slice: counts.slice,
        matrix: SymCsr::from_upper(counts.n, entries),
    })
}

impl PpmiMatrix {
    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn matrix(&self) -> &SymCsr {
        &self.matrix
    }

    pub fn into_matrix(self) -> SymCsr {
        self.matrix
    }

    /// Header `t n nnz`, then one `i j value` line per stored pair with
    /// `i < j`, sorted by `(i, j)`.
    pub fn to_text(&self) -> String {
        let upper: Vec<_> = self.matrix.upper().collect();
        let mut out = String::new();
        writeln!(out, "{} {} {}", self.slice, self.n(), upper.len()).unwrap();
        for (i, j, v) in upper {
            writeln!(out, "{i} {j} {v:.16e}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |d: String| Error::malformed("sparse matrix", d);
        let mut lines = text.lines();
        let header: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("missing header".into()))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad(format!("header field {s:?}"))))
            .collect::<Result<_>>()?;
        let [slice, n, nnz] = header[..] else {
            return Err(bad("header must be `t n nnz`".into()));
        };
        let mut trip = Vec::with_capacity(nnz);
        let mut prev: Option<(u32, u32)> = None;
        for (lineno, line) in lines.enumerate() {
            let mut f = line.split_whitespace();
            let (Some(i), Some(j), Some(v), None) = (f.next(), f.next(), f.next(), f.next()) else {
                return Err(bad(format!("line {}", lineno + 2)));
            };
            let i: u32 = i.parse().map_err(|_| bad(format!("line {}", lineno + 2)))?;
            let j: u32 = j.parse().map_err(|_| bad(format!("line {}", lineno + 2)))?;
            let v: f64 = v.parse().map_err(|_| bad(format!("line {}", lineno + 2)))?;
            if i >= j || j as usize >= n || !(v.is_finite() && v > 0.0) || prev.is_some_and(|p| p >= (i, j)) {
                return Err(bad(format!("line {}", lineno + 2)));
            }
            prev = Some((i, j));
            trip.push((i, j, v));
        }
        if trip.len() != nnz {
            return Err(bad(format!("expected {nnz} entries, found {}", trip.len())));
        }
        Ok(PpmiMatrix {
            slice,
            matrix: SymCsr::from_upper(n, trip),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
