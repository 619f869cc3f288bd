//! Token embedding files and span/pair feature composition.
//!
//! Embedding file layout (little-endian):
//!
//! ```text
//! "JPEM"  u32 version=1  u32 dim  u64 sentence_count
//! repeated: u32 id_len  id (UTF-8)  u32 token_count  token_count*dim f32 (row-major)
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::spans::{PairCandidate, SpanCandidate};

pub const MAGIC: &[u8; 4] = b"JPEM";
pub const VERSION: u32 = 1;
pub const DEFAULT_WIDTH_BUCKETS: usize = 6;

/// Per-sentence token embedding matrices, kept in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingStore {
    dim: usize,
    entries: Vec<(String, usize, Vec<f32>)>,
    index: HashMap<String, usize>,
}

/// Borrowed `n x dim` matrix of one sentence.
#[derive(Debug, Clone, Copy)]
pub struct SentenceEmbeddings<'a> {
    pub dim: usize,
    pub values: &'a [f32],
}

impl<'a> SentenceEmbeddings<'a> {
    pub fn token_count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn token(&self, k: usize) -> &'a [f32] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

impl TokenEmbeddingStore {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds (or replaces) the matrix of sentence `id`; `values` holds
    /// `tokens * dim` row-major entries.
    pub fn insert(&mut self, id: impl Into<String>, values: Vec<f32>) -> Result<()> {
        let id = id.into();
        if !values.len().is_multiple_of(self.dim) {
            return Err(Error::Embedding(format!(
                "{} values for sentence {id} is not a multiple of dim {}",
                values.len(),
                self.dim
            )));
        }
        let n = values.len() / self.dim;
        match self.index.get(&id) {
            Some(&i) => self.entries[i] = (id, n, values),
            None => {
                self.index.insert(id.clone(), self.entries.len());
                self.entries.push((id, n, values));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<SentenceEmbeddings<'_>> {
        self.index.get(id).map(|&i| SentenceEmbeddings {
            dim: self.dim,
            values: &self.entries[i].2,
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _, _)| id.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (id, n, values) in &self.entries {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&(*n as u32).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "header")? != MAGIC {
            return Err(Error::Embedding("bad magic bytes".into()));
        }
        let version = r.u32("header")?;
        if version != VERSION {
            return Err(Error::Embedding(format!("unsupported version {version}")));
        }
        let dim = r.u32("header")? as usize;
        if dim == 0 {
            return Err(Error::Embedding("dimension must be positive".into()));
        }
        let count = r.u64("header")?;
        let mut store = Self::new(dim);
        for k in 0..count {
            let at = format!("sentence {k}");
            let id_len = r.u32(&at)? as usize;
            let id = std::str::from_utf8(r.take(id_len, &at)?)
                .map_err(|_| Error::Embedding(format!("{at}: id is not UTF-8")))?
                .to_string();
            let n = r.u32(&at)? as usize;
            let raw = r.take(n * dim * 4, &at)?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Embedding(format!(
                    "non-finite value, sentence {id}, token {}",
                    pos / dim
                )));
            }
            if store.index.contains_key(&id) {
                return Err(Error::Embedding(format!("duplicate sentence {id}")));
            }
            store.insert(id, values)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Embedding(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(store)
    }

    /// Checks that every corpus sentence has a matrix with matching row count.
    pub fn check_covers(&self, corpus: &Corpus) -> Result<()> {
        for s in &corpus.sentences {
            let m = self
                .get(&s.id)
                .ok_or_else(|| Error::MissingEmbedding(s.id.clone()))?;
            if m.token_count() != s.tokens.len() {
                return Err(Error::TokenCount {
                    id: s.id.clone(),
                    found: m.token_count(),
                    expected: s.tokens.len(),
                });
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, at: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Embedding(format!("unexpected EOF at {at}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, at: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, at)?.try_into().unwrap()))
    }

    fn u64(&mut self, at: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, at)?.try_into().unwrap()))
    }
}

/// Reads an embedding file and checks it against the corpus.
pub fn read_embeddings(path: impl AsRef<Path>, corpus: &Corpus) -> Result<TokenEmbeddingStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let store = TokenEmbeddingStore::from_bytes(&bytes)?;
    store.check_covers(corpus)?;
    Ok(store)
}

pub fn write_embeddings(path: impl AsRef<Path>, store: &TokenEmbeddingStore) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, store.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Bucket of a span width: 1, 2, 3, 4, 5-8, 9+.
pub fn width_bucket(width: usize) -> usize {
    match width {
        0 | 1 => 0,
        2..=4 => width - 1,
        5..=8 => 4,
        _ => 5,
    }
}

/// One-hot width encoding of length `buckets`. With fewer than six buckets the
/// overflow buckets merge into the last one; extra buckets stay zero.
pub fn width_feature(width: usize, buckets: usize) -> Vec<f64> {
    let mut out = vec![0.0; buckets];
    if buckets > 0 {
        out[width_bucket(width).min(buckets - 1)] = 1.0;
    }
    out
}

/// `[x_start; x_end; width one-hot]`, length `2d + buckets`.
pub fn span_feature(
    emb: SentenceEmbeddings<'_>,
    start: usize,
    end: usize,
    buckets: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * emb.dim + buckets);
    out.extend(emb.token(start).iter().map(|&v| f64::from(v)));
    out.extend(emb.token(end).iter().map(|&v| f64::from(v)));
    out.extend(width_feature(end - start + 1, buckets));
    out
}

/// Mean embedding of the tokens strictly between two spans, in either order.
/// Zero when the spans touch or overlap.
pub fn gap_context(emb: SentenceEmbeddings<'_>, a: (usize, usize), b: (usize, usize)) -> Vec<f64> {
    let (left, right) = if a.1 < b.0 { (a, b) } else { (b, a) };
    let mut pooled = vec![0.0; emb.dim];
    if left.1 < right.0 {
        let gap = left.1 + 1..right.0;
        let count = gap.len();
        if count > 0 {
            for k in gap {
                for (p, &v) in pooled.iter_mut().zip(emb.token(k)) {
                    *p += f64::from(v);
                }
            }
            for p in &mut pooled {
                *p /= count as f64;
            }
        }
    }
    pooled
}

/// Affinity block: the element-wise product of the two span features after
/// each has its start-token block replaced by the pooled gap context.
pub fn affinity(head: &[f64], tail: &[f64], context: &[f64]) -> Vec<f64> {
    let d = context.len();
    head.iter()
        .zip(tail)
        .enumerate()
        .map(|(i, (&h, &t))| {
            if i < d {
                context[i] * context[i]
            } else {
                h * t
            }
        })
        .collect()
}

/// `[h_head; h_tail; affinity]`, length `3 * |h|`.
pub fn pair_feature(
    emb: SentenceEmbeddings<'_>,
    pair: &PairCandidate,
    head: &[f64],
    tail: &[f64],
) -> Vec<f64> {
    let context = gap_context(
        emb,
        (pair.head.start, pair.head.end),
        (pair.tail.start, pair.tail.end),
    );
    let mut out = Vec::with_capacity(3 * head.len());
    out.extend_from_slice(head);
    out.extend_from_slice(tail);
    out.extend(affinity(head, tail, &context));
    out
}

/// Composes features for candidates of a corpus whose sentences the store
/// covers.
#[derive(Debug, Clone, Copy)]
pub struct FeatureComposer<'a> {
    pub corpus: &'a Corpus,
    pub store: &'a TokenEmbeddingStore,
    pub width_buckets: usize,
}

impl<'a> FeatureComposer<'a> {
    pub fn new(corpus: &'a Corpus, store: &'a TokenEmbeddingStore, width_buckets: usize) -> Self {
        Self {
            corpus,
            store,
            width_buckets,
        }
    }

    fn sentence(&self, index: usize) -> SentenceEmbeddings<'a> {
        let id = &self.corpus.sentences[index].id;
        self.store
            .get(id)
            .unwrap_or_else(|| panic!("no embeddings for sentence {id}"))
    }

    pub fn span_len(&self) -> usize {
        2 * self.store.dim() + self.width_buckets
    }

    pub fn span(&self, span: &SpanCandidate) -> Vec<f64> {
        span_feature(
            self.sentence(span.sentence),
            span.start,
            span.end,
            self.width_buckets,
        )
    }

    pub fn pair(&self, pair: &PairCandidate) -> Vec<f64> {
        let head = self.span(&pair.head);
        let tail = self.span(&pair.tail);
        pair_feature(self.sentence(pair.sentence()), pair, &head, &tail)
    }
}
