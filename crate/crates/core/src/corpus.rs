//! Partially annotated corpora: the JSONL format, validation and the
//! labeled/unlabeled split.
//!
//! Each line of a corpus file is one sentence:
//!
//! ```json
//! {"id":"doc1#0","tokens":["a","b"],"entities":[{"start":0,"end":0,"type":"Method"}],"relations":[],"labeled":true}
//! ```
//!
//! Span indices are token offsets with an inclusive `end`. Unknown keys are
//! ignored. Unlabeled sentences may carry held-out gold annotations; those are
//! only read by evaluation, never by propagation (see
//! [`Corpus::without_held_out_gold`]).

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A typed token span. `source` and `confidence` are set on propagated
/// annotations only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl Entity {
    pub fn new(start: usize, end: usize, kind: impl Into<String>) -> Self {
        Self {
            start,
            end,
            kind: kind.into(),
            source: None,
            confidence: None,
        }
    }
}

/// A typed, directed link between two entries of a sentence's entity list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub head: usize,
    pub tail: usize,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl Relation {
    pub fn new(head: usize, tail: usize, kind: impl Into<String>) -> Self {
        Self {
            head,
            tail,
            kind: kind.into(),
            source: None,
            confidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub entities: Vec<Entity>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    #[serde(default)]
    pub labeled: bool,
}

impl Sentence {
    /// Document key for document-level splits: the id prefix before `#`.
    pub fn document(&self) -> Option<&str> {
        self.id.split_once('#').map(|(doc, _)| doc)
    }

    fn violations(&self) -> Vec<String> {
        let n = self.tokens.len();
        let mut out = Vec::new();
        for (i, e) in self.entities.iter().enumerate() {
            if e.start > e.end || e.end >= n {
                out.push(format!(
                    "entity {i} span ({}, {}) out of range for {n} tokens",
                    e.start, e.end
                ));
            }
        }
        for (i, r) in self.relations.iter().enumerate() {
            if r.head >= self.entities.len() || r.tail >= self.entities.len() {
                out.push(format!("relation {i} references a missing entity"));
            } else if r.head == r.tail {
                out.push(format!("relation {i} has head == tail ({})", r.head));
            }
        }
        out
    }
}

/// Entity and relation class names. Column `i` of a label matrix is
/// `entity_types[i]` (or `relation_types[i]`); the null class has no column.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCatalog {
    pub entity_types: Vec<String>,
    pub relation_types: Vec<String>,
}

impl ClassCatalog {
    /// Catalog of every class observed in `sentences`, in order of first
    /// appearance.
    pub fn from_sentences(sentences: &[Sentence]) -> Self {
        let mut catalog = Self::default();
        for s in sentences {
            for e in &s.entities {
                if !catalog.entity_types.contains(&e.kind) {
                    catalog.entity_types.push(e.kind.clone());
                }
            }
            for r in &s.relations {
                if !catalog.relation_types.contains(&r.kind) {
                    catalog.relation_types.push(r.kind.clone());
                }
            }
        }
        catalog
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == name)
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relation_types.iter().position(|t| t == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub sentence_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub catalog: ClassCatalog,
}

impl Corpus {
    /// Builds a corpus with a catalog taken from the sentences themselves.
    pub fn new(sentences: Vec<Sentence>) -> Self {
        let catalog = ClassCatalog::from_sentences(&sentences);
        Self { sentences, catalog }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Copy of the corpus in which unlabeled sentences carry no annotations.
    /// This is the only view the propagation stages get to see.
    pub fn without_held_out_gold(&self) -> Corpus {
        let sentences = self
            .sentences
            .iter()
            .map(|s| {
                let mut s = s.clone();
                if !s.labeled {
                    s.entities.clear();
                    s.relations.clear();
                }
                s
            })
            .collect();
        Corpus {
            sentences,
            catalog: self.catalog.clone(),
        }
    }

    pub fn labeled(&self) -> impl Iterator<Item = &Sentence> {
        self.sentences.iter().filter(|s| s.labeled)
    }

    pub fn unlabeled(&self) -> impl Iterator<Item = &Sentence> {
        self.sentences.iter().filter(|s| !s.labeled)
    }

    /// Canonical JSONL rendering, one sentence per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&serde_json::to_string(s).expect("sentence serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parses JSONL corpus text. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let sentence: Sentence =
            serde_json::from_str(raw).map_err(|source| Error::Json { line, source })?;
        let n = sentence.tokens.len();
        if sentence
            .entities
            .iter()
            .any(|e| e.start > e.end || e.end >= n)
        {
            return Err(Error::EntityOutOfRange { line });
        }
        let m = sentence.entities.len();
        if sentence
            .relations
            .iter()
            .any(|r| r.head >= m || r.tail >= m)
        {
            return Err(Error::MissingEntity { line });
        }
        if sentence.relations.iter().any(|r| r.head == r.tail) {
            return Err(Error::SelfRelation { line });
        }
        if !seen.insert(sentence.id.clone()) {
            return Err(Error::DuplicateSentence {
                id: sentence.id,
                line,
            });
        }
        sentences.push(sentence);
    }
    Ok(Corpus::new(sentences))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(corpus.to_jsonl().as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Lists every broken sentence invariant. Overlapping entities are legal.
pub fn validate(corpus: &Corpus) -> Vec<Violation> {
    corpus
        .sentences
        .iter()
        .flat_map(|s| {
            s.violations().into_iter().map(|message| Violation {
                sentence_id: s.id.clone(),
                message,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitUnit {
    Sentence,
    Document,
}

impl std::str::FromStr for SplitUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" => Ok(SplitUnit::Sentence),
            "document" => Ok(SplitUnit::Document),
            other => Err(Error::Parameter(format!("unknown split unit {other:?}"))),
        }
    }
}

/// Splits a corpus into labeled and unlabeled parts.
///
/// `round(fraction * units)` units are labeled. Units are shuffled with a
/// seeded ChaCha stream, then chosen greedily: while some remaining unit adds
/// entity or relation classes not yet covered, the one adding the most (first
/// in shuffled order on ties) is taken; the rest of the budget is filled in
/// shuffled order. Both halves keep the input's sentence order and catalog,
/// and their `labeled` flags are overwritten.
pub fn split_corpus(
    corpus: &Corpus,
    labeled_fraction: f64,
    seed: u64,
    unit: SplitUnit,
) -> Result<(Corpus, Corpus)> {
    if corpus.is_empty() {
        return Err(Error::Split("corpus is empty".into()));
    }
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(Error::Split(format!(
            "labeled fraction {labeled_fraction} outside (0, 1]"
        )));
    }

    // unit index per sentence, units in first-appearance order
    let mut unit_keys: Vec<&str> = Vec::new();
    let mut unit_of = Vec::with_capacity(corpus.len());
    for (i, s) in corpus.sentences.iter().enumerate() {
        let key = match unit {
            SplitUnit::Sentence => s.id.as_str(),
            SplitUnit::Document => s.document().ok_or_else(|| {
                Error::Split(format!("sentence id {:?} has no document prefix", s.id))
            })?,
        };
        let pos = match unit {
            SplitUnit::Sentence => i,
            SplitUnit::Document => match unit_keys.iter().position(|k| *k == key) {
                Some(p) => p,
                None => unit_keys.len(),
            },
        };
        if pos == unit_keys.len() {
            unit_keys.push(key);
        }
        unit_of.push(pos);
    }
    let n_units = unit_keys.len();
    let target = ((labeled_fraction * n_units as f64).round() as usize).min(n_units);
    if target == 0 {
        return Err(Error::Split(format!(
            "fraction {labeled_fraction} of {n_units} units yields no labeled units"
        )));
    }

    let mut classes: Vec<BTreeSet<String>> = vec![BTreeSet::new(); n_units];
    for (s, &u) in corpus.sentences.iter().zip(&unit_of) {
        classes[u].extend(s.entities.iter().map(|e| format!("E:{}", e.kind)));
        classes[u].extend(s.relations.iter().map(|r| format!("R:{}", r.kind)));
    }

    let mut order: Vec<usize> = (0..n_units).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut chosen = vec![false; n_units];
    let mut covered: BTreeSet<String> = BTreeSet::new();
    let mut picked = 0;
    while picked < target {
        let best = order
            .iter()
            .filter(|&&u| !chosen[u])
            .map(|&u| (u, classes[u].difference(&covered).count()))
            .filter(|&(_, gain)| gain > 0)
            .fold(None, |best: Option<(usize, usize)>, cand| match best {
                Some(b) if b.1 >= cand.1 => Some(b),
                _ => Some(cand),
            });
        let Some((u, _)) = best else { break };
        chosen[u] = true;
        covered.extend(classes[u].iter().cloned());
        picked += 1;
    }
    for &u in &order {
        if picked == target {
            break;
        }
        if !chosen[u] {
            chosen[u] = true;
            picked += 1;
        }
    }

    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (s, &u) in corpus.sentences.iter().zip(&unit_of) {
        let mut s = s.clone();
        s.labeled = chosen[u];
        if s.labeled {
            labeled.push(s);
        } else {
            unlabeled.push(s);
        }
    }
    Ok((
        Corpus {
            sentences: labeled,
            catalog: corpus.catalog.clone(),
        },
        Corpus {
            sentences: unlabeled,
            catalog: corpus.catalog.clone(),
        },
    ))
}

/// Recombines a split into one corpus in the original sentence order.
pub fn merge_split(original: &Corpus, labeled: &Corpus) -> Corpus {
    let ids: HashSet<&str> = labeled.sentences.iter().map(|s| s.id.as_str()).collect();
    let sentences = original
        .sentences
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.labeled = ids.contains(s.id.as_str());
            s
        })
        .collect();
    Corpus {
        sentences,
        catalog: original.catalog.clone(),
    }
}
