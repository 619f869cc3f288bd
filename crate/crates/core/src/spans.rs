//! Entity-span and relation-pair candidates, and their split into seed
//! (labeled) and unlabeled graph nodes.

use std::collections::HashSet;

use crate::corpus::{Corpus, Sentence};

/// Token span `start..=end` of the sentence at position `sentence` in the
/// corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpanCandidate {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

impl SpanCandidate {
    pub fn new(sentence: usize, start: usize, end: usize) -> Self {
        Self {
            sentence,
            start,
            end,
        }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Ordered span pair within one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairCandidate {
    pub head: SpanCandidate,
    pub tail: SpanCandidate,
}

impl PairCandidate {
    pub fn sentence(&self) -> usize {
        self.head.sentence
    }
}

/// Gold annotation that could not become a seed node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedGold {
    pub sentence_id: String,
    pub reason: String,
}

/// Graph nodes of one task. Seeds come first in node order, so node `i < N`
/// is `labeled[i]` and node `N + j` is `unlabeled[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePartition<C> {
    pub labeled: Vec<(C, usize)>,
    pub unlabeled: Vec<C>,
    pub dropped: Vec<DroppedGold>,
}

impl<C: Copy> NodePartition<C> {
    /// N
    pub fn labeled_count(&self) -> usize {
        self.labeled.len()
    }

    /// M
    pub fn unlabeled_count(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn node_count(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    /// Candidates in node order.
    pub fn nodes(&self) -> impl Iterator<Item = C> + '_ {
        self.labeled
            .iter()
            .map(|&(c, _)| c)
            .chain(self.unlabeled.iter().copied())
    }
}

/// All spans of width `1..=min(max_width, n)` in `(start, end)` order.
pub fn enumerate_spans(
    sentence_index: usize,
    sentence: &Sentence,
    max_width: usize,
) -> Vec<SpanCandidate> {
    let n = sentence.tokens.len();
    let mut out = Vec::new();
    for start in 0..n {
        for end in start..n.min(start + max_width) {
            out.push(SpanCandidate::new(sentence_index, start, end));
        }
    }
    out
}

/// Spans of every sentence, in corpus order.
pub fn enumerate_corpus_spans(corpus: &Corpus, max_width: usize) -> Vec<SpanCandidate> {
    corpus
        .sentences
        .iter()
        .enumerate()
        .flat_map(|(i, s)| enumerate_spans(i, s, max_width))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<PairCandidate>,
    /// Set when some sentence hit the per-sentence cap.
    pub truncated: bool,
}

/// Ordered pairs of distinct spans sharing a sentence.
///
/// `spans` must be grouped by sentence. With `restrict_to`, both endpoints
/// must be members; with `cap`, each sentence contributes at most `cap` pairs
/// in enumeration order.
pub fn enumerate_pairs(
    spans: &[SpanCandidate],
    restrict_to: Option<&HashSet<SpanCandidate>>,
    cap: Option<usize>,
) -> PairSet {
    let mut set = PairSet::default();
    let kept: Vec<SpanCandidate> = spans
        .iter()
        .filter(|s| restrict_to.is_none_or(|r| r.contains(s)))
        .copied()
        .collect();
    for group in kept.chunk_by(|a, b| a.sentence == b.sentence) {
        let mut emitted = 0usize;
        'outer: for head in group {
            for tail in group {
                if head == tail {
                    continue;
                }
                if cap.is_some_and(|c| emitted >= c) {
                    set.truncated = true;
                    break 'outer;
                }
                set.pairs.push(PairCandidate {
                    head: *head,
                    tail: *tail,
                });
                emitted += 1;
            }
        }
    }
    set
}

/// Seeds are the gold entities of labeled sentences; unlabeled nodes are the
/// candidates drawn from unlabeled sentences. Non-gold candidates of labeled
/// sentences stay out of the graph.
pub fn partition_entity_nodes(
    corpus: &Corpus,
    candidates: &[SpanCandidate],
    max_width: usize,
) -> NodePartition<SpanCandidate> {
    let mut labeled = Vec::new();
    let mut seen = HashSet::new();
    let mut dropped = Vec::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        if !s.labeled {
            continue;
        }
        for e in &s.entities {
            let span = SpanCandidate::new(i, e.start, e.end);
            if span.width() > max_width {
                dropped.push(DroppedGold {
                    sentence_id: s.id.clone(),
                    reason: format!(
                        "entity ({}, {}) wider than {max_width} tokens",
                        e.start, e.end
                    ),
                });
                continue;
            }
            let class = corpus
                .catalog
                .entity_index(&e.kind)
                .expect("catalog covers corpus classes");
            if seen.insert((span, class)) {
                labeled.push((span, class));
            }
        }
    }
    let unlabeled = candidates
        .iter()
        .filter(|c| !corpus.sentences[c.sentence].labeled)
        .copied()
        .collect();
    NodePartition {
        labeled,
        unlabeled,
        dropped,
    }
}

/// Relation counterpart of [`partition_entity_nodes`]: seeds are gold
/// relations of labeled sentences, unlabeled nodes the pairs of unlabeled
/// sentences.
pub fn partition_relation_nodes(
    corpus: &Corpus,
    pairs: &[PairCandidate],
    max_width: usize,
) -> NodePartition<PairCandidate> {
    let mut labeled = Vec::new();
    let mut seen = HashSet::new();
    let mut dropped = Vec::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        if !s.labeled {
            continue;
        }
        for r in &s.relations {
            let (h, t) = (&s.entities[r.head], &s.entities[r.tail]);
            let head = SpanCandidate::new(i, h.start, h.end);
            let tail = SpanCandidate::new(i, t.start, t.end);
            let reason = if head.width() > max_width || tail.width() > max_width {
                Some(format!("relation endpoint wider than {max_width} tokens"))
            } else if head == tail {
                Some("relation endpoints share one span".to_string())
            } else {
                None
            };
            if let Some(reason) = reason {
                dropped.push(DroppedGold {
                    sentence_id: s.id.clone(),
                    reason,
                });
                continue;
            }
            let class = corpus
                .catalog
                .relation_index(&r.kind)
                .expect("catalog covers corpus classes");
            let pair = PairCandidate { head, tail };
            if seen.insert((pair, class)) {
                labeled.push((pair, class));
            }
        }
    }
    let unlabeled = pairs
        .iter()
        .filter(|p| !corpus.sentences[p.sentence()].labeled)
        .copied()
        .collect();
    NodePartition {
        labeled,
        unlabeled,
        dropped,
    }
}
