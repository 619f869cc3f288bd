//! Joint entity → relation propagation rounds, augmented-corpus emission and
//! pseudo-label evaluation.
//!
//! Each round first propagates entity labels over span candidates, then
//! relation labels over span pairs. Pseudo-labels accumulate across rounds:
//! once emitted, a candidate keeps its label and joins the seed set of later
//! rounds. With `restrict_pairs`, relation candidates are the pairs of
//! entity-labeled spans only, so the relation graph grows as entity labels
//! accumulate.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::corpus::{write_corpus, ClassCatalog, Corpus, Entity, Relation};
use crate::embed::{FeatureComposer, TokenEmbeddingStore, DEFAULT_WIDTH_BUCKETS};
use crate::error::{Error, Result};
use crate::graph::{build_normalized, AffinityGraph, FeatureMatrix, DEFAULT_K, DEFAULT_SIGMA};
use crate::propagate::{
    decode, propagate_iterative, LabelMatrix, Threshold, DEFAULT_C, DEFAULT_MAX_ITERS, DEFAULT_TOL,
};
use crate::report::{
    estimate_rate, ConvergenceTrace, Evaluation, Prf, RoundReport, RunReport, TaskReport, Totals,
};
use crate::spans::{
    enumerate_corpus_spans, enumerate_pairs, enumerate_spans, partition_entity_nodes,
    partition_relation_nodes, NodePartition, PairCandidate, SpanCandidate,
};

pub const DEFAULT_MAX_WIDTH: usize = 8;
pub const PROPAGATED: &str = "propagated";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub k: usize,
    pub sigma: f64,
    pub c: f64,
    pub threshold: Threshold,
    pub max_width: usize,
    pub width_buckets: usize,
    pub rounds: usize,
    pub restrict_pairs: bool,
    /// Maximum relation candidates per sentence.
    pub pair_cap: Option<usize>,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            sigma: DEFAULT_SIGMA,
            c: DEFAULT_C,
            threshold: Threshold::default(),
            max_width: DEFAULT_MAX_WIDTH,
            width_buckets: DEFAULT_WIDTH_BUCKETS,
            rounds: 1,
            restrict_pairs: false,
            pair_cap: None,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return bad(format!("c must lie in (0, 1), got {}", self.c));
        }
        match self.threshold {
            Threshold::Fixed(g) | Threshold::Quantile(g) if !(0.0..=1.0).contains(&g) => {
                return bad(format!("threshold {g} outside [0, 1]"));
            }
            _ => {}
        }
        if self.max_width == 0 || self.width_buckets == 0 || self.rounds == 0 {
            return bad("max width, width buckets and rounds must be positive".into());
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        Ok(())
    }
}

/// Accumulated pseudo-labels: class index and confidence per candidate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoLabels {
    pub entities: BTreeMap<SpanCandidate, (usize, f64)>,
    pub relations: BTreeMap<PairCandidate, (usize, f64)>,
}

/// Last-round graphs and traces, for dumps and audits.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub entity_graph: Option<AffinityGraph>,
    pub relation_graph: Option<AffinityGraph>,
    pub entity_trace: ConvergenceTrace,
    pub relation_trace: ConvergenceTrace,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub augmented: Corpus,
    pub report: RunReport,
    pub pseudo_labels: PseudoLabels,
    pub diagnostics: Diagnostics,
}

/// Moves unlabeled nodes that already carry a pseudo-label into the seed set.
fn promote<C: Copy + Ord>(partition: &mut NodePartition<C>, known: &BTreeMap<C, (usize, f64)>) {
    if known.is_empty() {
        return;
    }
    let (seeds, rest): (Vec<C>, Vec<C>) = partition
        .unlabeled
        .iter()
        .partition(|c| known.contains_key(c));
    partition
        .labeled
        .extend(seeds.into_iter().map(|c| (c, known[&c].0)));
    partition.unlabeled = rest;
}

struct TaskRun<C> {
    report: TaskReport,
    emitted: Vec<(C, usize, f64)>,
    graph: Option<AffinityGraph>,
    trace: ConvergenceTrace,
}

fn run_task<C, F>(
    config: &RunConfig,
    partition: &NodePartition<C>,
    classes: usize,
    candidates: usize,
    feature: F,
    timings: &mut BTreeMap<String, f64>,
    prefix: &str,
) -> Result<TaskRun<C>>
where
    C: Copy + Send + Sync,
    F: Fn(&C) -> Vec<f64> + Sync,
{
    let mut report = TaskReport {
        status: "ok".into(),
        candidates,
        labeled_nodes: partition.labeled_count(),
        unlabeled_nodes: partition.unlabeled_count(),
        ..TaskReport::default()
    };
    let mut run = TaskRun {
        report: TaskReport::default(),
        emitted: Vec::new(),
        graph: None,
        trace: ConvergenceTrace::default(),
    };
    if classes == 0 || partition.labeled_count() == 0 {
        run.report = TaskReport {
            candidates,
            unlabeled_nodes: partition.unlabeled_count(),
            abstained: partition.unlabeled_count(),
            zero_rows: partition.unlabeled_count(),
            ..TaskReport::skipped("no seeds")
        };
        return Ok(run);
    }
    if partition.unlabeled_count() == 0 {
        run.report = report;
        return Ok(run);
    }

    let clock = Instant::now();
    let nodes: Vec<C> = partition.nodes().collect();
    let rows: Vec<Vec<f64>> = nodes.par_iter().map(&feature).collect();
    let features = FeatureMatrix::from_rows(&rows);
    timings.insert(format!("{prefix}.features"), ms(clock));

    let clock = Instant::now();
    let graph = build_normalized(&features, config.k, config.sigma)?;
    timings.insert(format!("{prefix}.graph"), ms(clock));
    report.edges = graph.edge_count();

    let clock = Instant::now();
    let z = LabelMatrix::seeds(partition, classes);
    let prop = propagate_iterative(&graph, &z, config.c, config.max_iters, config.tol)?;
    timings.insert(format!("{prefix}.propagate"), ms(clock));
    report.iterations = prop.iterations;
    report.residual = if prop.residual.is_finite() {
        prop.residual
    } else {
        0.0
    };
    report.converged = prop.converged;
    report.rate = estimate_rate(&prop.trace).ok().map(|e| e.rate);

    let decoded = decode(&prop.y, partition, config.threshold);
    report.threshold = decoded.threshold;
    report.emitted = decoded.labels.len();
    report.abstained = decoded.abstained();
    report.zero_rows = decoded.zero_rows;
    report.below_threshold = decoded.below_threshold;
    run.emitted = decoded
        .labels
        .iter()
        .map(|l| (l.node, l.class, l.confidence))
        .collect();
    run.report = report;
    run.graph = Some(graph);
    run.trace = prop.trace;
    Ok(run)
}

fn ms(clock: Instant) -> f64 {
    clock.elapsed().as_secs_f64() * 1e3
}

/// Runs `config.rounds` entity/relation rounds over `corpus` and builds the
/// augmented corpus. Gold annotations of unlabeled sentences are hidden from
/// propagation and only used for the report's evaluation block.
pub fn run_joint(
    config: &RunConfig,
    corpus: &Corpus,
    store: &TokenEmbeddingStore,
) -> Result<RunOutput> {
    config.validate()?;
    store.check_covers(corpus)?;
    let view = corpus.without_held_out_gold();
    let catalog = &corpus.catalog;
    let composer = FeatureComposer::new(&view, store, config.width_buckets);

    let mut report = RunReport {
        sentences: corpus.len(),
        labeled_sentences: corpus.labeled().count(),
        ..RunReport::default()
    };
    let mut pseudo = PseudoLabels::default();
    let mut diagnostics = Diagnostics::default();
    let entity_candidates = enumerate_corpus_spans(&view, config.max_width);
    let unlabeled_spans: Vec<SpanCandidate> = view
        .sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.labeled)
        .flat_map(|(i, s)| enumerate_spans(i, s, config.max_width))
        .collect();

    for round in 1..=config.rounds {
        let prefix = format!("round{round}");

        // entities
        let mut part = partition_entity_nodes(&view, &entity_candidates, config.max_width);
        if round == 1 {
            report.dropped_gold.extend(
                part.dropped
                    .iter()
                    .map(|d| format!("{}: {}", d.sentence_id, d.reason)),
            );
        }
        promote(&mut part, &pseudo.entities);
        let candidates = part.node_count();
        let entity = run_task(
            config,
            &part,
            catalog.entity_types.len(),
            candidates,
            |s| composer.span(s),
            &mut report.timings,
            &format!("{prefix}.entity"),
        )?;
        let mut entity_report = entity.report;
        for (span, class, conf) in entity.emitted {
            if pseudo.entities.insert_if_absent(span, (class, conf)) {
                entity_report.new_labels += 1;
            }
        }
        if entity.graph.is_some() {
            diagnostics.entity_graph = entity.graph;
            diagnostics.entity_trace = entity.trace;
        }

        // relations
        let restrict: Option<HashSet<SpanCandidate>> = config
            .restrict_pairs
            .then(|| pseudo.entities.keys().copied().collect());
        let pairs = enumerate_pairs(&unlabeled_spans, restrict.as_ref(), config.pair_cap);
        let mut part = partition_relation_nodes(&view, &pairs.pairs, config.max_width);
        if round == 1 {
            report.dropped_gold.extend(
                part.dropped
                    .iter()
                    .map(|d| format!("{}: {}", d.sentence_id, d.reason)),
            );
        }
        promote(&mut part, &pseudo.relations);
        let candidates = part.node_count();
        let relation = run_task(
            config,
            &part,
            catalog.relation_types.len(),
            candidates,
            |p| composer.pair(p),
            &mut report.timings,
            &format!("{prefix}.relation"),
        )?;
        let mut relation_report = relation.report;
        relation_report.truncated_pairs = pairs.truncated;
        for (pair, class, conf) in relation.emitted {
            if pseudo.relations.insert_if_absent(pair, (class, conf)) {
                relation_report.new_labels += 1;
            }
        }
        if relation.graph.is_some() {
            diagnostics.relation_graph = relation.graph;
            diagnostics.relation_trace = relation.trace;
        }

        report.rounds.push(RoundReport {
            round,
            entity: entity_report,
            relation: relation_report,
        });
    }

    let (augmented, unanchored) = build_augmented(&view, &pseudo, catalog);
    report.totals = Totals {
        entity_labels: pseudo.entities.len(),
        relation_labels: pseudo.relations.len(),
        relation_unanchored: unanchored,
    };
    if has_held_out_gold(corpus) {
        report.evaluation = Some(evaluate(&augmented, corpus));
    }
    Ok(RunOutput {
        augmented,
        report,
        pseudo_labels: pseudo,
        diagnostics,
    })
}

trait InsertIfAbsent<K, V> {
    fn insert_if_absent(&mut self, key: K, value: V) -> bool;
}

impl<K: Ord, V> InsertIfAbsent<K, V> for BTreeMap<K, V> {
    fn insert_if_absent(&mut self, key: K, value: V) -> bool {
        match self.entry(key) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(value);
                true
            }
            std::collections::btree_map::Entry::Occupied(_) => false,
        }
    }
}

fn has_held_out_gold(corpus: &Corpus) -> bool {
    corpus
        .unlabeled()
        .any(|s| !s.entities.is_empty() || !s.relations.is_empty())
}

/// Labeled sentences pass through unchanged; unlabeled sentences carry only
/// their pseudo-labels, tagged `"source": "propagated"` with a confidence.
/// Relation labels whose endpoints have no entity label are left out; their
/// number is returned alongside the corpus.
pub fn build_augmented(
    view: &Corpus,
    pseudo: &PseudoLabels,
    catalog: &ClassCatalog,
) -> (Corpus, usize) {
    let mut by_sentence: HashMap<usize, Vec<(SpanCandidate, usize, f64)>> = HashMap::new();
    for (span, &(class, conf)) in &pseudo.entities {
        by_sentence
            .entry(span.sentence)
            .or_default()
            .push((*span, class, conf));
    }
    let mut rel_by_sentence: HashMap<usize, Vec<(PairCandidate, usize, f64)>> = HashMap::new();
    for (pair, &(class, conf)) in &pseudo.relations {
        rel_by_sentence
            .entry(pair.sentence())
            .or_default()
            .push((*pair, class, conf));
    }

    let mut unanchored = 0;
    let mut sentences = Vec::with_capacity(view.len());
    for (i, s) in view.sentences.iter().enumerate() {
        let mut s = s.clone();
        if s.labeled {
            sentences.push(s);
            continue;
        }
        s.entities.clear();
        s.relations.clear();
        // BTreeMap iteration already orders spans by (start, end)
        let mut index = HashMap::new();
        for &(span, class, conf) in by_sentence.get(&i).map(Vec::as_slice).unwrap_or(&[]) {
            index.insert((span.start, span.end), s.entities.len());
            s.entities.push(Entity {
                source: Some(PROPAGATED.into()),
                confidence: Some(conf),
                ..Entity::new(span.start, span.end, catalog.entity_types[class].clone())
            });
        }
        for &(pair, class, conf) in rel_by_sentence.get(&i).map(Vec::as_slice).unwrap_or(&[]) {
            let head = index.get(&(pair.head.start, pair.head.end));
            let tail = index.get(&(pair.tail.start, pair.tail.end));
            match (head, tail) {
                (Some(&h), Some(&t)) => s.relations.push(Relation {
                    source: Some(PROPAGATED.into()),
                    confidence: Some(conf),
                    ..Relation::new(h, t, catalog.relation_types[class].clone())
                }),
                _ => unanchored += 1,
            }
        }
        sentences.push(s);
    }
    (
        Corpus {
            sentences,
            catalog: catalog.clone(),
        },
        unanchored,
    )
}

/// Writes the augmented corpus for `view` (a corpus whose unlabeled sentences
/// have no gold) and returns the number of unanchored relation labels.
pub fn emit_augmented(
    view: &Corpus,
    pseudo: &PseudoLabels,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let (augmented, unanchored) = build_augmented(view, pseudo, &view.catalog);
    write_corpus(path, &augmented)?;
    Ok(unanchored)
}

type EntityKey = (String, usize, usize, String);
type RelationKey = (String, (usize, usize), (usize, usize), String);

fn annotation_sets(
    sentences: &mut dyn Iterator<Item = &crate::corpus::Sentence>,
) -> (HashSet<EntityKey>, HashSet<RelationKey>) {
    let mut ents = HashSet::new();
    let mut rels = HashSet::new();
    for s in sentences {
        for e in &s.entities {
            ents.insert((s.id.clone(), e.start, e.end, e.kind.clone()));
        }
        for r in &s.relations {
            let (h, t) = (&s.entities[r.head], &s.entities[r.tail]);
            rels.insert((
                s.id.clone(),
                (h.start, h.end),
                (t.start, t.end),
                r.kind.clone(),
            ));
        }
    }
    (ents, rels)
}

/// Micro P/R/F1 of the annotations on unlabeled sentences of `predicted`
/// against the held-out gold on the unlabeled sentences of `gold`. An entity
/// matches on sentence, boundaries and type; a relation on sentence, both
/// endpoint spans and type.
pub fn evaluate(predicted: &Corpus, gold: &Corpus) -> Evaluation {
    let held_out: HashSet<&str> = gold.unlabeled().map(|s| s.id.as_str()).collect();
    let (gold_e, gold_r) = annotation_sets(&mut gold.unlabeled());
    let (pred_e, pred_r) = annotation_sets(
        &mut predicted
            .sentences
            .iter()
            .filter(|s| held_out.contains(s.id.as_str())),
    );
    let score = |p: usize, g: usize, c: usize| Prf::from_counts(p, g, c);
    Evaluation {
        entity: score(
            pred_e.len(),
            gold_e.len(),
            pred_e.intersection(&gold_e).count(),
        ),
        relation: score(
            pred_r.len(),
            gold_r.len(),
            pred_r.intersection(&gold_r).count(),
        ),
    }
}
