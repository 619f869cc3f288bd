use std::collections::BTreeMap;

use jointprop_core::corpus::{
    load_corpus, parse_corpus, validate, Corpus, Entity, Relation, Sentence,
};
use jointprop_core::diagnostics::synthetic::{joint_corpus, JointCorpusSpec};
use jointprop_core::pipeline::{
    build_augmented, emit_augmented, evaluate, run_joint, PseudoLabels, RunConfig,
};
use jointprop_core::propagate::Threshold;
use jointprop_core::report::render_report;
use jointprop_core::spans::{PairCandidate, SpanCandidate};

fn toy() -> (Corpus, jointprop_core::embed::TokenEmbeddingStore) {
    joint_corpus(&JointCorpusSpec {
        sentences: 4,
        labeled: 2,
        ..JointCorpusSpec::default()
    })
}

fn sentence(id: &str, n: usize, labeled: bool) -> Sentence {
    Sentence {
        id: id.into(),
        tokens: vec!["w".into(); n],
        entities: vec![],
        relations: vec![],
        labeled,
    }
}

#[test]
fn toy_run_populates_both_tasks_and_reloads() {
    let (corpus, store) = toy();
    let out = run_joint(&RunConfig::default(), &corpus, &store).unwrap();
    let round = &out.report.rounds[0];
    assert_eq!(round.entity.status, "ok");
    assert_eq!(round.relation.status, "ok");
    assert_eq!(round.entity.labeled_nodes, 4);
    assert_eq!(round.entity.unlabeled_nodes, 6);
    assert_eq!(round.relation.labeled_nodes, 4);
    assert_eq!(round.relation.unlabeled_nodes, 12);
    for task in [&round.entity, &round.relation] {
        assert_eq!(task.emitted + task.abstained, task.unlabeled_nodes);
        assert!(task.converged);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("aug.jsonl");
    emit_augmented(&corpus.without_held_out_gold(), &out.pseudo_labels, &path).unwrap();
    let reloaded = load_corpus(&path).unwrap();
    assert!(validate(&reloaded).is_empty());
    assert_eq!(reloaded.sentences, out.augmented.sentences);
}

#[test]
fn missing_relation_seeds_skip_relation_task() {
    let (mut corpus, store) = toy();
    for s in corpus.sentences.iter_mut() {
        s.relations.clear();
    }
    corpus = Corpus::new(corpus.sentences);
    let config = RunConfig {
        threshold: Threshold::Quantile(0.0),
        ..RunConfig::default()
    };
    let out = run_joint(&config, &corpus, &store).unwrap();
    let round = &out.report.rounds[0];
    assert_eq!(round.entity.status, "ok");
    assert!(round.entity.emitted > 0);
    assert_eq!(round.relation.status, "skipped: no seeds");
    assert_eq!(
        round.relation.emitted + round.relation.abstained,
        round.relation.unlabeled_nodes
    );
}

#[test]
fn restricted_pairs_grow_across_rounds() {
    let (corpus, store) = joint_corpus(&JointCorpusSpec {
        sentences: 60,
        labeled: 9,
        ..JointCorpusSpec::default()
    });
    let config = RunConfig {
        rounds: 2,
        restrict_pairs: true,
        max_width: 2,
        threshold: Threshold::Quantile(0.5),
        ..RunConfig::default()
    };
    let out = run_joint(&config, &corpus, &store).unwrap();
    let (r1, r2) = (&out.report.rounds[0], &out.report.rounds[1]);
    assert!(r1.entity.new_labels > 0);
    assert!(r2.entity.new_labels > 0);
    assert!(r2.relation.candidates > r1.relation.candidates);
    // accumulate-only: everything emitted in round 1 survives with its label
    let again = run_joint(
        &RunConfig {
            rounds: 1,
            ..config.clone()
        },
        &corpus,
        &store,
    )
    .unwrap();
    for (span, label) in &again.pseudo_labels.entities {
        assert_eq!(out.pseudo_labels.entities.get(span), Some(label));
    }
    assert_eq!(
        out.report.totals.entity_labels,
        r1.entity.new_labels + r2.entity.new_labels
    );
}

#[test]
fn runs_are_deterministic_and_preserve_labeled_records() {
    let (corpus, store) = joint_corpus(&JointCorpusSpec {
        sentences: 50,
        labeled: 10,
        ..JointCorpusSpec::default()
    });
    let config = RunConfig {
        rounds: 2,
        threshold: Threshold::Quantile(0.2),
        ..RunConfig::default()
    };
    let a = run_joint(&config, &corpus, &store).unwrap();
    let b = run_joint(&config, &corpus, &store).unwrap();
    assert_eq!(a.augmented.to_jsonl(), b.augmented.to_jsonl());
    let (mut ra, mut rb) = (a.report.clone(), b.report.clone());
    ra.timings.clear();
    rb.timings.clear();
    assert_eq!(render_report(&ra), render_report(&rb));

    let before: Vec<String> = corpus
        .labeled()
        .map(|s| serde_json::to_string(s).unwrap())
        .collect();
    let after: Vec<String> = a
        .augmented
        .labeled()
        .map(|s| serde_json::to_string(s).unwrap())
        .collect();
    assert_eq!(before, after);
    assert!(validate(&a.augmented).is_empty());
    assert_eq!(
        parse_corpus(&a.augmented.to_jsonl()).unwrap().sentences,
        a.augmented.sentences
    );
    assert!(a.report.evaluation.is_some());
}

#[test]
fn held_out_gold_never_seeds_propagation() {
    let (corpus, store) = toy();
    let stripped = corpus.without_held_out_gold();
    let with_gold = run_joint(&RunConfig::default(), &corpus, &store).unwrap();
    let without = run_joint(&RunConfig::default(), &stripped, &store).unwrap();
    assert_eq!(with_gold.pseudo_labels, without.pseudo_labels);
    assert_eq!(with_gold.augmented.to_jsonl(), without.augmented.to_jsonl());
}

#[test]
fn emit_without_labels_clears_unlabeled_annotations() {
    let (corpus, _) = toy();
    let view = corpus.without_held_out_gold();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("aug.jsonl");
    emit_augmented(&view, &PseudoLabels::default(), &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), view.to_jsonl());
}

#[test]
fn emit_single_entity() {
    let mut l = sentence("l", 2, true);
    l.entities.push(Entity::new(0, 0, "A"));
    let corpus = Corpus::new(vec![l, sentence("u", 3, false)]);
    let mut pseudo = PseudoLabels::default();
    pseudo
        .entities
        .insert(SpanCandidate::new(1, 1, 2), (0, 0.75));
    let (aug, unanchored) = build_augmented(&corpus, &pseudo, &corpus.catalog);
    assert_eq!(unanchored, 0);
    let ents = &aug.sentences[1].entities;
    assert_eq!(ents.len(), 1);
    assert_eq!(ents[0].confidence, Some(0.75));
    assert_eq!(ents[0].source.as_deref(), Some("propagated"));
    let line = aug.to_jsonl().lines().nth(1).unwrap().to_string();
    assert!(
        line.contains(r#""source":"propagated","confidence":0.75"#),
        "{line}"
    );
}

#[test]
fn emitted_relations_reference_their_pseudo_entities() {
    let mut l = sentence("l", 2, true);
    l.entities = vec![Entity::new(0, 0, "A"), Entity::new(1, 1, "B")];
    l.relations = vec![Relation::new(0, 1, "R")];
    let corpus = Corpus::new(vec![l, sentence("u", 4, false)]);
    let head = SpanCandidate::new(1, 2, 3);
    let tail = SpanCandidate::new(1, 0, 0);
    let mut pseudo = PseudoLabels::default();
    pseudo.entities.insert(head, (1, 0.9));
    pseudo.entities.insert(tail, (0, 0.8));
    pseudo
        .relations
        .insert(PairCandidate { head, tail }, (0, 0.6));
    // an unanchored pair is left out
    pseudo.relations.insert(
        PairCandidate {
            head: SpanCandidate::new(1, 1, 1),
            tail,
        },
        (0, 0.6),
    );
    let (aug, unanchored) = build_augmented(&corpus, &pseudo, &corpus.catalog);
    assert_eq!(unanchored, 1);
    let s = &aug.sentences[1];
    assert_eq!(s.relations.len(), 1);
    let r = &s.relations[0];
    assert_eq!((s.entities[r.head].start, s.entities[r.head].end), (2, 3));
    assert_eq!((s.entities[r.tail].start, s.entities[r.tail].end), (0, 0));
    assert_eq!(s.entities[r.head].kind, "B");
    assert!(validate(&aug).is_empty());
}

fn with_entities(id: &str, labeled: bool, spans: &[(usize, usize, &str)]) -> Sentence {
    let mut s = sentence(id, 6, labeled);
    s.entities = spans
        .iter()
        .map(|&(a, b, t)| Entity::new(a, b, t))
        .collect();
    s
}

#[test]
fn evaluation_counts() {
    let gold = Corpus::new(vec![
        with_entities("g", true, &[(0, 0, "A")]),
        with_entities("u1", false, &[(0, 0, "A"), (1, 2, "B")]),
        with_entities("u2", false, &[(0, 1, "A"), (3, 3, "B")]),
    ]);
    // 3 emitted: two exact matches, one with the wrong boundary
    let predicted = Corpus::new(vec![
        with_entities("g", true, &[(0, 0, "A")]),
        with_entities("u1", false, &[(0, 0, "A"), (1, 2, "B")]),
        with_entities("u2", false, &[(0, 0, "A")]),
    ]);
    let e = evaluate(&predicted, &gold).entity;
    assert_eq!((e.predicted, e.gold, e.correct), (3, 4, 2));
    assert!((e.precision - 2.0 / 3.0).abs() < 1e-15);
    assert!((e.recall - 0.5).abs() < 1e-15);
    assert!((e.f1 - 4.0 / 7.0).abs() < 1e-15);

    let nothing = Corpus::new(vec![
        with_entities("u1", false, &[]),
        with_entities("u2", false, &[]),
    ]);
    let e = evaluate(&nothing, &gold).entity;
    assert_eq!((e.precision, e.recall, e.f1), (0.0, 0.0, 0.0));

    let e = evaluate(&gold, &gold).entity;
    assert_eq!((e.precision, e.recall, e.f1), (1.0, 1.0, 1.0));
}

#[test]
fn relation_evaluation_matches_on_endpoint_spans() {
    let mut g = with_entities("u", false, &[(0, 0, "A"), (2, 2, "B")]);
    g.relations = vec![Relation::new(0, 1, "R")];
    let gold = Corpus::new(vec![g]);
    // same spans listed in a different order
    let mut p = with_entities("u", false, &[(2, 2, "B"), (0, 0, "A")]);
    p.relations = vec![Relation::new(1, 0, "R"), Relation::new(0, 1, "R")];
    let predicted = Corpus::new(vec![p]);
    let r = evaluate(&predicted, &gold).relation;
    assert_eq!((r.predicted, r.gold, r.correct), (2, 1, 1));
}

#[test]
fn report_counts_add_up() {
    let (corpus, store) = joint_corpus(&JointCorpusSpec {
        sentences: 40,
        labeled: 9,
        ..JointCorpusSpec::default()
    });
    for threshold in [
        Threshold::Fixed(0.0),
        Threshold::Fixed(0.5),
        Threshold::Quantile(0.7),
    ] {
        let config = RunConfig {
            threshold,
            rounds: 2,
            ..RunConfig::default()
        };
        let out = run_joint(&config, &corpus, &store).unwrap();
        let mut per_sentence: BTreeMap<usize, usize> = BTreeMap::new();
        for span in out.pseudo_labels.entities.keys() {
            *per_sentence.entry(span.sentence).or_default() += 1;
        }
        for (i, n) in per_sentence {
            assert_eq!(out.augmented.sentences[i].entities.len(), n);
        }
        for round in &out.report.rounds {
            for task in [&round.entity, &round.relation] {
                assert_eq!(task.emitted + task.abstained, task.unlabeled_nodes);
            }
        }
    }
}

#[test]
fn invalid_config_and_missing_embeddings() {
    let (corpus, store) = toy();
    let bad = RunConfig {
        c: 1.0,
        ..RunConfig::default()
    };
    assert!(run_joint(&bad, &corpus, &store).is_err());
    let mut bigger = corpus.clone();
    bigger.sentences.push(sentence("extra", 2, false));
    let err = run_joint(&RunConfig::default(), &bigger, &store).unwrap_err();
    assert_eq!(
        err.to_string(),
        "sentence extra missing from embedding file"
    );
}
