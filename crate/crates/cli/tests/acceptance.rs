//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails. Run with `cargo test -p jointprop-cli --test acceptance -- --nocapture`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use jointprop_core::corpus::{write_corpus, Corpus};
use jointprop_core::diagnostics::oracle::{
    dense_affinity, dense_normalized, propagate_reference, DenseMatrix,
};
use jointprop_core::diagnostics::synthetic::{
    chain_instance, gaussian_blobs, joint_corpus, random_instance, relation_rule, token_cluster,
    JointCorpusSpec, PropagationInstance,
};
use jointprop_core::embed::write_embeddings;
use jointprop_core::graph::{
    build_normalized, knn_affinity, normalize, symmetrize, AffinityGraph, Stage,
};
use jointprop_core::pipeline::{run_joint, RunConfig};
use jointprop_core::propagate::{
    decode, propagate_closed_form, propagate_iterative, softmax_confidence, LabelMatrix, Threshold,
};
use jointprop_core::report::estimate_rate;
use jointprop_core::spans::NodePartition;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);
type Property = Box<dyn Fn(u64) -> Result<(), TestCaseError>>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.3} s", d.as_secs_f64())
}

fn worked_example() -> Outcome {
    let clock = Instant::now();
    let s = AffinityGraph::from_rows(Stage::Normalized, vec![vec![(1, 1.0)], vec![(0, 1.0)]]);
    let z = LabelMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]);
    let expected = LabelMatrix::from_vec(2, 2, vec![2.0 / 3.0, 0.0, 1.0 / 3.0, 0.0]);
    let closed = propagate_closed_form(&s, &z, 0.5, 2000).unwrap();
    let iter = propagate_iterative(&s, &z, 0.5, 10_000, 1e-12).unwrap();
    let elapsed = clock.elapsed();
    let (e1, e2) = (
        closed.max_abs_diff(&expected),
        iter.y.max_abs_diff(&expected),
    );
    outcome(
        e1 <= 1e-12 && e2 <= 1e-10 && elapsed < Duration::from_millis(1),
        format!(
            "closed err {e1:.1e}, iterative err {e2:.1e}, {:.3} ms",
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn solver_equivalence() -> Outcome {
    let clock = Instant::now();
    let mut worst: f64 = 0.0;
    let mut unconverged = 0;
    for seed in 0..100 {
        let inst = random_instance(1000 + seed, 200, 10);
        let s = build_normalized(&inst.features, inst.k, inst.sigma).unwrap();
        let z = inst.seed_matrix();
        let iter = propagate_iterative(&s, &z, 0.99, 1_000_000, 1e-12).unwrap();
        unconverged += usize::from(!iter.converged);
        let closed = propagate_closed_form(&s, &z, 0.99, 2000).unwrap();
        let t = inst.nodes();
        let series = propagate_reference(
            &DenseMatrix::from_vec(t, t, s.to_dense()),
            &DenseMatrix::from_vec(t, z.cols(), z.as_slice().to_vec()),
            0.99,
            4096,
        )
        .unwrap();
        worst = worst
            .max(iter.y.max_abs_diff(&closed))
            .max(series.max_abs_diff(closed.as_slice()))
            .max(series.max_abs_diff(iter.y.as_slice()));
    }
    let elapsed = clock.elapsed();
    outcome(
        worst <= 1e-8 && unconverged == 0 && elapsed < Duration::from_secs(30),
        format!("max disagreement {worst:.1e}, {}", secs(elapsed)),
    )
}

fn dense_sparse_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let inst = random_instance(5000 + seed, 100, 1);
        let t = inst.nodes();
        let sparse = normalize(&symmetrize(
            &knn_affinity(&inst.features, t - 1, inst.sigma).unwrap(),
        ))
        .unwrap();
        let dense = dense_normalized(&dense_affinity(&inst.features, inst.sigma).unwrap());
        worst = worst.max(dense.max_abs_diff(&sparse.to_dense()));
    }
    outcome(worst <= 1e-12, format!("max difference {worst:.1e}"))
}

fn fitted_rate(inst: &PropagationInstance, c: f64) -> f64 {
    let s = build_normalized(&inst.features, inst.k, inst.sigma).unwrap();
    let run = propagate_iterative(&s, &inst.seed_matrix(), c, 1_000_000, 1e-12).unwrap();
    estimate_rate(&run.trace).unwrap().rate
}

fn convergence_rate() -> Outcome {
    let c = 0.99;
    let rates: Vec<f64> = (0..30)
        .map(|seed| fitted_rate(&chain_instance(seed, 80, 300), c))
        .collect();
    let worst = rates.iter().map(|r| (r - c).abs()).fold(0.0, f64::max);
    let (lo, hi) = rates
        .iter()
        .fold((1.0f64, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    outcome(
        worst <= 0.02,
        format!("30 chain instances, rate in [{lo:.4}, {hi:.4}], max |rate - c| {worst:.4}"),
    )
}

fn blob_propagation() -> Outcome {
    let clock = Instant::now();
    let mut centers = vec![vec![0.0; 8], vec![0.0; 8]];
    centers[1][0] = 10.0;
    let (features, truth) = gaussian_blobs(&centers, 100, 1.0, 42);
    // seeds first: node 0 from blob 0, node 1 from blob 1
    let order: Vec<usize> = [0, 100]
        .into_iter()
        .chain((1..100).chain(101..200))
        .collect();
    let data = order
        .iter()
        .flat_map(|&i| features.row(i).to_vec())
        .collect();
    let features = jointprop_core::graph::FeatureMatrix::new(8, data);
    let truth: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
    let partition = NodePartition {
        labeled: vec![(0usize, truth[0]), (1, truth[1])],
        unlabeled: (2..200).collect(),
        dropped: vec![],
    };
    let s = build_normalized(&features, 50, 2.0).unwrap();
    let y =
        propagate_iterative(&s, &LabelMatrix::seeds(&partition, 2), 0.99, 10_000, 1e-9).unwrap();
    let decoded = decode(&y.y, &partition, Threshold::Quantile(0.0));
    let correct = decoded
        .labels
        .iter()
        .filter(|l| l.class == truth[l.node])
        .count();
    let elapsed = clock.elapsed();
    let accuracy = correct as f64 / 198.0;
    outcome(
        accuracy >= 0.99 && elapsed < Duration::from_secs(5),
        format!(
            "{correct}/198 correct ({:.1}%), {}",
            accuracy * 100.0,
            secs(elapsed)
        ),
    )
}

fn joint_pipeline() -> Outcome {
    let clock = Instant::now();
    let spec = JointCorpusSpec::default();
    let (corpus, store) = joint_corpus(&spec);
    let config = RunConfig {
        restrict_pairs: true,
        max_width: 1,
        threshold: Threshold::Quantile(0.0),
        ..RunConfig::default()
    };
    let output = run_joint(&config, &corpus, &store).unwrap();
    let (correct, total) = relation_accuracy(&output.augmented, spec.relation_types);
    let elapsed = clock.elapsed();
    let accuracy = correct as f64 / total as f64;
    outcome(
        accuracy >= 0.95 && elapsed < Duration::from_secs(30),
        format!(
            "{correct}/{total} relations match the rule ({:.1}%), {}",
            accuracy * 100.0,
            secs(elapsed)
        ),
    )
}

/// Every ordered token pair of an unlabeled sentence must carry the rule's
/// relation; a missing relation counts as wrong.
fn relation_accuracy(augmented: &Corpus, relation_types: usize) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for s in augmented.unlabeled() {
        let clusters: Vec<usize> = s.tokens.iter().map(|t| token_cluster(t).unwrap()).collect();
        for (h, t) in [(0, 1), (1, 0)] {
            total += 1;
            let expected = format!(
                "R{}",
                relation_rule(clusters[h], clusters[t], relation_types)
            );
            let hit = s.relations.iter().any(|r| {
                let (he, te) = (&s.entities[r.head], &s.entities[r.tail]);
                (he.start, he.end, te.start, te.end) == (h, h, t, t) && r.kind == expected
            });
            correct += usize::from(hit);
        }
    }
    (correct, total)
}

fn run_suite(
    name: &str,
    cases: u32,
    test: impl Fn(u64) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&any::<u64>(), test)
        .map_err(|e| format!("{name}: {e}"))
}

fn solved(inst: &PropagationInstance, z: &LabelMatrix) -> LabelMatrix {
    let s = build_normalized(&inst.features, inst.k, inst.sigma).unwrap();
    propagate_iterative(&s, z, 0.99, 1_000_000, 1e-12)
        .unwrap()
        .y
}

fn property_suites() -> Outcome {
    const CASES: u32 = 1000;
    let suites: Vec<(&str, Property)> = vec![
        (
            "threshold monotonicity",
            Box::new(|seed| {
                let inst = random_instance(seed, 40, 5);
                let y = solved(&inst, &inst.seed_matrix());
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (a, b): (f64, f64) = (rng.random(), rng.random());
                let (lo, hi) = (a.min(b), a.max(b));
                let p = inst.partition();
                for (l, h) in [
                    (Threshold::Fixed(lo), Threshold::Fixed(hi)),
                    (Threshold::Quantile(lo), Threshold::Quantile(hi)),
                ] {
                    let (loose, strict) = (decode(&y, &p, l), decode(&y, &p, h));
                    prop_assert!(strict.labels.iter().all(|x| loose.labels.contains(x)));
                }
                Ok(())
            }),
        ),
        (
            "permutation equivariance",
            Box::new(|seed| {
                let inst = random_instance(seed, 40, 4);
                let n = inst.seeds.len();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                // shuffle seeds among themselves and the rest among themselves
                let mut order: Vec<usize> = (0..inst.nodes()).collect();
                for i in (1..n).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                for i in (n + 1..inst.nodes()).rev() {
                    order.swap(i, rng.random_range(n..=i));
                }
                let d = inst.features.dim();
                let moved = PropagationInstance {
                    features: jointprop_core::graph::FeatureMatrix::new(
                        d,
                        order
                            .iter()
                            .flat_map(|&o| inst.features.row(o).to_vec())
                            .collect(),
                    ),
                    seeds: order[..n].iter().map(|&o| inst.seeds[o]).collect(),
                    ..inst.clone()
                };
                let (y, y2) = (
                    solved(&inst, &inst.seed_matrix()),
                    solved(&moved, &moved.seed_matrix()),
                );
                for (new, &old) in order.iter().enumerate() {
                    for j in 0..inst.classes {
                        prop_assert!((y2.get(new, j) - y.get(old, j)).abs() <= 1e-10);
                    }
                }
                Ok(())
            }),
        ),
        (
            "argmax invariance under positive scaling",
            Box::new(|seed| {
                let inst = random_instance(seed, 40, 5);
                let alpha = ChaCha8Rng::seed_from_u64(seed).random_range(1e-3..1e3);
                let z = inst.seed_matrix();
                let s = build_normalized(&inst.features, inst.k, inst.sigma).unwrap();
                let y = propagate_iterative(&s, &z, 0.99, 1_000_000, 1e-12)
                    .unwrap()
                    .y;
                let ys = propagate_iterative(&s, &z.scaled(alpha), 0.99, 1_000_000, 1e-12 * alpha)
                    .unwrap()
                    .y;
                for i in 0..inst.nodes() {
                    let (a, b) = (softmax_confidence(y.row(i)), softmax_confidence(ys.row(i)));
                    prop_assert_eq!(a.is_none(), b.is_none());
                    if let (Some((ca, _)), Some((cb, _))) = (a, b) {
                        let mut sorted = y.row(i).to_vec();
                        sorted.sort_by(|p, q| q.total_cmp(p));
                        let clear = sorted.len() < 2 || sorted[0] - sorted[1] > 1e-9 * sorted[0];
                        prop_assert!(!clear || ca == cb);
                    }
                }
                Ok(())
            }),
        ),
        (
            "zero-column conservation",
            Box::new(|seed| {
                let inst = random_instance(seed, 40, 6);
                let y = solved(&inst, &inst.seed_matrix());
                for j in (0..inst.classes).filter(|j| !inst.seeds.contains(j)) {
                    prop_assert!((0..inst.nodes()).all(|i| y.get(i, j) == 0.0));
                }
                Ok(())
            }),
        ),
        (
            "abstention on zero rows",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (t, u) = (rng.random_range(1..40), rng.random_range(1..6));
                let data = (0..t * u)
                    .map(|_| {
                        if rng.random_bool(0.4) {
                            0.0
                        } else {
                            rng.random()
                        }
                    })
                    .collect();
                let y = LabelMatrix::from_vec(t, u, data);
                let p = NodePartition {
                    labeled: vec![],
                    unlabeled: (0..t).collect(),
                    dropped: vec![],
                };
                let g: f64 = rng.random();
                let zero: Vec<usize> = (0..t)
                    .filter(|&i| y.row(i).iter().all(|&v| v == 0.0))
                    .collect();
                for threshold in [
                    Threshold::Fixed(g),
                    Threshold::Quantile(g),
                    Threshold::Quantile(0.0),
                ] {
                    let d = decode(&y, &p, threshold);
                    prop_assert_eq!(d.zero_rows, zero.len());
                    prop_assert!(d.labels.iter().all(|l| !zero.contains(&l.node)));
                }
                Ok(())
            }),
        ),
    ];
    let mut failures = Vec::new();
    for (name, test) in &suites {
        if let Err(e) = run_suite(name, CASES, test) {
            failures.push(e);
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} suites x {CASES} cases", suites.len())
        } else {
            failures.join("; ")
        },
    )
}

fn run_cli(dir: &Path, corpus: &Path, embeddings: &Path) -> (Vec<u8>, serde_json::Value) {
    let out = dir.join("augmented.jsonl");
    let report = dir.join("report.json");
    let status = Command::new(env!("CARGO_BIN_EXE_jointprop"))
        .args(["propagate", "--corpus"])
        .arg(corpus)
        .arg("--embeddings")
        .arg(embeddings)
        .arg("--out")
        .arg(&out)
        .arg("--report")
        .arg(&report)
        .args([
            "--rounds",
            "2",
            "--restrict-pairs",
            "--max-width",
            "2",
            "--threshold-quantile",
            "0.2",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let mut json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    json.as_object_mut().unwrap().remove("timings");
    (std::fs::read(&out).unwrap(), json)
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let (corpus, store) = joint_corpus(&JointCorpusSpec {
        sentences: 120,
        labeled: 12,
        ..JointCorpusSpec::default()
    });
    let (c, e) = (
        dir.path().join("corpus.jsonl"),
        dir.path().join("corpus.jpem"),
    );
    write_corpus(&c, &corpus).unwrap();
    write_embeddings(&e, &store).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    let (out_a, rep_a) = run_cli(&a, &c, &e);
    let (out_b, rep_b) = run_cli(&b, &c, &e);
    let same_out = out_a == out_b;
    let same_rep = rep_a == rep_b
        && serde_json::to_vec(&rep_a).unwrap() == serde_json::to_vec(&rep_b).unwrap();
    outcome(
        same_out && same_rep,
        format!("augmented identical: {same_out}, report identical: {same_rep}"),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("worked closed-form case", worked_example),
        ("solver equivalence", solver_equivalence),
        ("dense/sparse equivalence", dense_sparse_equivalence),
        ("convergence rate", convergence_rate),
        ("synthetic entity propagation", blob_propagation),
        ("synthetic joint pipeline", joint_pipeline),
        ("randomized property suites", property_suites),
        ("end-to-end determinism", cli_determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let result = check();
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {name}: {}", result.detail);
        if !result.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
