//! Seeded synthetic data with a known answer: Gaussian blobs, and corpora
//! whose relation type is a fixed function of the clusters of its endpoints,
//! plus random propagation instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::{Corpus, Entity, Relation, Sentence};
use crate::embed::TokenEmbeddingStore;
use crate::graph::FeatureMatrix;
use crate::propagate::LabelMatrix;
use crate::spans::NodePartition;

/// `per_blob` points around each center with isotropic noise `std`. Returns
/// the points blob by blob together with each point's blob index.
pub fn gaussian_blobs(
    centers: &[Vec<f64>],
    per_blob: usize,
    std: f64,
    seed: u64,
) -> (FeatureMatrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = centers[0].len();
    let mut data = Vec::with_capacity(centers.len() * per_blob * dim);
    let mut labels = Vec::with_capacity(centers.len() * per_blob);
    for (blob, center) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            for &c in center {
                let z: f64 = rng.sample(StandardNormal);
                data.push(c + std * z);
            }
            labels.push(blob);
        }
    }
    (FeatureMatrix::new(dim, data), labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointCorpusSpec {
    pub sentences: usize,
    /// Sentences flagged labeled; they come first and cycle through every
    /// ordered cluster pair.
    pub labeled: usize,
    pub clusters: usize,
    pub relation_types: usize,
    pub dim: usize,
    /// Distance of each cluster center from the origin along its own axis.
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for JointCorpusSpec {
    fn default() -> Self {
        Self {
            sentences: 300,
            labeled: 30,
            clusters: 3,
            relation_types: 3,
            dim: 8,
            separation: 10.0,
            noise: 1.0,
            seed: 17,
        }
    }
}

/// Relation class of an ordered (head cluster, tail cluster) pair.
pub fn relation_rule(head: usize, tail: usize, relation_types: usize) -> usize {
    (head + 2 * tail) % relation_types
}

/// Two-token sentences `[mention(a), mention(b)]` whose tokens are drawn from
/// clusters `a` and `b`. Every sentence carries full gold: entity types
/// `C{a}`, `C{b}` and relations in both directions typed by
/// [`relation_rule`]. Unlabeled sentences keep that gold as held-out data.
pub fn joint_corpus(spec: &JointCorpusSpec) -> (Corpus, TokenEmbeddingStore) {
    assert!(spec.dim >= spec.clusters, "one axis per cluster");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.clusters;
    let mut store = TokenEmbeddingStore::new(spec.dim);
    let mut sentences = Vec::with_capacity(spec.sentences);
    for i in 0..spec.sentences {
        let (a, b) = if i < spec.labeled {
            (i % k, (i / k) % k)
        } else {
            (rng.random_range(0..k), rng.random_range(0..k))
        };
        let mut values = Vec::with_capacity(2 * spec.dim);
        for cluster in [a, b] {
            for axis in 0..spec.dim {
                let center = if axis == cluster {
                    spec.separation
                } else {
                    0.0
                };
                let z: f64 = rng.sample(StandardNormal);
                values.push((center + spec.noise * z) as f32);
            }
        }
        let id = format!("doc{}#{}", i / 10, i % 10);
        store.insert(id.clone(), values).expect("two full rows");
        sentences.push(Sentence {
            id,
            tokens: vec![format!("m{a}"), format!("m{b}")],
            entities: vec![
                Entity::new(0, 0, format!("C{a}")),
                Entity::new(1, 1, format!("C{b}")),
            ],
            relations: vec![
                Relation::new(
                    0,
                    1,
                    format!("R{}", relation_rule(a, b, spec.relation_types)),
                ),
                Relation::new(
                    1,
                    0,
                    format!("R{}", relation_rule(b, a, spec.relation_types)),
                ),
            ],
            labeled: i < spec.labeled,
        });
    }
    (Corpus::new(sentences), store)
}

/// Cluster index of a mention token produced by [`joint_corpus`].
pub fn token_cluster(token: &str) -> Option<usize> {
    token.strip_prefix('m')?.parse().ok()
}

/// A random propagation problem: points, graph parameters and seed labels.
/// Seeds occupy nodes `0..seeds.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationInstance {
    pub features: FeatureMatrix,
    pub k: usize,
    pub sigma: f64,
    pub classes: usize,
    /// Class of each seed node, in node order.
    pub seeds: Vec<usize>,
}

impl PropagationInstance {
    pub fn nodes(&self) -> usize {
        self.features.rows()
    }

    /// Seeds first, then every remaining node as unlabeled.
    pub fn partition(&self) -> NodePartition<usize> {
        NodePartition {
            labeled: self.seeds.iter().copied().enumerate().collect(),
            unlabeled: (self.seeds.len()..self.nodes()).collect(),
            dropped: Vec::new(),
        }
    }

    pub fn seed_matrix(&self) -> LabelMatrix {
        LabelMatrix::seeds(&self.partition(), self.classes)
    }
}

/// Uniform points in `[-3, 3]^d` with `2 <= T <= max_nodes`, `1 <= U <= max_classes`,
/// random `k`, `sigma` and a random number of seeds.
pub fn random_instance(seed: u64, max_nodes: usize, max_classes: usize) -> PropagationInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(2..=max_nodes.max(2));
    let dim = rng.random_range(1..=4);
    let data = (0..t * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
    let classes = rng.random_range(1..=max_classes.max(1));
    let n = rng.random_range(1..=t);
    PropagationInstance {
        features: FeatureMatrix::new(dim, data),
        k: rng.random_range(1..=t.min(20)),
        sigma: rng.random_range(0.5..3.0),
        classes,
        seeds: (0..n).map(|_| rng.random_range(0..classes)).collect(),
    }
}

/// Points spaced 0.5 apart along a line with small transverse jitter, k = 2.
/// The resulting graph is a long chain whose second eigenvalue sits close
/// to 1. Two seeds of different classes, one at the first node.
pub fn chain_instance(seed: u64, min_nodes: usize, max_nodes: usize) -> PropagationInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(min_nodes.max(3)..=max_nodes.max(min_nodes.max(3)));
    let mut data = Vec::with_capacity(2 * t);
    for i in 0..t {
        data.push(0.5 * i as f64);
        data.push(rng.random_range(-0.05..0.05));
    }
    // swap a random node into position 1 so it becomes the second seed
    let other = rng.random_range(1..t);
    data.swap(2, 2 * other);
    data.swap(3, 2 * other + 1);
    PropagationInstance {
        features: FeatureMatrix::new(2, data),
        k: 2,
        sigma: 2.0,
        classes: 2,
        seeds: vec![0, 1],
    }
}
