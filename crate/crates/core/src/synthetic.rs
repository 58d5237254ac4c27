//! Generated graphs for tests and examples.
//!
//! The compositional graph names each entity by a color and a shape, with
//! colors in a fixed order. Relation `j` holds between `h` and `t` exactly
//! when `t`'s color comes `j` places after `h`'s, so whether a triple is true
//! can be read off the color words in the descriptions. A few entities never appear in
//! training; every labeled valid/test triple involves one of them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::graph::{GraphParts, KnowledgeGraph, Triple};
use crate::loss::LossConfig;
use crate::optim::OptimizerConfig;

pub const COLORS: [&str; 6] = ["red", "green", "blue", "yellow", "purple", "orange"];
pub const SHAPES: [&str; 12] = [
    "circle", "square", "triangle", "star", "hexagon", "cube", "sphere", "cone", "ring", "arrow", "oval", "pyramid",
];
const SHIFT_WORDS: [&str; 6] = ["zero", "one", "two", "three", "four", "five"];

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionalSpec {
    pub colors: usize,
    pub shapes: usize,
    /// Number of relations; relation `j` moves `j` places along the colors.
    pub relations: usize,
    /// Held-out entities per split (validation, then test).
    pub held_out_per_split: usize,
    /// Seed for negative labeled triples.
    pub seed: u64,
    /// When set, entity descriptions are permuted among entities with this
    /// seed, so description words no longer predict the relation structure.
    pub shuffle_descriptions: Option<u64>,
}

impl Default for CompositionalSpec {
    fn default() -> Self {
        CompositionalSpec {
            colors: 4,
            shapes: 10,
            relations: 4,
            held_out_per_split: 4,
            seed: 0,
            shuffle_descriptions: None,
        }
    }
}

impl CompositionalSpec {
    pub fn num_entities(&self) -> usize {
        self.colors * self.shapes
    }

    pub fn color(&self, e: usize) -> usize {
        e % self.colors
    }

    pub fn shape(&self, e: usize) -> usize {
        e / self.colors
    }

    /// Whether the rule makes `t` true.
    pub fn holds(&self, t: Triple) -> bool {
        self.color(t.tail) == self.color(t.head) + t.relation
    }

    /// Held-out entities: validation takes `(color i mod C, shape i)` for
    /// `i < n`, test takes `(color i mod C, shape n + i)`. Each held-out
    /// entity's color and shape words also occur on training entities.
    pub fn held_out(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.held_out_per_split;
        let entity = |c: usize, s: usize| s * self.colors + c % self.colors;
        let valid = (0..n).map(|i| entity(i, i)).collect();
        let test = (0..n).map(|i| entity(i, n + i)).collect();
        (valid, test)
    }

    fn validate(&self) -> Result<()> {
        if !(2..=COLORS.len()).contains(&self.colors) {
            return Err(Error::argument(format!("colors must be in 2..={}", COLORS.len())));
        }
        if self.relations == 0 || self.relations > self.colors || self.relations > SHIFT_WORDS.len() {
            return Err(Error::argument("relations must be in 1..=colors"));
        }
        if self.shapes > SHAPES.len() || self.shapes < 2 * self.held_out_per_split + 1 {
            return Err(Error::argument(format!(
                "shapes must be in {}..={}",
                2 * self.held_out_per_split + 1,
                SHAPES.len()
            )));
        }
        if self.held_out_per_split == 0 {
            return Err(Error::argument("at least one held-out entity per split is needed"));
        }
        Ok(())
    }
}

/// Every true triple touching `entities`, each paired with a false triple
/// that corrupts the held-out endpoint's partner. The replacement is drawn
/// only from entities whose color can fill that slot of the relation, so the
/// known endpoint alone never gives the label away. True triples without such
/// a replacement are left out.
fn labeled_split(spec: &CompositionalSpec, entities: &[usize], rng: &mut ChaCha8Rng) -> (Vec<Triple>, Vec<bool>) {
    let n = spec.num_entities();
    let mut triples = Vec::new();
    let mut labels = Vec::new();
    for &e in entities {
        for r in 0..spec.relations {
            for other in 0..n {
                for (pos, e_is_head) in [(Triple::new(e, r, other), true), (Triple::new(other, r, e), false)] {
                    if !spec.holds(pos) || (!e_is_head && entities.contains(&other)) {
                        continue;
                    }
                    let corrupt = |c: usize| if e_is_head { Triple { tail: c, ..pos } } else { Triple { head: c, ..pos } };
                    let fits = |c: usize| {
                        let color = spec.color(c);
                        if e_is_head { color >= r } else { color + r < spec.colors }
                    };
                    let pool: Vec<usize> = (0..n).filter(|&c| fits(c) && !spec.holds(corrupt(c))).collect();
                    if pool.is_empty() {
                        continue;
                    }
                    let neg = corrupt(pool[rng.random_range(0..pool.len())]);
                    triples.extend([pos, neg]);
                    labels.extend([true, false]);
                }
            }
        }
    }
    (triples, labels)
}

pub fn compositional_graph(spec: &CompositionalSpec) -> Result<KnowledgeGraph> {
    spec.validate()?;
    let n = spec.num_entities();
    let (held_valid, held_test) = spec.held_out();
    let held = |e: usize| held_valid.contains(&e) || held_test.contains(&e);

    let mut descriptions: Vec<String> = (0..n)
        .map(|e| format!("{} {}", COLORS[spec.color(e)], SHAPES[spec.shape(e)]))
        .collect();
    if let Some(seed) = spec.shuffle_descriptions {
        descriptions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let entities = descriptions
        .into_iter()
        .enumerate()
        .map(|(e, d)| (format!("e{e}"), d))
        .collect();
    let relations = (0..spec.relations)
        .map(|j| (format!("shift{j}"), format!("color {} steps later", SHIFT_WORDS[j])))
        .collect();

    let mut train = Vec::new();
    for h in (0..n).filter(|&e| !held(e)) {
        for r in 0..spec.relations {
            for t in (0..n).filter(|&e| !held(e)) {
                let tr = Triple::new(h, r, t);
                if spec.holds(tr) {
                    train.push(tr);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (valid, labels_valid) = labeled_split(spec, &held_valid, &mut rng);
    let (test, labels_test) = labeled_split(spec, &held_test, &mut rng);
    KnowledgeGraph::from_parts(GraphParts {
        entities,
        relations,
        train,
        valid,
        test,
        labels_valid: Some(labels_valid),
        labels_test: Some(labels_test),
    })
}

/// Uniformly random graph with distinct train and test triples; entity `i`
/// is described as `"node i"` and relation `j` as `"link j"`.
pub fn random_graph(
    num_entities: usize,
    num_relations: usize,
    num_train: usize,
    num_test: usize,
    seed: u64,
) -> Result<KnowledgeGraph> {
    let space = num_entities * num_entities * num_relations;
    if num_train + num_test > space {
        return Err(Error::argument(format!(
            "{} triples requested but only {space} exist",
            num_train + num_test
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = (0..space).collect();
    let (chosen, _) = picked.partial_shuffle(&mut rng, num_train + num_test);
    let triples: Vec<Triple> = chosen
        .iter()
        .map(|&i| Triple::new(i / (num_entities * num_relations), (i / num_entities) % num_relations, i % num_entities))
        .collect();
    KnowledgeGraph::from_parts(GraphParts {
        entities: (0..num_entities)
            .map(|i| (format!("n{i}"), format!("node {i}")))
            .collect(),
        relations: (0..num_relations)
            .map(|j| (format!("l{j}"), format!("link {j}")))
            .collect(),
        train: triples[..num_train].to_vec(),
        test: triples[num_train..].to_vec(),
        ..Default::default()
    })
}

/// Small from-scratch encoder settings that learn the compositional graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticsRecipe {
    pub k: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub n_ns: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle_seed: u64,
}

impl SemanticsRecipe {
    /// Encoder (vocabulary size left for the tokenizer to fill), loss and
    /// optimizer configurations.
    pub fn configs(&self) -> (EncoderConfig, LossConfig, OptimizerConfig) {
        (
            EncoderConfig {
                k: self.k,
                n_layers: self.n_layers,
                n_heads: self.n_heads,
                ffn_dim: self.ffn_dim,
                max_len: self.max_len,
                vocab_size: 0,
                dropout_rate: 0.0,
                seed: self.seed,
            },
            LossConfig {
                n_ns: self.n_ns,
                ..Default::default()
            },
            OptimizerConfig {
                learning_rate: self.learning_rate,
                epochs: self.epochs,
                batch_size: self.batch_size,
                seed: self.seed,
                ..Default::default()
            },
        )
    }
}

pub const SEMANTICS_RECIPE: SemanticsRecipe = SemanticsRecipe {
    k: 32,
    n_layers: 1,
    n_heads: 2,
    ffn_dim: 64,
    max_len: 16,
    n_ns: 3,
    learning_rate: 3e-3,
    epochs: 40,
    batch_size: 32,
    seed: 0,
    shuffle_seed: 1,
};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compositional_layout() {
        let spec = CompositionalSpec::default();
        let g = compositional_graph(&spec).unwrap();
        assert_eq!(g.num_entities(), 40);
        assert_eq!(g.num_relations(), 4);
        // 8 visible entities per color; relation j links 4 - j color pairs.
        assert_eq!(g.train().len(), (4 + 3 + 2 + 1) * 8 * 8);
        for split in [(g.valid(), g.labels_valid().unwrap()), (g.test(), g.labels_test().unwrap())] {
            let (triples, labels) = split;
            assert_eq!(labels.iter().filter(|&&l| l).count() * 2, labels.len());
            for (t, &l) in triples.iter().zip(labels) {
                assert_eq!(spec.holds(*t), l);
            }
        }
        let (hv, ht) = spec.held_out();
        assert!(g.train().iter().all(|t| !hv.contains(&t.head) && !ht.contains(&t.tail)));
        assert_eq!(g.entity_description(0), "red circle");
    }

    #[test]
    fn shuffled_control_keeps_the_structure() {
        let base = compositional_graph(&CompositionalSpec::default()).unwrap();
        let ctl = compositional_graph(&CompositionalSpec {
            shuffle_descriptions: Some(1),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(base.train(), ctl.train());
        assert_eq!(base.test(), ctl.test());
        let mut a = base.entities().descriptions().to_vec();
        let mut b = ctl.entities().descriptions().to_vec();
        assert_ne!(a, b);
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn random_graph_has_disjoint_splits() {
        let g = random_graph(10, 2, 30, 10, 4).unwrap();
        assert_eq!(g.train().len(), 30);
        assert!(g.test().iter().all(|t| !g.train().contains(t)));
        assert!(random_graph(2, 1, 4, 1, 0).is_err());
    }
}
