#![allow(dead_code)]

use std::path::PathBuf;

use lass::encoder::{Encoder, EncoderConfig, EncoderParams, Mode};
use lass::graph::{load_graph, DatasetFormat, GraphParts, KnowledgeGraph, Triple};
use lass::loss::{sample_negatives, LossConfig, NegativeBatch};
use lass::tensor::Tensor;
use lass::text::{DescriptionCache, WordTokenizer};
use lass::trainer::batch_objective;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

pub fn umls_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/umls")
}

pub fn umls() -> KnowledgeGraph {
    load_graph(&umls_dir(), DatasetFormat::LinkPrediction).expect("bundled UMLS fixture loads")
}

const LEXICON: [&str; 16] = [
    "alpha", "beta", "gamma", "delta", "river", "stone", "north", "south", "old", "new", "red", "blue", "of", "the",
    "in", "born",
];

fn phrase(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    (0..n).map(|_| *LEXICON.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Graph whose descriptions are random 1..=max_words phrases over a small
/// lexicon, with distinct random train triples.
pub fn random_text_graph(seed: u64, entities: usize, relations: usize, train: usize, max_words: usize) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ents = (0..entities).map(|i| (format!("e{i}"), phrase(&mut rng, max_words))).collect();
    let rels = (0..relations).map(|i| (format!("r{i}"), phrase(&mut rng, max_words))).collect();
    let mut triples = std::collections::BTreeSet::new();
    while triples.len() < train {
        triples.insert(Triple::new(
            rng.random_range(0..entities),
            rng.random_range(0..relations),
            rng.random_range(0..entities),
        ));
    }
    KnowledgeGraph::from_parts(GraphParts {
        entities: ents,
        relations: rels,
        train: triples.into_iter().collect(),
        ..Default::default()
    })
    .unwrap()
}

/// Adds N(0, std²) noise to every parameter so that layer norms, attention
/// and GELU operate away from their initialization regime.
pub fn perturb(params: &mut EncoderParams, std: f64, rng: &mut ChaCha8Rng) {
    let n = Normal::new(0.0, std).unwrap();
    for (_, t) in params.named_mut() {
        t.data.iter_mut().for_each(|x| *x += n.sample(rng));
    }
}

/// One randomly drawn gradient-check problem.
pub struct GradCase {
    pub cfg: EncoderConfig,
    pub encoder: Encoder,
    pub cache: DescriptionCache,
    pub positives: Vec<Triple>,
    pub negatives: Vec<NegativeBatch>,
    pub margin: f64,
    pub mode: Mode,
}

pub fn grad_case(seed: u64) -> GradCase {
    grad_case_with(seed, 2)
}

pub fn grad_case_with(seed: u64, n_positives: usize) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = *[4usize, 8, 12, 16].choose(&mut rng).unwrap();
    let heads: Vec<usize> = [1usize, 2, 4].into_iter().filter(|h| k % h == 0).collect();
    let n_heads = *heads.choose(&mut rng).unwrap();
    let max_len = rng.random_range(8..=14);
    let g = random_text_graph(seed, 8, 3, 12, 4);
    let tok = WordTokenizer::build_vocab(&g, 1, max_len).unwrap();
    let dropout_rate = if seed % 3 == 0 { 0.2 } else { 0.0 };
    let cfg = EncoderConfig {
        k,
        n_layers: rng.random_range(0..=2),
        n_heads,
        ffn_dim: rng.random_range(4..=24),
        max_len,
        vocab_size: lass::text::TextTokenizer::vocab_size(&tok),
        dropout_rate,
        seed,
    };
    let mut params = EncoderParams::init(&cfg).unwrap();
    perturb(&mut params, 0.3, &mut rng);
    let encoder = Encoder::from_params(cfg.clone(), params).unwrap();
    let cache = DescriptionCache::new(&tok, &g).unwrap();
    let loss = LossConfig {
        n_ns: rng.random_range(1..=2),
        ..Default::default()
    };
    let positives: Vec<Triple> = g.train().choose_multiple(&mut rng, n_positives).copied().collect();
    let negatives = positives
        .iter()
        .map(|&p| sample_negatives(&g, p, &loss, &mut rng).unwrap())
        .collect();
    let mode = if dropout_rate > 0.0 {
        Mode::Train { seed: seed ^ 0xABCD }
    } else {
        Mode::Eval
    };
    GradCase {
        cfg,
        encoder,
        cache,
        positives,
        negatives,
        margin: rng.random_range(0.0..7.0),
        mode,
    }
}

impl GradCase {
    pub fn loss(&self, enc: &Encoder) -> f64 {
        batch_objective(enc, &self.cache, &self.positives, &self.negatives, self.margin, self.mode)
            .unwrap()
            .0
    }

    pub fn analytic(&self) -> EncoderParams {
        batch_objective(&self.encoder, &self.cache, &self.positives, &self.negatives, self.margin, self.mode)
            .unwrap()
            .1
    }

    /// Central differences of the loss for every parameter entry.
    pub fn numeric(&self, step: f64) -> EncoderParams {
        let names: Vec<(String, usize)> = self
            .encoder
            .params()
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.len()))
            .collect();
        let coords: Vec<(usize, usize)> = names
            .iter()
            .enumerate()
            .flat_map(|(ti, (_, len))| (0..*len).map(move |i| (ti, i)))
            .collect();
        let values: Vec<f64> = coords
            .par_iter()
            .map(|&(ti, i)| {
                let eval = |delta: f64| {
                    let mut enc = self.encoder.clone();
                    let mut named = enc.params_mut().named_mut();
                    named[ti].1.data[i] += delta;
                    drop(named);
                    self.loss(&enc)
                };
                (eval(step) - eval(-step)) / (2.0 * step)
            })
            .collect();
        let mut out = EncoderParams::zeros(&self.cfg);
        let mut it = values.into_iter();
        for (_, t) in out.named_mut() {
            t.data.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        out
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, floor)`.
pub fn relative_error(a: &Tensor, n: &Tensor, floor: f64) -> f64 {
    let diff = a.data.iter().zip(&n.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / a.sum_sq().sqrt().max(n.sum_sq().sqrt()).max(floor)
}

/// Worst per-tensor relative error and the tensor it occurs in. Tensors whose
/// gradient is identically zero in exact arithmetic (the attention key bias,
/// which shifts every logit of a query equally) are compared against a floor
/// of 1e-6 times the global gradient norm instead of their own rounding noise.
pub fn worst_tensor_error(analytic: &EncoderParams, numeric: &EncoderParams) -> (f64, String) {
    let floor = 1e-6 * analytic.global_norm();
    analytic
        .named()
        .into_iter()
        .zip(numeric.named())
        .map(|((name, a), (_, n))| (relative_error(a, n, floor), name))
        .fold((0.0, String::new()), |acc, x| if x.0 > acc.0 { x } else { acc })
}

pub mod oracle;

/// SplitMix64 finalizer; a cheap deterministic hash for random score tables.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn triple_hash(seed: u64, t: Triple) -> u64 {
    mix(mix(mix(mix(seed) ^ t.head as u64) ^ t.relation as u64) ^ t.tail as u64)
}

/// Random graph for ranking checks: `n` entities, a few relations, and a test
/// split that overlaps the filter set in both directions.
pub fn ranking_graph(seed: u64, n: usize) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relations = rng.random_range(1..=3);
    let pick = |rng: &mut ChaCha8Rng| {
        Triple::new(rng.random_range(0..n), rng.random_range(0..relations), rng.random_range(0..n))
    };
    let mut seen = std::collections::HashSet::new();
    let mut split = |rng: &mut ChaCha8Rng, size: usize| -> Vec<Triple> {
        let mut out = Vec::new();
        while out.len() < size {
            let t = pick(rng);
            if seen.insert(t) {
                out.push(t);
            }
        }
        out
    };
    let train = split(&mut rng, 2 * n);
    let valid = split(&mut rng, 3);
    let test = split(&mut rng, 6);
    KnowledgeGraph::from_parts(GraphParts {
        entities: (0..n).map(|i| (format!("e{i}"), format!("entity {i}"))).collect(),
        relations: (0..relations).map(|i| (format!("r{i}"), format!("relation {i}"))).collect(),
        train,
        valid,
        test,
        ..Default::default()
    })
    .unwrap()
}
