//! Compares the encoder's analytic gradient of the negative-sampling loss
//! with central finite differences on a tiny random graph.
//!
//! cargo run --example gradient_check -- [seed]

use lass::encoder::{Encoder, EncoderConfig, EncoderParams, Mode};
use lass::graph::{GraphParts, KnowledgeGraph, Triple};
use lass::loss::{sample_negatives, LossConfig};
use lass::text::{DescriptionCache, TextTokenizer, WordTokenizer};
use lass::trainer::batch_objective;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["north", "river", "stone", "old", "red", "of"];
    let phrase = |rng: &mut ChaCha8Rng| {
        (0..rng.random_range(1..4)).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ")
    };
    let g = KnowledgeGraph::from_parts(GraphParts {
        entities: (0..6).map(|i| (format!("e{i}"), phrase(&mut rng))).collect(),
        relations: (0..2).map(|i| (format!("r{i}"), phrase(&mut rng))).collect(),
        train: vec![Triple::new(0, 0, 1), Triple::new(2, 1, 3), Triple::new(4, 0, 5)],
        ..Default::default()
    })?;
    let tok = WordTokenizer::build_vocab(&g, 1, 12)?;
    let cfg = EncoderConfig {
        k: 8,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 12,
        max_len: 12,
        vocab_size: tok.vocab_size(),
        dropout_rate: 0.0,
        seed,
    };
    let enc = Encoder::new(cfg.clone())?;
    let cache = DescriptionCache::new(&tok, &g)?;
    let loss_cfg = LossConfig { n_ns: 2, ..Default::default() };
    let positives = &g.train()[..2];
    let negatives = positives
        .iter()
        .map(|&p| sample_negatives(&g, p, &loss_cfg, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let objective = |e: &Encoder| batch_objective(e, &cache, positives, &negatives, 7.0, Mode::Eval);
    let (loss, analytic) = objective(&enc)?;
    println!("loss {loss:.6}, {} parameters", analytic.num_values());

    let h = 1e-4;
    let mut numeric = EncoderParams::zeros(&cfg);
    let n_tensors = analytic.named().len();
    for ti in 0..n_tensors {
        let len = analytic.named()[ti].1.len();
        for i in 0..len {
            let eval = |d: f64| -> Result<f64, lass::error::Error> {
                let mut e = enc.clone();
                e.params_mut().named_mut()[ti].1.data[i] += d;
                Ok(objective(&e)?.0)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            numeric.named_mut()[ti].1.data[i] = fd;
        }
    }
    println!("{:<28}{:>14}", "tensor", "rel. error");
    for ((name, a), (_, n)) in analytic.named().into_iter().zip(numeric.named()) {
        let diff: f64 = a.data.iter().zip(&n.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.sum_sq().sqrt().max(n.sum_sq().sqrt()).max(1e-6 * analytic.global_norm());
        println!("{name:<28}{:>14.2e}", diff / scale);
    }
    Ok(())
}
