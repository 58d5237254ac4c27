//! Tokenizes one UMLS triple into the `[B] head [S] relation [S] tail [S]`
//! layout and pools it through a freshly initialized encoder.
//!
//! cargo run --example encode_triplet

use std::path::Path;

use lass::encoder::{Encoder, EncoderConfig, Mode};
use lass::graph::{load_graph, DatasetFormat};
use lass::loss::score;
use lass::text::{encode_triplet, TextTokenizer, WordTokenizer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = load_graph(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/umls"), DatasetFormat::LinkPrediction)?;
    let tok = WordTokenizer::build_vocab(&g, 1, 32)?;
    let t = g.train()[0];
    let seq = encode_triplet(&tok, &g, t)?;

    let words: Vec<&str> = seq.token_ids[..seq.attention_len]
        .iter()
        .map(|&id| tok.token(id).unwrap_or("?"))
        .collect();
    println!("{}", words.join(" "));
    println!("ids      {:?}", &seq.token_ids[..seq.attention_len]);
    println!("segments {:?}", &seq.segment_ids()[..seq.attention_len]);
    println!("spans    head {:?}  relation {:?}  tail {:?}", seq.head_span, seq.rel_span, seq.tail_span);

    let enc = Encoder::new(EncoderConfig {
        k: 16,
        n_layers: 2,
        n_heads: 4,
        ffn_dim: 64,
        max_len: 32,
        vocab_size: tok.vocab_size(),
        ..Default::default()
    })?;
    let e = &enc.forward(&[seq], Mode::Eval)?[0];
    println!("h[..4] {:?}", &e.h[..4]);
    println!("score with b = 7: {:.4}", score(e, 7.0)?);
    Ok(())
}
