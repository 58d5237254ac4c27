//! Loads a dataset directory and prints its vocabulary sizes, split sizes and
//! a few described triples.
//!
//! cargo run --example load_graph -- [dataset_dir]

use std::path::PathBuf;

use lass::graph::{load_graph, DatasetFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/umls"));
    let format = DatasetFormat::detect(&dir)?;
    let g = load_graph(&dir, format)?;
    println!("{} ({format:?})", dir.display());
    println!("entities   {}", g.num_entities());
    println!("relations  {}", g.num_relations());
    println!("train      {}", g.train().len());
    println!("valid      {}", g.valid().len());
    println!("test       {}", g.test().len());
    println!("positives  {}", g.positive_index().len());
    for t in g.train().iter().take(3) {
        println!(
            "  [{}] --[{}]--> [{}]",
            g.entity_description(t.head),
            g.relation_description(t.relation),
            g.entity_description(t.tail)
        );
    }
    Ok(())
}
