//! Filtered link prediction on UMLS with a quickly trained DistMult model,
//! showing optimistic, mid and pessimistic ranks of the first test triples.
//!
//! cargo run --release --example link_prediction -- [epochs]

use std::path::Path;

use lass::eval::{link_prediction_with, ranking_table, ShallowScorer, TiePolicy};
use lass::graph::{load_graph, DatasetFormat};
use lass::loss::LossConfig;
use lass::optim::OptimizerConfig;
use lass::shallow::{train_shallow, ShallowKind, ShallowModel, UMLS_RECIPE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(30);
    let g = load_graph(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/umls"), DatasetFormat::LinkPrediction)?;
    let opt = OptimizerConfig { epochs, ..UMLS_RECIPE.optimizer() };
    let model = ShallowModel::new(ShallowKind::DistMult, g.num_entities(), g.num_relations(), 64, 1)?;
    let run = train_shallow(&g, model, &LossConfig::default(), &opt)?;

    let scorer = ShallowScorer(&run.model);
    let out = link_prediction_with(&scorer, &g, &[1, 3, 10], TiePolicy::Mid)?;
    print!("{}", ranking_table(&out));
    println!("\n{:<48}{:>18}{:>18}", "triple", "head (opt/mid/pes)", "tail (opt/mid/pes)");
    for ((t, h), r) in out.triples.iter().zip(&out.head_ranks).zip(&out.tail_ranks).take(8) {
        let name = format!(
            "{} {} {}",
            g.entities().name(t.head),
            g.relations().name(t.relation),
            g.entities().name(t.tail)
        );
        println!(
            "{name:<48}{:>18}{:>18}",
            format!("{}/{}/{}", h.optimistic, h.mid, h.pessimistic),
            format!("{}/{}/{}", r.optimistic, r.mid, r.pessimistic)
        );
    }
    Ok(())
}
