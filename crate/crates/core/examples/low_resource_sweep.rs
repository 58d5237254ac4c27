//! Trains TransE on 5%, 10%, 15%, 20% and 30% of the UMLS training split and
//! prints Hits@10 for each, as CSV.
//!
//! cargo run --release --example low_resource_sweep -- [seed]

use std::path::Path;

use lass::eval::{link_prediction, low_resource_sweep, sweep_csv, ShallowScorer};
use lass::graph::{load_graph, DatasetFormat, LOW_RESOURCE_FRACTIONS};
use lass::loss::LossConfig;
use lass::shallow::{train_shallow, ShallowKind, ShallowModel, UMLS_RECIPE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let g = load_graph(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/umls"), DatasetFormat::LinkPrediction)?;
    let opt = UMLS_RECIPE.optimizer();
    let rows = low_resource_sweep(&g, &LOW_RESOURCE_FRACTIONS, seed, |_, sub| {
        let model = ShallowModel::new(ShallowKind::TransE, sub.num_entities(), sub.num_relations(), 64, seed)?;
        let run = train_shallow(sub, model, &LossConfig::default(), &opt)?;
        let out = link_prediction(&ShallowScorer(&run.model), sub)?;
        Ok(out.hits_at(10).unwrap_or(0.0))
    });
    print!("{}", sweep_csv(&rows, "hits@10"));
    Ok(())
}
