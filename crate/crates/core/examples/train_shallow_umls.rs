//! Trains a shallow baseline on the bundled UMLS graph and reports filtered
//! link-prediction metrics.
//!
//! cargo run --release --example train_shallow_umls -- [transe|distmult|complex|rotate] [epochs]

use std::path::Path;
use std::time::Instant;

use lass::eval::{link_prediction, ranking_table, ShallowScorer};
use lass::graph::{load_graph, DatasetFormat};
use lass::loss::LossConfig;
use lass::optim::OptimizerConfig;
use lass::shallow::{train_shallow, ShallowKind, ShallowModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let kind: ShallowKind = args.next().as_deref().unwrap_or("transe").parse()?;
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(lass::shallow::UMLS_RECIPE.epochs);

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/umls");
    let g = load_graph(&dir, DatasetFormat::LinkPrediction)?;
    println!(
        "UMLS: {} entities, {} relations, {}/{}/{} train/valid/test",
        g.num_entities(),
        g.num_relations(),
        g.train().len(),
        g.valid().len(),
        g.test().len()
    );

    let opt = OptimizerConfig {
        epochs,
        ..lass::shallow::UMLS_RECIPE.optimizer()
    };
    let model = ShallowModel::new(kind, g.num_entities(), g.num_relations(), 128, opt.seed)?;
    let start = Instant::now();
    let trained = train_shallow(&g, model, &LossConfig::default(), &opt)?;
    let last = trained.loss_history.last().map_or(f64::NAN, |r| r.loss);
    println!("{kind}: {} steps in {:.1?}, final batch loss {last:.3}", trained.step, start.elapsed());

    let out = link_prediction(&ShallowScorer(&trained.model), &g)?;
    print!("{}", ranking_table(&out));
    Ok(())
}
