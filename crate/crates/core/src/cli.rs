//! The `lass` command line: `train`, `eval-lp`, `eval-tc`, `sweep` and
//! `subsample`.
//!
//! Exit status is 0 on success, 1 when a run fails and 2 for usage or
//! configuration errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ModelKind, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{
    classification_csv, classification_table, link_prediction_with, low_resource_sweep, ranking_csv, ranking_table,
    sweep_csv, triplet_classification, tune_threshold, KnownPositiveScorer, LassScorer, Scorer, ShallowScorer,
    SweepRow,
};
use crate::graph::{load_graph, DatasetFormat, KnowledgeGraph, SubsampleSpec};
use crate::shallow::{train_shallow, ShallowModel};
use crate::text::WordTokenizer;
use crate::trainer::{self, load_lass_checkpoint, loss_csv, Manifest, LOSS_CSV};
use crate::encoder::Encoder;

pub const RANKING_CSV: &str = "ranking.csv";
pub const CLASSIFICATION_CSV: &str = "classification.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const FINAL_CHECKPOINT: &str = "final";
pub const THREADS_ENV: &str = "LASS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "lass", version, about = "Knowledge-graph embedding from descriptions and structure")]
pub struct Cli {
    /// Worker thread cap.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Top-level seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint directory; defaults to `<output dir>/final`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score with a stub that ranks every known positive first.
    #[arg(long, hide = true)]
    pub oracle_stub: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the configured model and write checkpoints and the loss CSV.
    Train(Common),
    /// Filtered link prediction on the test split.
    EvalLp(EvalArgs),
    /// Threshold-tuned triplet classification on the labeled test split.
    EvalTc(EvalArgs),
    /// Train and evaluate on subsampled training splits.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated training fractions in (0, 1].
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Write a dataset directory with a subsampled training split.
    Subsample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fraction: f64,
    },
}

/// A failed command and its exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(Error),
    Runtime(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage(e: Error) -> Failure {
    Failure::Usage(e)
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(e)
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::EvalLp(a) => cmd_eval_lp(a),
        Command::EvalTc(a) => cmd_eval_tc(a),
        Command::Sweep { common, fractions } => cmd_sweep(common, fractions.as_deref()),
        Command::Subsample { common, fraction } => cmd_subsample(common, *fraction),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            match &f {
                Failure::Usage(e) | Failure::Runtime(e) => eprintln!("error: {e}"),
            }
            f.exit_code()
        }
    }
}

struct Setup {
    cfg: RunConfig,
    out: PathBuf,
}

fn setup(c: &Common) -> Outcome<Setup> {
    let mut cfg = RunConfig::load(&c.config).map_err(usage)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if !cfg.data_dir.is_dir() {
        return Err(usage(Error::Config(format!(
            "data_dir {} is not a directory",
            cfg.data_dir.display()
        ))));
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| usage(Error::Config("no output directory: set output_dir or pass --out".into())))?;
    Ok(Setup { cfg, out })
}

fn load_data(cfg: &RunConfig) -> Result<KnowledgeGraph> {
    let format = DatasetFormat::detect(&cfg.data_dir)?;
    load_graph(&cfg.data_dir, format)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// A trained model ready for scoring.
pub enum Trained {
    Lass { encoder: Encoder, tokenizer: WordTokenizer },
    Shallow(ShallowModel),
}

impl Trained {
    pub fn scorer<'a>(&'a self, g: &KnowledgeGraph, margin: f64) -> Result<Box<dyn Scorer + 'a>> {
        Ok(match self {
            Trained::Lass { encoder, tokenizer } => Box::new(LassScorer::new(encoder, tokenizer, g, margin)?),
            Trained::Shallow(m) => {
                if m.num_entities() != g.num_entities() || m.num_relations() != g.num_relations() {
                    return Err(Error::Checkpoint(format!(
                        "checkpoint tables cover {} entities and {} relations but the dataset has {} and {}",
                        m.num_entities(),
                        m.num_relations(),
                        g.num_entities(),
                        g.num_relations()
                    )));
                }
                Box::new(ShallowScorer(m))
            }
        })
    }
}

/// Trains the configured model on `g`, writing checkpoints and the loss CSV
/// under `out` when given.
pub fn train_model(cfg: &RunConfig, g: &KnowledgeGraph, out: Option<&Path>) -> Result<(Trained, Vec<trainer::LossRecord>)> {
    let opt = cfg.optimizer_config();
    match cfg.model {
        ModelKind::Lass => {
            let tc = cfg.tokenizer_config();
            let tokenizer = WordTokenizer::build_vocab(g, tc.min_count, tc.max_len)?;
            let state = trainer::train(g, &tokenizer, &cfg.encoder_config(), &cfg.loss, &opt, out)?;
            Ok((
                Trained::Lass {
                    encoder: state.encoder,
                    tokenizer,
                },
                state.loss_history,
            ))
        }
        ModelKind::Shallow(kind) => {
            let model = ShallowModel::new(kind, g.num_entities(), g.num_relations(), cfg.shallow_config().k, cfg.seeds().init)?;
            let run = train_shallow(g, model, &cfg.loss, &opt)?;
            if let Some(dir) = out {
                run.model
                    .save(&dir.join(FINAL_CHECKPOINT), &cfg.loss, &opt, run.step, opt.epochs)?;
                write(&dir.join(LOSS_CSV), &loss_csv(&run.loss_history))?;
            }
            Ok((Trained::Shallow(run.model), run.loss_history))
        }
    }
}

/// Loads a checkpoint, requiring it to hold the configured model.
pub fn load_checkpoint(cfg: &RunConfig, dir: &Path) -> Result<Trained> {
    let manifest = Manifest::read(dir)?;
    if manifest.model != cfg.model.to_string() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds a {} model but the config asks for {}",
            manifest.model, cfg.model
        )));
    }
    Ok(match cfg.model {
        ModelKind::Lass => {
            let (encoder, tokenizer, _) = load_lass_checkpoint(dir)?;
            Trained::Lass { encoder, tokenizer }
        }
        ModelKind::Shallow(_) => Trained::Shallow(ShallowModel::load(dir)?.0),
    })
}

fn cmd_train(c: &Common) -> Outcome {
    let Setup { cfg, out } = setup(c)?;
    let g = load_data(&cfg).map_err(runtime)?;
    let (_, history) = train_model(&cfg, &g, Some(&out)).map_err(runtime)?;
    let last = history.last().map_or("n/a".to_string(), |r| format!("{:.4}", r.loss));
    println!("{:<16}{}", "model", cfg.model);
    println!("{:<16}{}", "train triples", g.train().len());
    println!("{:<16}{}", "steps", history.len());
    println!("{:<16}{}", "final loss", last);
    println!("{:<16}{}", "output", out.display());
    Ok(())
}

fn eval_scorer_then<F>(a: &EvalArgs, f: F) -> Outcome
where
    F: FnOnce(&RunConfig, &Path, &KnowledgeGraph, &dyn Scorer) -> Result<()>,
{
    let Setup { cfg, out } = setup(&a.common)?;
    let g = load_data(&cfg).map_err(runtime)?;
    if a.oracle_stub {
        return f(&cfg, &out, &g, &KnownPositiveScorer(&g)).map_err(runtime);
    }
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| out.join(FINAL_CHECKPOINT));
    let trained = load_checkpoint(&cfg, &ckpt).map_err(runtime)?;
    let scorer = trained.scorer(&g, cfg.loss.margin).map_err(runtime)?;
    f(&cfg, &out, &g, scorer.as_ref()).map_err(runtime)
}

fn cmd_eval_lp(a: &EvalArgs) -> Outcome {
    eval_scorer_then(a, |cfg, out, g, scorer| {
        let res = link_prediction_with(scorer, g, &cfg.eval.cutoffs, cfg.eval.tie_policy)?;
        print!("{}", ranking_table(&res));
        write(&out.join(RANKING_CSV), &ranking_csv(&res, g))
    })
}

fn cmd_eval_tc(a: &EvalArgs) -> Outcome {
    eval_scorer_then(a, |_, out, g, scorer| {
        if !g.is_labeled() {
            return Err(Error::argument(
                "dataset has no labeled valid/test splits (a fourth 1/-1 column); triplet classification needs labeled negatives",
            ));
        }
        let fit = tune_threshold(scorer, g)?;
        let rep = triplet_classification(scorer, g, fit.threshold)?;
        print!("{}", classification_table(&rep, g, 10));
        write(&out.join(CLASSIFICATION_CSV), &classification_csv(&rep, g))
    })
}

/// Accuracy for labeled datasets, Hits@10 otherwise.
pub fn sweep_metric(cfg: &RunConfig, g: &KnowledgeGraph, trained: &Trained) -> Result<f64> {
    let scorer = trained.scorer(g, cfg.loss.margin)?;
    if g.is_labeled() {
        let fit = tune_threshold(scorer.as_ref(), g)?;
        Ok(triplet_classification(scorer.as_ref(), g, fit.threshold)?.accuracy)
    } else {
        let res = link_prediction_with(scorer.as_ref(), g, &[10], cfg.eval.tie_policy)?;
        Ok(res.hits[0].1)
    }
}

pub fn sweep_metric_name(g: &KnowledgeGraph) -> &'static str {
    if g.is_labeled() {
        "accuracy"
    } else {
        "hits@10"
    }
}

/// Runs the low-resource sweep for `cfg` over `fractions`.
pub fn run_sweep(cfg: &RunConfig, g: &KnowledgeGraph, fractions: &[f64]) -> Vec<SweepRow> {
    low_resource_sweep(g, fractions, cfg.seeds().subsample, |_, sub| {
        let (trained, _) = train_model(cfg, sub, None)?;
        sweep_metric(cfg, sub, &trained)
    })
}

fn cmd_sweep(c: &Common, fractions: Option<&[f64]>) -> Outcome {
    let Setup { cfg, out } = setup(c)?;
    let fractions = fractions.map_or_else(|| cfg.sweep.fractions.clone(), <[f64]>::to_vec);
    if fractions.is_empty() {
        return Err(usage(Error::Config("no fractions given".into())));
    }
    for &f in &fractions {
        SubsampleSpec::new(f, 0).map_err(usage)?;
    }
    let g = load_data(&cfg).map_err(runtime)?;
    let rows = run_sweep(&cfg, &g, &fractions);
    let name = sweep_metric_name(&g);
    println!("{:>10}{:>12}{:>12}  status", "fraction", "train size", name);
    for r in &rows {
        match &r.outcome {
            Ok(m) => println!("{:>10.2}{:>12}{:>12.3}  ok", r.fraction, r.train_size, m),
            Err(e) => println!("{:>10.2}{:>12}{:>12}  error: {e}", r.fraction, r.train_size, "-"),
        }
    }
    write(&out.join(SWEEP_CSV), &sweep_csv(&rows, name)).map_err(runtime)?;
    if rows.iter().all(|r| r.outcome.is_err()) {
        return Err(runtime(Error::Training {
            step: 0,
            message: "every sweep row failed".into(),
        }));
    }
    Ok(())
}

fn cmd_subsample(c: &Common, fraction: f64) -> Outcome {
    let Setup { cfg, out } = setup(c)?;
    let spec = SubsampleSpec::new(fraction, crate::eval::derive_seed(cfg.seeds().subsample, fraction)).map_err(usage)?;
    let g = load_data(&cfg).map_err(runtime)?;
    let sub = g.subsample_train(spec).map_err(runtime)?;
    sub.save(&out).map_err(runtime)?;
    println!("kept {} of {} training triples in {}", sub.train().len(), g.train().len(), out.display());
    Ok(())
}
