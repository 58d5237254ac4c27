//! Training loop for the text encoder under the negative-sampling objective.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{assign_by_name, read_tensors, write_tensors};
use crate::encoder::{is_weight, Dropout, EmbeddingTriple, Encoder, EncoderConfig, EncoderParams, Mode, Tape};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};
use crate::loss::{ns_loss, sample_negatives, LossConfig, NegativeBatch};
use crate::optim::{clip_global_norm, lr_at, AdamState, OptimizerConfig};
use crate::text::{DescriptionCache, TextTokenizer, WordTokenizer};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const PARAMS_FILE: &str = "params.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const LOSS_CSV: &str = "loss.csv";
pub const MANIFEST_SCHEMA: u32 = 1;

/// Positives per parallel work unit. Fixed so summation order does not
/// depend on the thread count.
const CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub encoder: Encoder,
    pub adam: AdamState,
    pub step: u64,
    /// Length of the learning-rate schedule.
    pub total_steps: u64,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub loss_history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(encoder_cfg: EncoderConfig, opt: &OptimizerConfig) -> Result<Self> {
        Ok(Self::from_encoder(Encoder::new(encoder_cfg)?, opt))
    }

    pub fn from_encoder(encoder: Encoder, opt: &OptimizerConfig) -> Self {
        let adam = AdamState::for_shapes(
            encoder
                .params()
                .named()
                .into_iter()
                .map(|(_, t)| t.shape.as_slice()),
        );
        TrainState {
            encoder,
            adam,
            step: 0,
            total_steps: 1,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(opt.seed),
            loss_history: Vec::new(),
        }
    }
}

fn stream_id(positive: usize, seq: usize) -> u64 {
    ((positive as u64) << 32) | seq as u64
}

/// Summed loss and gradient for one positive and its corruptions.
fn positive_objective(
    enc: &Encoder,
    cache: &DescriptionCache,
    index: usize,
    pos: Triple,
    negs: &NegativeBatch,
    b: f64,
    mode: Mode,
    grads: &mut EncoderParams,
) -> Result<f64> {
    let dropout = |j: usize| match mode {
        Mode::Eval => Dropout::Off,
        Mode::Train { seed } => Dropout::On {
            seed,
            stream: stream_id(index, j),
        },
    };
    let (pos_emb, pos_tape) = enc.encode(&cache.encode(pos), dropout(0))?;
    let mut pos_grad = EmbeddingTriple::zeros(enc.hidden_size());
    let mut loss = 0.0;
    let mut j = 1;
    for slot in negs.slots() {
        if slot.is_empty() {
            continue;
        }
        let mut embs = Vec::with_capacity(slot.len());
        let mut tapes: Vec<Tape> = Vec::with_capacity(slot.len());
        for &t in slot {
            let (e, tape) = enc.encode(&cache.encode(t), dropout(j))?;
            j += 1;
            embs.push(e);
            tapes.push(tape);
        }
        let l = ns_loss(&pos_emb, &embs, b)?;
        loss += l.loss;
        pos_grad.add_assign(&l.pos_grad);
        for (tape, g) in tapes.iter().zip(&l.neg_grads) {
            enc.backward_into(tape, g, grads)?;
        }
    }
    enc.backward_into(&pos_tape, &pos_grad, grads)?;
    Ok(loss)
}

/// Negative-sampling loss summed over `positives` (head, relation and tail
/// terms for each) and its gradient with respect to every encoder parameter.
pub fn batch_objective(
    enc: &Encoder,
    cache: &DescriptionCache,
    positives: &[Triple],
    negatives: &[NegativeBatch],
    b: f64,
    mode: Mode,
) -> Result<(f64, EncoderParams)> {
    if positives.len() != negatives.len() {
        return Err(Error::contract("one negative batch is needed per positive"));
    }
    let chunks: Vec<(f64, EncoderParams)> = positives
        .par_chunks(CHUNK)
        .zip(negatives.par_chunks(CHUNK))
        .enumerate()
        .map(|(c, (ps, ns))| {
            let mut grads = EncoderParams::zeros(enc.config());
            let mut loss = 0.0;
            for (i, (&p, n)) in ps.iter().zip(ns).enumerate() {
                loss += positive_objective(enc, cache, c * CHUNK + i, p, n, b, mode, &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut iter = chunks.into_iter();
    let (mut loss, mut grads) = iter
        .next()
        .unwrap_or_else(|| (0.0, EncoderParams::zeros(enc.config())));
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

/// Samples negatives for `batch` from the state's rng and applies one update.
/// Returns the batch loss.
pub fn train_step(
    state: &mut TrainState,
    g: &KnowledgeGraph,
    cache: &DescriptionCache,
    batch: &[Triple],
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
) -> Result<f64> {
    let negatives = batch
        .iter()
        .map(|&p| sample_negatives(g, p, loss_cfg, &mut state.rng))
        .collect::<Result<Vec<_>>>()?;
    let seed = state.rng.next_u64();
    let mode = if state.encoder.config().dropout_rate > 0.0 {
        Mode::Train { seed }
    } else {
        Mode::Eval
    };
    train_step_with_negatives(state, cache, batch, &negatives, loss_cfg, opt, mode)
}

/// One optimizer update against caller-supplied negatives.
pub fn train_step_with_negatives(
    state: &mut TrainState,
    cache: &DescriptionCache,
    batch: &[Triple],
    negatives: &[NegativeBatch],
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
    mode: Mode,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::argument("training batch is empty"));
    }
    let step = state.step;
    let fail = |message: String| Error::Training { step, message };
    let (loss, mut grads) =
        batch_objective(&state.encoder, cache, batch, negatives, loss_cfg.margin, mode)?;
    if !loss.is_finite() {
        return Err(fail(format!("loss is {loss}")));
    }
    if !grads.is_finite() {
        return Err(fail("gradient has non-finite entries".into()));
    }
    if let Some(max) = opt.grad_clip_norm {
        let mut gs: Vec<_> = grads.named_mut().into_iter().map(|(_, t)| t).collect();
        clip_global_norm(&mut gs, max);
    }
    let lr = lr_at(opt, step, state.total_steps);
    let mut named = state.encoder.params_mut().named_mut();
    let decay: Vec<bool> = named.iter().map(|(n, _)| is_weight(n)).collect();
    let mut params: Vec<_> = named.iter_mut().map(|(_, t)| &mut **t).collect();
    let grad_refs: Vec<_> = grads.named().into_iter().map(|(_, t)| t).collect();
    state.adam.update(opt, lr, &mut params, &grad_refs, &decay);
    state.step += 1;
    state.loss_history.push(LossRecord { step, lr, loss });
    Ok(loss)
}

/// Checkpoint metadata, stored as TOML next to the tensor files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    /// `lass` or a shallow model name.
    pub model: String,
    pub step: u64,
    pub epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tokenizer_max_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub encoder: Option<EncoderConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shallow: Option<crate::shallow::ShallowManifest>,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| Error::Load { path, source })?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if m.schema_version != MANIFEST_SCHEMA {
            return Err(Error::Checkpoint(format!(
                "unsupported manifest schema {}",
                m.schema_version
            )));
        }
        Ok(m)
    }
}

pub fn save_checkpoint(
    dir: &Path,
    state: &TrainState,
    tok: &WordTokenizer,
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let named = state.encoder.params().named();
    write_tensors(&dir.join(PARAMS_FILE), named.iter().map(|(n, t)| (n.as_str(), *t)))?;
    let moment_names: Vec<(String, String)> = named
        .iter()
        .map(|(n, _)| (format!("m.{n}"), format!("v.{n}")))
        .collect();
    let moments = moment_names
        .iter()
        .zip(state.adam.m.iter().zip(&state.adam.v))
        .flat_map(|((mn, vn), (m, v))| [(mn.as_str(), m), (vn.as_str(), v)]);
    write_tensors(&dir.join(OPTIMIZER_FILE), moments)?;
    tok.save(&dir.join(VOCAB_FILE))?;
    Manifest {
        schema_version: MANIFEST_SCHEMA,
        model: "lass".into(),
        step: state.step,
        epoch: state.epoch,
        tokenizer_max_len: Some(tok.max_len()),
        encoder: Some(state.encoder.config().clone()),
        shallow: None,
        loss: loss_cfg.clone(),
        optimizer: opt.clone(),
    }
    .write(dir)
}

/// Encoder weights, tokenizer and manifest from a checkpoint directory.
pub fn load_lass_checkpoint(dir: &Path) -> Result<(Encoder, WordTokenizer, Manifest)> {
    let manifest = Manifest::read(dir)?;
    let cfg = manifest
        .encoder
        .clone()
        .filter(|_| manifest.model == "lass")
        .ok_or_else(|| Error::Checkpoint(format!("checkpoint holds a {} model", manifest.model)))?;
    let max_len = manifest.tokenizer_max_len.unwrap_or(cfg.max_len);
    let tok = WordTokenizer::load(&dir.join(VOCAB_FILE), max_len)?;
    if tok.vocab_size() != cfg.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} tokens but the encoder expects {}",
            tok.vocab_size(),
            cfg.vocab_size
        )));
    }
    let mut params = EncoderParams::zeros(&cfg);
    assign_by_name(params.named_mut(), read_tensors(&dir.join(PARAMS_FILE))?)?;
    Ok((Encoder::from_params(cfg, params)?, tok, manifest))
}

pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for r in history {
        s.push_str(&format!("{},{},{}\n", r.step, r.lr, r.loss));
    }
    s
}

/// Fills in the vocabulary size from `tok` and checks the position table
/// covers the tokenizer's `max_len`.
pub fn resolve_encoder_config(mut cfg: EncoderConfig, tok: &dyn TextTokenizer) -> Result<EncoderConfig> {
    if cfg.vocab_size == 0 {
        cfg.vocab_size = tok.vocab_size();
    } else if cfg.vocab_size != tok.vocab_size() {
        return Err(Error::argument(format!(
            "encoder vocab_size {} differs from tokenizer vocabulary {}",
            cfg.vocab_size,
            tok.vocab_size()
        )));
    }
    if cfg.max_len < tok.max_len() {
        return Err(Error::argument(format!(
            "encoder max_len {} is shorter than tokenizer max_len {}",
            cfg.max_len,
            tok.max_len()
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Full training run: seeded shuffles per epoch, one checkpoint per epoch
/// under `checkpoint_dir/epoch-N` plus `checkpoint_dir/final`, and the loss
/// history as `checkpoint_dir/loss.csv`.
pub fn train(
    g: &KnowledgeGraph,
    tok: &WordTokenizer,
    encoder_cfg: &EncoderConfig,
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainState> {
    loss_cfg.validate()?;
    opt.validate()?;
    if g.train().is_empty() {
        return Err(Error::argument("training split is empty"));
    }
    let cfg = resolve_encoder_config(encoder_cfg.clone(), tok)?;
    let cache = DescriptionCache::new(tok, g)?;
    let mut state = TrainState::new(cfg, opt)?;
    let per_epoch = g.train().len().div_ceil(opt.batch_size) as u64;
    state.total_steps = (per_epoch * opt.epochs as u64).max(1);

    let mut order: Vec<Triple> = g.train().to_vec();
    for epoch in 0..opt.epochs {
        order.shuffle(&mut state.rng);
        for batch in order.chunks(opt.batch_size) {
            train_step(&mut state, g, &cache, batch, loss_cfg, opt)?;
        }
        state.epoch = epoch + 1;
        if let Some(dir) = checkpoint_dir {
            save_checkpoint(&dir.join(format!("epoch-{}", epoch + 1)), &state, tok, loss_cfg, opt)?;
        }
    }
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(&dir.join("final"), &state, tok, loss_cfg, opt)?;
        fs::write(dir.join(LOSS_CSV), loss_csv(&state.loss_history))?;
    }
    Ok(state)
}

/// Mean loss over `batch` with fixed negatives, dropout off.
pub fn eval_loss(
    enc: &Encoder,
    cache: &DescriptionCache,
    batch: &[Triple],
    negatives: &[NegativeBatch],
    b: f64,
) -> Result<f64> {
    let (loss, _) = batch_objective(enc, cache, batch, negatives, b, Mode::Eval)?;
    Ok(loss / batch.len().max(1) as f64)
}
