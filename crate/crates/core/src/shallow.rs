//! Lookup-table baselines: TransE, DistMult, ComplEx and RotatE.
//!
//! Complex-valued tables store each row as `[re₀ … re_{k−1}, im₀ … im_{k−1}]`.
//! RotatE relations are `k` phase angles θ, read as `e^{iθ}`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{assign_by_name, read_tensors, write_tensors};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};
use crate::loss::{ns_loss_scores, sample_negatives, LossConfig};
use crate::optim::{lr_at, AdamState, OptimizerConfig};
use crate::tensor::Tensor;
use crate::trainer::{LossRecord, Manifest, MANIFEST_SCHEMA, PARAMS_FILE};

/// A closed-form triple score over embedding rows, with its gradient.
pub trait ScoreFunction: Sync {
    fn name(&self) -> &'static str;
    fn entity_width(&self, k: usize) -> usize;
    fn relation_width(&self, k: usize) -> usize;
    /// Distance-style scores (≤ 0) get the loss margin added before the sigmoid.
    fn uses_margin(&self) -> bool;
    fn score(&self, h: &[f64], r: &[f64], t: &[f64]) -> f64;
    /// Accumulates `upstream · ∂score` into the three gradient rows.
    fn grad(&self, h: &[f64], r: &[f64], t: &[f64], upstream: f64, dh: &mut [f64], dr: &mut [f64], dt: &mut [f64]);
    fn init_relation(&self, row: &mut [f64], bound: f64, rng: &mut ChaCha8Rng) {
        row.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
    }
}

pub struct TransE;
pub struct DistMult;
pub struct ComplEx;
pub struct RotatE;

impl ScoreFunction for TransE {
    fn name(&self) -> &'static str {
        "transe"
    }
    fn entity_width(&self, k: usize) -> usize {
        k
    }
    fn relation_width(&self, k: usize) -> usize {
        k
    }
    fn uses_margin(&self) -> bool {
        true
    }
    /// `−‖h + r − t‖₂`
    fn score(&self, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
        -h.iter()
            .zip(r)
            .zip(t)
            .map(|((h, r), t)| (h + r - t).powi(2))
            .sum::<f64>()
            .sqrt()
    }
    fn grad(&self, h: &[f64], r: &[f64], t: &[f64], up: f64, dh: &mut [f64], dr: &mut [f64], dt: &mut [f64]) {
        let norm = -self.score(h, r, t);
        if norm == 0.0 {
            return;
        }
        for i in 0..h.len() {
            let d = (h[i] + r[i] - t[i]) / norm * up;
            dh[i] -= d;
            dr[i] -= d;
            dt[i] += d;
        }
    }
}

impl ScoreFunction for DistMult {
    fn name(&self) -> &'static str {
        "distmult"
    }
    fn entity_width(&self, k: usize) -> usize {
        k
    }
    fn relation_width(&self, k: usize) -> usize {
        k
    }
    fn uses_margin(&self) -> bool {
        false
    }
    /// `Σ rᵢ hᵢ tᵢ`
    fn score(&self, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
        h.iter().zip(r).zip(t).map(|((h, r), t)| h * r * t).sum()
    }
    fn grad(&self, h: &[f64], r: &[f64], t: &[f64], up: f64, dh: &mut [f64], dr: &mut [f64], dt: &mut [f64]) {
        for i in 0..h.len() {
            dh[i] += up * r[i] * t[i];
            dr[i] += up * h[i] * t[i];
            dt[i] += up * h[i] * r[i];
        }
    }
}

impl ScoreFunction for ComplEx {
    fn name(&self) -> &'static str {
        "complex"
    }
    fn entity_width(&self, k: usize) -> usize {
        2 * k
    }
    fn relation_width(&self, k: usize) -> usize {
        2 * k
    }
    fn uses_margin(&self) -> bool {
        false
    }
    /// `Re(Σ rᵢ hᵢ conj(tᵢ))`
    fn score(&self, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
        let k = h.len() / 2;
        let (hr, hi) = h.split_at(k);
        let (rr, ri) = r.split_at(k);
        let (tr, ti) = t.split_at(k);
        (0..k)
            .map(|i| {
                // (rr + i·ri)(hr + i·hi) = a + i·b; Re((a + i·b)(tr − i·ti)) = a·tr + b·ti
                let a = rr[i] * hr[i] - ri[i] * hi[i];
                let b = rr[i] * hi[i] + ri[i] * hr[i];
                a * tr[i] + b * ti[i]
            })
            .sum()
    }
    fn grad(&self, h: &[f64], r: &[f64], t: &[f64], up: f64, dh: &mut [f64], dr: &mut [f64], dt: &mut [f64]) {
        let k = h.len() / 2;
        for i in 0..k {
            let (hr, hi) = (h[i], h[k + i]);
            let (rr, ri) = (r[i], r[k + i]);
            let (tr, ti) = (t[i], t[k + i]);
            dh[i] += up * (rr * tr + ri * ti);
            dh[k + i] += up * (-ri * tr + rr * ti);
            dr[i] += up * (hr * tr + hi * ti);
            dr[k + i] += up * (-hi * tr + hr * ti);
            dt[i] += up * (rr * hr - ri * hi);
            dt[k + i] += up * (rr * hi + ri * hr);
        }
    }
}

impl ScoreFunction for RotatE {
    fn name(&self) -> &'static str {
        "rotate"
    }
    fn entity_width(&self, k: usize) -> usize {
        2 * k
    }
    fn relation_width(&self, k: usize) -> usize {
        k
    }
    fn uses_margin(&self) -> bool {
        true
    }
    /// `−‖h ∘ e^{iθ} − t‖²`
    fn score(&self, h: &[f64], theta: &[f64], t: &[f64]) -> f64 {
        let k = theta.len();
        -(0..k)
            .map(|i| {
                let (c, s) = (theta[i].cos(), theta[i].sin());
                let dr = h[i] * c - h[k + i] * s - t[i];
                let di = h[i] * s + h[k + i] * c - t[k + i];
                dr * dr + di * di
            })
            .sum::<f64>()
    }
    fn grad(&self, h: &[f64], theta: &[f64], t: &[f64], up: f64, dh: &mut [f64], dth: &mut [f64], dt: &mut [f64]) {
        let k = theta.len();
        for i in 0..k {
            let (c, s) = (theta[i].cos(), theta[i].sin());
            let (hr, hi) = (h[i], h[k + i]);
            let dr = hr * c - hi * s - t[i];
            let di = hr * s + hi * c - t[k + i];
            dh[i] += -2.0 * up * (dr * c + di * s);
            dh[k + i] += -2.0 * up * (-dr * s + di * c);
            dth[i] += -2.0 * up * (dr * (-hr * s - hi * c) + di * (hr * c - hi * s));
            dt[i] += 2.0 * up * dr;
            dt[k + i] += 2.0 * up * di;
        }
    }
    fn init_relation(&self, row: &mut [f64], _bound: f64, rng: &mut ChaCha8Rng) {
        row.iter_mut()
            .for_each(|x| *x = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShallowKind {
    TransE,
    DistMult,
    ComplEx,
    RotatE,
}

impl ShallowKind {
    pub const ALL: [ShallowKind; 4] = [
        ShallowKind::TransE,
        ShallowKind::DistMult,
        ShallowKind::ComplEx,
        ShallowKind::RotatE,
    ];

    pub fn function(self) -> &'static dyn ScoreFunction {
        match self {
            ShallowKind::TransE => &TransE,
            ShallowKind::DistMult => &DistMult,
            ShallowKind::ComplEx => &ComplEx,
            ShallowKind::RotatE => &RotatE,
        }
    }
}

impl fmt::Display for ShallowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.function().name())
    }
}

impl FromStr for ShallowKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ShallowKind::ALL
            .into_iter()
            .find(|k| k.function().name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::argument(format!("unknown shallow model {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShallowManifest {
    pub kind: ShallowKind,
    pub k: usize,
    pub num_entities: usize,
    pub num_relations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShallowModel {
    pub kind: ShallowKind,
    pub k: usize,
    pub entity_table: Tensor,
    pub relation_table: Tensor,
}

impl ShallowModel {
    /// Tables drawn from uniform(−6/√k, 6/√k); RotatE phases from uniform(−π, π).
    pub fn new(kind: ShallowKind, num_entities: usize, num_relations: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::argument("embedding dimension must be positive"));
        }
        let f = kind.function();
        let mut m = Self::zeros(kind, num_entities, num_relations, k);
        let bound = 6.0 / (k as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.entity_table
            .data
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-bound..bound));
        for r in 0..num_relations {
            f.init_relation(m.relation_table.row_mut(r), bound, &mut rng);
        }
        Ok(m)
    }

    pub fn zeros(kind: ShallowKind, num_entities: usize, num_relations: usize, k: usize) -> Self {
        let f = kind.function();
        ShallowModel {
            kind,
            k,
            entity_table: Tensor::zeros(&[num_entities, f.entity_width(k)]),
            relation_table: Tensor::zeros(&[num_relations, f.relation_width(k)]),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entity_table.shape[0]
    }

    pub fn num_relations(&self) -> usize {
        self.relation_table.shape[0]
    }

    pub fn score(&self, t: Triple) -> f64 {
        self.kind.function().score(
            self.entity_table.row(t.head),
            self.relation_table.row(t.relation),
            self.entity_table.row(t.tail),
        )
    }

    /// Score fed to the sigmoid during training.
    pub fn logit(&self, t: Triple, margin: f64) -> f64 {
        let s = self.score(t);
        if self.kind.function().uses_margin() {
            margin + s
        } else {
            s
        }
    }

    fn accumulate_grad(&self, t: Triple, up: f64, grads: &mut ShallowModel) {
        let f = self.kind.function();
        let h = self.entity_table.row(t.head);
        let r = self.relation_table.row(t.relation);
        let tl = self.entity_table.row(t.tail);
        let we = h.len();
        let mut dh = vec![0.0; we];
        let mut dt = vec![0.0; we];
        let mut dr = vec![0.0; r.len()];
        f.grad(h, r, tl, up, &mut dh, &mut dr, &mut dt);
        grads
            .entity_table
            .row_mut(t.head)
            .iter_mut()
            .zip(&dh)
            .for_each(|(a, b)| *a += b);
        grads
            .entity_table
            .row_mut(t.tail)
            .iter_mut()
            .zip(&dt)
            .for_each(|(a, b)| *a += b);
        grads
            .relation_table
            .row_mut(t.relation)
            .iter_mut()
            .zip(&dr)
            .for_each(|(a, b)| *a += b);
    }

    pub fn is_finite(&self) -> bool {
        self.entity_table.data.iter().all(|x| x.is_finite())
            && self.relation_table.data.iter().all(|x| x.is_finite())
    }

    pub fn save(&self, dir: &Path, loss_cfg: &LossConfig, opt: &OptimizerConfig, step: u64, epoch: usize) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_tensors(
            &dir.join(PARAMS_FILE),
            [
                ("entity_table", &self.entity_table),
                ("relation_table", &self.relation_table),
            ],
        )?;
        Manifest {
            schema_version: MANIFEST_SCHEMA,
            model: self.kind.to_string(),
            step,
            epoch,
            tokenizer_max_len: None,
            encoder: None,
            shallow: Some(ShallowManifest {
                kind: self.kind,
                k: self.k,
                num_entities: self.num_entities(),
                num_relations: self.num_relations(),
            }),
            loss: loss_cfg.clone(),
            optimizer: opt.clone(),
        }
        .write(dir)
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let manifest = Manifest::read(dir)?;
        let sm = manifest
            .shallow
            .clone()
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint holds a {} model", manifest.model)))?;
        let mut m = Self::zeros(sm.kind, sm.num_entities, sm.num_relations, sm.k);
        assign_by_name(
            vec![
                ("entity_table".into(), &mut m.entity_table),
                ("relation_table".into(), &mut m.relation_table),
            ],
            read_tensors(&dir.join(PARAMS_FILE))?,
        )?;
        Ok((m, manifest))
    }
}

/// Optimizer settings for lookup-table training on small graphs such as UMLS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShallowRecipe {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
}

impl ShallowRecipe {
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            warmup_fraction: self.warmup_fraction,
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }
}

pub const UMLS_RECIPE: ShallowRecipe = ShallowRecipe {
    learning_rate: 0.01,
    epochs: 100,
    batch_size: 128,
    warmup_fraction: 0.0,
    weight_decay: 0.0,
};

#[derive(Debug, Clone)]
pub struct ShallowTraining {
    pub model: ShallowModel,
    pub loss_history: Vec<LossRecord>,
    pub step: u64,
}

/// Trains the tables with the negative-sampling loss, using the shallow
/// score (plus margin for distance-style models) in place of the encoder score.
pub fn train_shallow(
    g: &KnowledgeGraph,
    model: ShallowModel,
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
) -> Result<ShallowTraining> {
    loss_cfg.validate()?;
    opt.validate()?;
    if model.num_entities() != g.num_entities() || model.num_relations() != g.num_relations() {
        return Err(Error::argument(format!(
            "model tables ({} entities, {} relations) do not match the graph ({}, {})",
            model.num_entities(),
            model.num_relations(),
            g.num_entities(),
            g.num_relations()
        )));
    }
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut adam = AdamState::for_shapes([
        model.entity_table.shape.as_slice(),
        model.relation_table.shape.as_slice(),
    ]);
    let per_epoch = g.train().len().div_ceil(opt.batch_size) as u64;
    let total = (per_epoch * opt.epochs as u64).max(1);
    let mut history = Vec::new();
    let mut step = 0u64;
    let mut order = g.train().to_vec();
    let b = loss_cfg.margin;
    for _ in 0..opt.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(opt.batch_size) {
            let mut grads = ShallowModel::zeros(model.kind, model.num_entities(), model.num_relations(), model.k);
            let mut loss = 0.0;
            for &pos in batch {
                let negs = sample_negatives(g, pos, loss_cfg, &mut rng)?;
                for slot in negs.slots() {
                    if slot.is_empty() {
                        continue;
                    }
                    let neg_scores: Vec<f64> = slot.iter().map(|&n| model.logit(n, b)).collect();
                    let (l, d_pos, d_negs) = ns_loss_scores(model.logit(pos, b), &neg_scores)?;
                    loss += l;
                    model.accumulate_grad(pos, d_pos, &mut grads);
                    for (&n, &d) in slot.iter().zip(&d_negs) {
                        model.accumulate_grad(n, d, &mut grads);
                    }
                }
            }
            if !loss.is_finite() {
                return Err(Error::Training {
                    step,
                    message: format!("loss is {loss}"),
                });
            }
            let lr = lr_at(opt, step, total);
            adam.update(
                opt,
                lr,
                &mut [&mut model.entity_table, &mut model.relation_table],
                &[&grads.entity_table, &grads.relation_table],
                &[true, true],
            );
            if !model.is_finite() {
                return Err(Error::Training {
                    step,
                    message: "embedding tables diverged".into(),
                });
            }
            history.push(LossRecord { step, lr, loss });
            step += 1;
        }
    }
    Ok(ShallowTraining {
        model,
        loss_history: history,
        step,
    })
}
