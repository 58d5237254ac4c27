//! Translation score, softmax probabilities, negative sampler and the
//! negative-sampling objective.
//!
//! For embeddings `(h, r, t)` the score is `f = b − ½‖h + r − t‖²`. One
//! positive and its corruptions of a single slot contribute
//!
//! ```text
//! L = −log σ(f(pos)) − Σᵢ log(1 − σ(f(negᵢ)))
//! ```
//!
//! and a positive's total is the sum over the head, relation and tail slots.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingTriple, Encoder, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};
use crate::text::DescriptionCache;

pub const DEFAULT_MARGIN: f64 = 7.0;
pub const DEFAULT_NUM_NEGATIVES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Additive constant `b` in the score.
    pub margin: f64,
    /// Negatives drawn per corrupted slot.
    pub n_ns: usize,
    pub corrupt_heads: bool,
    pub corrupt_relations: bool,
    pub corrupt_tails: bool,
    /// What to do when a slot has fewer than `n_ns` admissible candidates.
    pub short_slot: ShortSlot,
}

/// Handling of a corruption slot whose admissible candidates number fewer
/// than `n_ns` (a relation whose heads cover almost every entity, say).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortSlot {
    /// Train against every admissible candidate, possibly none.
    #[default]
    UseAll,
    /// Fail with a sampling error naming the triple.
    Error,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: DEFAULT_MARGIN,
            n_ns: DEFAULT_NUM_NEGATIVES,
            corrupt_heads: true,
            corrupt_relations: true,
            corrupt_tails: true,
            short_slot: ShortSlot::UseAll,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ns == 0 {
            return Err(Error::argument("n_ns must be at least 1"));
        }
        if !self.margin.is_finite() {
            return Err(Error::argument("margin must be finite"));
        }
        if !(self.corrupt_heads || self.corrupt_relations || self.corrupt_tails) {
            return Err(Error::argument("at least one corruption mode must be enabled"));
        }
        Ok(())
    }
}

fn check_dims(e: &EmbeddingTriple) -> Result<usize> {
    let k = e.h.len();
    if e.r.len() != k || e.t.len() != k {
        return Err(Error::contract(format!(
            "embedding lengths differ: h={}, r={}, t={}",
            e.h.len(),
            e.r.len(),
            e.t.len()
        )));
    }
    Ok(k)
}

/// `b − ½‖h + r − t‖²`.
pub fn score(e: &EmbeddingTriple, b: f64) -> Result<f64> {
    check_dims(e)?;
    let sq: f64 = e
        .h
        .iter()
        .zip(&e.r)
        .zip(&e.t)
        .map(|((h, r), t)| {
            let d = h + r - t;
            d * d
        })
        .sum();
    Ok(b - 0.5 * sq)
}

/// `∂f/∂(h, r, t)` scaled by `upstream`.
pub fn score_grad(e: &EmbeddingTriple, upstream: f64) -> EmbeddingTriple {
    let residual: Vec<f64> = e
        .h
        .iter()
        .zip(&e.r)
        .zip(&e.t)
        .map(|((h, r), t)| h + r - t)
        .collect();
    let minus: Vec<f64> = residual.iter().map(|d| -upstream * d).collect();
    EmbeddingTriple {
        h: minus.clone(),
        r: minus,
        t: residual.iter().map(|d| upstream * d).collect(),
    }
}

/// `log σ(x)` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Negative-sampling loss on raw scores and its derivative with respect to
/// each score.
pub fn ns_loss_scores(pos: f64, negs: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
    if negs.is_empty() {
        return Err(Error::argument("negative-sampling loss needs at least one negative"));
    }
    let mut loss = -log_sigmoid(pos);
    let d_pos = sigmoid(pos) - 1.0;
    let mut d_negs = Vec::with_capacity(negs.len());
    for &s in negs {
        loss -= log_sigmoid(-s);
        d_negs.push(sigmoid(s));
    }
    Ok((loss, d_pos, d_negs))
}

/// Loss value plus gradients with respect to every embedding passed in.
#[derive(Debug, Clone, PartialEq)]
pub struct NsLoss {
    pub loss: f64,
    pub pos_grad: EmbeddingTriple,
    pub neg_grads: Vec<EmbeddingTriple>,
}

pub fn ns_loss(pos: &EmbeddingTriple, negs: &[EmbeddingTriple], b: f64) -> Result<NsLoss> {
    if negs.is_empty() {
        return Err(Error::argument("negative-sampling loss needs at least one negative"));
    }
    let k = check_dims(pos)?;
    for n in negs {
        if check_dims(n)? != k {
            return Err(Error::contract("negative embeddings differ in dimension"));
        }
    }
    let pos_score = score(pos, b)?;
    let neg_scores: Vec<f64> = negs.iter().map(|n| score(n, b)).collect::<Result<_>>()?;
    let (loss, d_pos, d_negs) = ns_loss_scores(pos_score, &neg_scores)?;
    Ok(NsLoss {
        loss,
        pos_grad: score_grad(pos, d_pos),
        neg_grads: negs
            .iter()
            .zip(&d_negs)
            .map(|(n, &d)| score_grad(n, d))
            .collect(),
    })
}

/// Corruptions of one positive triple, one list per slot.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NegativeBatch {
    pub heads: Vec<Triple>,
    pub relations: Vec<Triple>,
    pub tails: Vec<Triple>,
}

impl NegativeBatch {
    pub fn len(&self) -> usize {
        self.heads.len() + self.relations.len() + self.tails.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slots(&self) -> [&[Triple]; 3] {
        [&self.heads, &self.relations, &self.tails]
    }
}

/// Draws `n` distinct ids from `0..total` minus `exclude`, each passing
/// `admissible`, uniformly without replacement.
fn draw_distinct<R: Rng + ?Sized>(
    total: usize,
    exclude: usize,
    n: usize,
    admissible: impl Fn(usize) -> bool,
    short: ShortSlot,
    rng: &mut R,
) -> std::result::Result<Vec<usize>, String> {
    if total <= n && short == ShortSlot::Error {
        return Err(format!("only {} candidates for {n} negatives", total.saturating_sub(1)));
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let mut misses = 0usize;
    let miss_limit = 32 + n;
    while chosen.len() < n && misses < miss_limit && total > 1 {
        let mut c = rng.random_range(0..total - 1);
        if c >= exclude {
            c += 1;
        }
        if chosen.contains(&c) || !admissible(c) {
            misses += 1;
            continue;
        }
        misses = 0;
        chosen.push(c);
    }
    if chosen.len() < n {
        // Dense rejection region: sample from the explicit admissible set.
        let mut rest: Vec<usize> = (0..total)
            .filter(|&c| c != exclude && !chosen.contains(&c) && admissible(c))
            .collect();
        let need = n - chosen.len();
        if rest.len() < need && short == ShortSlot::Error {
            return Err(format!(
                "only {} admissible candidates for {n} negatives",
                rest.len() + chosen.len()
            ));
        }
        let need = need.min(rest.len());
        let (picked, _) = rest.partial_shuffle(rng, need);
        chosen.extend_from_slice(picked);
    }
    Ok(chosen)
}

/// Corrupts each enabled slot of `pos` `cfg.n_ns` times. Candidates that are
/// known positives are rejected and redrawn.
pub fn sample_negatives<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    pos: Triple,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<NegativeBatch> {
    cfg.validate()?;
    let fail = |message: String| Error::Sampling {
        triple: format!(
            "({}, {}, {})",
            g.entities().name(pos.head),
            g.relations().name(pos.relation),
            g.entities().name(pos.tail)
        ),
        message,
    };
    let mut out = NegativeBatch::default();
    if cfg.corrupt_heads {
        out.heads = draw_distinct(
            g.num_entities(),
            pos.head,
            cfg.n_ns,
            |h| !g.is_known_positive(Triple { head: h, ..pos }),
            cfg.short_slot,
            rng,
        )
        .map_err(|m| fail(format!("head corruption: {m}")))?
        .into_iter()
        .map(|h| Triple { head: h, ..pos })
        .collect();
    }
    if cfg.corrupt_relations {
        out.relations = draw_distinct(
            g.num_relations(),
            pos.relation,
            cfg.n_ns,
            |r| !g.is_known_positive(Triple { relation: r, ..pos }),
            cfg.short_slot,
            rng,
        )
        .map_err(|m| fail(format!("relation corruption: {m}")))?
        .into_iter()
        .map(|r| Triple { relation: r, ..pos })
        .collect();
    }
    if cfg.corrupt_tails {
        out.tails = draw_distinct(
            g.num_entities(),
            pos.tail,
            cfg.n_ns,
            |t| !g.is_known_positive(Triple { tail: t, ..pos }),
            cfg.short_slot,
            rng,
        )
        .map_err(|m| fail(format!("tail corruption: {m}")))?
        .into_iter()
        .map(|t| Triple { tail: t, ..pos })
        .collect();
    }
    Ok(out)
}

/// Which slot of a triple is replaced by candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Head,
    Relation,
    Tail,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Head, Slot::Relation, Slot::Tail];

    pub fn candidates(self, g: &KnowledgeGraph, t: Triple) -> Vec<Triple> {
        match self {
            Slot::Head => (0..g.num_entities()).map(|h| Triple { head: h, ..t }).collect(),
            Slot::Relation => (0..g.num_relations())
                .map(|r| Triple { relation: r, ..t })
                .collect(),
            Slot::Tail => (0..g.num_entities()).map(|e| Triple { tail: e, ..t }).collect(),
        }
    }

    pub fn index_of(self, t: Triple) -> usize {
        match self {
            Slot::Head => t.head,
            Slot::Relation => t.relation,
            Slot::Tail => t.tail,
        }
    }
}

/// Log-softmax with max subtraction.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

/// Encoder scores of every candidate for `slot` of `t`, in id order.
pub fn candidate_scores(
    enc: &Encoder,
    cache: &DescriptionCache,
    g: &KnowledgeGraph,
    t: Triple,
    slot: Slot,
    b: f64,
) -> Result<Vec<f64>> {
    let batch: Vec<_> = slot.candidates(g, t).into_iter().map(|c| cache.encode(c)).collect();
    enc.forward(&batch, Mode::Eval)?
        .iter()
        .map(|e| score(e, b))
        .collect()
}

/// Log-probability of the true `slot` value of `t` against every candidate.
pub fn log_prob(
    enc: &Encoder,
    cache: &DescriptionCache,
    g: &KnowledgeGraph,
    t: Triple,
    slot: Slot,
    b: f64,
) -> Result<f64> {
    let scores = candidate_scores(enc, cache, g, t, slot, b)?;
    Ok(log_softmax(&scores)[slot.index_of(t)])
}

/// Probabilities of every candidate for `slot` of `t`, in id order.
pub fn slot_distribution(
    enc: &Encoder,
    cache: &DescriptionCache,
    g: &KnowledgeGraph,
    t: Triple,
    slot: Slot,
    b: f64,
) -> Result<Vec<f64>> {
    let scores = candidate_scores(enc, cache, g, t, slot, b)?;
    Ok(log_softmax(&scores).into_iter().map(f64::exp).collect())
}

/// `Pr(h | r, t)` normalized over all entities.
pub fn softmax_prob_head(
    enc: &Encoder,
    cache: &DescriptionCache,
    g: &KnowledgeGraph,
    r: usize,
    t: usize,
    h: usize,
    b: f64,
) -> Result<f64> {
    log_prob(enc, cache, g, Triple::new(h, r, t), Slot::Head, b).map(f64::exp)
}

/// `Pr(r | h, t)` normalized over all relations.
pub fn softmax_prob_relation(
    enc: &Encoder,
    cache: &DescriptionCache,
    g: &KnowledgeGraph,
    h: usize,
    t: usize,
    r: usize,
    b: f64,
) -> Result<f64> {
    log_prob(enc, cache, g, Triple::new(h, r, t), Slot::Relation, b).map(f64::exp)
}

/// `Pr(t | h, r)` normalized over all entities.
pub fn softmax_prob_tail(
    enc: &Encoder,
    cache: &DescriptionCache,
    g: &KnowledgeGraph,
    h: usize,
    r: usize,
    t: usize,
    b: f64,
) -> Result<f64> {
    log_prob(enc, cache, g, Triple::new(h, r, t), Slot::Tail, b).map(f64::exp)
}

/// Full-softmax negative log-likelihood summed over `batch` and all three slots.
pub fn full_nll_loss(
    enc: &Encoder,
    cache: &DescriptionCache,
    g: &KnowledgeGraph,
    batch: &[Triple],
    b: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for &t in batch {
        for slot in Slot::ALL {
            total -= log_prob(enc, cache, g, t, slot, b)?;
        }
    }
    Ok(total)
}

/// [`full_nll_loss`] together with its parameter gradient.
pub fn full_nll_loss_grad(
    enc: &Encoder,
    cache: &DescriptionCache,
    g: &KnowledgeGraph,
    batch: &[Triple],
    b: f64,
) -> Result<(f64, EncoderParams)> {
    let mut grads = EncoderParams::zeros(enc.config());
    let mut total = 0.0;
    for &t in batch {
        for slot in Slot::ALL {
            let seqs: Vec<_> = slot.candidates(g, t).into_iter().map(|c| cache.encode(c)).collect();
            let (embs, tapes) = enc.forward_taped(&seqs, Mode::Eval)?;
            let scores: Vec<f64> = embs.iter().map(|e| score(e, b)).collect::<Result<_>>()?;
            let logp = log_softmax(&scores);
            let gold = slot.index_of(t);
            total -= logp[gold];
            for (i, (e, tape)) in embs.iter().zip(&tapes).enumerate() {
                let d = logp[i].exp() - if i == gold { 1.0 } else { 0.0 };
                enc.backward_into(tape, &score_grad(e, d), &mut grads)?;
            }
        }
    }
    Ok((total, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphParts;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn emb(h: &[f64], r: &[f64], t: &[f64]) -> EmbeddingTriple {
        EmbeddingTriple {
            h: h.to_vec(),
            r: r.to_vec(),
            t: t.to_vec(),
        }
    }

    #[test]
    fn score_examples() {
        assert_eq!(score(&emb(&[1., 2.], &[0.5, 0.5], &[1.5, 2.5]), 7.0).unwrap(), 7.0);
        assert_eq!(score(&emb(&[2., 0.], &[0., 0.], &[0., 0.]), 0.0).unwrap(), -2.0);
        assert!(score(&emb(&[1.], &[1., 2.], &[1.]), 0.0).is_err());
    }

    #[test]
    fn score_residual_scaling() {
        let e = emb(&[0.3, -1.0], &[0.2, 0.1], &[-0.4, 0.9]);
        let c = 2.5;
        let scaled = emb(&[0.3 * c, -1.0 * c], &[0.2 * c, 0.1 * c], &[-0.4 * c, 0.9 * c]);
        let b = 3.0;
        let base = b - score(&e, b).unwrap();
        let s = b - score(&scaled, b).unwrap();
        assert!((s - c * c * base).abs() < 1e-12);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert_eq!(log_sigmoid(1000.0), 0.0);
        assert!((log_sigmoid(-1000.0) + 1000.0).abs() < 1e-9);
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn ns_loss_at_zero_scores() {
        // f = b - 0 with b = 0 gives zero scores.
        let z = emb(&[0.0], &[0.0], &[0.0]);
        let l = ns_loss(&z, std::slice::from_ref(&z), 0.0).unwrap();
        assert!((l.loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!(ns_loss(&z, &[], 0.0).is_err());
    }

    #[test]
    fn ns_loss_saturates_to_zero() {
        let (l, _, _) = ns_loss_scores(800.0, &[-800.0, -900.0]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn softmax_closed_form() {
        let lp = log_softmax(&[2f64.ln(), 0.0]);
        assert!((lp[0].exp() - 2.0 / 3.0).abs() < 1e-15);
        assert!((lp[1].exp() - 1.0 / 3.0).abs() < 1e-15);
        let lp = log_softmax(&[1.0, 1.0]);
        assert!((lp[0].exp() - 0.5).abs() < 1e-15);
    }

    fn three_entity_graph() -> KnowledgeGraph {
        KnowledgeGraph::from_parts(GraphParts {
            entities: (0..3).map(|i| (format!("e{i}"), String::new())).collect(),
            relations: (0..4).map(|i| (format!("r{i}"), String::new())).collect(),
            train: vec![Triple::new(0, 0, 1)],
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn heads_exclude_gold_without_replacement() {
        let g = three_entity_graph();
        let cfg = LossConfig {
            n_ns: 2,
            corrupt_relations: false,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let nb = sample_negatives(&g, Triple::new(0, 0, 1), &cfg, &mut rng).unwrap();
            let mut heads: Vec<usize> = nb.heads.iter().map(|t| t.head).collect();
            heads.sort();
            assert_eq!(heads, vec![1, 2]);
            assert!(nb.tails.iter().all(|t| t.tail != 1));
        }
    }

    #[test]
    fn too_few_candidates_is_an_error() {
        let g = three_entity_graph();
        let cfg = LossConfig {
            n_ns: 3,
            short_slot: ShortSlot::Error,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_negatives(&g, Triple::new(0, 0, 1), &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Sampling { .. }));
        assert!(err.to_string().contains("(e0, r0, e1)"));
    }

    #[test]
    fn short_slots_take_every_admissible_candidate() {
        let g = three_entity_graph();
        let cfg = LossConfig {
            n_ns: 3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let negs = sample_negatives(&g, Triple::new(0, 0, 1), &cfg, &mut rng).unwrap();
        let mut heads: Vec<usize> = negs.heads.iter().map(|t| t.head).collect();
        heads.sort_unstable();
        assert_eq!(heads, vec![1, 2]);
        assert!(negs.slots().iter().flat_map(|s| s.iter()).all(|&t| !g.is_known_positive(t)));
    }

    #[test]
    fn known_positives_force_fallback() {
        // Every head but 2 forms a positive with (r0, e1).
        let g = KnowledgeGraph::from_parts(GraphParts {
            entities: (0..50).map(|i| (format!("e{i}"), String::new())).collect(),
            relations: vec![("r0".into(), String::new())],
            train: (0..50).filter(|&h| h != 2).map(|h| Triple::new(h, 0, 1)).collect(),
            ..Default::default()
        })
        .unwrap();
        let cfg = LossConfig {
            n_ns: 1,
            corrupt_relations: false,
            corrupt_tails: false,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let nb = sample_negatives(&g, Triple::new(0, 0, 1), &cfg, &mut rng).unwrap();
            assert_eq!(nb.heads, vec![Triple::new(2, 0, 1)]);
        }
        let lenient = LossConfig { n_ns: 2, ..cfg.clone() };
        let nb = sample_negatives(&g, Triple::new(0, 0, 1), &lenient, &mut rng).unwrap();
        assert_eq!(nb.heads, vec![Triple::new(2, 0, 1)]);
        let strict = LossConfig {
            n_ns: 2,
            short_slot: ShortSlot::Error,
            ..cfg
        };
        assert!(sample_negatives(&g, Triple::new(0, 0, 1), &strict, &mut rng).is_err());
    }

    #[test]
    fn fifteen_negatives_by_default() {
        let g = KnowledgeGraph::from_parts(GraphParts {
            entities: (0..20).map(|i| (format!("e{i}"), String::new())).collect(),
            relations: (0..8).map(|i| (format!("r{i}"), String::new())).collect(),
            train: vec![Triple::new(0, 0, 1)],
            ..Default::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nb = sample_negatives(&g, Triple::new(0, 0, 1), &LossConfig::default(), &mut rng).unwrap();
        assert_eq!(nb.len(), 15);
        assert!(nb.relations.iter().all(|t| t.relation != 0));
    }
}
