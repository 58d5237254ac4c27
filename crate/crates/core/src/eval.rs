//! Filtered link-prediction ranking, threshold-tuned triplet classification
//! and low-resource sweeps, plus their CSV reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, Mode};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, SubsampleSpec, Triple};
use crate::loss::score;
use crate::shallow::ShallowModel;
use crate::text::{DescriptionCache, TextTokenizer};

pub const DEFAULT_CUTOFFS: [usize; 3] = [1, 3, 10];

/// Read-only triple scoring. Implementations must tolerate concurrent calls.
pub trait Scorer: Sync {
    fn num_entities(&self) -> usize;
    fn num_relations(&self) -> usize;
    fn score_one(&self, t: Triple) -> Result<f64>;

    fn score_batch(&self, triples: &[Triple]) -> Result<Vec<f64>> {
        triples.par_iter().map(|&t| self.score_one(t)).collect()
    }

    fn score_all_heads(&self, relation: usize, tail: usize) -> Result<Vec<f64>> {
        let c: Vec<Triple> = (0..self.num_entities())
            .map(|h| Triple::new(h, relation, tail))
            .collect();
        self.score_batch(&c)
    }

    fn score_all_tails(&self, head: usize, relation: usize) -> Result<Vec<f64>> {
        let c: Vec<Triple> = (0..self.num_entities())
            .map(|t| Triple::new(head, relation, t))
            .collect();
        self.score_batch(&c)
    }

    fn score_all_relations(&self, head: usize, tail: usize) -> Result<Vec<f64>> {
        let c: Vec<Triple> = (0..self.num_relations())
            .map(|r| Triple::new(head, r, tail))
            .collect();
        self.score_batch(&c)
    }
}

/// Scores triples with the text encoder: `b − ½‖h + r − t‖²` over the pooled
/// span embeddings, dropout off.
pub struct LassScorer<'a> {
    encoder: &'a Encoder,
    cache: DescriptionCache,
    margin: f64,
    num_entities: usize,
    num_relations: usize,
}

impl<'a> LassScorer<'a> {
    pub fn new<T: TextTokenizer + ?Sized>(
        encoder: &'a Encoder,
        tok: &T,
        g: &KnowledgeGraph,
        margin: f64,
    ) -> Result<Self> {
        if tok.vocab_size() > encoder.config().vocab_size {
            return Err(Error::argument(format!(
                "tokenizer has {} tokens but the encoder embeds only {}",
                tok.vocab_size(),
                encoder.config().vocab_size
            )));
        }
        Ok(LassScorer {
            encoder,
            cache: DescriptionCache::new(tok, g)?,
            margin,
            num_entities: g.num_entities(),
            num_relations: g.num_relations(),
        })
    }
}

impl Scorer for LassScorer<'_> {
    fn num_entities(&self) -> usize {
        self.num_entities
    }

    fn num_relations(&self) -> usize {
        self.num_relations
    }

    fn score_one(&self, t: Triple) -> Result<f64> {
        let e = self.encoder.forward(&[self.cache.encode(t)], Mode::Eval)?;
        score(&e[0], self.margin)
    }

    fn score_batch(&self, triples: &[Triple]) -> Result<Vec<f64>> {
        let seqs: Vec<_> = triples.iter().map(|&t| self.cache.encode(t)).collect();
        self.encoder
            .forward(&seqs, Mode::Eval)?
            .iter()
            .map(|e| score(e, self.margin))
            .collect()
    }
}

pub struct ShallowScorer<'a>(pub &'a ShallowModel);

impl Scorer for ShallowScorer<'_> {
    fn num_entities(&self) -> usize {
        self.0.num_entities()
    }

    fn num_relations(&self) -> usize {
        self.0.num_relations()
    }

    fn score_one(&self, t: Triple) -> Result<f64> {
        if t.head >= self.num_entities() || t.tail >= self.num_entities() || t.relation >= self.num_relations() {
            return Err(Error::contract(format!("triple {t} is outside the embedding tables")));
        }
        Ok(self.0.score(t))
    }
}

/// Wraps a plain function as a scorer; used for hand-set score tables.
pub struct FnScorer<F> {
    pub num_entities: usize,
    pub num_relations: usize,
    pub f: F,
}

impl<F: Fn(Triple) -> f64 + Sync> Scorer for FnScorer<F> {
    fn num_entities(&self) -> usize {
        self.num_entities
    }

    fn num_relations(&self) -> usize {
        self.num_relations
    }

    fn score_one(&self, t: Triple) -> Result<f64> {
        Ok((self.f)(t))
    }
}

/// Scores 1 for every known positive of `g` and 0 otherwise, so every gold
/// triple gets the top filtered rank.
pub struct KnownPositiveScorer<'a>(pub &'a KnowledgeGraph);

impl Scorer for KnownPositiveScorer<'_> {
    fn num_entities(&self) -> usize {
        self.0.num_entities()
    }

    fn num_relations(&self) -> usize {
        self.0.num_relations()
    }

    fn score_one(&self, t: Triple) -> Result<f64> {
        Ok(if self.0.is_known_positive(t) { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Head,
    Relation,
    Tail,
}

impl Side {
    fn replace(self, t: Triple, c: usize) -> Triple {
        match self {
            Side::Head => Triple { head: c, ..t },
            Side::Relation => Triple { relation: c, ..t },
            Side::Tail => Triple { tail: c, ..t },
        }
    }

    fn gold(self, t: Triple) -> usize {
        match self {
            Side::Head => t.head,
            Side::Relation => t.relation,
            Side::Tail => t.tail,
        }
    }
}

/// Which rank a gold item tied with competitors receives in the aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    #[default]
    Mid,
    Optimistic,
    Pessimistic,
}

/// A filtered rank under three tie policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rank {
    /// `1 + greater + ties / 2`; the reported value.
    pub mid: f64,
    /// `1 + greater`
    pub optimistic: usize,
    /// `1 + greater + ties`
    pub pessimistic: usize,
}

impl Rank {
    pub fn from_counts(greater: usize, ties: usize) -> Self {
        Rank {
            mid: 1.0 + greater as f64 + 0.5 * ties as f64,
            optimistic: 1 + greater,
            pessimistic: 1 + greater + ties,
        }
    }

    pub fn value(&self, policy: TiePolicy) -> f64 {
        match policy {
            TiePolicy::Mid => self.mid,
            TiePolicy::Optimistic => self.optimistic as f64,
            TiePolicy::Pessimistic => self.pessimistic as f64,
        }
    }
}

/// Rank of `scores[gold]` among the candidates that survive `keep`; the gold
/// index itself is never counted as a competitor.
pub fn rank_among(scores: &[f64], gold: usize, keep: impl Fn(usize) -> bool) -> Rank {
    let s = scores[gold];
    let (mut greater, mut ties) = (0, 0);
    for (c, &x) in scores.iter().enumerate() {
        if c == gold || !keep(c) {
            continue;
        }
        if x > s {
            greater += 1;
        } else if x == s {
            ties += 1;
        }
    }
    Rank::from_counts(greater, ties)
}

/// Rank of `query` against every replacement of one slot, dropping
/// candidates that form another known-positive triple.
pub fn filtered_rank(scorer: &dyn Scorer, g: &KnowledgeGraph, query: Triple, side: Side) -> Result<Rank> {
    let scores = match side {
        Side::Head => scorer.score_all_heads(query.relation, query.tail)?,
        Side::Tail => scorer.score_all_tails(query.head, query.relation)?,
        Side::Relation => scorer.score_all_relations(query.head, query.tail)?,
    };
    let gold = side.gold(query);
    if gold >= scores.len() {
        return Err(Error::contract(format!("query {query} is outside the scorer's vocabulary")));
    }
    if let Some(bad) = scores.iter().find(|x| x.is_nan()) {
        return Err(Error::contract(format!("scorer produced {bad} for query {query}")));
    }
    Ok(rank_among(&scores, gold, |c| !g.is_known_positive(side.replace(query, c))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingOutcome {
    pub triples: Vec<Triple>,
    pub head_ranks: Vec<Rank>,
    pub tail_ranks: Vec<Rank>,
    pub mr: f64,
    pub mrr: f64,
    /// `(cutoff, proportion of ranks ≤ cutoff)` in ascending cutoff order.
    pub hits: Vec<(usize, f64)>,
}

impl RankingOutcome {
    /// Aggregates over both sides of every triple.
    pub fn from_ranks(
        triples: Vec<Triple>,
        head_ranks: Vec<Rank>,
        tail_ranks: Vec<Rank>,
        cutoffs: &[usize],
        policy: TiePolicy,
    ) -> Self {
        let all: Vec<f64> = head_ranks.iter().chain(&tail_ranks).map(|r| r.value(policy)).collect();
        let n = all.len().max(1) as f64;
        let mr = all.iter().sum::<f64>() / n;
        let mrr = all.iter().map(|r| 1.0 / r).sum::<f64>() / n;
        let mut cutoffs = cutoffs.to_vec();
        cutoffs.sort_unstable();
        cutoffs.dedup();
        let hits = cutoffs
            .into_iter()
            .map(|k| (k, all.iter().filter(|&&r| r <= k as f64).count() as f64 / n))
            .collect();
        RankingOutcome {
            triples,
            head_ranks,
            tail_ranks,
            mr,
            mrr,
            hits,
        }
    }

    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.iter().find(|(c, _)| *c == k).map(|&(_, h)| h)
    }
}

pub fn link_prediction(scorer: &dyn Scorer, g: &KnowledgeGraph) -> Result<RankingOutcome> {
    link_prediction_with(scorer, g, &DEFAULT_CUTOFFS, TiePolicy::Mid)
}

/// Head and tail filtered ranks for every gold test triple.
pub fn link_prediction_with(
    scorer: &dyn Scorer,
    g: &KnowledgeGraph,
    cutoffs: &[usize],
    policy: TiePolicy,
) -> Result<RankingOutcome> {
    if cutoffs.contains(&0) {
        return Err(Error::argument("hits cutoffs must be positive"));
    }
    if scorer.num_entities() != g.num_entities() || scorer.num_relations() != g.num_relations() {
        return Err(Error::argument(format!(
            "scorer covers {} entities and {} relations but the graph has {} and {}",
            scorer.num_entities(),
            scorer.num_relations(),
            g.num_entities(),
            g.num_relations()
        )));
    }
    let triples = g.gold_test();
    if triples.is_empty() {
        return Err(Error::argument("test split has no gold triples"));
    }
    let ranks: Vec<(Rank, Rank)> = triples
        .par_iter()
        .map(|&t| Ok((filtered_rank(scorer, g, t, Side::Head)?, filtered_rank(scorer, g, t, Side::Tail)?)))
        .collect::<Result<_>>()?;
    let (head, tail) = ranks.into_iter().unzip();
    Ok(RankingOutcome::from_ranks(triples, head, tail, cutoffs, policy))
}

fn push_num(s: &mut String, x: f64) {
    let _ = write!(s, "{x}");
}

/// Per-triple ranks, a blank line, then `metric,value` aggregate rows.
pub fn ranking_csv(out: &RankingOutcome, g: &KnowledgeGraph) -> String {
    let mut s = String::from("head,relation,tail,rank_head,rank_tail,rank_head_optimistic,rank_head_pessimistic,rank_tail_optimistic,rank_tail_pessimistic\n");
    for ((t, h), r) in out.triples.iter().zip(&out.head_ranks).zip(&out.tail_ranks) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            csv_field(g.entities().name(t.head)),
            csv_field(g.relations().name(t.relation)),
            csv_field(g.entities().name(t.tail)),
            h.mid,
            r.mid,
            h.optimistic,
            h.pessimistic,
            r.optimistic,
            r.pessimistic
        );
    }
    s.push_str("\nmetric,value\nMR,");
    push_num(&mut s, out.mr);
    s.push_str("\nMRR,");
    push_num(&mut s, out.mrr);
    s.push('\n');
    for (k, h) in &out.hits {
        let _ = writeln!(s, "hits@{k},{h}");
    }
    s
}

/// Reads the `metric,value` footer of a ranking CSV.
pub fn parse_ranking_footer(csv: &str) -> Result<BTreeMap<String, f64>> {
    let footer = csv
        .split("\n\n")
        .nth(1)
        .ok_or_else(|| Error::argument("ranking CSV has no aggregate footer"))?;
    footer
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (k, v) = l
                .split_once(',')
                .ok_or_else(|| Error::argument(format!("malformed footer row {l:?}")))?;
            let v = v
                .parse()
                .map_err(|_| Error::argument(format!("malformed footer value {v:?}")))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

/// Fixed-width table of the aggregates.
pub fn ranking_table(out: &RankingOutcome) -> String {
    let mut s = format!("{:<10}{:>10}\n", "metric", "value");
    let _ = writeln!(s, "{:<10}{:>10.3}", "MR", out.mr);
    let _ = writeln!(s, "{:<10}{:>10.3}", "MRR", out.mrr);
    for (k, h) in &out.hits {
        let _ = writeln!(s, "{:<10}{:>10.3}", format!("Hits@{k}"), h);
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdFit {
    pub threshold: f64,
    /// Accuracy of `score > threshold` on the tuning set.
    pub accuracy: f64,
}

/// Candidate thresholds: −∞, midpoints of consecutive distinct scores, +∞.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut c = vec![f64::NEG_INFINITY];
    c.extend(s.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    c.push(f64::INFINITY);
    c
}

/// Threshold maximizing `score > threshold` accuracy; among equally accurate
/// candidates the smallest wins.
pub fn tune_threshold_scores(scores: &[f64], labels: &[bool]) -> Result<ThresholdFit> {
    if scores.len() != labels.len() {
        return Err(Error::argument("scores and labels differ in length"));
    }
    if let Some(x) = scores.iter().find(|x| !x.is_finite()) {
        return Err(Error::argument(format!("tuning score {x} is not finite")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::argument("threshold tuning needs both positive and negative examples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let candidates = threshold_candidates(scores);
    // Sweep thresholds upward; everything at or below the threshold is
    // predicted negative.
    let mut correct = positives;
    let mut best = (candidates[0], correct);
    let mut i = 0;
    for &th in &candidates[1..] {
        while i < order.len() && scores[order[i]] <= th {
            if labels[order[i]] {
                correct -= 1;
            } else {
                correct += 1;
            }
            i += 1;
        }
        if correct > best.1 {
            best = (th, correct);
        }
    }
    Ok(ThresholdFit {
        threshold: best.0,
        accuracy: best.1 as f64 / scores.len() as f64,
    })
}

fn labeled_split<'g>(triples: &'g [Triple], labels: Option<&'g [bool]>, split: &str) -> Result<(&'g [Triple], &'g [bool])> {
    let labels = labels.ok_or_else(|| {
        Error::argument(format!(
            "the {split} split has no labels; triplet classification needs labeled positive and negative triples"
        ))
    })?;
    if triples.is_empty() {
        return Err(Error::argument(format!("the {split} split is empty")));
    }
    Ok((triples, labels))
}

/// Tunes the decision threshold on the labeled validation split.
pub fn tune_threshold(scorer: &dyn Scorer, g: &KnowledgeGraph) -> Result<ThresholdFit> {
    let (triples, labels) = labeled_split(g.valid(), g.labels_valid(), "validation")?;
    tune_threshold_scores(&scorer.score_batch(triples)?, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationErrors {
    pub relation: usize,
    pub errors: usize,
    /// Fraction of all misclassifications that involve this relation.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub threshold: f64,
    pub accuracy: f64,
    pub total: usize,
    pub errors: usize,
    /// Relations with at least one error, by share descending then id.
    pub per_relation_errors: Vec<RelationErrors>,
}

pub fn classify_scores(scores: &[f64], labels: &[bool], relations: &[usize], threshold: f64) -> Result<ClassificationReport> {
    if scores.len() != labels.len() || scores.len() != relations.len() {
        return Err(Error::argument("scores, labels and relations differ in length"));
    }
    if scores.is_empty() {
        return Err(Error::argument("nothing to classify"));
    }
    let mut per: BTreeMap<usize, usize> = BTreeMap::new();
    for ((&s, &l), &r) in scores.iter().zip(labels).zip(relations) {
        if (s > threshold) != l {
            *per.entry(r).or_default() += 1;
        }
    }
    let errors: usize = per.values().sum();
    let mut per_relation_errors: Vec<RelationErrors> = per
        .into_iter()
        .map(|(relation, e)| RelationErrors {
            relation,
            errors: e,
            share: e as f64 / errors as f64,
        })
        .collect();
    per_relation_errors.sort_by(|a, b| b.errors.cmp(&a.errors).then(a.relation.cmp(&b.relation)));
    Ok(ClassificationReport {
        threshold,
        accuracy: (scores.len() - errors) as f64 / scores.len() as f64,
        total: scores.len(),
        errors,
        per_relation_errors,
    })
}

/// Classifies the labeled test split as positive iff `score > threshold`.
pub fn triplet_classification(scorer: &dyn Scorer, g: &KnowledgeGraph, threshold: f64) -> Result<ClassificationReport> {
    let (triples, labels) = labeled_split(g.test(), g.labels_test(), "test")?;
    let scores = scorer.score_batch(triples)?;
    let relations: Vec<usize> = triples.iter().map(|t| t.relation).collect();
    classify_scores(&scores, labels, &relations, threshold)
}

pub fn classification_csv(rep: &ClassificationReport, g: &KnowledgeGraph) -> String {
    let mut s = String::from("metric,value\nthreshold,");
    push_num(&mut s, rep.threshold);
    s.push_str("\naccuracy,");
    push_num(&mut s, rep.accuracy);
    let _ = write!(s, "\ntest_size,{}\nerrors,{}\n\nrelation,errors,share\n", rep.total, rep.errors);
    for e in &rep.per_relation_errors {
        let _ = writeln!(s, "{},{},{}", csv_field(g.relations().name(e.relation)), e.errors, e.share);
    }
    s
}

/// Accuracy line plus the `top` most common error relations as percentages.
pub fn classification_table(rep: &ClassificationReport, g: &KnowledgeGraph, top: usize) -> String {
    let mut s = format!("threshold {:.4}\naccuracy  {:.3}\n", rep.threshold, rep.accuracy);
    if !rep.per_relation_errors.is_empty() {
        let _ = writeln!(s, "{:<40}{:>8}{:>8}", "relation", "errors", "share");
        for e in rep.per_relation_errors.iter().take(top) {
            let _ = writeln!(
                s,
                "{:<40}{:>8}{:>7.1}%",
                g.relations().name(e.relation),
                e.errors,
                100.0 * e.share
            );
        }
    }
    s
}

/// SplitMix64 finalizer over `seed` and the fraction's bit pattern.
pub fn derive_seed(seed: u64, fraction: f64) -> u64 {
    let mut z = seed ^ fraction.to_bits().wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub train_size: usize,
    /// The metric, or the error message of a failed row.
    pub outcome: std::result::Result<f64, String>,
}

/// Subsamples the training split at each fraction (seed derived from `seed`
/// and the fraction) and records `callback`'s metric. A failing row is kept
/// with its error and the sweep continues.
pub fn low_resource_sweep<F>(g: &KnowledgeGraph, fractions: &[f64], seed: u64, mut callback: F) -> Vec<SweepRow>
where
    F: FnMut(f64, &KnowledgeGraph) -> Result<f64>,
{
    fractions
        .iter()
        .map(|&fraction| {
            let sub = SubsampleSpec::new(fraction, derive_seed(seed, fraction))
                .and_then(|spec| g.subsample_train(spec));
            match sub {
                Ok(sub) => SweepRow {
                    fraction,
                    train_size: sub.train().len(),
                    outcome: callback(fraction, &sub).map_err(|e| e.to_string()),
                },
                Err(e) => SweepRow {
                    fraction,
                    train_size: 0,
                    outcome: Err(e.to_string()),
                },
            }
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow], metric_name: &str) -> String {
    let mut s = String::from("fraction,train_size,metric_name,metric,status\n");
    for r in rows {
        let _ = write!(s, "{},{},{},", r.fraction, r.train_size, metric_name);
        match &r.outcome {
            Ok(m) => {
                push_num(&mut s, *m);
                s.push_str(",ok\n");
            }
            Err(e) => {
                let _ = writeln!(s, ",{}", csv_field(&format!("error: {e}")));
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphParts;

    fn graph(n: usize, train: Vec<Triple>, test: Vec<Triple>) -> KnowledgeGraph {
        KnowledgeGraph::from_parts(GraphParts {
            entities: (0..n).map(|i| (format!("e{i}"), String::new())).collect(),
            relations: vec![("r0".into(), String::new()), ("r1".into(), String::new())],
            train,
            test,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn tie_with_single_competitor_is_one_and_a_half() {
        let r = rank_among(&[2.0, 2.0], 0, |_| true);
        assert_eq!(r.mid, 1.5);
        assert_eq!((r.optimistic, r.pessimistic), (1, 2));
    }

    #[test]
    fn filtering_removes_known_positives() {
        // Tail candidates for (0, r0, ·): e1 is gold, e2 is a known positive
        // with a higher score and must not count.
        let g = graph(4, vec![Triple::new(0, 0, 2)], vec![Triple::new(0, 0, 1)]);
        let s = FnScorer {
            num_entities: 4,
            num_relations: 2,
            f: |t: Triple| [0.0, 5.0, 9.0, 1.0][t.tail],
        };
        let r = filtered_rank(&s, &g, Triple::new(0, 0, 1), Side::Tail).unwrap();
        assert_eq!(r.mid, 1.0);
        let unfiltered = rank_among(&s.score_all_tails(0, 0).unwrap(), 1, |_| true);
        assert_eq!(unfiltered.mid, 2.0);
    }

    #[test]
    fn aggregates_of_rank_four_and_two() {
        let t = Triple::new(0, 0, 1);
        let out = RankingOutcome::from_ranks(vec![t], vec![Rank::from_counts(3, 0)], vec![Rank::from_counts(1, 0)], &DEFAULT_CUTOFFS, TiePolicy::Mid);
        assert_eq!(out.mr, 3.0);
        assert_eq!(out.mrr, 0.375);
        assert_eq!(out.hits, vec![(1, 0.0), (3, 0.5), (10, 1.0)]);
    }

    #[test]
    fn perfect_scorer_is_rank_one() {
        let g = graph(6, vec![Triple::new(0, 0, 1), Triple::new(2, 1, 3)], vec![Triple::new(4, 0, 5)]);
        let out = link_prediction(&KnownPositiveScorer(&g), &g).unwrap();
        assert_eq!((out.mr, out.mrr), (1.0, 1.0));
        assert_eq!(out.hits_at(10), Some(1.0));
        let csv = ranking_csv(&out, &g);
        let footer = parse_ranking_footer(&csv).unwrap();
        assert_eq!(footer["MR"], 1.0);
        assert_eq!(footer["hits@3"], 1.0);
    }

    #[test]
    fn separable_threshold_is_the_midpoint() {
        let fit = tune_threshold_scores(&[5.0, 5.0, 1.0, 1.0], &[true, true, false, false]).unwrap();
        assert_eq!(fit.threshold, 3.0);
        assert_eq!(fit.accuracy, 1.0);
    }

    #[test]
    fn identical_scores_pick_the_majority_sentinel() {
        let fit = tune_threshold_scores(&[2.0; 5], &[true, false, false, false, true]).unwrap();
        assert_eq!(fit.threshold, f64::INFINITY);
        assert_eq!(fit.accuracy, 0.6);
        let fit = tune_threshold_scores(&[2.0; 4], &[true, false, false, true]).unwrap();
        assert_eq!(fit.threshold, f64::NEG_INFINITY);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(tune_threshold_scores(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn threshold_below_everything_gives_the_base_rate() {
        let rep = classify_scores(&[1.0, 2.0, 3.0, 4.0], &[true, false, false, false], &[0, 1, 1, 0], 0.0).unwrap();
        assert_eq!(rep.accuracy, 0.25);
        assert_eq!(rep.per_relation_errors[0].relation, 1);
        assert!((rep.per_relation_errors.iter().map(|e| e.share).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_passes_sizes_through() {
        let train: Vec<Triple> = (0..100).map(|i| Triple::new(i % 10, 0, (i / 10) % 10)).collect();
        let g = graph(10, train, vec![]);
        let rows = low_resource_sweep(&g, &[0.05, 0.30, 1.5], 3, |_, sub| Ok(sub.train().len() as f64));
        assert_eq!(rows[0].outcome, Ok(5.0));
        assert_eq!(rows[1].outcome, Ok(30.0));
        assert!(rows[2].outcome.is_err());
        let csv = sweep_csv(&rows, "train_size");
        assert!(csv.lines().nth(1).unwrap().starts_with("0.05,5,train_size,5,ok"));
    }
}
