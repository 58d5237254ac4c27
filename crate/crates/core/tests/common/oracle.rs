//! Deliberately naive reference implementations. Nothing here shares code
//! with the library's evaluation module.

use lass::graph::{KnowledgeGraph, Triple};

/// Every triple listed as positive in any split, found by scanning the lists.
pub fn positives_by_scan(g: &KnowledgeGraph) -> Vec<Triple> {
    let mut out: Vec<Triple> = g.train().to_vec();
    for (triples, labels) in [(g.valid(), g.labels_valid()), (g.test(), g.labels_test())] {
        for (i, t) in triples.iter().enumerate() {
            if labels.is_none_or(|l| l[i]) {
                out.push(*t);
            }
        }
    }
    out
}

/// Filtered mid-rank of the gold entity in one slot: sort the surviving
/// candidates (gold included) by descending score and average the first and
/// last 1-based positions of the gold score's block.
pub fn mid_rank(score: &dyn Fn(Triple) -> f64, positives: &[Triple], n_entities: usize, query: Triple, head_side: bool) -> f64 {
    let mut pool: Vec<f64> = Vec::new();
    for e in 0..n_entities {
        let cand = if head_side {
            Triple::new(e, query.relation, query.tail)
        } else {
            Triple::new(query.head, query.relation, e)
        };
        if cand == query || !positives.contains(&cand) {
            pool.push(score(cand));
        }
    }
    pool.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let gold = score(query);
    let first = pool.iter().position(|&s| s == gold).unwrap() + 1;
    let last = pool.iter().rposition(|&s| s == gold).unwrap() + 1;
    (first + last) as f64 / 2.0
}

pub struct OracleRanking {
    pub head: Vec<f64>,
    pub tail: Vec<f64>,
    pub mr: f64,
    pub mrr: f64,
    pub hits: Vec<(usize, f64)>,
}

pub fn ranking(score: &dyn Fn(Triple) -> f64, g: &KnowledgeGraph, cutoffs: &[usize]) -> OracleRanking {
    let positives = positives_by_scan(g);
    let gold: Vec<Triple> = match g.labels_test() {
        Some(l) => g.test().iter().zip(l).filter(|(_, &x)| x).map(|(t, _)| *t).collect(),
        None => g.test().to_vec(),
    };
    let head: Vec<f64> = gold.iter().map(|&q| mid_rank(score, &positives, g.num_entities(), q, true)).collect();
    let tail: Vec<f64> = gold.iter().map(|&q| mid_rank(score, &positives, g.num_entities(), q, false)).collect();
    let mut all = head.clone();
    all.extend(&tail);
    let n = all.len() as f64;
    let mut mr = 0.0;
    let mut mrr = 0.0;
    for r in &all {
        mr += r;
        mrr += 1.0 / r;
    }
    let hits = cutoffs
        .iter()
        .map(|&k| (k, all.iter().filter(|&&r| r <= k as f64).count() as f64 / n))
        .collect();
    OracleRanking {
        head,
        tail,
        mr: mr / n,
        mrr: mrr / n,
        hits,
    }
}

pub fn accuracy_at(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let correct = scores.iter().zip(labels).filter(|(s, l)| (**s > threshold) == **l).count();
    correct as f64 / scores.len() as f64
}

/// Best threshold by exhaustive search over −∞, every midpoint of adjacent
/// distinct scores, and +∞; the first (smallest) maximizer wins.
pub fn best_threshold(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut distinct: Vec<f64> = Vec::new();
    for &s in scores {
        if !distinct.contains(&s) {
            distinct.push(s);
        }
    }
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut candidates = vec![f64::NEG_INFINITY];
    for i in 1..distinct.len() {
        candidates.push(distinct[i - 1] + (distinct[i] - distinct[i - 1]) / 2.0);
    }
    candidates.push(f64::INFINITY);
    let mut best = (candidates[0], accuracy_at(scores, labels, candidates[0]));
    for &c in &candidates[1..] {
        let a = accuracy_at(scores, labels, c);
        if a > best.1 {
            best = (c, a);
        }
    }
    best
}
