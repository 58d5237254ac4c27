mod common;

use std::collections::HashSet;
use std::fs;

use lass::error::Error;
use lass::graph::{load_graph, DatasetFormat, KnowledgeGraph, SubsampleSpec, Triple};
use lass::synthetic::{compositional_graph, random_graph, CompositionalSpec};
use lass::text::{
    encode_triplet, split_words, truncate_lengths, DescriptionCache, TextTokenizer, WordTokenizer, BEGIN_ID, NUM_SPECIAL,
    PAD_ID, SEP_ID,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn same_graph(a: &KnowledgeGraph, b: &KnowledgeGraph) {
    assert_eq!(a.entities(), b.entities());
    assert_eq!(a.relations(), b.relations());
    assert_eq!(a.train(), b.train());
    assert_eq!(a.valid(), b.valid());
    assert_eq!(a.test(), b.test());
    assert_eq!(a.labels_valid(), b.labels_valid());
    assert_eq!(a.labels_test(), b.labels_test());
    assert_eq!(a.positive_index(), b.positive_index());
}

#[test]
fn umls_fixture_has_expected_vocabulary() {
    let g = common::umls();
    assert_eq!(g.num_entities(), 135);
    assert_eq!(g.num_relations(), 46);
    assert!(!g.train().is_empty() && !g.test().is_empty());
    assert!(!g.is_labeled());
}

#[test]
fn every_umls_triple_encodes_with_clean_spans() {
    let g = common::umls();
    let tok = WordTokenizer::build_vocab(&g, 1, 128).unwrap();
    let all = g.train().iter().chain(g.valid()).chain(g.test());
    let mut count = 0;
    for &t in all {
        let e = encode_triplet(&tok, &g, t).unwrap();
        assert_eq!(e.token_ids.len(), 128);
        assert_eq!(e.token_ids[0], BEGIN_ID);
        let spans = e.spans();
        for (i, span) in spans.iter().enumerate() {
            assert!(!span.is_empty());
            assert_eq!(e.token_ids[span.end], SEP_ID);
            assert!(e.token_ids[(*span).clone()].iter().all(|&id| id >= NUM_SPECIAL));
            if i > 0 {
                assert_eq!(span.start, spans[i - 1].end + 1);
            }
        }
        assert_eq!(e.attention_len, spans[2].end + 1);
        assert!(e.token_ids[e.attention_len..].iter().all(|&id| id == PAD_ID));

        let descs = [g.entity_description(t.head), g.relation_description(t.relation), g.entity_description(t.tail)];
        for (span, desc) in spans.iter().zip(descs) {
            let words: Vec<&str> = e.token_ids[(*span).clone()].iter().map(|&id| tok.token(id).unwrap()).collect();
            assert_eq!(words, split_words(desc));
        }
        count += 1;
    }
    assert_eq!(count, g.train().len() + g.valid().len() + g.test().len());
}

#[test]
fn truncated_spans_keep_description_prefixes() {
    let g = common::random_text_graph(9, 10, 4, 30, 12);
    let tok = WordTokenizer::build_vocab(&g, 1, 12).unwrap();
    let cache = DescriptionCache::new(&tok, &g).unwrap();
    for &t in g.train() {
        let e = cache.encode(t);
        assert!(e.attention_len <= 12);
        let descs = [g.entity_description(t.head), g.relation_description(t.relation), g.entity_description(t.tail)];
        for (span, desc) in e.spans().iter().zip(descs) {
            let full = tok.tokenize(desc);
            assert_eq!(&e.token_ids[(*span).clone()], &full[..span.len()]);
        }
        assert_eq!(e, encode_triplet(&tok, &g, t).unwrap());
    }
}

proptest! {
    #[test]
    fn truncation_fits_the_budget(a in 1usize..40, b in 1usize..40, c in 1usize..40, budget in 3usize..80) {
        let out = truncate_lengths([a, b, c], budget);
        prop_assert_eq!(out.iter().sum::<usize>(), (a + b + c).min(budget));
        for (o, i) in out.iter().zip([a, b, c]) {
            prop_assert!(*o >= 1 && *o <= i);
        }
        // Only segments that end up among the longest are ever cut.
        let max = *out.iter().max().unwrap();
        for (o, i) in out.iter().zip([a, b, c]) {
            if o < &i {
                prop_assert!(max - o <= 1);
            }
        }
    }

    #[test]
    fn subsample_is_a_sized_ordered_subset(fraction in 0.001f64..=1.0, seed in any::<u64>()) {
        let g = random_graph(30, 5, 200, 10, 4).unwrap();
        let spec = SubsampleSpec::new(fraction, seed).unwrap();
        let sub = g.subsample_train(spec).unwrap();
        prop_assert_eq!(sub.train().len(), (fraction * 200.0).round() as usize);
        let positions: Vec<usize> = sub
            .train()
            .iter()
            .map(|t| g.train().iter().position(|x| x == t).unwrap())
            .collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(sub.test(), g.test());
        prop_assert_eq!(sub.positive_index(), g.positive_index());
        let again = g.subsample_train(spec).unwrap();
        prop_assert_eq!(again.train(), sub.train());
    }
}

#[test]
fn subsample_rejects_fractions_outside_unit_interval() {
    for f in [0.0, -0.1, 1.5, f64::NAN] {
        assert!(matches!(SubsampleSpec::new(f, 0), Err(Error::Argument(_))));
    }
}

#[test]
fn subsample_inclusion_is_uniform() {
    let g = random_graph(30, 5, 100, 10, 1).unwrap();
    let mut counts = vec![0usize; 100];
    let trials = 2000;
    for seed in 0..trials {
        let sub = g.subsample_train(SubsampleSpec::new(0.1, seed).unwrap()).unwrap();
        for t in sub.train() {
            counts[g.train().iter().position(|x| x == t).unwrap()] += 1;
        }
    }
    // Expected 200 per triple with standard deviation about 13.4.
    for (i, &c) in counts.iter().enumerate() {
        assert!((140..=260).contains(&c), "triple {i} kept {c} times");
    }
}

#[test]
fn positive_index_matches_linear_scan() {
    let g = common::umls();
    let all: Vec<Triple> = g.train().iter().chain(g.valid()).chain(g.test()).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for i in 0..20_000 {
        let t = if i % 4 == 0 {
            all[rng.random_range(0..all.len())]
        } else {
            Triple::new(
                rng.random_range(0..g.num_entities()),
                rng.random_range(0..g.num_relations()),
                rng.random_range(0..g.num_entities()),
            )
        };
        assert_eq!(g.is_known_positive(t), all.contains(&t), "{t}");
    }
}

#[test]
fn labeled_negatives_are_not_known_positives() {
    let g = compositional_graph(&CompositionalSpec::default()).unwrap();
    let labels = g.labels_test().unwrap();
    for (t, &l) in g.test().iter().zip(labels) {
        assert_eq!(g.is_known_positive(*t), l);
    }
    assert_eq!(g.gold_test().len(), labels.iter().filter(|&&l| l).count());
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = common::umls();
    g.save(dir.path()).unwrap();
    same_graph(&g, &load_graph(dir.path(), DatasetFormat::LinkPrediction).unwrap());

    let labeled = compositional_graph(&CompositionalSpec::default()).unwrap();
    let d2 = dir.path().join("labeled");
    labeled.save(&d2).unwrap();
    assert_eq!(DatasetFormat::detect(&d2).unwrap(), DatasetFormat::Classification);
    same_graph(&labeled, &load_graph(&d2, DatasetFormat::Classification).unwrap());
}

#[test]
fn loader_reports_missing_files_and_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let g = random_graph(4, 2, 5, 2, 0).unwrap();
    g.save(dir.path()).unwrap();

    fs::write(dir.path().join("valid.tsv"), "").unwrap();
    let loaded = load_graph(dir.path(), DatasetFormat::LinkPrediction).unwrap();
    assert!(loaded.valid().is_empty());

    let train = fs::read_to_string(dir.path().join("train.tsv")).unwrap();
    let first = train.lines().next().unwrap();
    fs::write(dir.path().join("train.tsv"), format!("{first}\nnobody\tr0\te1\n")).unwrap();
    match load_graph(dir.path(), DatasetFormat::LinkPrediction) {
        Err(Error::Integrity { line, message, .. }) => {
            assert_eq!(line, 2);
            assert!(message.contains("nobody"), "{message}");
        }
        other => panic!("expected integrity error, got {other:?}"),
    }

    fs::write(dir.path().join("train.tsv"), &train).unwrap();
    fs::remove_file(dir.path().join("test.tsv")).unwrap();
    assert!(matches!(
        load_graph(dir.path(), DatasetFormat::LinkPrediction),
        Err(Error::Load { .. })
    ));
}

#[test]
fn tokenizer_vocabulary_round_trips_content_tokens() {
    let g = common::umls();
    let tok = WordTokenizer::build_vocab(&g, 1, 128).unwrap();
    let mut seen = HashSet::new();
    for id in NUM_SPECIAL..tok.vocab_size() as u32 {
        let word = tok.token(id).unwrap();
        assert_eq!(tok.id(word), Some(id));
        assert!(seen.insert(word.to_string()));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    tok.save(&path).unwrap();
    assert_eq!(WordTokenizer::load(&path, 128).unwrap(), tok);
}

#[test]
fn train_only_copy_filters_on_training_triples() {
    let g = compositional_graph(&CompositionalSpec::default()).unwrap();
    let t = g.train_only();
    assert_eq!(t.train(), g.train());
    assert!(t.valid().is_empty() && t.test().is_empty());
    assert_eq!(t.positive_index().len(), g.train().len());
    let held = g.gold_test();
    assert!(held.iter().all(|&p| g.is_known_positive(p) && !t.is_known_positive(p)));
}

#[test]
fn labeled_negatives_use_entities_that_fit_the_slot() {
    let spec = CompositionalSpec::default();
    let g = compositional_graph(&spec).unwrap();
    for (triples, labels) in [(g.valid(), g.labels_valid().unwrap()), (g.test(), g.labels_test().unwrap())] {
        assert_eq!(labels.iter().filter(|&&l| l).count() * 2, labels.len());
        for pair in triples.chunks(2).zip(labels.chunks(2)) {
            let ([pos, neg], [true, false]) = (pair.0, pair.1) else { panic!("{pair:?}") };
            assert!(spec.holds(*pos) && !spec.holds(*neg));
            let r = pos.relation;
            if neg.head == pos.head {
                assert!(spec.color(neg.tail) >= r);
            } else {
                assert_eq!(neg.tail, pos.tail);
                assert!(spec.color(neg.head) + r < spec.colors);
            }
        }
    }
}
