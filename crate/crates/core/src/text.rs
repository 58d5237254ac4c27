//! Word tokenizer and the `[B] head [S] relation [S] tail [S]` triplet layout.

use std::collections::HashMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const BEGIN: &str = "[B]";
pub const SEP: &str = "[S]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BEGIN_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

/// Ids `0..NUM_SPECIAL` are reserved for special tokens.
pub const NUM_SPECIAL: u32 = 4;

/// Number of special tokens in one encoded triplet.
pub const SPECIALS_PER_TRIPLET: usize = 4;

pub const DEFAULT_MAX_LEN: usize = 128;

/// Text-to-id mapping used by [`encode_triplet`].
///
/// Implementors must reserve ids 0..4 for `[PAD]`, `[UNK]`, `[B]`, `[S]`, so a
/// subword tokenizer can replace [`WordTokenizer`] without touching the
/// encoder or the trainer.
pub trait TextTokenizer: Sync {
    fn tokenize(&self, text: &str) -> Vec<u32>;
    fn vocab_size(&self) -> usize;
    fn max_len(&self) -> usize;
    fn token(&self, id: u32) -> Option<&str>;
}

/// Lowercased whitespace/punctuation word tokenizer with an unknown token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordTokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    max_len: usize,
}

/// Splits into lowercased alphanumeric runs; every other non-space char is its own piece.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.extend(std::iter::once(ch.to_lowercase().collect::<String>()));
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

impl WordTokenizer {
    /// Vocabulary from a corpus: tokens seen at least `min_count` times,
    /// ordered by count descending then lexicographically.
    pub fn from_corpus<'a>(
        corpus: impl IntoIterator<Item = &'a str>,
        min_count: usize,
        max_len: usize,
    ) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut total = 0usize;
        for text in corpus {
            for w in split_words(text) {
                *counts.entry(w).or_default() += 1;
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::argument("cannot build a vocabulary from an empty corpus"));
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [PAD, UNK, BEGIN, SEP]
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens, max_len)
    }

    fn from_tokens(vocab: Vec<String>, max_len: usize) -> Result<Self> {
        if max_len < SPECIALS_PER_TRIPLET + 3 {
            return Err(Error::argument(format!(
                "max_len {max_len} cannot hold three segments and four special tokens"
            )));
        }
        if vocab.len() < NUM_SPECIAL as usize
            || vocab[..NUM_SPECIAL as usize] != [PAD, UNK, BEGIN, SEP]
        {
            return Err(Error::argument("vocabulary must start with [PAD] [UNK] [B] [S]"));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, tok) in vocab.iter().enumerate() {
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::argument(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(WordTokenizer {
            vocab,
            index,
            max_len,
        })
    }

    /// Builds the vocabulary from every entity and relation description in `g`.
    pub fn build_vocab(g: &KnowledgeGraph, min_count: usize, max_len: usize) -> Result<Self> {
        let corpus = g
            .entities()
            .descriptions()
            .iter()
            .chain(g.relations().descriptions())
            .map(String::as_str);
        Self::from_corpus(corpus, min_count, max_len)
    }

    pub fn tokens(&self) -> &[String] {
        &self.vocab
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for t in &self.vocab {
            s.push_str(t);
            s.push('\n');
        }
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path, max_len: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_tokens(text.lines().map(str::to_string).collect(), max_len)
    }
}

impl TextTokenizer for WordTokenizer {
    fn tokenize(&self, text: &str) -> Vec<u32> {
        split_words(text)
            .iter()
            .map(|w| self.index.get(w).copied().unwrap_or(UNK_ID))
            .collect()
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }
}

/// Token ids of one triplet plus the positions of its three description segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedTriple {
    /// Padded to the tokenizer's `max_len`.
    pub token_ids: Vec<u32>,
    pub head_span: Range<usize>,
    pub rel_span: Range<usize>,
    pub tail_span: Range<usize>,
    /// Unpadded length.
    pub attention_len: usize,
}

impl EncodedTriple {
    pub fn spans(&self) -> [&Range<usize>; 3] {
        [&self.head_span, &self.rel_span, &self.tail_span]
    }

    /// Segment id per position: 0 special/pad, 1 head, 2 relation, 3 tail.
    pub fn segment_ids(&self) -> Vec<usize> {
        let mut seg = vec![0; self.token_ids.len()];
        for (s, span) in self.spans().into_iter().enumerate() {
            for p in span.clone() {
                seg[p] = s + 1;
            }
        }
        seg
    }
}

/// Shrinks the three segment lengths until they fit `budget`, removing one
/// token at a time from the currently longest segment (earliest on ties).
/// No segment drops below one token.
pub fn truncate_lengths(lens: [usize; 3], budget: usize) -> [usize; 3] {
    let mut lens = lens;
    while lens.iter().sum::<usize>() > budget {
        let (i, &longest) = lens
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(&a.0)))
            .expect("three segments");
        if longest <= 1 {
            break;
        }
        lens[i] -= 1;
    }
    lens
}

/// Lays out `[B] head [S] relation [S] tail [S]` and pads to `max_len`.
pub fn encode_segments(head: &[u32], rel: &[u32], tail: &[u32], max_len: usize) -> Result<EncodedTriple> {
    for (name, seg) in [("head", head), ("relation", rel), ("tail", tail)] {
        if seg.is_empty() {
            return Err(Error::Encoding(format!("{name} description has no tokens")));
        }
    }
    if max_len < SPECIALS_PER_TRIPLET + 3 {
        return Err(Error::Encoding(format!("max_len {max_len} is too small for a triplet")));
    }
    let lens = truncate_lengths(
        [head.len(), rel.len(), tail.len()],
        max_len - SPECIALS_PER_TRIPLET,
    );
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BEGIN_ID);
    let mut spans = Vec::with_capacity(3);
    for (seg, len) in [head, rel, tail].into_iter().zip(lens) {
        let start = ids.len();
        ids.extend_from_slice(&seg[..len]);
        spans.push(start..ids.len());
        ids.push(SEP_ID);
    }
    let attention_len = ids.len();
    ids.resize(max_len, PAD_ID);
    let mut spans = spans.into_iter();
    Ok(EncodedTriple {
        token_ids: ids,
        head_span: spans.next().unwrap(),
        rel_span: spans.next().unwrap(),
        tail_span: spans.next().unwrap(),
        attention_len,
    })
}

/// Encodes `t` from the graph's entity and relation descriptions.
pub fn encode_triplet<T: TextTokenizer + ?Sized>(
    tok: &T,
    g: &KnowledgeGraph,
    t: Triple,
) -> Result<EncodedTriple> {
    let head = tok.tokenize(g.entity_description(t.head));
    let rel = tok.tokenize(g.relation_description(t.relation));
    let tail = tok.tokenize(g.entity_description(t.tail));
    encode_segments(&head, &rel, &tail, tok.max_len()).map_err(|e| match e {
        Error::Encoding(m) => Error::Encoding(format!("triple {t}: {m}")),
        other => other,
    })
}

/// Pre-tokenized descriptions for every entity and relation of a graph.
///
/// Encoding a triple from the cache only copies ids, which matters when
/// scoring every candidate entity during ranking.
#[derive(Debug, Clone)]
pub struct DescriptionCache {
    entities: Vec<Vec<u32>>,
    relations: Vec<Vec<u32>>,
    max_len: usize,
}

impl DescriptionCache {
    /// Fails if any description tokenizes to nothing.
    pub fn new<T: TextTokenizer + ?Sized>(tok: &T, g: &KnowledgeGraph) -> Result<Self> {
        let tokenize_all = |descs: &[String], kind: &str| -> Result<Vec<Vec<u32>>> {
            descs
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let ids = tok.tokenize(d);
                    if ids.is_empty() {
                        Err(Error::Encoding(format!("{kind} {i} description {d:?} has no tokens")))
                    } else {
                        Ok(ids)
                    }
                })
                .collect()
        };
        if tok.max_len() < SPECIALS_PER_TRIPLET + 3 {
            return Err(Error::Encoding(format!(
                "max_len {} is too small for a triplet",
                tok.max_len()
            )));
        }
        Ok(DescriptionCache {
            entities: tokenize_all(g.entities().descriptions(), "entity")?,
            relations: tokenize_all(g.relations().descriptions(), "relation")?,
            max_len: tok.max_len(),
        })
    }

    pub fn encode(&self, t: Triple) -> EncodedTriple {
        encode_segments(
            &self.entities[t.head],
            &self.relations[t.relation],
            &self.entities[t.tail],
            self.max_len,
        )
        .expect("cache holds only non-empty segments")
    }
}
