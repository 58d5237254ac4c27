//! Knowledge-graph data model, TSV loaders and the known-positive filter index.
//!
//! A dataset directory holds five UTF-8 files:
//!
//! ```text
//! train.tsv          head<TAB>relation<TAB>tail
//! valid.tsv          head<TAB>relation<TAB>tail[<TAB>1|-1]
//! test.tsv           head<TAB>relation<TAB>tail[<TAB>1|-1]
//! entity2text.tsv    name<TAB>description
//! relation2text.tsv  name<TAB>description
//! ```
//!
//! The fourth column is only present for classification datasets. Entity and
//! relation ids are assigned in the order names appear in the text files.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const TRAIN_FILE: &str = "train.tsv";
pub const VALID_FILE: &str = "valid.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const ENTITY_TEXT_FILE: &str = "entity2text.tsv";
pub const RELATION_TEXT_FILE: &str = "relation2text.tsv";

/// Default low-resource fractions.
pub const LOW_RESOURCE_FRACTIONS: [f64; 5] = [0.05, 0.10, 0.15, 0.20, 0.30];

/// One (head, relation, tail) fact as ids into the graph vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    /// Unlabeled splits (FB15k-237, WN18RR, UMLS).
    #[default]
    LinkPrediction,
    /// Valid and test carry a `1`/`-1` label column (WN11, FB13).
    Classification,
}

impl DatasetFormat {
    /// Picks `Classification` when the first non-empty test line has four fields.
    pub fn detect(dir: &Path) -> Result<Self> {
        let path = dir.join(TEST_FILE);
        let text = read(&path)?;
        let labeled = text
            .lines()
            .find(|l| !l.trim().is_empty())
            .map(|l| l.split('\t').count() >= 4)
            .unwrap_or(false);
        Ok(if labeled {
            DatasetFormat::Classification
        } else {
            DatasetFormat::LinkPrediction
        })
    }
}

/// Named item plus its normalized description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    descriptions: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_entries(entries: Vec<(String, String)>) -> std::result::Result<Self, String> {
        let mut names = Vec::with_capacity(entries.len());
        let mut descriptions = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (name, desc) in entries {
            if index.insert(name.clone(), names.len()).is_some() {
                return Err(format!("duplicate name {name:?}"));
            }
            let desc = normalize_whitespace(&desc);
            descriptions.push(if desc.is_empty() { name.clone() } else { desc });
            names.push(name);
        }
        Ok(Vocabulary {
            names,
            descriptions,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn description(&self, id: usize) -> &str {
        &self.descriptions[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn descriptions(&self) -> &[String] {
        &self.descriptions
    }
}

/// Entity and relation vocabularies, the three splits, optional
/// classification labels and the filter index of gold-positive triples.
///
/// Immutable once built.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocabulary,
    relations: Vocabulary,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    labels_valid: Option<Vec<bool>>,
    labels_test: Option<Vec<bool>>,
    positive_index: HashSet<Triple>,
}

/// Inputs for [`KnowledgeGraph::from_parts`].
#[derive(Debug, Clone, Default)]
pub struct GraphParts {
    /// `(name, description)`; an empty description falls back to the name.
    pub entities: Vec<(String, String)>,
    pub relations: Vec<(String, String)>,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub labels_valid: Option<Vec<bool>>,
    pub labels_test: Option<Vec<bool>>,
}

impl KnowledgeGraph {
    pub fn from_parts(parts: GraphParts) -> Result<Self> {
        let entities = Vocabulary::from_entries(parts.entities).map_err(Error::argument)?;
        let relations = Vocabulary::from_entries(parts.relations).map_err(Error::argument)?;
        for (split, triples) in [
            ("train", &parts.train),
            ("valid", &parts.valid),
            ("test", &parts.test),
        ] {
            if let Some(t) = triples.iter().find(|t| {
                t.head >= entities.len() || t.tail >= entities.len() || t.relation >= relations.len()
            }) {
                return Err(Error::argument(format!(
                    "{split} triple {t} is out of range for |E|={}, |R|={}",
                    entities.len(),
                    relations.len()
                )));
            }
        }
        for (split, triples, labels) in [
            ("valid", &parts.valid, &parts.labels_valid),
            ("test", &parts.test, &parts.labels_test),
        ] {
            if let Some(labels) = labels {
                if labels.len() != triples.len() {
                    return Err(Error::argument(format!(
                        "{split} has {} triples but {} labels",
                        triples.len(),
                        labels.len()
                    )));
                }
            }
        }
        let positive_index = build_index(
            &parts.train,
            &parts.valid,
            &parts.test,
            parts.labels_valid.as_deref(),
            parts.labels_test.as_deref(),
        );
        Ok(KnowledgeGraph {
            entities,
            relations,
            train: parts.train,
            valid: parts.valid,
            test: parts.test,
            labels_valid: parts.labels_valid,
            labels_test: parts.labels_test,
            positive_index,
        })
    }

    pub fn entities(&self) -> &Vocabulary {
        &self.entities
    }

    pub fn relations(&self) -> &Vocabulary {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_description(&self, id: usize) -> &str {
        self.entities.description(id)
    }

    pub fn relation_description(&self, id: usize) -> &str {
        self.relations.description(id)
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn labels_valid(&self) -> Option<&[bool]> {
        self.labels_valid.as_deref()
    }

    pub fn labels_test(&self) -> Option<&[bool]> {
        self.labels_test.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels_test.is_some()
    }

    pub fn positive_index(&self) -> &HashSet<Triple> {
        &self.positive_index
    }

    /// Membership in train ∪ valid ∪ test (label-true rows only when labeled).
    pub fn is_known_positive(&self, t: Triple) -> bool {
        self.positive_index.contains(&t)
    }

    /// Test triples that are gold positives; all of them for unlabeled data.
    pub fn gold_test(&self) -> Vec<Triple> {
        match &self.labels_test {
            Some(labels) => self
                .test
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l)
                .map(|(t, _)| *t)
                .collect(),
            None => self.test.clone(),
        }
    }

    /// Copy of the graph with a seeded uniform subset of the training split.
    ///
    /// The subset has exactly `round(fraction * |train|)` triples, kept in
    /// their original order. Valid, test and the filter index are untouched.
    pub fn subsample_train(&self, spec: SubsampleSpec) -> Result<KnowledgeGraph> {
        spec.validate()?;
        let n = self.train.len();
        let keep = spec.target_size(n);
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (chosen, _) = idx.partial_shuffle(&mut rng, keep);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        let mut out = self.clone();
        out.train = chosen.into_iter().map(|i| self.train[i]).collect();
        Ok(out)
    }

    /// Same vocabularies and training split with empty valid and test
    /// splits, so the filter index holds training triples only. Training on
    /// this copy keeps held-out positives out of negative-sampling filters.
    pub fn train_only(&self) -> KnowledgeGraph {
        KnowledgeGraph {
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            train: self.train.clone(),
            valid: Vec::new(),
            test: Vec::new(),
            labels_valid: None,
            labels_test: None,
            positive_index: self.train.iter().copied().collect(),
        }
    }

    /// Writes the five dataset files; [`load_graph`] reads them back unchanged.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let vocab_file = |v: &Vocabulary| {
            let mut s = String::new();
            for (n, d) in v.names.iter().zip(&v.descriptions) {
                s.push_str(n);
                s.push('\t');
                s.push_str(d);
                s.push('\n');
            }
            s
        };
        fs::write(dir.join(ENTITY_TEXT_FILE), vocab_file(&self.entities))?;
        fs::write(dir.join(RELATION_TEXT_FILE), vocab_file(&self.relations))?;
        fs::write(dir.join(TRAIN_FILE), self.triples_tsv(&self.train, None))?;
        fs::write(
            dir.join(VALID_FILE),
            self.triples_tsv(&self.valid, self.labels_valid.as_deref()),
        )?;
        fs::write(
            dir.join(TEST_FILE),
            self.triples_tsv(&self.test, self.labels_test.as_deref()),
        )?;
        Ok(())
    }

    fn triples_tsv(&self, triples: &[Triple], labels: Option<&[bool]>) -> String {
        let mut s = String::new();
        for (i, t) in triples.iter().enumerate() {
            s.push_str(self.entities.name(t.head));
            s.push('\t');
            s.push_str(self.relations.name(t.relation));
            s.push('\t');
            s.push_str(self.entities.name(t.tail));
            if let Some(labels) = labels {
                s.push_str(if labels[i] { "\t1" } else { "\t-1" });
            }
            s.push('\n');
        }
        s
    }
}

fn build_index(
    train: &[Triple],
    valid: &[Triple],
    test: &[Triple],
    labels_valid: Option<&[bool]>,
    labels_test: Option<&[bool]>,
) -> HashSet<Triple> {
    let mut index: HashSet<Triple> = train.iter().copied().collect();
    for (triples, labels) in [(valid, labels_valid), (test, labels_test)] {
        match labels {
            Some(labels) => index.extend(
                triples
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l)
                    .map(|(t, _)| *t),
            ),
            None => index.extend(triples.iter().copied()),
        }
    }
    index
}

/// Low-resource subsampling request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampleSpec {
    pub fraction: f64,
    pub seed: u64,
}

impl SubsampleSpec {
    pub fn new(fraction: f64, seed: u64) -> Result<Self> {
        let spec = SubsampleSpec { fraction, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::argument(format!(
                "subsample fraction must be in (0, 1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }

    pub fn target_size(&self, n: usize) -> usize {
        ((self.fraction * n as f64).round() as usize).min(n)
    }
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })
}

fn integrity(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Integrity {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn load_vocab(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read(path)?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, desc) = match line.split_once('\t') {
            Some((n, d)) => (n.trim(), d),
            None => (line.trim(), ""),
        };
        if name.is_empty() {
            return Err(integrity(path, i + 1, "empty name"));
        }
        if !seen.insert(name.to_string()) {
            return Err(integrity(path, i + 1, format!("duplicate name {name:?}")));
        }
        entries.push((name.to_string(), desc.to_string()));
    }
    Ok(entries)
}

struct TripleFile {
    triples: Vec<Triple>,
    labels: Option<Vec<bool>>,
}

fn load_triples(
    path: &Path,
    entities: &HashMap<&str, usize>,
    relations: &HashMap<&str, usize>,
    labeled: bool,
) -> Result<TripleFile> {
    let text = read(path)?;
    let mut triples = Vec::new();
    let mut labels = labeled.then(Vec::new);
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let expected = if labeled { 4 } else { 3 };
        if fields.len() != expected {
            return Err(integrity(
                path,
                lineno,
                format!("expected {expected} tab-separated fields, found {}", fields.len()),
            ));
        }
        let lookup = |map: &HashMap<&str, usize>, name: &str, kind: &str| {
            map.get(name)
                .copied()
                .ok_or_else(|| integrity(path, lineno, format!("unknown {kind} {name:?}")))
        };
        triples.push(Triple {
            head: lookup(entities, fields[0], "entity")?,
            relation: lookup(relations, fields[1], "relation")?,
            tail: lookup(entities, fields[2], "entity")?,
        });
        if let Some(labels) = labels.as_mut() {
            labels.push(match fields[3] {
                "1" => true,
                "-1" => false,
                other => {
                    return Err(integrity(path, lineno, format!("label must be 1 or -1, got {other:?}")))
                }
            });
        }
    }
    Ok(TripleFile { triples, labels })
}

/// Loads a dataset directory. Ids follow the order of the text files.
pub fn load_graph(dir: &Path, format: DatasetFormat) -> Result<KnowledgeGraph> {
    let path = |f: &str| -> PathBuf { dir.join(f) };
    let entity_entries = load_vocab(&path(ENTITY_TEXT_FILE))?;
    let relation_entries = load_vocab(&path(RELATION_TEXT_FILE))?;
    let labeled = format == DatasetFormat::Classification;

    let (train, valid, test) = {
        let ents: HashMap<&str, usize> = entity_entries
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.as_str(), i))
            .collect();
        let rels: HashMap<&str, usize> = relation_entries
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.as_str(), i))
            .collect();
        (
            load_triples(&path(TRAIN_FILE), &ents, &rels, false)?,
            load_triples(&path(VALID_FILE), &ents, &rels, labeled)?,
            load_triples(&path(TEST_FILE), &ents, &rels, labeled)?,
        )
    };

    KnowledgeGraph::from_parts(GraphParts {
        entities: entity_entries,
        relations: relation_entries,
        train: train.triples,
        valid: valid.triples,
        test: test.triples,
        labels_valid: valid.labels,
        labels_test: test.labels,
    })
}
