//! Run configuration file (TOML).
//!
//! ```toml
//! schema_version = 1
//! data_dir = "data/umls"        # relative paths resolve against this file
//! output_dir = "runs/umls"
//! model = "transe"              # lass | transe | distmult | complex | rotate
//! seed = 0                      # split into per-module seeds
//!
//! [shallow]                     # only for shallow models
//! k = 128
//!
//! [tokenizer]                   # only for lass
//! min_count = 1
//! max_len = 128
//!
//! [encoder]                     # only for lass; vocab_size is filled in
//! k = 64
//!
//! [loss]
//! margin = 7.0
//! n_ns = 5
//!
//! [optimizer]
//! learning_rate = 3e-5
//! epochs = 5
//!
//! [eval]
//! cutoffs = [1, 3, 10]
//! tie_policy = "mid"            # mid | optimistic | pessimistic
//!
//! [sweep]
//! fractions = [0.05, 0.10, 0.15, 0.20, 0.30]
//! ```
//!
//! Every section is optional and every key inside one has a default, except
//! `schema_version`, `data_dir` and `model`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{TiePolicy, DEFAULT_CUTOFFS};
use crate::graph::LOW_RESOURCE_FRACTIONS;
use crate::loss::LossConfig;
use crate::optim::OptimizerConfig;
use crate::shallow::ShallowKind;
use crate::text::DEFAULT_MAX_LEN;

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lass,
    #[serde(untagged)]
    Shallow(ShallowKind),
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Lass => f.write_str("lass"),
            ModelKind::Shallow(k) => k.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub min_count: usize,
    pub max_len: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            min_count: 1,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShallowConfig {
    pub k: usize,
}

impl Default for ShallowConfig {
    fn default() -> Self {
        ShallowConfig { k: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    pub tie_policy: TiePolicy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            tie_policy: TiePolicy::Mid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            fractions: LOW_RESOURCE_FRACTIONS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub data_dir: PathBuf,
    pub model: ModelKind,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub encoder: Option<EncoderConfig>,
    pub tokenizer: Option<TokenizerConfig>,
    pub shallow: Option<ShallowConfig>,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

/// Module seeds derived from the top-level seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub init: u64,
    pub training: u64,
    pub subsample: u64,
}

impl Seeds {
    pub fn split(seed: u64) -> Self {
        let mix = |tag: u64| crate::eval::derive_seed(seed, f64::from_bits(tag));
        Seeds {
            init: mix(1),
            training: mix(2),
            subsample: mix(3),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        if cfg.schema_version != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA})",
                cfg.schema_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; relative paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data_dir = base.join(&cfg.data_dir);
        cfg.output_dir = cfg.output_dir.map(|p| base.join(p));
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.model {
            ModelKind::Lass if self.shallow.is_some() => {
                return bad("a [shallow] section is only valid for shallow models".into())
            }
            ModelKind::Shallow(k) if self.encoder.is_some() || self.tokenizer.is_some() => {
                return bad(format!("[encoder] and [tokenizer] sections are only valid for model \"lass\", not \"{k}\""))
            }
            _ => {}
        }
        if self.shallow.as_ref().is_some_and(|s| s.k == 0) {
            return bad("shallow.k must be positive".into());
        }
        let tok = self.tokenizer_config();
        if tok.max_len < crate::text::SPECIALS_PER_TRIPLET + 3 {
            return bad(format!("tokenizer.max_len {} is too short for a triple", tok.max_len));
        }
        self.loss.validate().map_err(as_config)?;
        self.optimizer.validate().map_err(as_config)?;
        if self.optimizer.learning_rate <= 0.0 {
            return bad("optimizer.learning_rate must be positive".into());
        }
        if self.eval.cutoffs.is_empty() || self.eval.cutoffs.contains(&0) {
            return bad("eval.cutoffs must be a non-empty list of positive integers".into());
        }
        for &f in &self.sweep.fractions {
            crate::graph::SubsampleSpec::new(f, 0).map_err(as_config)?;
        }
        Ok(())
    }

    pub fn tokenizer_config(&self) -> TokenizerConfig {
        self.tokenizer.clone().unwrap_or_default()
    }

    pub fn shallow_config(&self) -> ShallowConfig {
        self.shallow.clone().unwrap_or_default()
    }

    /// Encoder config with `max_len` defaulting to the tokenizer's and the
    /// seed taken from the top-level seed.
    pub fn encoder_config(&self) -> EncoderConfig {
        let mut e = self.encoder.clone().unwrap_or_else(|| EncoderConfig {
            max_len: self.tokenizer_config().max_len,
            ..Default::default()
        });
        e.seed = self.seeds().init;
        e
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            seed: self.seeds().training,
            ..self.optimizer.clone()
        }
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::split(self.seed)
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Argument(m) => Error::Config(m),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::parse("schema_version = 1\ndata_dir = \"d\"\nmodel = \"lass\"\n").unwrap();
        assert_eq!(c.model, ModelKind::Lass);
        assert_eq!(c.optimizer.batch_size, 128);
        assert_eq!(c.optimizer.learning_rate, 3e-5);
        assert_eq!(c.optimizer.weight_decay, 0.01);
        assert_eq!(c.optimizer.epochs, 5);
        assert_eq!(c.loss.margin, 7.0);
        assert_eq!(c.loss.n_ns, 5);
        assert_eq!(c.sweep.fractions, vec![0.05, 0.10, 0.15, 0.20, 0.30]);
        assert_eq!(c.eval.cutoffs, vec![1, 3, 10]);
    }

    #[test]
    fn shallow_model_names_parse() {
        let c = RunConfig::parse("schema_version = 1\ndata_dir = \"d\"\nmodel = \"rotate\"\n[shallow]\nk = 8\n").unwrap();
        assert_eq!(c.model, ModelKind::Shallow(ShallowKind::RotatE));
        assert_eq!(c.shallow_config().k, 8);
    }

    #[test]
    fn missing_data_dir_is_named() {
        let err = RunConfig::parse("schema_version = 1\nmodel = \"lass\"\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("data_dir"), "{err}");
    }

    #[test]
    fn mismatched_sections_and_bad_values_are_rejected() {
        for text in [
            "schema_version = 2\ndata_dir = \"d\"\nmodel = \"lass\"\n",
            "schema_version = 1\ndata_dir = \"d\"\nmodel = \"lass\"\n[shallow]\nk = 4\n",
            "schema_version = 1\ndata_dir = \"d\"\nmodel = \"transe\"\n[encoder]\nk = 4\n",
            "schema_version = 1\ndata_dir = \"d\"\nmodel = \"hake\"\n",
            "schema_version = 1\ndata_dir = \"d\"\nmodel = \"lass\"\n[sweep]\nfractions = [1.5]\n",
            "schema_version = 1\ndata_dir = \"d\"\nmodel = \"lass\"\n[loss]\nn_ns = 0\n",
            "schema_version = 1\ndata_dir = \"d\"\nmodel = \"lass\"\nbogus = 1\n",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn seeds_differ_per_module_and_follow_the_top_seed() {
        let a = Seeds::split(0);
        assert_ne!(a.init, a.training);
        assert_ne!(a.training, a.subsample);
        assert_ne!(a, Seeds::split(1));
        assert_eq!(a, Seeds::split(0));
    }
}
