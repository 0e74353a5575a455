//! Run configuration: JSON file plus flag overrides.

use std::path::PathBuf;

use ctxrank_core::context::{GlobalContextConfig, GlobalScorer, LocalContextConfig};
use ctxrank_core::encoder::{EncoderConfig, TokenizerConfig};
use ctxrank_core::eval::LatencyConfig;
use ctxrank_core::models::{ModelVariant, TrainConfig};
use ctxrank_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub docs: Option<PathBuf>,
    pub qa: Option<PathBuf>,
    pub dev_qa: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub variant: ModelVariant,
    pub local: LocalContextConfig,
    pub global: GlobalContextConfig,
    pub encoder: EncoderConfig,
    pub tokenizer: TokenizerConfig,
    pub train: TrainConfig,
    pub bench: LatencyConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            docs: None,
            qa: None,
            dev_qa: None,
            out: None,
            variant: ModelVariant::ContextConcat,
            local: LocalContextConfig::default(),
            global: GlobalContextConfig::default(),
            encoder: EncoderConfig::default(),
            tokenizer: TokenizerConfig::default(),
            train: TrainConfig::default(),
            bench: LatencyConfig::default(),
            seed: 0,
        }
    }
}

/// Flag values that override the config file when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub docs: Option<PathBuf>,
    pub qa: Option<PathBuf>,
    pub dev_qa: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub variant: Option<String>,
    pub scorer: Option<String>,
    pub k: Option<usize>,
    pub h: Option<usize>,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub unfreeze_top_k: Option<usize>,
    pub repeats: Option<usize>,
}

pub fn parse_scorer(s: &str) -> Result<GlobalScorer> {
    match s {
        "ngram" => Ok(GlobalScorer::NgramOverlap),
        "cosine" => Ok(GlobalScorer::CosineSimilarity),
        other => Err(Error::Config {
            field: "scorer",
            message: format!("unknown scorer `{other}`, expected ngram or cosine"),
        }),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config {
            field: "config",
            message: e.to_string(),
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        if o.docs.is_some() {
            self.docs = o.docs.clone();
        }
        if o.qa.is_some() {
            self.qa = o.qa.clone();
        }
        if o.dev_qa.is_some() {
            self.dev_qa = o.dev_qa.clone();
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
        if let Some(v) = &o.variant {
            self.variant = v.parse()?;
        }
        if let Some(s) = &o.scorer {
            self.global.scorer = parse_scorer(s)?;
        }
        set!(o.k => self.local.k);
        set!(o.h => self.global.h);
        set!(o.budget => self.global.token_budget);
        set!(o.seed => self.seed);
        set!(o.epochs => self.train.epochs);
        set!(o.batch_size => self.train.batch_size);
        set!(o.lr => self.train.learning_rate);
        set!(o.unfreeze_top_k => self.train.unfreeze_top_k);
        set!(o.repeats => self.bench.repeats);
        self.train.seed = self.seed;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.global.validate()?;
        self.encoder.validate()?;
        self.tokenizer.validate()?;
        self.train.validate(&self.encoder, self.variant)?;
        self.bench.validate()
    }

    /// SHA-256 of the canonical JSON of every setting except file paths.
    pub fn config_hash(&self) -> String {
        let canonical = RunConfig {
            docs: None,
            qa: None,
            dev_qa: None,
            out: None,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the documents file, a separator byte and the QA file.
pub fn dataset_hash(docs: &[u8], qa: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(docs);
    h.update([0u8]);
    h.update(qa);
    hex(&h.finalize())
}
