//! Contextual answer-scoring architectures.
//!
//! * concatenation: one encoder over `Q C Loc Glo`, CLS vector -> dense head;
//! * ensemble: a local-view and a global-view encoder whose CLS vectors are
//!   concatenated into one head;
//! * multi-way attention: one encoder pass, then separate multi-way
//!   attention blocks from the candidate span into the local and global
//!   spans, concatenated with the CLS vector into the head.
//!
//! The no-context, local-only and global-only baselines run the
//! concatenation path with the unused segments left out.

pub mod flops;
pub mod mwa;
pub mod rank;
pub mod train;

use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::ContextBundle;
use crate::encoder::checkpoint::{self, CheckpointHeader, FORMAT_VERSION};
use crate::encoder::{pack_tokens, Encoder, EncoderConfig, PackedSequence, SegmentTokens, TokenizerConfig};
use crate::error::{Error, Result};
use crate::nn::{softmax, ParamId, ParamSet, Tape, Var};

pub use mwa::{multiway_attention, MwaAggregation, MwaParams};
pub use rank::{rank, rank_all, score_inputs};
pub use train::{build_examples, train, EpochLog, Example, TrainConfig, TrainLog};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    NoContext,
    #[serde(rename = "local")]
    LocalOnly,
    #[serde(rename = "global")]
    GlobalOnly,
    #[serde(rename = "concat")]
    ContextConcat,
    #[serde(rename = "ensemble")]
    ContextEnsemble,
    #[serde(rename = "mwa")]
    MultiWayAttention,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 6] = [
        ModelVariant::NoContext,
        ModelVariant::LocalOnly,
        ModelVariant::GlobalOnly,
        ModelVariant::ContextConcat,
        ModelVariant::ContextEnsemble,
        ModelVariant::MultiWayAttention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::NoContext => "no_context",
            ModelVariant::LocalOnly => "local",
            ModelVariant::GlobalOnly => "global",
            ModelVariant::ContextConcat => "concat",
            ModelVariant::ContextEnsemble => "ensemble",
            ModelVariant::MultiWayAttention => "mwa",
        }
    }

    pub fn uses_local(self) -> bool {
        !matches!(self, ModelVariant::NoContext | ModelVariant::GlobalOnly)
    }

    pub fn uses_global(self) -> bool {
        !matches!(self, ModelVariant::NoContext | ModelVariant::LocalOnly)
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config {
                field: "variant",
                message: format!("unknown variant `{s}`"),
            })
    }
}

/// Encoder input(s) for one candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelInput {
    Single(PackedSequence),
    Pair {
        local: PackedSequence,
        global: PackedSequence,
    },
}

/// Packs question, candidate and context for `variant`.
pub fn build_input(
    variant: ModelVariant,
    tokenizer: &TokenizerConfig,
    max_len: usize,
    question: &str,
    candidate: &str,
    bundle: &ContextBundle,
) -> Result<ModelInput> {
    let local = bundle.local_texts();
    let global = bundle.global_texts();
    let pack = |l: &[&str], g: &[&str]| {
        pack_tokens(
            &SegmentTokens::from_text(question, candidate, l, g, tokenizer),
            tokenizer,
            max_len,
        )
    };
    Ok(match variant {
        ModelVariant::NoContext => ModelInput::Single(pack(&[], &[])?),
        ModelVariant::LocalOnly => ModelInput::Single(pack(&local, &[])?),
        ModelVariant::GlobalOnly => ModelInput::Single(pack(&[], &global)?),
        ModelVariant::ContextConcat | ModelVariant::MultiWayAttention => ModelInput::Single(pack(&local, &global)?),
        ModelVariant::ContextEnsemble => ModelInput::Pair {
            local: pack(&local, &[])?,
            global: pack(&[], &global)?,
        },
    })
}

/// Dense layer `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(params: &mut ParamSet, prefix: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            w: params.normal(format!("{prefix}.w"), in_dim, out_dim, INIT_STD, rng),
            b: params.constant(format!("{prefix}.b"), 1, out_dim, 0.0),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let width = t.shape(x).1;
        if width != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                actual: width,
            });
        }
        Ok(crate::encoder::affine(t, x, self.w, self.b))
    }
}

/// CLS vector -> dense layer -> two logits.
pub fn forward_concat(t: &mut Tape, encoder: &Encoder, head: &Linear, packed: &PackedSequence) -> Result<Var> {
    if head.in_dim != encoder.hidden_dim() {
        return Err(Error::DimensionMismatch {
            expected: encoder.hidden_dim(),
            actual: head.in_dim,
        });
    }
    let out = encoder.forward(t, packed)?;
    head.forward(t, out.pooled)
}

/// Concatenated CLS vectors of the two views -> dense layer -> two logits.
pub fn forward_ensemble(
    t: &mut Tape,
    local_encoder: &Encoder,
    global_encoder: &Encoder,
    head: &Linear,
    packed_local: &PackedSequence,
    packed_global: &PackedSequence,
) -> Result<Var> {
    if local_encoder.hidden_dim() != global_encoder.hidden_dim() {
        return Err(Error::DimensionMismatch {
            expected: local_encoder.hidden_dim(),
            actual: global_encoder.hidden_dim(),
        });
    }
    let l = local_encoder.forward(t, packed_local)?;
    let g = global_encoder.forward(t, packed_global)?;
    let cat = t.concat_cols(&[l.pooled, g.pooled]);
    head.forward(t, cat)
}

/// Multi-way attention parameters for both context roles.
#[derive(Debug, Clone)]
pub struct MwaBlocks {
    pub local: MwaParams,
    pub global: MwaParams,
    pub aggregation: MwaAggregation,
}

/// Single encoder pass; candidate attends to local and global spans separately.
pub fn forward_mwa(
    t: &mut Tape,
    encoder: &Encoder,
    blocks: &MwaBlocks,
    head: &Linear,
    packed: &PackedSequence,
) -> Result<Var> {
    let cand_span = packed.spans.candidate;
    if cand_span.is_empty() {
        return Err(Error::MissingSpan("candidate"));
    }
    let out = encoder.forward(t, packed)?;
    let cand = t.slice_rows(out.tokens, cand_span.start, cand_span.end);
    let local = packed.spans.local.map(|s| t.slice_rows(out.tokens, s.start, s.end));
    let global = packed.spans.global.map(|s| t.slice_rows(out.tokens, s.start, s.end));
    let ml = multiway_attention(t, cand, local, &blocks.local, &blocks.aggregation);
    let mg = multiway_attention(t, cand, global, &blocks.global, &blocks.aggregation);
    let features = t.concat_cols(&[out.pooled, ml, mg]);
    head.forward(t, features)
}

/// A scoring model: its variant, parameters and the handles into them.
#[derive(Debug, Clone)]
pub struct Model {
    variant: ModelVariant,
    encoder_cfg: EncoderConfig,
    tokenizer: TokenizerConfig,
    params: ParamSet,
    encoders: Vec<Encoder>,
    mwa: Option<MwaBlocks>,
    head: Linear,
}

impl Model {
    pub fn new(
        variant: ModelVariant,
        encoder_cfg: EncoderConfig,
        tokenizer: TokenizerConfig,
        seed: u64,
    ) -> Result<Self> {
        encoder_cfg.validate()?;
        tokenizer.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let h = encoder_cfg.hidden_dim;
        let vocab = tokenizer.vocab_size;
        let mut encoders = vec![Encoder::new(&mut params, "enc0", encoder_cfg, vocab, &mut rng)?];
        if variant == ModelVariant::ContextEnsemble {
            encoders.push(Encoder::new(&mut params, "enc1", encoder_cfg, vocab, &mut rng)?);
        }
        let mwa = (variant == ModelVariant::MultiWayAttention).then(|| MwaBlocks {
            local: MwaParams::new(&mut params, "mwa.local", h, &mut rng),
            global: MwaParams::new(&mut params, "mwa.global", h, &mut rng),
            aggregation: MwaAggregation::new(&mut params, "mwa.agg", h, &mut rng),
        });
        let head_in = match variant {
            ModelVariant::ContextEnsemble => 2 * h,
            ModelVariant::MultiWayAttention => 3 * h,
            _ => h,
        };
        let head = Linear::new(&mut params, "head", head_in, 2, &mut rng);
        Ok(Self {
            variant,
            encoder_cfg,
            tokenizer,
            params,
            encoders,
            mwa,
            head,
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder_cfg
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn encoders(&self) -> &[Encoder] {
        &self.encoders
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn mwa_blocks(&self) -> Option<&MwaBlocks> {
        self.mwa.as_ref()
    }

    /// Total encoder forward passes run so far, across all encoders.
    pub fn encoder_forward_calls(&self) -> usize {
        self.encoders.iter().map(Encoder::forward_calls).sum()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoders
            .iter()
            .map(|e| self.params.scalar_count_with_prefix(&format!("{}.", e.prefix())))
            .sum()
    }

    pub fn mwa_param_count(&self) -> usize {
        self.params.scalar_count_with_prefix("mwa.")
    }

    pub fn head_param_count(&self) -> usize {
        self.params.scalar_count_with_prefix("head.")
    }

    pub fn prepare(&self, question: &str, candidate: &str, bundle: &ContextBundle) -> Result<ModelInput> {
        build_input(
            self.variant,
            &self.tokenizer,
            self.encoder_cfg.max_len,
            question,
            candidate,
            bundle,
        )
    }

    /// Records the forward pass on `t` and returns the `1 x 2` logits.
    pub fn logits(&self, t: &mut Tape, input: &ModelInput) -> Result<Var> {
        match (self.variant, input) {
            (ModelVariant::ContextEnsemble, ModelInput::Pair { local, global }) => {
                forward_ensemble(t, &self.encoders[0], &self.encoders[1], &self.head, local, global)
            }
            (ModelVariant::MultiWayAttention, ModelInput::Single(p)) => {
                let blocks = self.mwa.as_ref().expect("mwa variant has mwa blocks");
                forward_mwa(t, &self.encoders[0], blocks, &self.head, p)
            }
            (ModelVariant::ContextEnsemble, _) | (_, ModelInput::Pair { .. }) => Err(Error::Config {
                field: "variant",
                message: format!("input shape does not match variant `{}`", self.variant.as_str()),
            }),
            (_, ModelInput::Single(p)) => forward_concat(t, &self.encoders[0], &self.head, p),
        }
    }

    /// Probabilities of label 0 and label 1.
    pub fn probabilities(&self, input: &ModelInput) -> Result<[f64; 2]> {
        let mut t = Tape::new(&self.params);
        let logits = self.logits(&mut t, input)?;
        let p = softmax(&t.value(logits).data);
        Ok([p[0], p[1]])
    }

    /// Probability that the candidate is correct.
    pub fn score(&self, input: &ModelInput) -> Result<f64> {
        Ok(self.probabilities(input)?[1])
    }

    pub fn header(&self, extra: serde_json::Value) -> CheckpointHeader {
        let mut extra = match extra {
            serde_json::Value::Object(m) => m,
            serde_json::Value::Null => serde_json::Map::new(),
            other => {
                let mut m = serde_json::Map::new();
                m.insert("meta".into(), other);
                m
            }
        };
        extra.insert(
            "variant".into(),
            serde_json::Value::String(self.variant.as_str().into()),
        );
        CheckpointHeader {
            format_version: FORMAT_VERSION,
            encoder: self.encoder_cfg,
            tokenizer: self.tokenizer,
            extra: serde_json::Value::Object(extra),
        }
    }

    /// Writes the model checkpoint; the header's `extra` carries the
    /// variant tag plus whatever metadata the caller passes.
    pub fn save<W: Write>(&self, out: W, extra: serde_json::Value) -> Result<()> {
        checkpoint::write_checkpoint(out, &self.header(extra), &self.params)
    }

    pub fn load<R: Read>(input: R) -> Result<(Self, CheckpointHeader)> {
        let (header, tensors) = checkpoint::read_checkpoint(input)?;
        let variant: ModelVariant = header
            .extra
            .get("variant")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Checkpoint("missing variant tag".into()))?
            .parse()?;
        let mut model = Model::new(variant, header.encoder, header.tokenizer, 0)?;
        checkpoint::load_into(&mut model.params, tensors)?;
        Ok((model, header))
    }
}
