//! Mean-pooled sentence embeddings from a (non-finetuned) encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::packing::{pack_tokens, SegmentTokens};
use super::tokenizer::{tokenize, TokenizerConfig};
use super::transformer::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tape};

/// An encoder plus a mean-pool readout, one vector per input text.
#[derive(Debug, Clone)]
pub struct SentenceEncoder {
    params: ParamSet,
    encoder: Encoder,
    tokenizer: TokenizerConfig,
}

impl SentenceEncoder {
    /// Randomly initialised encoder; the same seed gives the same weights.
    pub fn new(cfg: EncoderConfig, tokenizer: TokenizerConfig, seed: u64) -> Result<Self> {
        tokenizer.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = Encoder::new(&mut params, "sent", cfg, tokenizer.vocab_size, &mut rng)?;
        Ok(Self {
            params,
            encoder,
            tokenizer,
        })
    }

    pub fn from_parts(params: ParamSet, encoder: Encoder, tokenizer: TokenizerConfig) -> Self {
        Self {
            params,
            encoder,
            tokenizer,
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn embed_sentence(&self, text: &str) -> Result<Vec<f64>> {
        self.embed_tokens(tokenize(text, &self.tokenizer), Vec::new())
    }

    /// Embeds `question ⊕ candidate` as one sequence with a separator.
    pub fn embed_pair(&self, question: &str, candidate: &str) -> Result<Vec<f64>> {
        self.embed_tokens(
            tokenize(question, &self.tokenizer),
            tokenize(candidate, &self.tokenizer),
        )
    }

    fn embed_tokens(&self, mut first: Vec<u32>, mut second: Vec<u32>) -> Result<Vec<f64>> {
        if first.is_empty() && second.is_empty() {
            return Err(Error::EmptyText);
        }
        let max_len = self.encoder.config().max_len;
        let room = max_len.saturating_sub(3);
        second.truncate(room.saturating_sub(first.len()));
        first.truncate(room);
        let tokens = SegmentTokens {
            question: first,
            candidate: second,
            ..Default::default()
        };
        let len = tokens.question.len() + tokens.candidate.len() + 3;
        let packed = pack_tokens(&tokens, &self.tokenizer, len.min(max_len))?;
        let mut tape = Tape::new(&self.params);
        let out = self.encoder.forward(&mut tape, &packed)?;
        let reps = tape.value(out.tokens);
        let mut pooled = vec![0.0; reps.cols];
        let mut n = 0usize;
        for span in [packed.spans.question, packed.spans.candidate] {
            for r in span.start..span.end {
                for (p, v) in pooled.iter_mut().zip(reps.row(r)) {
                    *p += v;
                }
                n += 1;
            }
        }
        pooled.iter_mut().for_each(|v| *v /= n as f64);
        Ok(pooled)
    }
}
