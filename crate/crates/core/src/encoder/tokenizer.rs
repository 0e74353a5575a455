//! Hash-based closed-vocabulary tokenizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
    pub pad_id: u32,
    pub unk_id: u32,
    pub cls_id: u32,
    pub sep_id: u32,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8192,
            pad_id: 0,
            unk_id: 1,
            cls_id: 2,
            sep_id: 3,
        }
    }
}

impl TokenizerConfig {
    pub fn with_vocab(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 8 {
            return Err(Error::Config {
                field: "vocab_size",
                message: format!("must be >= 8, got {}", self.vocab_size),
            });
        }
        let ids = self.special_ids();
        for (i, a) in ids.iter().enumerate() {
            if *a as usize >= self.vocab_size {
                return Err(Error::Config {
                    field: "special_tokens",
                    message: format!("id {a} >= vocab_size"),
                });
            }
            if ids[i + 1..].contains(a) {
                return Err(Error::Config {
                    field: "special_tokens",
                    message: format!("id {a} used twice"),
                });
            }
        }
        if self.first_regular_id() >= self.vocab_size as u32 {
            return Err(Error::Config {
                field: "vocab_size",
                message: "no room for regular tokens".into(),
            });
        }
        Ok(())
    }

    pub fn special_ids(&self) -> [u32; 4] {
        [self.pad_id, self.unk_id, self.cls_id, self.sep_id]
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.special_ids().contains(&id)
    }

    /// Regular tokens hash into `[first_regular_id, vocab_size)`.
    pub fn first_regular_id(&self) -> u32 {
        self.special_ids().into_iter().max().unwrap_or(0) + 1
    }
}

/// Lowercased alphanumeric runs; every other character separates tokens.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn token_id(word: &str, cfg: &TokenizerConfig) -> u32 {
    let lo = u64::from(cfg.first_regular_id());
    let span = cfg.vocab_size as u64 - lo;
    (lo + fnv1a(word.as_bytes()) % span) as u32
}

pub fn tokenize(text: &str, cfg: &TokenizerConfig) -> Vec<u32> {
    words(text).iter().map(|w| token_id(w, cfg)).collect()
}

/// Number of encoder tokens in `text`.
pub fn token_count(text: &str) -> usize {
    words(text).len()
}
