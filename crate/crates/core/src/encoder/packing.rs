//! Packs question, candidate and context token ids into one encoder input.
//!
//! Layout: `[CLS] Q [SEP] C [SEP] Loc [SEP] Glo [SEP]`, padded to `max_len`.
//! An empty context segment contributes neither tokens nor a separator.
//! On overflow the global segment is cut first, then the local one.

use serde::{Deserialize, Serialize};

use super::tokenizer::{tokenize, TokenizerConfig};
use crate::error::{Error, Result};

/// Role of each position in a packed sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Segment {
    Question = 0,
    Candidate = 1,
    Local = 2,
    Global = 3,
    Special = 4,
}

impl Segment {
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Half-open token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spans {
    pub question: Span,
    pub candidate: Span,
    pub local: Option<Span>,
    pub global: Option<Span>,
}

impl Spans {
    pub fn get(&self, seg: Segment) -> Option<Span> {
        match seg {
            Segment::Question => Some(self.question),
            Segment::Candidate => Some(self.candidate),
            Segment::Local => self.local,
            Segment::Global => self.global,
            Segment::Special => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<Segment>,
    pub spans: Spans,
    pub attention_mask: Vec<bool>,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Positions not masked out (CLS, separators and content).
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|m| **m).count()
    }
}

/// Token ids per segment, before layout.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SegmentTokens {
    pub question: Vec<u32>,
    pub candidate: Vec<u32>,
    pub local: Vec<u32>,
    pub global: Vec<u32>,
}

impl SegmentTokens {
    pub fn from_text(question: &str, candidate: &str, local: &[&str], global: &[&str], cfg: &TokenizerConfig) -> Self {
        let join = |texts: &[&str]| texts.iter().flat_map(|t| tokenize(t, cfg)).collect();
        Self {
            question: tokenize(question, cfg),
            candidate: tokenize(candidate, cfg),
            local: join(local),
            global: join(global),
        }
    }
}

pub fn pack_input(
    question: &str,
    candidate: &str,
    local: &[&str],
    global: &[&str],
    cfg: &TokenizerConfig,
    max_len: usize,
) -> Result<PackedSequence> {
    let tokens = SegmentTokens::from_text(question, candidate, local, global, cfg);
    pack_tokens(&tokens, cfg, max_len)
}

pub fn pack_tokens(tokens: &SegmentTokens, cfg: &TokenizerConfig, max_len: usize) -> Result<PackedSequence> {
    let core = tokens.question.len() + tokens.candidate.len() + 3;
    if core > max_len {
        return Err(Error::SequenceTooLong { needed: core, max_len });
    }
    let mut avail = max_len - core;
    let mut keep = |n: usize| -> usize {
        if n == 0 || avail < 2 {
            return 0;
        }
        let k = n.min(avail - 1);
        avail -= k + 1;
        k
    };
    let local_keep = keep(tokens.local.len());
    let global_keep = keep(tokens.global.len());

    let mut ids = Vec::with_capacity(max_len);
    let mut segs = Vec::with_capacity(max_len);
    let mut push = |ids: &mut Vec<u32>, toks: &[u32], seg: Segment| -> Span {
        let start = ids.len();
        ids.extend_from_slice(toks);
        segs.extend(std::iter::repeat_n(seg, toks.len()));
        Span { start, end: ids.len() }
    };
    push(&mut ids, &[cfg.cls_id], Segment::Special);
    let question = push(&mut ids, &tokens.question, Segment::Question);
    push(&mut ids, &[cfg.sep_id], Segment::Special);
    let candidate = push(&mut ids, &tokens.candidate, Segment::Candidate);
    push(&mut ids, &[cfg.sep_id], Segment::Special);
    let mut local = None;
    if local_keep > 0 {
        local = Some(push(&mut ids, &tokens.local[..local_keep], Segment::Local));
        push(&mut ids, &[cfg.sep_id], Segment::Special);
    }
    let mut global = None;
    if global_keep > 0 {
        global = Some(push(&mut ids, &tokens.global[..global_keep], Segment::Global));
        push(&mut ids, &[cfg.sep_id], Segment::Special);
    }
    let real = ids.len();
    let pad = max_len - real;
    push(&mut ids, &vec![cfg.pad_id; pad], Segment::Special);
    let mut attention_mask = vec![true; real];
    attention_mask.resize(max_len, false);
    Ok(PackedSequence {
        token_ids: ids,
        segment_ids: segs,
        spans: Spans {
            question,
            candidate,
            local,
            global,
        },
        attention_mask,
    })
}
