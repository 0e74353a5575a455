//! Pre-norm transformer encoder with token, position and segment embeddings.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::packing::{PackedSequence, Segment};
use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamSet, Tape, Var};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            hidden_dim: 128,
            heads: 4,
            ffn_dim: 256,
            max_len: 320,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::Config {
                    field,
                    message: "must be positive".into(),
                });
            }
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::Config {
                field: "heads",
                message: format!("hidden_dim {} not divisible by {} heads", self.hidden_dim, self.heads),
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Handle to one encoder's parameters inside a [`ParamSet`].
#[derive(Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    vocab_size: usize,
    prefix: String,
    tok_emb: ParamId,
    pos_emb: ParamId,
    seg_emb: ParamId,
    layers: Vec<LayerParams>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    forward_calls: AtomicUsize,
}

impl Clone for Encoder {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg,
            vocab_size: self.vocab_size,
            prefix: self.prefix.clone(),
            tok_emb: self.tok_emb,
            pos_emb: self.pos_emb,
            seg_emb: self.seg_emb,
            layers: self.layers.clone(),
            lnf_g: self.lnf_g,
            lnf_b: self.lnf_b,
            forward_calls: AtomicUsize::new(self.forward_calls.load(Ordering::Relaxed)),
        }
    }
}

/// Per-token representations and the pooled `[CLS]` vector.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub tokens: Var,
    pub pooled: Var,
}

impl Encoder {
    /// Registers freshly initialised encoder parameters under `prefix`.
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        cfg: EncoderConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden_dim;
        let name = |s: &str| format!("{prefix}.{s}");
        let tok_emb = params.normal(name("emb.tok"), vocab_size, h, INIT_STD, rng);
        let pos_emb = params.normal(name("emb.pos"), cfg.max_len, h, INIT_STD, rng);
        let seg_emb = params.normal(name("emb.seg"), Segment::COUNT, h, INIT_STD, rng);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let n = |s: &str| format!("{prefix}.layer{l}.{s}");
            layers.push(LayerParams {
                ln1_g: params.constant(n("ln1.g"), 1, h, 1.0),
                ln1_b: params.constant(n("ln1.b"), 1, h, 0.0),
                wq: params.normal(n("attn.wq"), h, h, INIT_STD, rng),
                bq: params.constant(n("attn.bq"), 1, h, 0.0),
                wk: params.normal(n("attn.wk"), h, h, INIT_STD, rng),
                bk: params.constant(n("attn.bk"), 1, h, 0.0),
                wv: params.normal(n("attn.wv"), h, h, INIT_STD, rng),
                bv: params.constant(n("attn.bv"), 1, h, 0.0),
                wo: params.normal(n("attn.wo"), h, h, INIT_STD, rng),
                bo: params.constant(n("attn.bo"), 1, h, 0.0),
                ln2_g: params.constant(n("ln2.g"), 1, h, 1.0),
                ln2_b: params.constant(n("ln2.b"), 1, h, 0.0),
                w1: params.normal(n("ffn.w1"), h, cfg.ffn_dim, INIT_STD, rng),
                b1: params.constant(n("ffn.b1"), 1, cfg.ffn_dim, 0.0),
                w2: params.normal(n("ffn.w2"), cfg.ffn_dim, h, INIT_STD, rng),
                b2: params.constant(n("ffn.b2"), 1, h, 0.0),
            });
        }
        let lnf_g = params.constant(name("ln_f.g"), 1, h, 1.0);
        let lnf_b = params.constant(name("ln_f.b"), 1, h, 0.0);
        Ok(Self {
            cfg,
            vocab_size,
            prefix: prefix.to_string(),
            tok_emb,
            pos_emb,
            seg_emb,
            layers,
            lnf_g,
            lnf_b,
            forward_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn hidden_dim(&self) -> usize {
        self.cfg.hidden_dim
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Parameter-name prefix of layer `l`.
    pub fn layer_prefix(&self, l: usize) -> String {
        format!("{}.layer{l}.", self.prefix)
    }

    pub fn forward_calls(&self) -> usize {
        self.forward_calls.load(Ordering::Relaxed)
    }

    pub fn forward(&self, tape: &mut Tape, packed: &PackedSequence) -> Result<EncoderOutput> {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let len = packed.len();
        if len > self.cfg.max_len {
            return Err(Error::SequenceTooLong {
                needed: len,
                max_len: self.cfg.max_len,
            });
        }
        if let Some(&id) = packed.token_ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(Error::TokenOutOfVocab {
                id,
                vocab_size: self.vocab_size,
            });
        }
        let ids: Vec<usize> = packed.token_ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..len).collect();
        let segs: Vec<usize> = packed.segment_ids.iter().map(|s| s.index()).collect();

        let tok_table = tape.param(self.tok_emb);
        let pos_table = tape.param(self.pos_emb);
        let seg_table = tape.param(self.seg_emb);
        let tok = tape.gather(tok_table, &ids);
        let pos = tape.gather(pos_table, &positions);
        let seg = tape.gather(seg_table, &segs);
        let x = tape.add(tok, pos);
        let mut x = tape.add(x, seg);

        let keep = &packed.attention_mask;
        for layer in &self.layers {
            x = self.block(tape, layer, x, keep);
        }
        let (g, b) = (tape.param(self.lnf_g), tape.param(self.lnf_b));
        let tokens = tape.layer_norm(x, g, b);
        let pooled = tape.slice_rows(tokens, 0, 1);
        Ok(EncoderOutput { tokens, pooled })
    }

    fn block(&self, t: &mut Tape, p: &LayerParams, x: Var, keep: &[bool]) -> Var {
        let dh = self.cfg.head_dim();
        let (g1, b1) = (t.param(p.ln1_g), t.param(p.ln1_b));
        let h = t.layer_norm(x, g1, b1);
        let q = affine(t, h, p.wq, p.bq);
        let k = affine(t, h, p.wk, p.bk);
        let v = affine(t, h, p.wv, p.bv);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for head in 0..self.cfg.heads {
            let (s, e) = (head * dh, (head + 1) * dh);
            let qh = t.slice_cols(q, s, e);
            let kh = t.slice_cols(k, s, e);
            let vh = t.slice_cols(v, s, e);
            let scores = t.matmul_t(qh, false, kh, true);
            let scores = t.scale(scores, scale);
            let attn = t.softmax_rows(scores, Some(keep));
            heads.push(t.matmul(attn, vh));
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            t.concat_cols(&heads)
        };
        let o = affine(t, cat, p.wo, p.bo);
        let x = t.add(x, o);
        let (g2, b2) = (t.param(p.ln2_g), t.param(p.ln2_b));
        let h2 = t.layer_norm(x, g2, b2);
        let f = affine(t, h2, p.w1, p.b1);
        let f = t.gelu(f);
        let f = affine(t, f, p.w2, p.b2);
        t.add(x, f)
    }
}

/// `x * W + b`.
pub fn affine(t: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Var {
    let (w, b) = (t.param(w), t.param(b));
    let y = t.matmul(x, w);
    t.add_row(y, b)
}
