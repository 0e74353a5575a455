//! Multi-way attention between candidate tokens and one context span.
//!
//! For a candidate token `c` and a context token `x` the four flavours score
//!
//! ```text
//! concat:   vᵀ tanh(W1 c + W2 x)
//! bilinear: cᵀ W x
//! dot:      vᵀ tanh(W (c ⊙ x))
//! minus:    vᵀ tanh(W (c − x))
//! ```
//!
//! Each flavour's scores are softmaxed over context tokens and used to
//! average the context. The four attended vectors are concatenated per
//! candidate token, projected back to `hidden_dim`, and mean-pooled over the
//! candidate. An empty context yields a learned null-context vector.

use rand::Rng;

use crate::nn::{ParamId, ParamSet, Tape, Var};

const INIT_STD: f64 = 0.02;

/// Attention parameters for one context role (local or global).
#[derive(Debug, Clone)]
pub struct MwaParams {
    pub concat_w1: ParamId,
    pub concat_w2: ParamId,
    pub concat_v: ParamId,
    pub bilinear_w: ParamId,
    pub dot_w: ParamId,
    pub dot_v: ParamId,
    pub minus_w: ParamId,
    pub minus_v: ParamId,
    pub null_context: ParamId,
}

impl MwaParams {
    pub fn new<R: Rng>(params: &mut ParamSet, prefix: &str, hidden: usize, rng: &mut R) -> Self {
        let n = |s: &str| format!("{prefix}.{s}");
        Self {
            concat_w1: params.normal(n("concat.w1"), hidden, hidden, INIT_STD, rng),
            concat_w2: params.normal(n("concat.w2"), hidden, hidden, INIT_STD, rng),
            concat_v: params.normal(n("concat.v"), hidden, 1, INIT_STD, rng),
            bilinear_w: params.normal(n("bilinear.w"), hidden, hidden, INIT_STD, rng),
            dot_w: params.normal(n("dot.w"), hidden, hidden, INIT_STD, rng),
            dot_v: params.normal(n("dot.v"), hidden, 1, INIT_STD, rng),
            minus_w: params.normal(n("minus.w"), hidden, hidden, INIT_STD, rng),
            minus_v: params.normal(n("minus.v"), hidden, 1, INIT_STD, rng),
            null_context: params.normal(n("null"), 1, hidden, INIT_STD, rng),
        }
    }
}

/// Projection from the four concatenated attended vectors to `hidden_dim`.
#[derive(Debug, Clone)]
pub struct MwaAggregation {
    pub w: ParamId,
    pub b: ParamId,
}

impl MwaAggregation {
    pub fn new<R: Rng>(params: &mut ParamSet, prefix: &str, hidden: usize, rng: &mut R) -> Self {
        Self {
            w: params.normal(format!("{prefix}.w"), 4 * hidden, hidden, INIT_STD, rng),
            b: params.constant(format!("{prefix}.b"), 1, hidden, 0.0),
        }
    }
}

/// Raw `lc x lx` attention scores of every flavour, in the order
/// concat, bilinear, dot, minus.
pub fn flavour_scores(t: &mut Tape, cand: Var, ctx: Var, p: &MwaParams) -> [Var; 4] {
    let (lc, lx) = (t.shape(cand).0, t.shape(ctx).0);

    let w1 = t.param(p.concat_w1);
    let w2 = t.param(p.concat_w2);
    let a = t.matmul(cand, w1);
    let b = t.matmul(ctx, w2);
    let s = t.pair_add(a, b);
    let s = t.tanh(s);
    let v = t.param(p.concat_v);
    let s = t.matmul(s, v);
    let concat = t.reshape(s, lc, lx);

    let w = t.param(p.bilinear_w);
    let cw = t.matmul(cand, w);
    let bilinear = t.matmul_t(cw, false, ctx, true);

    let w = t.param(p.dot_w);
    let prod = t.pair_mul(cand, ctx);
    let s = t.matmul(prod, w);
    let s = t.tanh(s);
    let v = t.param(p.dot_v);
    let s = t.matmul(s, v);
    let dot = t.reshape(s, lc, lx);

    // (c - x) W == cW - xW, so project once per token and subtract pairwise.
    let w = t.param(p.minus_w);
    let cw = t.matmul(cand, w);
    let xw = t.matmul(ctx, w);
    let s = t.pair_sub(cw, xw);
    let s = t.tanh(s);
    let v = t.param(p.minus_v);
    let s = t.matmul(s, v);
    let minus = t.reshape(s, lc, lx);

    [concat, bilinear, dot, minus]
}

/// Candidate-conditioned summary of one context span, shape `1 x hidden`.
///
/// `cand` must have at least one row. `ctx = None` (or zero rows) returns
/// the null-context vector.
pub fn multiway_attention(t: &mut Tape, cand: Var, ctx: Option<Var>, params: &MwaParams, agg: &MwaAggregation) -> Var {
    let ctx = match ctx {
        Some(c) if t.shape(c).0 > 0 => c,
        _ => return t.param(params.null_context),
    };
    let scores = flavour_scores(t, cand, ctx, params);
    let attended: Vec<Var> = scores
        .iter()
        .map(|&s| {
            let a = t.softmax_rows(s, None);
            t.matmul(a, ctx)
        })
        .collect();
    let cat = t.concat_cols(&attended);
    let w = t.param(agg.w);
    let b = t.param(agg.b);
    let proj = t.matmul(cat, w);
    let proj = t.add_row(proj, b);
    t.mean_rows(proj)
}
