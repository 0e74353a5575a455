//! Analytic forward FLOP counts (a multiply-add counts as 2).

use crate::encoder::{EncoderConfig, PackedSequence};

pub fn encoder_flops(cfg: &EncoderConfig, len: usize) -> u64 {
    let (l, h, f) = (len as u64, cfg.hidden_dim as u64, cfg.ffn_dim as u64);
    let heads = cfg.heads as u64;
    let layer_norm = 8 * l * h;
    let per_layer = 2 * layer_norm
        + 4 * 2 * l * h * h // q, k, v, output projections
        + 2 * l * l * h // scores
        + 4 * l * l * heads // scale + softmax
        + 2 * l * l * h // attention-weighted values
        + 2 * 2 * l * h * f // feed-forward
        + 8 * l * f // gelu
        + 2 * l * h; // residuals
    3 * l * h + cfg.layers as u64 * per_layer + layer_norm
}

pub fn head_flops(in_dim: usize) -> u64 {
    2 * in_dim as u64 * 2 + 2
}

/// One multi-way attention block from `lc` candidate tokens into `lx`
/// context tokens.
pub fn mwa_flops(hidden: usize, lc: usize, lx: usize) -> u64 {
    let (h, lc, lx) = (hidden as u64, lc as u64, lx as u64);
    if lx == 0 {
        return 0;
    }
    let pairs = lc * lx;
    let concat = 2 * lc * h * h + 2 * lx * h * h + 2 * pairs * h + 2 * pairs * h;
    let bilinear = 2 * lc * h * h + 2 * pairs * h;
    let dot = pairs * h + 2 * pairs * h * h + pairs * h + 2 * pairs * h;
    let minus = 2 * lc * h * h + 2 * lx * h * h + 2 * pairs * h + 2 * pairs * h;
    let attend = 4 * (3 * pairs + 2 * pairs * h);
    let aggregate = 2 * lc * 4 * h * h + 2 * lc * h;
    concat + bilinear + dot + minus + attend + aggregate
}

pub fn concat_path_flops(cfg: &EncoderConfig, packed: &PackedSequence) -> u64 {
    encoder_flops(cfg, packed.len()) + head_flops(cfg.hidden_dim)
}

pub fn mwa_path_flops(cfg: &EncoderConfig, packed: &PackedSequence) -> u64 {
    let lc = packed.spans.candidate.len();
    let ll = packed.spans.local.map_or(0, |s| s.len());
    let lg = packed.spans.global.map_or(0, |s| s.len());
    encoder_flops(cfg, packed.len())
        + mwa_flops(cfg.hidden_dim, lc, ll)
        + mwa_flops(cfg.hidden_dim, lc, lg)
        + head_flops(3 * cfg.hidden_dim)
}

pub fn ensemble_path_flops(cfg: &EncoderConfig, local: &PackedSequence, global: &PackedSequence) -> u64 {
    encoder_flops(cfg, local.len()) + encoder_flops(cfg, global.len()) + head_flops(2 * cfg.hidden_dim)
}
