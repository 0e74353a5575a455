//! Desk-scale transformer encoder, tokenizer and sequence packing.

pub mod checkpoint;
pub mod packing;
pub mod sentence;
pub mod tokenizer;
pub mod transformer;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use packing::{pack_input, pack_tokens, PackedSequence, Segment, SegmentTokens, Span, Spans};
pub use sentence::SentenceEncoder;
pub use tokenizer::{token_count, token_id, tokenize, TokenizerConfig};
pub use transformer::{affine, Encoder, EncoderConfig, EncoderOutput};

#[cfg(test)]
mod tests;
