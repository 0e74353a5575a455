//! Generated datasets whose labels are decidable only from local context.
//!
//! Each question owns a seven-sentence document
//! `[prev_a, cand_a, next_a, filler, prev_b, cand_b, next_b]` with two
//! candidates (sentences 1 and 5). Exactly one is positive, and only that
//! candidate's neighbour (with `k = 1`) contains the marker word. Candidate
//! and question texts are random filler, so without context the best
//! achievable P@1 is 0.5.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, QaInstance};
use crate::encoder::{token_id, TokenizerConfig};
use crate::error::Result;

pub const MARKER: &str = "zebra";

const WORDS: &[&str] = &[
    "apple", "river", "stone", "cloud", "table", "green", "music", "paper", "light", "horse", "glass", "north",
    "bread", "chair", "dream", "field", "grape", "house", "iron", "jelly", "knife", "lemon", "metal", "night", "ocean",
    "piano", "queen", "radio", "sugar", "tiger", "uncle", "voice", "water", "youth", "amber", "baker", "candle",
    "desert", "engine", "forest", "garden", "harbor", "island", "jungle", "kettle", "ladder", "market", "needle",
    "orange", "pepper", "rocket", "silver", "tunnel", "valley", "window", "yellow", "bridge", "copper", "dragon",
    "feather",
];

fn filler_words(tokenizer: &TokenizerConfig) -> Vec<&'static str> {
    let marker = token_id(MARKER, tokenizer);
    WORDS
        .iter()
        .copied()
        .filter(|w| token_id(w, tokenizer) != marker)
        .collect()
}

fn sentence<R: Rng>(rng: &mut R, words: &[&str], len: usize, marker: bool) -> String {
    let mut out: Vec<&str> = (0..len)
        .map(|_| *words.choose(rng).expect("word pool is non-empty"))
        .collect();
    if marker {
        let at = rng.gen_range(0..len);
        out[at] = MARKER;
    }
    let mut s = out.join(" ");
    s.push('.');
    s
}

/// Appends `questions` generated questions to `corpus`, with ids prefixed
/// by `prefix`, and returns their instances (two per question).
pub fn marker_task(
    corpus: &mut Corpus,
    prefix: &str,
    questions: usize,
    seed: u64,
    tokenizer: &TokenizerConfig,
) -> Result<Vec<QaInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = filler_words(tokenizer);
    let mut instances = Vec::with_capacity(2 * questions);
    for q in 0..questions {
        let question_id = format!("{prefix}q{q}");
        let doc_id = format!("{prefix}d{q}");
        let pick = |rng: &mut ChaCha8Rng| *words.choose(rng).expect("word pool is non-empty");
        let question = format!("which {} {} is {}", pick(&mut rng), pick(&mut rng), pick(&mut rng));
        let positive_a = rng.gen_bool(0.5);
        let marker_after = rng.gen_bool(0.5);
        let mut sentences = Vec::with_capacity(7);
        for (block, positive) in [(0, positive_a), (1, !positive_a)] {
            if block == 1 {
                sentences.push(sentence(&mut rng, &words, 5, false));
            }
            sentences.push(sentence(&mut rng, &words, 5, positive && !marker_after));
            sentences.push(sentence(&mut rng, &words, 5, false));
            sentences.push(sentence(&mut rng, &words, 5, positive && marker_after));
        }
        corpus.insert(Document::new(doc_id.clone(), sentences)?)?;
        for (index, positive) in [(1, positive_a), (5, !positive_a)] {
            instances.push(QaInstance {
                question_id: question_id.clone(),
                question_text: question.clone(),
                doc_id: doc_id.clone(),
                sentence_index: index,
                label: u8::from(positive),
            });
        }
    }
    Ok(instances)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_only_next_to_positive() {
        let tok = TokenizerConfig::with_vocab(512);
        let mut corpus = Corpus::new();
        let inst = marker_task(&mut corpus, "t", 40, 3, &tok).unwrap();
        assert_eq!(inst.len(), 80);
        for i in &inst {
            let doc = corpus.document(&i.doc_id).unwrap();
            let near = [i.sentence_index - 1, i.sentence_index + 1]
                .iter()
                .any(|&j| doc.sentence(j).unwrap().contains(MARKER));
            assert_eq!(near, i.label == 1);
            assert!(!doc.sentence(i.sentence_index).unwrap().contains(MARKER));
        }
        let positives = inst.iter().filter(|i| i.label == 1 && i.sentence_index == 1).count();
        assert!(positives > 10 && positives < 30);
    }

    #[test]
    fn marker_has_its_own_token() {
        let tok = TokenizerConfig::with_vocab(512);
        let m = token_id(MARKER, &tok);
        assert!(filler_words(&tok).iter().all(|w| token_id(w, &tok) != m));
    }
}
