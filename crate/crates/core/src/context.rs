//! Local and global context extraction for candidate answers.
//!
//! Local context is the window of `k` sentences on each side of the
//! candidate. Global context is up to `h` sentences from the candidate's
//! document ranked by n-gram overlap with question and candidate, or by
//! cosine similarity of sentence embeddings, kept under a token budget.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, QaInstance};
use crate::encoder::{token_count, SentenceEncoder};
use crate::error::{Error, Result};
use crate::meta::ArtifactMeta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalContextConfig {
    pub k: usize,
}

impl Default for LocalContextConfig {
    fn default() -> Self {
        Self { k: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GlobalScorer {
    #[serde(rename = "ngram")]
    NgramOverlap,
    #[serde(rename = "cosine")]
    CosineSimilarity,
}

impl GlobalScorer {
    pub fn as_str(self) -> &'static str {
        match self {
            GlobalScorer::NgramOverlap => "ngram",
            GlobalScorer::CosineSimilarity => "cosine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalContextConfig {
    pub h: usize,
    pub token_budget: usize,
    pub scorer: GlobalScorer,
}

impl Default for GlobalContextConfig {
    fn default() -> Self {
        Self {
            h: 5,
            token_budget: 128,
            scorer: GlobalScorer::NgramOverlap,
        }
    }
}

impl GlobalContextConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(Error::Config {
                field: "h",
                message: "must be >= 1".into(),
            });
        }
        if self.token_budget == 0 {
            return Err(Error::Config {
                field: "budget",
                message: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Set of 1-, 2- and 3-grams; grams are tokens joined by a single space.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NgramSet {
    grams: HashSet<String>,
}

impl NgramSet {
    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn contains(&self, gram: &str) -> bool {
        self.grams.contains(gram)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.grams.iter().map(String::as_str)
    }

    pub fn union(&self, other: &NgramSet) -> NgramSet {
        NgramSet {
            grams: self.grams.union(&other.grams).cloned().collect(),
        }
    }

    pub fn intersection_count(&self, other: &NgramSet) -> usize {
        let (small, big) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.grams.iter().filter(|g| big.grams.contains(*g)).count()
    }
}

/// Lowercased whitespace tokens with leading/trailing punctuation removed.
pub fn ngram_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn ngram_profile(text: &str) -> NgramSet {
    let toks = ngram_tokens(text);
    let mut grams = HashSet::new();
    for n in 1..=3 {
        for w in toks.windows(n) {
            grams.insert(w.join(" "));
        }
    }
    NgramSet { grams }
}

/// `Ng(Q) ∪ Ng(C)`; no gram spans the question/candidate boundary.
pub fn pair_profile(question: &str, candidate: &str) -> NgramSet {
    ngram_profile(question).union(&ngram_profile(candidate))
}

/// Fraction of the question+candidate grams that occur in `context_sentence`.
pub fn score_ngram_overlap(context_sentence: &str, question: &str, candidate: &str) -> Result<f64> {
    overlap_with_profile(&pair_profile(question, candidate), &ngram_profile(context_sentence))
}

pub fn overlap_with_profile(pair: &NgramSet, context: &NgramSet) -> Result<f64> {
    if pair.is_empty() {
        return Err(Error::EmptyProfile);
    }
    Ok(pair.intersection_count(context) as f64 / pair.len() as f64)
}

pub fn score_semantic_similarity(pair_vec: &[f64], ctx_vec: &[f64]) -> Result<f64> {
    if pair_vec.len() != ctx_vec.len() {
        return Err(Error::DimensionMismatch {
            expected: pair_vec.len(),
            actual: ctx_vec.len(),
        });
    }
    let dot: f64 = pair_vec.iter().zip(ctx_vec).map(|(a, b)| a * b).sum();
    let na = pair_vec.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = ctx_vec.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn local_context(doc: &Document, j: usize, cfg: &LocalContextConfig) -> Result<Vec<(usize, String)>> {
    let m = doc.sentence_count();
    if j >= m {
        return Err(Error::SentenceOutOfBounds {
            doc_id: doc.doc_id().to_string(),
            index: j,
            count: m,
        });
    }
    let lo = j.saturating_sub(cfg.k);
    let hi = (j + cfg.k).min(m - 1);
    Ok((lo..=hi)
        .filter(|&i| i != j)
        .map(|i| (i, doc.sentences()[i].clone()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSentence {
    pub index: usize,
    pub text: String,
    pub score: f64,
}

/// Context selected for one candidate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContextBundle {
    pub local: Vec<(usize, String)>,
    /// In document order.
    pub global: Vec<GlobalSentence>,
    /// Question+candidate produced fewer than 3 distinct grams.
    pub short_profile: bool,
}

impl ContextBundle {
    pub fn local_texts(&self) -> Vec<&str> {
        self.local.iter().map(|(_, t)| t.as_str()).collect()
    }

    pub fn global_texts(&self) -> Vec<&str> {
        self.global.iter().map(|g| g.text.as_str()).collect()
    }
}

/// Scores every non-candidate sentence; sentences that cannot be scored
/// (no tokens to embed under the cosine scorer) are left out.
fn score_sentences(
    doc: &Document,
    j: usize,
    question: &str,
    cfg: &GlobalContextConfig,
    encoder: Option<&SentenceEncoder>,
    embeddings: Option<&[Option<Vec<f64>>]>,
) -> Result<Vec<(usize, f64)>> {
    let candidate = doc.sentence(j)?;
    let mut scored = Vec::with_capacity(doc.sentence_count());
    match cfg.scorer {
        GlobalScorer::NgramOverlap => {
            let pair = pair_profile(question, candidate);
            if pair.is_empty() {
                return Err(Error::EmptyProfile);
            }
            for (p, s) in doc.sentences().iter().enumerate() {
                if p != j {
                    scored.push((p, overlap_with_profile(&pair, &ngram_profile(s))?));
                }
            }
        }
        GlobalScorer::CosineSimilarity => {
            let enc = encoder.ok_or(Error::Config {
                field: "scorer",
                message: "cosine scorer needs a sentence encoder".into(),
            })?;
            let pair_vec = enc.embed_pair(question, candidate)?;
            for (p, s) in doc.sentences().iter().enumerate() {
                if p == j {
                    continue;
                }
                let vec = match embeddings {
                    Some(cache) => cache[p].clone(),
                    None => match enc.embed_sentence(s) {
                        Ok(v) => Some(v),
                        Err(Error::EmptyText) => None,
                        Err(e) => return Err(e),
                    },
                };
                if let Some(v) = vec {
                    scored.push((p, score_semantic_similarity(&pair_vec, &v)?));
                }
            }
        }
    }
    Ok(scored)
}

/// Greedy top-`h` selection under the token budget, returned in document order.
///
/// Sentences are visited by descending score (ties: lower index first); one
/// that does not fit the remaining budget is skipped and the scan continues.
pub fn select_by_scores(
    doc: &Document,
    mut scored: Vec<(usize, f64)>,
    cfg: &GlobalContextConfig,
) -> Vec<GlobalSentence> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut remaining = cfg.token_budget;
    let mut picked = Vec::new();
    for (p, score) in scored {
        if picked.len() == cfg.h {
            break;
        }
        let text = &doc.sentences()[p];
        let n = token_count(text);
        if n <= remaining {
            remaining -= n;
            picked.push(GlobalSentence {
                index: p,
                text: text.clone(),
                score,
            });
        }
    }
    debug_assert!(picked.iter().map(|g| token_count(&g.text)).sum::<usize>() <= cfg.token_budget);
    picked.sort_by_key(|g| g.index);
    picked
}

pub fn select_global_context(
    corpus: &Corpus,
    instance: &QaInstance,
    cfg: &GlobalContextConfig,
    encoder: Option<&SentenceEncoder>,
) -> Result<Vec<GlobalSentence>> {
    let doc = corpus.document(&instance.doc_id)?;
    let scored = score_sentences(
        doc,
        instance.sentence_index,
        &instance.question_text,
        cfg,
        encoder,
        None,
    )?;
    Ok(select_by_scores(doc, scored, cfg))
}

pub fn build_bundle(
    corpus: &Corpus,
    instance: &QaInstance,
    local_cfg: &LocalContextConfig,
    global_cfg: &GlobalContextConfig,
    encoder: Option<&SentenceEncoder>,
) -> Result<ContextBundle> {
    let doc = corpus.document(&instance.doc_id)?;
    let candidate = doc.sentence(instance.sentence_index)?;
    Ok(ContextBundle {
        local: local_context(doc, instance.sentence_index, local_cfg)?,
        global: select_global_context(corpus, instance, global_cfg, encoder)?,
        short_profile: pair_profile(&instance.question_text, candidate).len() < 3,
    })
}

/// Builds bundles for many instances, embedding each document's sentences once.
pub fn extract_all(
    corpus: &Corpus,
    instances: &[QaInstance],
    local_cfg: &LocalContextConfig,
    global_cfg: &GlobalContextConfig,
    encoder: Option<&SentenceEncoder>,
) -> Result<Vec<ContextBundle>> {
    global_cfg.validate()?;
    let mut cache: HashMap<&str, Vec<Option<Vec<f64>>>> = HashMap::new();
    let mut out = Vec::with_capacity(instances.len());
    for inst in instances {
        let doc = corpus.document(&inst.doc_id)?;
        let embeddings = match (global_cfg.scorer, encoder) {
            (GlobalScorer::CosineSimilarity, Some(enc)) => {
                if !cache.contains_key(doc.doc_id()) {
                    let vecs = doc
                        .sentences()
                        .iter()
                        .map(|s| match enc.embed_sentence(s) {
                            Ok(v) => Ok(Some(v)),
                            Err(Error::EmptyText) => Ok(None),
                            Err(e) => Err(e),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    cache.insert(doc.doc_id(), vecs);
                }
                cache.get(doc.doc_id()).map(Vec::as_slice)
            }
            _ => None,
        };
        let candidate = doc.sentence(inst.sentence_index)?;
        let scored = score_sentences(
            doc,
            inst.sentence_index,
            &inst.question_text,
            global_cfg,
            encoder,
            embeddings,
        )?;
        out.push(ContextBundle {
            local: local_context(doc, inst.sentence_index, local_cfg)?,
            global: select_by_scores(doc, scored, global_cfg),
            short_profile: pair_profile(&inst.question_text, candidate).len() < 3,
        });
    }
    Ok(out)
}

/// Mean number of selected global sentences per instance.
pub fn context_stats(
    corpus: &Corpus,
    instances: &[QaInstance],
    cfg: &GlobalContextConfig,
    encoder: Option<&SentenceEncoder>,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Empty("context_stats needs at least one instance"));
    }
    let bundles = extract_all(corpus, instances, &LocalContextConfig { k: 0 }, cfg, encoder)?;
    Ok(mean_global_count(&bundles))
}

pub fn mean_global_count(bundles: &[ContextBundle]) -> f64 {
    let total: usize = bundles.iter().map(|b| b.global.len()).sum();
    total as f64 / bundles.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRef {
    pub index: usize,
    pub score: f64,
}

/// One line of `contexts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub question_id: String,
    pub doc_id: String,
    pub sentence_index: usize,
    pub local: Vec<usize>,
    pub global: Vec<GlobalRef>,
    pub scorer: GlobalScorer,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub short_profile: bool,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ArtifactMeta>,
}

impl ContextRecord {
    pub fn new(
        instance: &QaInstance,
        bundle: &ContextBundle,
        scorer: GlobalScorer,
        meta: Option<ArtifactMeta>,
    ) -> Self {
        Self {
            question_id: instance.question_id.clone(),
            doc_id: instance.doc_id.clone(),
            sentence_index: instance.sentence_index,
            local: bundle.local.iter().map(|(i, _)| *i).collect(),
            global: bundle
                .global
                .iter()
                .map(|g| GlobalRef {
                    index: g.index,
                    score: g.score,
                })
                .collect(),
            scorer,
            short_profile: bundle.short_profile,
            meta,
        }
    }

    /// Rehydrates sentence texts from the corpus.
    pub fn to_bundle(&self, corpus: &Corpus) -> Result<ContextBundle> {
        let doc = corpus.document(&self.doc_id)?;
        let text = |i: usize| doc.sentence(i).map(str::to_string);
        Ok(ContextBundle {
            local: self.local.iter().map(|&i| Ok((i, text(i)?))).collect::<Result<_>>()?,
            global: self
                .global
                .iter()
                .map(|g| {
                    Ok(GlobalSentence {
                        index: g.index,
                        text: text(g.index)?,
                        score: g.score,
                    })
                })
                .collect::<Result<_>>()?,
            short_profile: self.short_profile,
        })
    }
}
