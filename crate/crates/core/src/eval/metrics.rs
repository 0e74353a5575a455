//! P@1, MAP and MRR over per-question ranked lists.
//!
//! Questions without any positive candidate are skipped and counted, not
//! scored. Ties are never re-sorted: the stored order of a list is final.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub doc_id: String,
    pub sentence_index: usize,
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub question_id: String,
    pub candidates: Vec<RankedCandidate>,
}

impl RankedList {
    /// Validates an already ordered list.
    pub fn new(question_id: impl Into<String>, candidates: Vec<RankedCandidate>) -> Result<Self> {
        let question_id = question_id.into();
        if candidates.is_empty() {
            return Err(Error::Empty("ranked list has no candidates"));
        }
        if candidates.iter().any(|c| c.label > 1) {
            return Err(Error::Config {
                field: "label",
                message: format!("question `{question_id}` has a label outside {{0,1}}"),
            });
        }
        if candidates.windows(2).any(|w| w[0].score < w[1].score) {
            return Err(Error::Config {
                field: "score",
                message: format!("question `{question_id}` scores are not non-increasing"),
            });
        }
        Ok(Self {
            question_id,
            candidates,
        })
    }

    /// Sorts by descending score; ties go to the smaller `(doc_id, sentence_index)`.
    pub fn from_scored(question_id: impl Into<String>, mut candidates: Vec<RankedCandidate>) -> Result<Self> {
        candidates.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
                .then(a.sentence_index.cmp(&b.sentence_index))
        });
        Self::new(question_id, candidates)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.candidates.iter().map(|c| c.label).collect()
    }

    pub fn is_answerable(&self) -> bool {
        self.candidates.iter().any(|c| c.label == 1)
    }
}

/// Average precision of one ranking; `None` when nothing is relevant.
pub fn average_precision(labels: &[u8]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        if l == 1 {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

pub fn reciprocal_rank(labels: &[u8]) -> Option<f64> {
    labels.iter().position(|&l| l == 1).map(|r| 1.0 / (r + 1) as f64)
}

fn mean_over_answerable(lists: &[RankedList], f: impl Fn(&[u8]) -> f64) -> Result<f64> {
    let vals: Vec<f64> = lists
        .iter()
        .filter(|l| l.is_answerable())
        .map(|l| f(&l.labels()))
        .collect();
    if vals.is_empty() {
        return Err(Error::NoAnswerable);
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn precision_at_1(lists: &[RankedList]) -> Result<f64> {
    mean_over_answerable(lists, |l| if l[0] == 1 { 1.0 } else { 0.0 })
}

pub fn mean_average_precision(lists: &[RankedList]) -> Result<f64> {
    mean_over_answerable(lists, |l| average_precision(l).unwrap_or(0.0))
}

pub fn mean_reciprocal_rank(lists: &[RankedList]) -> Result<f64> {
    mean_over_answerable(lists, |l| reciprocal_rank(l).unwrap_or(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionMetrics {
    pub question_id: String,
    pub p_at_1: f64,
    pub average_precision: f64,
    pub reciprocal_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub p_at_1: f64,
    pub map: f64,
    pub mrr: f64,
    pub answerable_questions: usize,
    pub skipped_questions: usize,
    pub per_question: Vec<QuestionMetrics>,
}

pub fn evaluate(lists: &[RankedList]) -> Result<MetricReport> {
    let per_question: Vec<QuestionMetrics> = lists
        .iter()
        .filter(|l| l.is_answerable())
        .map(|l| {
            let labels = l.labels();
            QuestionMetrics {
                question_id: l.question_id.clone(),
                p_at_1: f64::from(labels[0]),
                average_precision: average_precision(&labels).unwrap_or(0.0),
                reciprocal_rank: reciprocal_rank(&labels).unwrap_or(0.0),
            }
        })
        .collect();
    Ok(MetricReport {
        p_at_1: precision_at_1(lists)?,
        map: mean_average_precision(lists)?,
        mrr: mean_reciprocal_rank(lists)?,
        answerable_questions: per_question.len(),
        skipped_questions: lists.len() - per_question.len(),
        per_question,
    })
}

/// Signed percentage change of `system` over `baseline`.
pub fn relative_improvement(baseline: f64, system: f64) -> Result<f64> {
    if baseline <= 0.0 || baseline.is_nan() {
        return Err(Error::NonPositiveBaseline(baseline));
    }
    Ok(100.0 * (system - baseline) / baseline)
}
