//! Ranks candidates per question by model probability.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{Model, ModelInput};
use crate::corpus::QaInstance;
use crate::error::{Error, Result};
use crate::eval::{RankedCandidate, RankedList};

/// Scores inputs independently; runs on the current rayon pool.
pub fn score_inputs(model: &Model, inputs: &[ModelInput]) -> Result<Vec<f64>> {
    inputs.par_iter().map(|i| model.score(i)).collect()
}

/// Ranks the candidates of one question.
pub fn rank(model: &Model, question_id: &str, candidates: &[(&QaInstance, &ModelInput)]) -> Result<RankedList> {
    if candidates.is_empty() {
        return Err(Error::Empty("rank needs at least one candidate"));
    }
    let inputs: Vec<ModelInput> = candidates.iter().map(|(_, i)| (*i).clone()).collect();
    let scores = score_inputs(model, &inputs)?;
    let ranked = candidates
        .iter()
        .zip(scores)
        .map(|((inst, _), score)| RankedCandidate {
            doc_id: inst.doc_id.clone(),
            sentence_index: inst.sentence_index,
            score,
            label: inst.label,
        })
        .collect();
    RankedList::from_scored(question_id, ranked)
}

/// Ranks every question; questions appear in first-occurrence order.
pub fn rank_all(model: &Model, instances: &[QaInstance], inputs: &[ModelInput]) -> Result<Vec<RankedList>> {
    assert_eq!(instances.len(), inputs.len(), "one input per instance");
    let scores = score_inputs(model, inputs)?;
    group_scores(instances, &scores)
}

/// Groups per-instance scores into ranked lists by question id.
pub fn group_scores(instances: &[QaInstance], scores: &[f64]) -> Result<Vec<RankedList>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<RankedCandidate>> = HashMap::new();
    for (inst, &score) in instances.iter().zip(scores) {
        let entry = groups.entry(inst.question_id.as_str()).or_insert_with(|| {
            order.push(inst.question_id.as_str());
            Vec::new()
        });
        entry.push(RankedCandidate {
            doc_id: inst.doc_id.clone(),
            sentence_index: inst.sentence_index,
            score,
            label: inst.label,
        });
    }
    order
        .into_iter()
        .map(|q| RankedList::from_scored(q, groups.remove(q).unwrap_or_default()))
        .collect()
}
