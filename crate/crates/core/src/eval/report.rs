//! The `report.json` document.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{relative_improvement, LatencyReport, MetricReport};
use crate::error::Result;
use crate::meta::ArtifactMeta;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub p_at_1: f64,
    pub map: f64,
    pub mrr: f64,
}

impl From<&MetricReport> for MetricSummary {
    fn from(r: &MetricReport) -> Self {
        Self {
            p_at_1: r.p_at_1,
            map: r.map,
            mrr: r.mrr,
        }
    }
}

/// Signed percentage change of each metric over a baseline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub baseline_variant: String,
    #[serde(flatten)]
    pub percent: BTreeMap<String, f64>,
}

impl BaselineComparison {
    pub fn new(baseline_variant: impl Into<String>, baseline: &MetricSummary, system: &MetricSummary) -> Result<Self> {
        let mut percent = BTreeMap::new();
        percent.insert(
            "p_at_1".to_string(),
            relative_improvement(baseline.p_at_1, system.p_at_1)?,
        );
        percent.insert("map".to_string(), relative_improvement(baseline.map, system.map)?);
        percent.insert("mrr".to_string(), relative_improvement(baseline.mrr, system.mrr)?);
        Ok(Self {
            baseline_variant: baseline_variant.into(),
            percent,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricSummary>,
    #[serde(default)]
    pub skipped_questions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_to_baseline: Option<BaselineComparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ArtifactMeta>,
}

impl Report {
    pub fn new(variant: impl Into<String>) -> Self {
        Self {
            variant: variant.into(),
            scorer: None,
            metrics: None,
            skipped_questions: 0,
            relative_to_baseline: None,
            latency: None,
            meta: None,
        }
    }

    pub fn with_metrics(mut self, m: &MetricReport) -> Self {
        self.metrics = Some(m.into());
        self.skipped_questions = m.skipped_questions;
        self
    }
}
