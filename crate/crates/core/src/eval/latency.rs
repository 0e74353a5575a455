//! Per-sample forward latency over fixed-size batches.
//!
//! Inputs arrive already packed, so tokenization is never timed. Each
//! repeat runs one full batch sequentially on the calling thread.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Model, ModelInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    pub batch_size: usize,
    pub repeats: usize,
    pub warmup: usize,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            repeats: 50,
            warmup: 5,
        }
    }
}

impl LatencyConfig {
    pub const MIN_REPEATS: usize = 30;

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config {
                field: "batch_size",
                message: "must be >= 1".into(),
            });
        }
        if self.repeats < Self::MIN_REPEATS {
            return Err(Error::Config {
                field: "repeats",
                message: format!("must be >= {}, got {}", Self::MIN_REPEATS, self.repeats),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Mean per-sample latency in microseconds.
    pub mean_us: f64,
    /// Half-width of the normal-approximation 95% interval, microseconds.
    pub ci95_us: f64,
    pub batch_size: usize,
    pub repeats: usize,
}

impl LatencyReport {
    /// Whether the two intervals overlap.
    pub fn agrees_with(&self, other: &LatencyReport) -> bool {
        (self.mean_us - other.mean_us).abs() <= self.ci95_us + other.ci95_us
    }
}

fn batch_of(inputs: &[ModelInput], size: usize) -> Result<Vec<&ModelInput>> {
    if inputs.is_empty() {
        return Err(Error::Empty("latency benchmark needs at least one input"));
    }
    Ok(inputs.iter().cycle().take(size).collect())
}

/// Per-sample microseconds for one pass over `batch`.
fn time_batch(model: &Model, batch: &[&ModelInput]) -> Result<f64> {
    let start = Instant::now();
    for input in batch {
        std::hint::black_box(model.score(input)?);
    }
    Ok(start.elapsed().as_secs_f64() * 1e6 / batch.len() as f64)
}

fn summarize(samples: &[f64], cfg: &LatencyConfig) -> LatencyReport {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    LatencyReport {
        mean_us: mean,
        ci95_us: 1.96 * var.sqrt() / n.sqrt(),
        batch_size: cfg.batch_size,
        repeats: cfg.repeats,
    }
}

/// Times forward passes of `model` over batches built by cycling `inputs`.
pub fn latency_bench(model: &Model, inputs: &[ModelInput], cfg: &LatencyConfig) -> Result<LatencyReport> {
    Ok(latency_compare(&[(model, inputs)], cfg)?.remove(0))
}

/// Benchmarks several models with their repeats interleaved round-robin,
/// so slow drift in machine speed affects every model alike.
pub fn latency_compare(runs: &[(&Model, &[ModelInput])], cfg: &LatencyConfig) -> Result<Vec<LatencyReport>> {
    cfg.validate()?;
    let batches = runs
        .iter()
        .map(|(_, inputs)| batch_of(inputs, cfg.batch_size))
        .collect::<Result<Vec<_>>>()?;
    for _ in 0..cfg.warmup {
        for ((model, _), batch) in runs.iter().zip(&batches) {
            time_batch(model, batch)?;
        }
    }
    let mut samples = vec![Vec::with_capacity(cfg.repeats); runs.len()];
    for _ in 0..cfg.repeats {
        for (i, ((model, _), batch)) in runs.iter().zip(&batches).enumerate() {
            samples[i].push(time_batch(model, batch)?);
        }
    }
    Ok(samples.iter().map(|s| summarize(s, cfg)).collect())
}
