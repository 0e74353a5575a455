//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ctxrank_core::context::{self, ContextBundle, ContextRecord, GlobalScorer};
use ctxrank_core::corpus::{load_corpus, load_instances, Corpus, QaInstance};
use ctxrank_core::encoder::SentenceEncoder;
use ctxrank_core::eval::{evaluate, latency_bench, BaselineComparison, MetricSummary, RankedList, Report};
use ctxrank_core::meta::ArtifactMeta;
use ctxrank_core::models::{build_examples, rank_all, train, Model, ModelInput};
use ctxrank_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{dataset_hash, RunConfig};

pub const CONTEXTS_FILE: &str = "contexts.jsonl";
pub const MODEL_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.json";
pub const RANKINGS_FILE: &str = "rankings.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const COMPARISON_FILE: &str = "comparison.json";

/// Paths that only some subcommands read.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub contexts: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub compare: Vec<PathBuf>,
}

fn read(path: &Path, field: &'static str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Config {
        field,
        message: format!("cannot read {}: {e}", path.display()),
    })
}

fn required<'a>(path: &'a Option<PathBuf>, field: &'static str) -> Result<&'a Path> {
    path.as_deref().ok_or(Error::Config {
        field,
        message: "required".into(),
    })
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = required(&cfg.out, "out")?;
    fs::create_dir_all(dir)?;
    Ok(dir)
}

struct Data {
    corpus: Corpus,
    instances: Vec<QaInstance>,
    meta: ArtifactMeta,
}

fn load_data(cfg: &RunConfig) -> Result<Data> {
    let docs = read(required(&cfg.docs, "docs")?, "docs")?;
    let qa = read(required(&cfg.qa, "qa")?, "qa")?;
    let corpus = load_corpus(docs.as_slice())?;
    let instances = load_instances(&corpus, qa.as_slice())?;
    let meta = ArtifactMeta {
        config_hash: cfg.config_hash(),
        dataset_hash: dataset_hash(&docs, &qa),
        seed: cfg.seed,
    };
    Ok(Data {
        corpus,
        instances,
        meta,
    })
}

fn sentence_encoder(cfg: &RunConfig) -> Result<Option<SentenceEncoder>> {
    match cfg.global.scorer {
        GlobalScorer::CosineSimilarity => Ok(Some(SentenceEncoder::new(cfg.encoder, cfg.tokenizer, cfg.seed)?)),
        GlobalScorer::NgramOverlap => Ok(None),
    }
}

fn extract(cfg: &RunConfig, corpus: &Corpus, instances: &[QaInstance]) -> Result<Vec<ContextBundle>> {
    let encoder = sentence_encoder(cfg)?;
    context::extract_all(corpus, instances, &cfg.local, &cfg.global, encoder.as_ref())
}

fn read_records(path: &Path) -> Result<Vec<ContextRecord>> {
    let file = File::open(path).map_err(|e| Error::Config {
        field: "contexts",
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Dataset {
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Bundles from a `contexts.jsonl` when given, else extracted afresh.
/// Returns the scorer that produced them.
fn bundles(cfg: &RunConfig, data: &Data, contexts: Option<&Path>) -> Result<(Vec<ContextBundle>, GlobalScorer)> {
    let Some(path) = contexts else {
        return Ok((extract(cfg, &data.corpus, &data.instances)?, cfg.global.scorer));
    };
    let records = read_records(path)?;
    if records.len() != data.instances.len() {
        return Err(Error::Config {
            field: "contexts",
            message: format!("{} records for {} instances", records.len(), data.instances.len()),
        });
    }
    let mut scorer = cfg.global.scorer;
    let mut out = Vec::with_capacity(records.len());
    for (n, (rec, inst)) in records.iter().zip(&data.instances).enumerate() {
        if rec.question_id != inst.question_id || rec.doc_id != inst.doc_id || rec.sentence_index != inst.sentence_index
        {
            return Err(Error::Dataset {
                line: n + 1,
                message: "context record does not match the qa instance on the same line".into(),
            });
        }
        scorer = rec.scorer;
        out.push(rec.to_bundle(&data.corpus)?);
    }
    Ok((out, scorer))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_report(path: &Path, field: &'static str) -> Result<Report> {
    serde_json::from_slice(&read(path, field)?).map_err(|e| Error::Config {
        field,
        message: format!("{}: {e}", path.display()),
    })
}

pub fn run_extract(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let out = out_dir(cfg)?;
    let bundles = extract(cfg, &data.corpus, &data.instances)?;
    let rows = data
        .instances
        .iter()
        .zip(&bundles)
        .map(|(inst, b)| ContextRecord::new(inst, b, cfg.global.scorer, Some(data.meta.clone())));
    write_jsonl(&out.join(CONTEXTS_FILE), rows)
}

#[derive(Serialize)]
struct TrainLogFile<'a> {
    #[serde(flatten)]
    log: &'a ctxrank_core::models::TrainLog,
    meta: &'a ArtifactMeta,
}

pub fn run_train(cfg: &RunConfig, inputs: &Inputs) -> Result<()> {
    let data = load_data(cfg)?;
    let out = out_dir(cfg)?;
    let (train_bundles, _) = bundles(cfg, &data, inputs.contexts.as_deref())?;
    let max_len = cfg.encoder.max_len;
    let train_set = build_examples(
        cfg.variant,
        &cfg.tokenizer,
        max_len,
        &data.corpus,
        &data.instances,
        &train_bundles,
    )?;
    let dev_set = match &cfg.dev_qa {
        Some(path) => {
            let dev = load_instances(&data.corpus, read(path, "dev_qa")?.as_slice())?;
            let b = extract(cfg, &data.corpus, &dev)?;
            build_examples(cfg.variant, &cfg.tokenizer, max_len, &data.corpus, &dev, &b)?
        }
        None => Vec::new(),
    };
    let (model, log) = train(
        cfg.variant,
        cfg.encoder,
        cfg.tokenizer,
        &train_set,
        &dev_set,
        &cfg.train,
    )?;
    let extra = serde_json::json!({ "meta": data.meta });
    model.save(BufWriter::new(File::create(out.join(MODEL_FILE))?), extra)?;
    write_json(
        &out.join(TRAIN_LOG_FILE),
        &TrainLogFile {
            log: &log,
            meta: &data.meta,
        },
    )
}

fn load_model(inputs: &Inputs) -> Result<Model> {
    let path = required(&inputs.model, "model")?;
    let bytes = read(path, "model")?;
    Ok(Model::load(bytes.as_slice())?.0)
}

struct Scored {
    lists: Vec<RankedList>,
    scorer: GlobalScorer,
    data: Data,
}

fn model_inputs(
    cfg: &RunConfig,
    model: &Model,
    data: &Data,
    contexts: Option<&Path>,
) -> Result<(Vec<ModelInput>, GlobalScorer)> {
    let (b, scorer) = bundles(cfg, data, contexts)?;
    let examples = build_examples(
        model.variant(),
        model.tokenizer(),
        model.encoder_config().max_len,
        &data.corpus,
        &data.instances,
        &b,
    )?;
    Ok((examples.into_iter().map(|e| e.input).collect(), scorer))
}

fn score_all(cfg: &RunConfig, inputs: &Inputs, model: &Model) -> Result<Scored> {
    let data = load_data(cfg)?;
    let (packed, scorer) = model_inputs(cfg, model, &data, inputs.contexts.as_deref())?;
    let lists = rank_all(model, &data.instances, &packed)?;
    Ok(Scored { lists, scorer, data })
}

#[derive(Serialize)]
struct RankedItem<'a> {
    doc_id: &'a str,
    sentence_index: usize,
    score: f64,
}

#[derive(Serialize)]
struct RankingLine<'a> {
    question_id: &'a str,
    ranking: Vec<RankedItem<'a>>,
    #[serde(flatten)]
    meta: &'a ArtifactMeta,
}

pub fn run_rank(cfg: &RunConfig, inputs: &Inputs) -> Result<()> {
    let model = load_model(inputs)?;
    let out = out_dir(cfg)?;
    let scored = score_all(cfg, inputs, &model)?;
    let rows = scored.lists.iter().map(|l| RankingLine {
        question_id: &l.question_id,
        ranking: l
            .candidates
            .iter()
            .map(|c| RankedItem {
                doc_id: &c.doc_id,
                sentence_index: c.sentence_index,
                score: c.score,
            })
            .collect(),
        meta: &scored.data.meta,
    });
    write_jsonl(&out.join(RANKINGS_FILE), rows)
}

pub fn run_eval(cfg: &RunConfig, inputs: &Inputs) -> Result<()> {
    if !inputs.compare.is_empty() {
        return run_compare(cfg, &inputs.compare);
    }
    let model = load_model(inputs)?;
    let out = out_dir(cfg)?;
    let scored = score_all(cfg, inputs, &model)?;
    let metrics = evaluate(&scored.lists)?;
    let mut report = Report::new(model.variant().as_str()).with_metrics(&metrics);
    report.scorer = Some(scored.scorer.as_str().to_string());
    report.meta = Some(scored.data.meta.clone());
    if let Some(path) = &inputs.baseline {
        let base = read_report(path, "baseline")?;
        let same = base.meta.as_ref().map(|m| &m.dataset_hash) == Some(&scored.data.meta.dataset_hash);
        if !same {
            return Err(Error::Config {
                field: "baseline",
                message: "baseline report was computed on a different dataset".into(),
            });
        }
        let base_metrics = base.metrics.ok_or(Error::Config {
            field: "baseline",
            message: "baseline report has no metrics".into(),
        })?;
        let system = report.metrics.expect("metrics were just set");
        report.relative_to_baseline = Some(BaselineComparison::new(base.variant, &base_metrics, &system)?);
    }
    let path = out.join(REPORT_FILE);
    if path.exists() {
        if let Ok(previous) = read_report(&path, "out") {
            report.latency = previous.latency;
        }
    }
    write_json(&path, &report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scorer: Option<String>,
    pub variant: String,
    pub metrics: MetricSummary,
    pub skipped_questions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub dataset_hash: String,
}

fn run_compare(cfg: &RunConfig, reports: &[PathBuf]) -> Result<()> {
    let out = out_dir(cfg)?;
    let mut rows = Vec::new();
    let mut hash: Option<String> = None;
    for path in reports {
        let r = read_report(path, "compare")?;
        let h = r.meta.as_ref().map(|m| m.dataset_hash.clone()).ok_or(Error::Config {
            field: "compare",
            message: format!("{} has no run metadata", path.display()),
        })?;
        if hash.get_or_insert_with(|| h.clone()) != &h {
            return Err(Error::Config {
                field: "compare",
                message: "reports were computed on different datasets".into(),
            });
        }
        let metrics = r.metrics.ok_or(Error::Config {
            field: "compare",
            message: format!("{} has no metrics", path.display()),
        })?;
        rows.push(ComparisonRow {
            scorer: r.scorer,
            variant: r.variant,
            metrics,
            skipped_questions: r.skipped_questions,
        });
    }
    write_json(
        &out.join(COMPARISON_FILE),
        &Comparison {
            rows,
            dataset_hash: hash.unwrap_or_default(),
        },
    )
}

pub fn run_bench(cfg: &RunConfig, inputs: &Inputs) -> Result<()> {
    let model = load_model(inputs)?;
    let out = out_dir(cfg)?;
    let data = load_data(cfg)?;
    let (packed, scorer) = model_inputs(cfg, &model, &data, inputs.contexts.as_deref())?;
    let latency = latency_bench(&model, &packed, &cfg.bench)?;
    let path = out.join(REPORT_FILE);
    let mut report = if path.exists() {
        read_report(&path, "out")?
    } else {
        let mut r = Report::new(model.variant().as_str());
        r.scorer = Some(scorer.as_str().to_string());
        r.meta = Some(data.meta.clone());
        r
    };
    report.latency = Some(latency);
    write_json(&path, &report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub scorer: GlobalScorer,
    pub h: usize,
    pub budget: usize,
    pub instances: usize,
    pub mean_global_sentences: f64,
}

pub fn run_stats(cfg: &RunConfig, inputs: &Inputs, mut stdout: impl Write) -> Result<()> {
    let data = load_data(cfg)?;
    let (mean, scorer) = match &inputs.contexts {
        Some(path) => {
            let (b, scorer) = bundles(cfg, &data, Some(path))?;
            if b.is_empty() {
                return Err(Error::Empty("no instances"));
            }
            (context::mean_global_count(&b), scorer)
        }
        None => {
            let encoder = sentence_encoder(cfg)?;
            let mean = context::context_stats(&data.corpus, &data.instances, &cfg.global, encoder.as_ref())?;
            (mean, cfg.global.scorer)
        }
    };
    let stats = Stats {
        scorer,
        h: cfg.global.h,
        budget: cfg.global.token_budget,
        instances: data.instances.len(),
        mean_global_sentences: mean,
    };
    serde_json::to_writer(&mut stdout, &stats)?;
    writeln!(stdout)?;
    Ok(())
}
