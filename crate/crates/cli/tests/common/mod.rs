#![allow(dead_code)]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::Command;

use ctxrank_core::corpus::{write_instances, Corpus};
use ctxrank_core::encoder::TokenizerConfig;
use ctxrank_core::synthetic::marker_task;

pub const VOCAB: usize = 512;

pub const TINY_CONFIG: &str = r#"{
  "encoder": {"layers": 2, "hidden_dim": 16, "heads": 2, "ffn_dim": 32, "max_len": 48},
  "tokenizer": {"vocab_size": 512},
  "global": {"h": 2, "token_budget": 12},
  "train": {"epochs": 2, "batch_size": 8, "learning_rate": 0.001, "unfreeze_top_k": 1},
  "bench": {"batch_size": 16, "repeats": 30, "warmup": 1}
}"#;

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn ctxrank<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    ctxrank_env(args, &[])
}

pub fn ctxrank_env<S: AsRef<std::ffi::OsStr>>(args: &[S], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ctxrank"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub struct Dataset {
    pub docs: PathBuf,
    pub qa: PathBuf,
    pub dev_qa: PathBuf,
}

/// Writes a marker-task corpus with separate train and dev question files.
pub fn write_dataset(dir: &Path, train_questions: usize, dev_questions: usize, seed: u64) -> Dataset {
    let tok = TokenizerConfig::with_vocab(VOCAB);
    let mut corpus = Corpus::new();
    let train = marker_task(&mut corpus, "t", train_questions, seed, &tok).unwrap();
    let dev = marker_task(&mut corpus, "v", dev_questions, seed + 1000, &tok).unwrap();
    let ds = Dataset {
        docs: dir.join("documents.jsonl"),
        qa: dir.join("qa.jsonl"),
        dev_qa: dir.join("dev_qa.jsonl"),
    };
    corpus
        .write_jsonl(BufWriter::new(File::create(&ds.docs).unwrap()))
        .unwrap();
    write_instances(&train, BufWriter::new(File::create(&ds.qa).unwrap())).unwrap();
    write_instances(&dev, BufWriter::new(File::create(&ds.dev_qa).unwrap())).unwrap();
    ds
}

pub fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}
