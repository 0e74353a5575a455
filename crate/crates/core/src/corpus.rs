//! Documents, questions and candidate answers.
//!
//! A candidate is always addressed by `(doc_id, sentence_index)` so that
//! context extraction can find its neighbours.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered sequence of sentences from one source page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    doc_id: String,
    sentences: Vec<String>,
}

impl Document {
    /// Builds a document, rejecting empty or blank sentences.
    pub fn new(doc_id: impl Into<String>, sentences: Vec<String>) -> Result<Self> {
        let doc_id = doc_id.into();
        if sentences.is_empty() {
            return Err(Error::Dataset {
                line: 0,
                message: format!("document `{doc_id}` has no sentences"),
            });
        }
        if let Some(i) = sentences.iter().position(|s| s.trim().is_empty()) {
            return Err(Error::Dataset {
                line: 0,
                message: format!("document `{doc_id}` sentence {i} is blank"),
            });
        }
        Ok(Self { doc_id, sentences })
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    pub fn sentence(&self, index: usize) -> Result<&str> {
        self.sentences
            .get(index)
            .map(String::as_str)
            .ok_or_else(|| Error::SentenceOutOfBounds {
                doc_id: self.doc_id.clone(),
                index,
                count: self.sentences.len(),
            })
    }
}

/// Immutable collection of documents keyed by `doc_id`, kept in load order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc: Document) -> Result<()> {
        if self.index.contains_key(doc.doc_id()) {
            return Err(Error::DuplicateDocument(doc.doc_id().to_string()));
        }
        self.index.insert(doc.doc_id().to_string(), self.documents.len());
        self.documents.push(doc);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.index.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn document(&self, doc_id: &str) -> Result<&Document> {
        self.get(doc_id)
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document_count(&self) -> usize {
        self.documents.len()
    }

    /// Writes the corpus as `documents.jsonl` (pre-segmented form).
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for doc in &self.documents {
            let rec = DocumentRecord {
                doc_id: doc.doc_id.clone(),
                sentences: Some(doc.sentences.clone()),
                text: None,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Resolves the candidate sentence of an instance.
    pub fn candidate_text(&self, instance: &QaInstance) -> Result<&str> {
        self.document(&instance.doc_id)?.sentence(instance.sentence_index)
    }
}

/// One question/candidate pair with its binary relevance label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaInstance {
    pub question_id: String,
    #[serde(rename = "question")]
    pub question_text: String,
    pub doc_id: String,
    pub sentence_index: usize,
    pub label: u8,
}

impl QaInstance {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentences: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Debug, Deserialize)]
struct QaRecord {
    question_id: String,
    question: String,
    doc_id: String,
    sentence_index: i64,
    label: i64,
}

/// Splits raw text into sentences.
///
/// A boundary is placed after `.`, `!` or `?` when the next characters are
/// whitespace followed by an uppercase letter or a digit.
pub fn segment_text(raw: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = raw.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut k = i + 1;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            if k > i + 1 && k < chars.len() {
                let next = chars[k].1;
                if next.is_uppercase() || next.is_ascii_digit() {
                    let end = chars[i].0 + c.len_utf8();
                    push_trimmed(&mut sentences, &raw[start..end]);
                    start = chars[k].0;
                    i = k;
                    continue;
                }
            }
        }
        i += 1;
    }
    push_trimmed(&mut sentences, &raw[start..]);
    sentences
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let t = piece.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

/// Reads `documents.jsonl` and `qa.jsonl` and validates every instance
/// against the corpus. Line numbers in errors are 1-based.
pub fn load_dataset<D: BufRead, Q: BufRead>(docs_source: D, qa_source: Q) -> Result<(Corpus, Vec<QaInstance>)> {
    let corpus = load_corpus(docs_source)?;
    let instances = load_instances(&corpus, qa_source)?;
    Ok((corpus, instances))
}

pub fn load_corpus<D: BufRead>(docs_source: D) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    for (n, line) in docs_source.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocumentRecord = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            line: line_no,
            message: e.to_string(),
        })?;
        let sentences = match (rec.sentences, rec.text) {
            (Some(s), None) => s,
            (None, Some(t)) => segment_text(&t),
            _ => {
                return Err(Error::Dataset {
                    line: line_no,
                    message: "expected exactly one of `sentences` or `text`".into(),
                })
            }
        };
        let doc = Document::new(rec.doc_id, sentences).map_err(|e| Error::Dataset {
            line: line_no,
            message: e.to_string(),
        })?;
        corpus.insert(doc)?;
    }
    Ok(corpus)
}

pub fn load_instances<Q: BufRead>(corpus: &Corpus, qa_source: Q) -> Result<Vec<QaInstance>> {
    let mut instances = Vec::new();
    for (n, line) in qa_source.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Dataset { line: line_no, message };
        let rec: QaRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if rec.label != 0 && rec.label != 1 {
            return Err(bad(format!("label must be 0 or 1, got {}", rec.label)));
        }
        let doc = corpus
            .get(&rec.doc_id)
            .ok_or_else(|| bad(format!("unknown doc_id `{}`", rec.doc_id)))?;
        if rec.sentence_index < 0 || rec.sentence_index as usize >= doc.sentence_count() {
            return Err(bad(format!(
                "sentence_index {} out of range for `{}` ({} sentences)",
                rec.sentence_index,
                rec.doc_id,
                doc.sentence_count()
            )));
        }
        instances.push(QaInstance {
            question_id: rec.question_id,
            question_text: rec.question,
            doc_id: rec.doc_id,
            sentence_index: rec.sentence_index as usize,
            label: rec.label as u8,
        });
    }
    Ok(instances)
}

/// Writes instances in `qa.jsonl` form.
pub fn write_instances<W: Write>(instances: &[QaInstance], mut out: W) -> Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut out, inst)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn segments_on_terminal_punctuation() {
        assert_eq!(segment_text("A b. C d."), vec!["A b.", "C d."]);
        assert_eq!(segment_text("One sentence"), vec!["One sentence"]);
        assert_eq!(
            segment_text("Pi is 3.14. It is irrational."),
            vec!["Pi is 3.14.", "It is irrational."]
        );
        assert!(segment_text("   \n\t").is_empty());
        assert_eq!(segment_text("Why? 42 is why! ok."), vec!["Why?", "42 is why! ok."]);
    }

    const DOCS: &str = r#"{"doc_id": "d1", "sentences": ["Alpha one.", "Beta two.", "Gamma three."]}"#;

    #[test]
    fn loads_one_doc_three_candidates() {
        let qa = (0..3)
            .map(|i| {
                format!(
                    r#"{{"question_id":"q1","question":"what","doc_id":"d1","sentence_index":{i},"label":{}}}"#,
                    (i == 1) as u8
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        let (corpus, inst) = load_dataset(DOCS.as_bytes(), qa.as_bytes()).unwrap();
        assert_eq!(corpus.document_count(), 1);
        assert_eq!(inst.len(), 3);
        assert_eq!(inst[1].label, 1);
        assert_eq!(corpus.candidate_text(&inst[2]).unwrap(), "Gamma three.");
    }

    #[test]
    fn rejects_out_of_range_index_with_line() {
        let qa = "\n".to_string() + r#"{"question_id":"q","question":"x","doc_id":"d1","sentence_index":5,"label":0}"#;
        match load_dataset(DOCS.as_bytes(), qa.as_bytes()) {
            Err(Error::Dataset { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_qa_source_is_fine() {
        let (corpus, inst) = load_dataset(DOCS.as_bytes(), "".as_bytes()).unwrap();
        assert_eq!(corpus.document_count(), 1);
        assert!(inst.is_empty());
    }

    #[test]
    fn rejects_duplicates_bad_labels_and_garbage() {
        let dup = format!("{DOCS}\n{DOCS}");
        assert!(matches!(
            load_dataset(dup.as_bytes(), "".as_bytes()),
            Err(Error::DuplicateDocument(_))
        ));
        let qa = r#"{"question_id":"q","question":"x","doc_id":"d1","sentence_index":0,"label":2}"#;
        assert!(matches!(
            load_dataset(DOCS.as_bytes(), qa.as_bytes()),
            Err(Error::Dataset { line: 1, .. })
        ));
        let qa = r#"{"question_id":"q","question":"x","doc_id":"nope","sentence_index":0,"label":0}"#;
        assert!(load_dataset(DOCS.as_bytes(), qa.as_bytes()).is_err());
        assert!(matches!(
            load_dataset("{not json".as_bytes(), "".as_bytes()),
            Err(Error::Dataset { line: 1, .. })
        ));
    }

    #[test]
    fn text_documents_are_segmented() {
        let docs = r#"{"doc_id":"d","text":"Pi is 3.14. It is irrational."}"#;
        let corpus = load_corpus(docs.as_bytes()).unwrap();
        assert_eq!(corpus.document("d").unwrap().sentence_count(), 2);
    }

    fn non_ws(s: &str) -> String {
        s.chars().filter(|c| !c.is_whitespace()).collect()
    }

    proptest! {
        #[test]
        fn segmentation_preserves_text_and_is_idempotent(raw in "[A-Za-z0-9 .!?\n]{0,80}") {
            let sents = segment_text(&raw);
            prop_assert_eq!(non_ws(&sents.join(" ")), non_ws(&raw));
            let again: Vec<String> = sents.iter().flat_map(|s| segment_text(s)).collect();
            prop_assert_eq!(&again, &sents);
            prop_assert_eq!(segment_text(&sents.join(" ")), sents);
        }

        #[test]
        fn corpus_round_trips(docs in proptest::collection::vec(
            proptest::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,3}", 1..5), 1..5)
        ) {
            let mut corpus = Corpus::new();
            for (i, s) in docs.into_iter().enumerate() {
                corpus.insert(Document::new(format!("doc{i}"), s).unwrap()).unwrap();
            }
            let mut buf = Vec::new();
            corpus.write_jsonl(&mut buf).unwrap();
            let back = load_corpus(buf.as_slice()).unwrap();
            prop_assert_eq!(back, corpus);
        }
    }
}
