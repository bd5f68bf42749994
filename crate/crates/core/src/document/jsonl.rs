//! JSONL corpus and cluster-prediction formats.
//!
//! Corpus lines carry `doc_id`, `tokens`, `sentences` (sentence start
//! offsets), `speakers`, `genre` and `clusters` (lists of inclusive
//! `[start, end]` spans). Only `tokens` is required. Prediction lines carry
//! `doc_id` and `clusters`.

use serde::{Deserialize, Serialize};

use super::{Document, DocumentError, Span};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocRecord {
    #[serde(default)]
    doc_id: String,
    tokens: Vec<String>,
    #[serde(default)]
    sentences: Option<Vec<usize>>,
    #[serde(default)]
    speakers: Option<Vec<String>>,
    #[serde(default)]
    genre: String,
    #[serde(default)]
    clusters: Vec<Vec<[usize; 2]>>,
}

fn to_spans(clusters: Vec<Vec<[usize; 2]>>) -> Vec<Vec<Span>> {
    clusters
        .into_iter()
        .map(|c| c.into_iter().map(|[s, e]| Span { start: s, end: e }).collect())
        .collect()
}

fn from_spans(clusters: &[Vec<Span>]) -> Vec<Vec<[usize; 2]>> {
    clusters
        .iter()
        .map(|c| c.iter().map(|s| [s.start, s.end]).collect())
        .collect()
}

pub fn parse_jsonl_document(line: &str) -> Result<Document, DocumentError> {
    let rec: DocRecord = serde_json::from_str(line).map_err(|e| DocumentError::Malformed(e.to_string()))?;
    let n = rec.tokens.len();
    let sentences = rec.sentences.unwrap_or_else(|| if n == 0 { vec![] } else { vec![0] });
    let speakers = rec.speakers.unwrap_or_else(|| vec!["-".to_string(); n]);
    Document::new(rec.doc_id, rec.tokens, sentences, speakers, rec.genre, to_spans(rec.clusters))
}

/// Canonical single-line serialization: every key present, fixed key order.
pub fn serialize_document(doc: &Document) -> String {
    let rec = DocRecord {
        doc_id: doc.doc_id().to_string(),
        tokens: doc.tokens().to_vec(),
        sentences: Some(doc.sentence_starts().to_vec()),
        speakers: Some(doc.speakers().to_vec()),
        genre: doc.genre().to_string(),
        clusters: from_spans(doc.clusters()),
    };
    serde_json::to_string(&rec).expect("document serializes")
}

/// Parses a whole corpus; blank lines are skipped. Errors carry the line number.
pub fn parse_jsonl_corpus(text: &str) -> Result<Vec<Document>, DocumentError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_jsonl_document(l).map_err(|e| DocumentError::AtLine {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Predicted clusters for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub doc_id: String,
    pub clusters: Vec<Vec<[usize; 2]>>,
}

impl ClusterRecord {
    pub fn new(doc_id: &str, clusters: &[Vec<Span>]) -> Self {
        let mut clusters: Vec<Vec<Span>> = clusters
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.sort();
                c
            })
            .collect();
        clusters.sort();
        ClusterRecord {
            doc_id: doc_id.to_string(),
            clusters: from_spans(&clusters),
        }
    }

    pub fn spans(&self) -> Vec<Vec<Span>> {
        to_spans(self.clusters.clone())
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("cluster record serializes")
    }
}

/// Parses cluster-prediction JSONL. Spans must satisfy `start <= end` and
/// clusters must be disjoint.
pub fn parse_cluster_jsonl(text: &str) -> Result<Vec<ClusterRecord>, DocumentError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| DocumentError::AtLine { line: i + 1, msg };
        let rec: ClusterRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        for c in &rec.clusters {
            for &[s, e] in c {
                if s > e {
                    return Err(err(format!("span [{s},{e}] has start > end")));
                }
                if !seen.insert((s, e)) {
                    return Err(err(format!("span [{s},{e}] appears twice")));
                }
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Gold clusters of a document in prediction format.
pub fn gold_record(doc: &Document) -> ClusterRecord {
    ClusterRecord::new(doc.doc_id(), doc.clusters())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_line_parses() {
        let d = parse_jsonl_document(r#"{"tokens":["I","saw","him"],"clusters":[]}"#).unwrap();
        assert_eq!(d.len(), 3);
        assert!(d.clusters().is_empty());
        assert_eq!(d.sentence_starts(), &[0]);
        assert_eq!(d.speakers(), &["-", "-", "-"]);
    }

    #[test]
    fn reversed_span_is_range_error() {
        let r = parse_jsonl_document(r#"{"tokens":["a","b","c","d","e","f"],"clusters":[[[5,2],[0,0]]]}"#);
        assert!(matches!(r, Err(DocumentError::SpanRange { .. })));
    }

    #[test]
    fn malformed_and_unknown_keys_rejected() {
        assert!(parse_jsonl_document("{").is_err());
        assert!(parse_jsonl_document(r#"{"clusters":[]}"#).is_err());
        assert!(parse_jsonl_document(r#"{"tokens":[],"colour":1}"#).is_err());
    }

    #[test]
    fn identical_span_in_two_clusters_rejected() {
        let r = parse_jsonl_document(r#"{"tokens":["a","b","c"],"clusters":[[[0,0],[1,1]],[[1,1],[2,2]]]}"#);
        assert!(matches!(r, Err(DocumentError::SharedSpan(_))));
    }

    #[test]
    fn canonical_form_has_all_keys() {
        let d = parse_jsonl_document(r#"{"tokens":["a","b"],"clusters":[[[1,1],[0,0]]],"doc_id":"x"}"#).unwrap();
        assert_eq!(
            serialize_document(&d),
            r#"{"doc_id":"x","tokens":["a","b"],"sentences":[0],"speakers":["-","-"],"genre":"","clusters":[[[0,0],[1,1]]]}"#
        );
    }

    #[test]
    fn cluster_records_round_trip() {
        let r = ClusterRecord::new("d", &[vec![Span::new(4, 5), Span::new(0, 1)]]);
        assert_eq!(r.to_line(), r#"{"doc_id":"d","clusters":[[[0,1],[4,5]]]}"#);
        let back = parse_cluster_jsonl(&r.to_line()).unwrap();
        assert_eq!(back, vec![r]);
        assert!(parse_cluster_jsonl(r#"{"doc_id":"d","clusters":[[[3,1]]]}"#).is_err());
    }
}
