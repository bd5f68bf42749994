//! Documents, spans, gold clusters and their on-disk formats.

pub mod conll;
pub mod gold;
pub mod jsonl;

use std::collections::HashMap;
use std::fmt;

pub use gold::{gold_antecedent_sets, GoldAnnotation};

/// Token span, inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    /// True when the spans overlap without one containing the other.
    pub fn crosses(&self, other: &Span) -> bool {
        (self.start < other.start && other.start <= self.end && self.end < other.end)
            || (other.start < self.start && self.start <= other.end && other.end < self.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

/// The seven CoNLL-2012 genres; anything else maps to one extra bucket.
pub const GENRES: [&str; 7] = ["bc", "bn", "mz", "nw", "pt", "tc", "wb"];
pub const N_GENRES: usize = GENRES.len() + 1;

pub fn genre_id(genre: &str) -> usize {
    GENRES.iter().position(|g| *g == genre).unwrap_or(GENRES.len())
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DocumentError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("span {span} out of range for {len} tokens")]
    SpanRange { span: String, len: usize },
    #[error("span {0} appears in more than one cluster")]
    SharedSpan(Span),
    #[error("gold cluster with fewer than two mentions: {0:?}")]
    Singleton(Vec<Span>),
    #[error("line {line}: {msg}")]
    AtLine { line: usize, msg: String },
}

/// A validated, pre-tokenized document.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    doc_id: String,
    tokens: Vec<String>,
    sentence_starts: Vec<usize>,
    speakers: Vec<String>,
    genre: String,
    clusters: Vec<Vec<Span>>,
}

impl Document {
    /// Validates and normalizes: spans within each cluster sorted, clusters
    /// ordered by their first span.
    pub fn new(
        doc_id: impl Into<String>,
        tokens: Vec<String>,
        sentence_starts: Vec<usize>,
        speakers: Vec<String>,
        genre: impl Into<String>,
        clusters: Vec<Vec<Span>>,
    ) -> Result<Self, DocumentError> {
        let n = tokens.len();
        if speakers.len() != n {
            return Err(DocumentError::Malformed(format!(
                "{} speakers for {n} tokens",
                speakers.len()
            )));
        }
        if n == 0 {
            if !sentence_starts.is_empty() {
                return Err(DocumentError::Malformed("sentences given for an empty document".into()));
            }
        } else {
            if sentence_starts.first() != Some(&0) {
                return Err(DocumentError::Malformed("first sentence must start at token 0".into()));
            }
            if sentence_starts.windows(2).any(|w| w[0] >= w[1]) || sentence_starts.iter().any(|&s| s >= n) {
                return Err(DocumentError::Malformed(format!(
                    "sentence starts {sentence_starts:?} are not increasing offsets below {n}"
                )));
            }
        }
        let mut owner: HashMap<Span, usize> = HashMap::new();
        let mut normalized = Vec::with_capacity(clusters.len());
        for (ci, mut cluster) in clusters.into_iter().enumerate() {
            for s in &cluster {
                if s.start > s.end || s.end >= n {
                    return Err(DocumentError::SpanRange {
                        span: format!("[{},{}]", s.start, s.end),
                        len: n,
                    });
                }
                if let Some(&other) = owner.get(s) {
                    return Err(if other == ci {
                        DocumentError::Malformed(format!("span {s} repeated within a cluster"))
                    } else {
                        DocumentError::SharedSpan(*s)
                    });
                }
                owner.insert(*s, ci);
            }
            cluster.sort();
            if cluster.len() < 2 {
                return Err(DocumentError::Singleton(cluster));
            }
            normalized.push(cluster);
        }
        normalized.sort();
        Ok(Document {
            doc_id: doc_id.into(),
            tokens,
            sentence_starts,
            speakers,
            genre: genre.into(),
            clusters: normalized,
        })
    }

    /// Single-sentence document without speakers or clusters.
    pub fn plain(doc_id: &str, tokens: &[&str]) -> Self {
        let n = tokens.len();
        Document::new(
            doc_id,
            tokens.iter().map(|t| t.to_string()).collect(),
            if n == 0 { vec![] } else { vec![0] },
            vec!["-".to_string(); n],
            "",
            vec![],
        )
        .expect("plain document is valid")
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sentence_starts(&self) -> &[usize] {
        &self.sentence_starts
    }

    /// Half-open token ranges of the sentences.
    pub fn sentences(&self) -> Vec<std::ops::Range<usize>> {
        let n = self.tokens.len();
        self.sentence_starts
            .iter()
            .enumerate()
            .map(|(k, &s)| s..self.sentence_starts.get(k + 1).copied().unwrap_or(n))
            .collect()
    }

    /// Sentence index of every token.
    pub fn sentence_of_token(&self) -> Vec<usize> {
        let mut out = vec![0; self.tokens.len()];
        for (k, r) in self.sentences().into_iter().enumerate() {
            for t in r {
                out[t] = k;
            }
        }
        out
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn genre(&self) -> &str {
        &self.genre
    }

    pub fn clusters(&self) -> &[Vec<Span>] {
        &self.clusters
    }

    /// Same document with different clusters (validated again).
    pub fn with_clusters(&self, clusters: Vec<Vec<Span>>) -> Result<Self, DocumentError> {
        Document::new(
            self.doc_id.clone(),
            self.tokens.clone(),
            self.sentence_starts.clone(),
            self.speakers.clone(),
            self.genre.clone(),
            clusters,
        )
    }

    /// Gold cluster index for every gold mention.
    pub fn cluster_index(&self) -> HashMap<Span, usize> {
        let mut m = HashMap::new();
        for (ci, c) in self.clusters.iter().enumerate() {
            for s in c {
                m.insert(*s, ci);
            }
        }
        m
    }
}
