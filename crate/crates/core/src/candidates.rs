//! Span enumeration, mention pruning and coarse antecedent selection.

use std::fmt::Write as _;

use crate::document::{Document, Span};

/// Spans of width `≤ max_width` inside one sentence, in `(start, end)` order.
pub fn enumerate_spans(doc: &Document, max_width: usize) -> Vec<Span> {
    assert!(max_width >= 1, "max_width must be at least 1");
    let mut out = Vec::new();
    for s in doc.sentences() {
        for start in s.clone() {
            for end in start..s.end.min(start + max_width) {
                out.push(Span::new(start, end));
            }
        }
    }
    out.sort();
    out
}

/// Number of spans kept for a document of `n_tokens` tokens.
pub fn retained_budget(n_tokens: usize, spans_ratio: f64) -> usize {
    (spans_ratio * n_tokens as f64).ceil() as usize
}

/// Indices into `spans` of the retained mentions, in document order.
///
/// Spans are visited by descending score (ties by `(start, end)`) and kept
/// unless they partially overlap an already kept span, until `budget` spans
/// are kept.
pub fn prune_mentions(spans: &[Span], scores: &[f64], budget: usize) -> Vec<usize> {
    assert_eq!(spans.len(), scores.len());
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(spans[a].cmp(&spans[b])));
    let mut kept: Vec<usize> = Vec::with_capacity(budget);
    for i in order {
        if kept.len() >= budget {
            break;
        }
        if kept.iter().all(|&k| !spans[i].crosses(&spans[k])) {
            kept.push(i);
        }
    }
    kept.sort_by_key(|&i| spans[i]);
    kept
}

/// `Y_i`: the `k` earlier spans with the highest coarse score, ascending.
/// `coarse[i]` has one entry per earlier span. Ties prefer nearer spans.
pub fn select_candidate_antecedents(coarse: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    coarse
        .iter()
        .enumerate()
        .map(|(i, row)| {
            assert_eq!(row.len(), i);
            let mut js: Vec<usize> = (0..i).collect();
            js.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(b.cmp(&a)));
            js.truncate(k);
            js.sort();
            js
        })
        .collect()
}

/// Gold pairs `(i, j)` with a gold antecedent `j` among the retained spans,
/// split into those reachable through `Y_i` and the total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Reachability {
    pub reachable: usize,
    pub total: usize,
}

impl Reachability {
    /// Counts, over every gold mention that has an earlier gold mention of
    /// its cluster, whether one of those antecedents survives into `Y_i`.
    pub fn measure(doc: &Document, retained: &[Span], candidates: &[Vec<usize>]) -> Self {
        let index = doc.cluster_index();
        let mut first_seen = std::collections::HashSet::new();
        let mut mentions: Vec<&Span> = index.keys().collect();
        mentions.sort();
        let mut total = 0;
        for m in mentions {
            if !first_seen.insert(index[m]) {
                total += 1;
            }
        }
        let mut reachable = 0;
        for (i, span) in retained.iter().enumerate() {
            let Some(c) = index.get(span) else { continue };
            if candidates[i].iter().any(|&j| index.get(&retained[j]) == Some(c)) {
                reachable += 1;
            }
        }
        Reachability { reachable, total }
    }

    pub fn add(&mut self, o: Reachability) {
        self.reachable += o.reachable;
        self.total += o.total;
    }

    pub fn ratio(&self) -> f64 {
        if self.total == 0 { 1.0 } else { self.reachable as f64 / self.total as f64 }
    }
}

/// Retained spans with mention score and candidate set, one per line.
pub fn debug_dump(doc: &Document, retained: &[Span], mention_scores: &[f64], candidates: &[Vec<usize>]) -> String {
    let mut s = format!("# {}\n", doc.doc_id());
    for (i, span) in retained.iter().enumerate() {
        let text = doc.tokens()[span.start..=span.end].join(" ");
        let ys: Vec<String> = candidates[i].iter().map(|j| j.to_string()).collect();
        let _ = writeln!(s, "{i}\t{span}\t{:.6}\t{text}\t[{}]", mention_scores[i], ys.join(","));
    }
    s
}
