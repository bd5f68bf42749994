//! Coreference evaluation: MUC, B³, CEAFφ4, their average, and
//! exact-match mention detection.
//!
//! Each metric is first computed as numerator/denominator [`Counts`] so that
//! corpus scores sum counts over documents instead of averaging per-document
//! F1, as the CoNLL scorer does.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::document::Span;

/// Disjoint clusters of mentions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterPartition {
    clusters: Vec<Vec<Span>>,
}

impl ClusterPartition {
    pub fn new(clusters: Vec<Vec<Span>>) -> Result<Self, String> {
        let mut seen = HashSet::new();
        for c in &clusters {
            for s in c {
                if !seen.insert(*s) {
                    return Err(format!("mention {s} is in more than one cluster"));
                }
            }
        }
        Ok(ClusterPartition {
            clusters: clusters.into_iter().filter(|c| !c.is_empty()).collect(),
        })
    }

    pub fn clusters(&self) -> &[Vec<Span>] {
        &self.clusters
    }

    pub fn mentions(&self) -> HashSet<Span> {
        self.clusters.iter().flatten().copied().collect()
    }

    fn owner(&self) -> HashMap<Span, usize> {
        let mut m = HashMap::new();
        for (i, c) in self.clusters.iter().enumerate() {
            for s in c {
                m.insert(*s, i);
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricResult {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricResult { precision, recall, f1 }
    }
}

/// Precision and recall as ratios; a zero denominator yields 0.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Counts {
    pub p_num: f64,
    pub p_den: f64,
    pub r_num: f64,
    pub r_den: f64,
}

impl Counts {
    pub fn result(&self) -> MetricResult {
        let ratio = |n: f64, d: f64| if d == 0.0 { 0.0 } else { n / d };
        MetricResult::from_pr(ratio(self.p_num, self.p_den), ratio(self.r_num, self.r_den))
    }

    /// True when either denominator is zero, i.e. the metric is undefined
    /// and reported as 0.
    pub fn degenerate(&self) -> bool {
        self.p_den == 0.0 || self.r_den == 0.0
    }

    pub fn add(&mut self, o: &Counts) {
        self.p_num += o.p_num;
        self.p_den += o.p_den;
        self.r_num += o.r_num;
        self.r_den += o.r_den;
    }
}

/// Σ_K (|K| - p(K)) and Σ_K (|K| - 1) for `key` clusters partitioned by `other`.
fn muc_side(key: &ClusterPartition, other: &ClusterPartition) -> (f64, f64) {
    let owner = other.owner();
    let mut num = 0.0;
    let mut den = 0.0;
    for c in key.clusters() {
        let mut parts = HashSet::new();
        let mut unassigned = 0usize;
        for s in c {
            match owner.get(s) {
                Some(&o) => {
                    parts.insert(o);
                }
                None => unassigned += 1,
            }
        }
        let p = parts.len() + unassigned;
        num += (c.len() - p) as f64;
        den += (c.len() - 1) as f64;
    }
    (num, den)
}

pub fn muc_counts(key: &ClusterPartition, response: &ClusterPartition) -> Counts {
    let (r_num, r_den) = muc_side(key, response);
    let (p_num, p_den) = muc_side(response, key);
    Counts { p_num, p_den, r_num, r_den }
}

pub fn muc(key: &ClusterPartition, response: &ClusterPartition) -> MetricResult {
    muc_counts(key, response).result()
}

/// Σ over `key` mentions of |K(m) ∩ O(m)| / |K(m)|, with O(m) = {m} when
/// the mention is absent from `other`.
fn b_cubed_side(key: &ClusterPartition, other: &ClusterPartition) -> (f64, f64) {
    let owner = other.owner();
    let mut num = 0.0;
    let mut den = 0.0;
    for c in key.clusters() {
        let set: HashSet<&Span> = c.iter().collect();
        for m in c {
            let overlap = match owner.get(m) {
                Some(&o) => other.clusters()[o].iter().filter(|s| set.contains(s)).count(),
                None => 1,
            };
            num += overlap as f64 / c.len() as f64;
            den += 1.0;
        }
    }
    (num, den)
}

pub fn b_cubed_counts(key: &ClusterPartition, response: &ClusterPartition) -> Counts {
    let (r_num, r_den) = b_cubed_side(key, response);
    let (p_num, p_den) = b_cubed_side(response, key);
    Counts { p_num, p_den, r_num, r_den }
}

pub fn b_cubed(key: &ClusterPartition, response: &ClusterPartition) -> MetricResult {
    b_cubed_counts(key, response).result()
}

pub fn phi4(a: &[Span], b: &[Span]) -> f64 {
    let set: HashSet<&Span> = a.iter().collect();
    let inter = b.iter().filter(|s| set.contains(s)).count();
    2.0 * inter as f64 / (a.len() + b.len()) as f64
}

pub fn ceaf_phi4_counts(key: &ClusterPartition, response: &ClusterPartition) -> Counts {
    let sim: Vec<Vec<f64>> = key
        .clusters()
        .iter()
        .map(|k| response.clusters().iter().map(|r| phi4(k, r)).collect())
        .collect();
    let (total, _) = max_weight_assignment(&sim);
    Counts {
        p_num: total,
        p_den: response.clusters().len() as f64,
        r_num: total,
        r_den: key.clusters().len() as f64,
    }
}

pub fn ceaf_phi4(key: &ClusterPartition, response: &ClusterPartition) -> MetricResult {
    ceaf_phi4_counts(key, response).result()
}

pub fn avg_f1(results: [MetricResult; 3]) -> f64 {
    results.iter().map(|r| r.f1).sum::<f64>() / 3.0
}

pub fn mention_detection_counts(key: &HashSet<Span>, response: &HashSet<Span>) -> Counts {
    let hit = key.intersection(response).count() as f64;
    Counts {
        p_num: hit,
        p_den: response.len() as f64,
        r_num: hit,
        r_den: key.len() as f64,
    }
}

pub fn mention_detection_prf(key: &HashSet<Span>, response: &HashSet<Span>) -> MetricResult {
    mention_detection_counts(key, response).result()
}

/// Maximum-weight one-to-one assignment of rows to columns (rectangular
/// allowed). Returns the total weight and the column assigned to each row.
///
/// Hungarian method with potentials on the square zero-padded cost matrix
/// `max_w - w`, O(n³).
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> (f64, Vec<Option<usize>>) {
    let rows = weights.len();
    let cols = weights.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return (0.0, vec![None; rows]);
    }
    let n = rows.max(cols);
    let max_w = weights.iter().flatten().cloned().fold(0.0, f64::max);
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            max_w - weights[i][j]
        } else {
            max_w
        }
    };
    // 1-based arrays; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![None; rows];
    let mut total = 0.0;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            assign[i - 1] = Some(j - 1);
            total += weights[i - 1][j - 1];
        }
    }
    (total, assign)
}

/// All three coreference metrics plus mention detection for one document or
/// a whole corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScoreCounts {
    pub muc: Counts,
    pub b_cubed: Counts,
    pub ceaf_phi4: Counts,
    pub mentions: Counts,
}

impl ScoreCounts {
    pub fn for_document(key: &ClusterPartition, response: &ClusterPartition) -> Self {
        ScoreCounts {
            muc: muc_counts(key, response),
            b_cubed: b_cubed_counts(key, response),
            ceaf_phi4: ceaf_phi4_counts(key, response),
            mentions: mention_detection_counts(&key.mentions(), &response.mentions()),
        }
    }

    pub fn add(&mut self, o: &ScoreCounts) {
        self.muc.add(&o.muc);
        self.b_cubed.add(&o.b_cubed);
        self.ceaf_phi4.add(&o.ceaf_phi4);
        self.mentions.add(&o.mentions);
    }

    pub fn report(&self) -> Report {
        let muc = self.muc.result();
        let b_cubed = self.b_cubed.result();
        let ceaf_phi4 = self.ceaf_phi4.result();
        Report {
            muc,
            b_cubed,
            ceaf_phi4,
            avg_f1: avg_f1([muc, b_cubed, ceaf_phi4]),
            mentions: self.mentions.result(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Report {
    pub muc: MetricResult,
    pub b_cubed: MetricResult,
    pub ceaf_phi4: MetricResult,
    pub avg_f1: f64,
    pub mentions: MetricResult,
}

impl Report {
    /// Percentages laid out as P / R / F1 per metric followed by the average.
    pub fn to_text(&self) -> String {
        let pct = |x: f64| format!("{:6.2}", 100.0 * x);
        let mut out = String::new();
        out.push_str("              MUC                  B3                   CEAFphi4             Avg.\n");
        out.push_str("          Prec.  Rec.   F1     Prec.  Rec.   F1     Prec.  Rec.   F1     F1\n");
        out.push_str("        ");
        for r in [&self.muc, &self.b_cubed, &self.ceaf_phi4] {
            out.push_str(&format!("{} {} {} ", pct(r.precision), pct(r.recall), pct(r.f1)));
        }
        out.push_str(&format!("{}\n", pct(self.avg_f1)));
        out.push_str(&format!(
            "mentions  Prec. {}  Rec. {}  F1 {}\n",
            pct(self.mentions.precision),
            pct(self.mentions.recall),
            pct(self.mentions.f1)
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
