//! Antecedent and sibling marginal log-likelihoods.
//!
//! Scores enter as flat vectors; a [`PairLookup`] says where `s(i,j)` lives.
//! The dummy antecedent always scores 0.

use crate::autodiff::{AutodiffError, Graph, NodeId, Tensor, PAD};
use crate::decoder::ArcPairMode;
use crate::document::GoldAnnotation;

const NEG_PAD: f64 = -1e30;

/// Position of `s(i,j)` in a flat pair-score vector.
#[derive(Debug, Clone)]
pub struct PairLookup {
    n: usize,
    index: Vec<usize>,
}

impl PairLookup {
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut index = vec![PAD; n * n];
        for (p, &(i, j)) in pairs.iter().enumerate() {
            assert!(j < i && i < n, "pair ({i},{j}) out of order");
            index[i * n + j] = p;
        }
        PairLookup { n, index }
    }

    pub fn get(&self, i: usize, j: usize) -> Option<usize> {
        let p = *self.index.get(i * self.n + j)?;
        (j < i && p != PAD).then_some(p)
    }

    fn require(&self, i: usize, j: usize) -> usize {
        self.get(i, j).unwrap_or_else(|| panic!("pair ({i},{j}) was not scored"))
    }
}

/// Appends a 0 to `scores`; the returned index addresses it.
fn with_zero(g: &mut Graph, scores: Option<NodeId>) -> Result<(NodeId, usize), AutodiffError> {
    let zero = g.input(Tensor::vector(vec![0.0])?)?;
    match scores {
        None => Ok((zero, 0)),
        Some(s) => {
            let n = g.shape(s)[0];
            Ok((g.concat_cols(&[s, zero])?, n))
        }
    }
}

/// Σ over rows of `lse(gold entries) - lse(all entries)`.
fn marginal_rows(g: &mut Graph, src: NodeId, all: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<NodeId, AutodiffError> {
    let width = all.iter().map(Vec::len).max().unwrap_or(1).max(1);
    let flat = |rows: &[Vec<usize>]| {
        let mut idx = vec![PAD; rows.len() * width];
        for (r, row) in rows.iter().enumerate() {
            idx[r * width..r * width + row.len()].copy_from_slice(row);
        }
        idx
    };
    let a = g.gather(src, flat(all), NEG_PAD, vec![all.len(), width])?;
    let b = g.gather(src, flat(gold), NEG_PAD, vec![gold.len(), width])?;
    let la = g.log_sum_exp(a)?;
    let lb = g.log_sum_exp(b)?;
    let d = g.sub(lb, la)?;
    g.sum(d)
}

/// `L_base = Σ_i log Σ_{ŷ ∈ GOLD(i)} P(ŷ)`, `P` the softmax over `Y_i ∪ {ε}`.
/// Spans without a gold antecedent in `Y_i` have `GOLD(i) = {ε}`.
pub fn loss_base(
    g: &mut Graph,
    first: Option<NodeId>,
    lookup: &PairLookup,
    candidates: &[Vec<usize>],
    gold: &GoldAnnotation,
) -> Result<NodeId, AutodiffError> {
    assert_eq!(candidates.len(), gold.len());
    if candidates.is_empty() {
        return g.input(Tensor::scalar(0.0));
    }
    let (src, eps) = with_zero(g, first)?;
    let mut all = Vec::with_capacity(candidates.len());
    let mut gd = Vec::with_capacity(candidates.len());
    for (i, ys) in candidates.iter().enumerate() {
        let mut row = vec![eps];
        row.extend(ys.iter().map(|&j| lookup.require(i, j)));
        all.push(row);
        gd.push(if gold.is_dummy(i) {
            vec![eps]
        } else {
            gold.antecedents[i].iter().map(|&j| lookup.require(i, j)).collect()
        });
    }
    marginal_rows(g, src, &all, &gd)
}

/// One `(ĵ, k)` alternative of span `i`; `k = None` is the dummy sibling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiblingCandidate {
    pub j: usize,
    pub k: Option<usize>,
    pub gold: bool,
}

/// Joint `(ĵ, k)` alternatives of one span.
#[derive(Debug, Clone, PartialEq)]
pub struct SiblingSupervision {
    pub i: usize,
    pub entries: Vec<SiblingCandidate>,
}

/// For every span with a real gold antecedent: all `ĵ ∈ Y_i` paired with
/// `K = {ζ} ∪ {spans strictly between ĵ and i}`, the latter limited to the
/// `cap` nearest to `i`. Under a gold `ĵ`, the gold siblings are the
/// cluster-mates of `i` in `K`, or `ζ` when there are none.
pub fn sibling_supervision(candidates: &[Vec<usize>], gold: &GoldAnnotation, cap: Option<usize>) -> Vec<SiblingSupervision> {
    let mut out = Vec::new();
    for (i, ys) in candidates.iter().enumerate() {
        if gold.is_dummy(i) {
            continue;
        }
        let c = gold.cluster_of[i];
        let mut entries = Vec::new();
        for &j in ys {
            let j_gold = gold.antecedents[i].contains(&j);
            let lo = cap.map_or(j + 1, |cap| (j + 1).max(i.saturating_sub(cap)));
            let ks: Vec<usize> = (lo..i).collect();
            let has_mate = ks.iter().any(|&k| gold.cluster_of[k] == c);
            entries.push(SiblingCandidate { j, k: None, gold: j_gold && !has_mate });
            for k in ks {
                entries.push(SiblingCandidate { j, k: Some(k), gold: j_gold && gold.cluster_of[k] == c });
            }
        }
        out.push(SiblingSupervision { i, entries });
    }
    out
}

/// Real-sibling triples `(i, ĵ, k)` in supervision order; the sibling-score
/// vector passed to [`loss_sibling`] must follow this order.
pub fn sibling_triples(sup: &[SiblingSupervision]) -> Vec<(usize, usize, usize)> {
    sup.iter()
        .flat_map(|s| s.entries.iter().filter_map(move |e| e.k.map(|k| (s.i, e.j, k))))
        .collect()
}

/// `L_sib = Σ_i log Σ_{gold (ĵ,k)} P(ĵ,k)`, with `P` the joint softmax of the
/// arc-pair scores over all `(j', k')` of span `i`.
#[allow(clippy::too_many_arguments)]
pub fn loss_sibling(
    g: &mut Graph,
    first: Option<NodeId>,
    second: Option<NodeId>,
    lookup: &PairLookup,
    sup: &[SiblingSupervision],
    gamma: f64,
    mode: ArcPairMode,
) -> Result<NodeId, AutodiffError> {
    let Some(first) = first.filter(|_| !sup.is_empty()) else {
        return g.input(Tensor::scalar(0.0));
    };
    let n_entries: usize = sup.iter().map(|s| s.entries.len()).sum();
    let mut a_idx = Vec::with_capacity(n_entries);
    let mut b_idx = Vec::with_capacity(n_entries);
    let mut c_idx = Vec::with_capacity(n_entries);
    let mut triple = 0;
    for s in sup {
        for e in &s.entries {
            a_idx.push(lookup.require(s.i, e.j));
            match (mode, e.k) {
                (_, None) => {
                    b_idx.push(PAD);
                    c_idx.push(PAD);
                }
                (ArcPairMode::Learned, Some(_)) => {
                    b_idx.push(triple);
                    c_idx.push(PAD);
                    triple += 1;
                }
                (ArcPairMode::LinearCombination, Some(k)) => {
                    b_idx.push(lookup.require(k, e.j));
                    c_idx.push(lookup.require(s.i, k));
                }
            }
        }
    }
    let a = g.gather(first, a_idx, 0.0, vec![n_entries])?;
    let arc = match mode {
        ArcPairMode::Learned => {
            let scaled = g.scale(a, gamma)?;
            match second {
                Some(sp) if triple > 0 => {
                    assert_eq!(g.shape(sp)[0], triple, "one sibling score per triple");
                    let b = g.gather(sp, b_idx, 0.0, vec![n_entries])?;
                    let b = g.scale(b, 1.0 - gamma)?;
                    g.add(scaled, b)?
                }
                _ => {
                    assert_eq!(triple, 0, "sibling scores missing");
                    scaled
                }
            }
        }
        ArcPairMode::LinearCombination => {
            let b = g.gather(first, b_idx, 0.0, vec![n_entries])?;
            let c = g.gather(first, c_idx, 0.0, vec![n_entries])?;
            let ab = g.add(a, b)?;
            g.add(ab, c)?
        }
    };
    let mut all = Vec::with_capacity(sup.len());
    let mut gold = Vec::with_capacity(sup.len());
    let mut off = 0;
    for s in sup {
        all.push((off..off + s.entries.len()).collect());
        gold.push(s.entries.iter().enumerate().filter(|(_, e)| e.gold).map(|(p, _)| off + p).collect());
        off += s.entries.len();
    }
    marginal_rows(g, arc, &all, &gold)
}

/// `L = -L_base - λ L_sib`.
pub fn total_loss(g: &mut Graph, base: NodeId, sib: Option<NodeId>, lambda: f64) -> Result<NodeId, AutodiffError> {
    let neg = g.scale(base, -1.0)?;
    match sib {
        Some(s) if lambda != 0.0 => {
            let t = g.scale(s, -lambda)?;
            g.add(neg, t)
        }
        _ => Ok(neg),
    }
}

pub fn total_loss_value(base: f64, sib: f64, lambda: f64) -> f64 {
    -base - lambda * sib
}
