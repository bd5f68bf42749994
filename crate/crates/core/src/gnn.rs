//! Gated refinement of span representations over the candidate graph.
//!
//! Layer `t`: edge weights `α^t` come from the first-order scorer applied to
//! `v^{t-1}`, `a_i = Σ_j α_ij v_j`, `β_i = σ(W_f [v_i, a_i] + b_f)` and
//! `v_i^t = β_i ∘ a_i + (1 - β_i) ∘ v_i^{t-1}`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, NodeId, ParamId, ParamStore, Tensor, PAD};
use crate::scorer::{mention_scores, pair_scores, PairFeatures, ScorerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    #[default]
    Soft,
    /// One-hot on the best-scoring neighbor, treated as a constant.
    Hard1,
    /// Softmax restricted to the `k` best neighbors.
    TopK(usize),
    Uniform,
}

impl WeightMode {
    /// Parses `soft`, `hard1`, `uniform` or `topk`; `topk` takes `k`.
    pub fn parse(s: &str, k: usize) -> Result<Self, String> {
        match s {
            "soft" => Ok(WeightMode::Soft),
            "hard1" | "hard" => Ok(WeightMode::Hard1),
            "uniform" => Ok(WeightMode::Uniform),
            "topk" if k >= 1 => Ok(WeightMode::TopK(k)),
            "topk" => Err("gnn.topk must be at least 1".into()),
            _ => Err(format!("unknown weight mode {s:?} (expected soft, hard1, topk or uniform)")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightMode::Soft => "soft",
            WeightMode::Hard1 => "hard1",
            WeightMode::TopK(_) => "topk",
            WeightMode::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Neighborhood {
    /// `N(i) = Y_i`.
    #[default]
    Antecedents,
    /// `N(i) = Y_i ∪ {k : i ∈ Y_k}`; backward edges reuse `α_ki`.
    Bidirectional,
}

impl FromStr for Neighborhood {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "antecedents" | "antecedents-only" => Ok(Neighborhood::Antecedents),
            "bidirectional" => Ok(Neighborhood::Bidirectional),
            _ => Err(format!("unknown neighborhood {s:?} (expected antecedents or bidirectional)")),
        }
    }
}

impl fmt::Display for Neighborhood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Neighborhood::Antecedents => "antecedents",
            Neighborhood::Bidirectional => "bidirectional",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GnnConfig {
    pub layers: usize,
    pub weight_mode: WeightMode,
    pub neighborhood: Neighborhood,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig { layers: 1, weight_mode: WeightMode::Soft, neighborhood: Neighborhood::Antecedents }
    }
}

/// Gate shared by all layers.
#[derive(Debug, Clone, Copy)]
pub struct GnnParams {
    /// `[2D, D]`.
    pub gate_w: ParamId,
    pub gate_b: ParamId,
}

impl GnnParams {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, rng: &mut R) -> Result<Self, AutodiffError> {
        Ok(GnnParams {
            gate_w: store.insert_uniform("gnn.gate.w", &[2 * d, d], rng)?,
            gate_b: store.insert("gnn.gate.b", Tensor::zeros(&[d]))?,
        })
    }
}

/// Candidate edges `(i, j)`, `j ∈ Y_i`, row by row in ascending `j`.
pub fn candidate_pairs(candidates: &[Vec<usize>]) -> Vec<(usize, usize)> {
    candidates
        .iter()
        .enumerate()
        .flat_map(|(i, ys)| ys.iter().map(move |&j| (i, j)))
        .collect()
}

/// Per-row `(offset, len)` of each `Y_i` in the flattened pair list.
fn row_ranges(candidates: &[Vec<usize>]) -> Vec<(usize, usize)> {
    let mut off = 0;
    candidates
        .iter()
        .map(|ys| {
            let r = (off, ys.len());
            off += ys.len();
            r
        })
        .collect()
}

/// Index of the best entry of `row`; ties go to the later (nearer) entry.
fn argmax_nearest(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v >= row[best] {
            best = k;
        }
    }
    best
}

/// Edge weights `[P]` aligned with [`candidate_pairs`]; `None` without edges.
pub fn edge_weights(
    g: &mut Graph,
    scores: Option<NodeId>,
    candidates: &[Vec<usize>],
    mode: WeightMode,
) -> Result<Option<NodeId>, AutodiffError> {
    let Some(scores) = scores else { return Ok(None) };
    let ranges = row_ranges(candidates);
    let n_pairs: usize = ranges.iter().map(|r| r.1).sum();
    let vals = g.value(scores).data().to_vec();
    match mode {
        WeightMode::Hard1 | WeightMode::Uniform => {
            let mut w = vec![0.0; n_pairs];
            for &(off, len) in ranges.iter().filter(|r| r.1 > 0) {
                if mode == WeightMode::Hard1 {
                    w[off + argmax_nearest(&vals[off..off + len])] = 1.0;
                } else {
                    w[off..off + len].fill(1.0 / len as f64);
                }
            }
            Ok(Some(g.input(Tensor::vector(w)?)?))
        }
        WeightMode::Soft | WeightMode::TopK(_) => {
            let rows: Vec<(usize, usize)> = ranges.iter().copied().filter(|r| r.1 > 0).collect();
            let width = rows.iter().map(|r| r.1).max().unwrap_or(1);
            let mut index = vec![PAD; rows.len() * width];
            for (r, &(off, len)) in rows.iter().enumerate() {
                let mut keep: Vec<usize> = (0..len).collect();
                if let WeightMode::TopK(k) = mode {
                    keep.sort_by(|&a, &b| vals[off + b].total_cmp(&vals[off + a]).then(b.cmp(&a)));
                    keep.truncate(k);
                }
                for c in keep {
                    index[r * width + c] = off + c;
                }
            }
            let padded = g.gather(scores, index.clone(), -1e30, vec![rows.len(), width])?;
            let soft = g.softmax(padded)?;
            // Back to pair order; pruned top-k entries become exact zeros.
            let mut back = vec![PAD; n_pairs];
            for (r, &(off, len)) in rows.iter().enumerate() {
                for c in 0..len {
                    if index[r * width + c] != PAD {
                        back[off + c] = r * width + c;
                    }
                }
            }
            Ok(Some(g.gather(soft, back, 0.0, vec![n_pairs])?))
        }
    }
}

/// `a = A·V` where `A[i][j] = α_ij` (and `A[j][i] = α_ij` when bidirectional).
pub fn aggregate(
    g: &mut Graph,
    v: NodeId,
    weights: Option<NodeId>,
    candidates: &[Vec<usize>],
    neighborhood: Neighborhood,
) -> Result<NodeId, AutodiffError> {
    let (n, d) = (g.shape(v)[0], g.shape(v)[1]);
    let Some(weights) = weights else {
        return g.input(Tensor::zeros(&[n, d]));
    };
    let mut index = vec![PAD; n * n];
    for (p, (i, j)) in candidate_pairs(candidates).into_iter().enumerate() {
        index[i * n + j] = p;
        if neighborhood == Neighborhood::Bidirectional {
            index[j * n + i] = p;
        }
    }
    let a = g.gather(weights, index, 0.0, vec![n, n])?;
    g.matmul(a, v)
}

/// Returns `(v^t, β^t)`.
pub fn gated_update(
    g: &mut Graph,
    store: &ParamStore,
    p: &GnnParams,
    v: NodeId,
    a: NodeId,
) -> Result<(NodeId, NodeId), AutodiffError> {
    let x = g.concat_cols(&[v, a])?;
    let w = g.param(store, p.gate_w);
    let b = g.param(store, p.gate_b);
    let pre = g.matmul(x, w)?;
    let pre = g.add_bias(pre, b)?;
    let beta = g.sigmoid(pre)?;
    let keep = g.affine(beta, -1.0, 1.0)?;
    let new_part = g.mul(beta, a)?;
    let old_part = g.mul(keep, v)?;
    Ok((g.add(new_part, old_part)?, beta))
}

/// Everything computed by [`refine`]; `v[0]` is the input.
#[derive(Debug, Clone)]
pub struct GnnTrace {
    pub v: Vec<NodeId>,
    pub weights: Vec<Option<NodeId>>,
    pub aggregates: Vec<NodeId>,
    pub gates: Vec<NodeId>,
}

impl GnnTrace {
    pub fn output(&self) -> NodeId {
        *self.v.last().expect("layer 0 is always present")
    }
}

/// Scores used for the edge weights of the next layer: `s(v_i, v_j)` over `Y_i`.
pub fn first_order_scores(
    g: &mut Graph,
    store: &ParamStore,
    scorer: &ScorerParams,
    v: NodeId,
    pairs: &[(usize, usize)],
    feats: &[PairFeatures],
) -> Result<Option<NodeId>, AutodiffError> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let m = mention_scores(g, store, scorer, v)?;
    pair_scores(g, store, scorer, v, m, pairs, feats).map(Some)
}

/// One refinement layer on `v`.
#[allow(clippy::too_many_arguments)]
pub fn refine_layer(
    g: &mut Graph,
    store: &ParamStore,
    scorer: &ScorerParams,
    p: &GnnParams,
    config: &GnnConfig,
    v: NodeId,
    candidates: &[Vec<usize>],
    feats: &[PairFeatures],
) -> Result<(NodeId, Option<NodeId>, NodeId, NodeId), AutodiffError> {
    let pairs = candidate_pairs(candidates);
    let scores = first_order_scores(g, store, scorer, v, &pairs, feats)?;
    let w = edge_weights(g, scores, candidates, config.weight_mode)?;
    let a = aggregate(g, v, w, candidates, config.neighborhood)?;
    let (next, beta) = gated_update(g, store, p, v, a)?;
    Ok((next, w, a, beta))
}

/// Applies `config.layers` layers to `g0`. `feats` is aligned with
/// [`candidate_pairs`]`(candidates)`.
#[allow(clippy::too_many_arguments)]
pub fn refine(
    g: &mut Graph,
    store: &ParamStore,
    scorer: &ScorerParams,
    p: &GnnParams,
    config: &GnnConfig,
    g0: NodeId,
    candidates: &[Vec<usize>],
    feats: &[PairFeatures],
) -> Result<GnnTrace, AutodiffError> {
    let mut trace = GnnTrace { v: vec![g0], weights: vec![], aggregates: vec![], gates: vec![] };
    for _ in 0..config.layers {
        let (v, w, a, beta) = refine_layer(g, store, scorer, p, config, trace.output(), candidates, feats)?;
        trace.v.push(v);
        trace.weights.push(w);
        trace.aggregates.push(a);
        trace.gates.push(beta);
    }
    Ok(trace)
}
