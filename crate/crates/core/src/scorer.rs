//! Mention, antecedent and sibling scorers.
//!
//! `s(i,j) = s_m(i) + s_m(j) + s_a(i,j)` with `s_m = w_m·FFNN_m(g_i)` and
//! `s_a = w_a·FFNN_a([g_i, g_j, g_i∘g_j, φ(i,j)])`; the sibling score is
//! `s_p = w_p·FFNN_p([g_i, g_j, g_k])`.

use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::document::{genre_id, Document, Span, N_GENRES};

/// ReLU feed-forward network followed by a bias-free scalar projection.
#[derive(Debug, Clone)]
pub struct Ffnn {
    pub layers: Vec<(ParamId, ParamId)>,
    pub out: ParamId,
}

impl Ffnn {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let mut layers = Vec::with_capacity(depth);
        let mut d = d_in;
        for l in 0..depth {
            let w = store.insert_uniform(&format!("{name}.l{l}.w"), &[d, hidden], rng)?;
            let b = store.insert(&format!("{name}.l{l}.b"), Tensor::zeros(&[hidden]))?;
            layers.push((w, b));
            d = hidden;
        }
        let out = store.insert_uniform(&format!("{name}.out"), &[d, 1], rng)?;
        Ok(Ffnn { layers, out })
    }

    /// Row-wise scores `[N]` for inputs `[N, d_in]`.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, AutodiffError> {
        let mut h = x;
        for &(w, b) in &self.layers {
            let w = g.param(store, w);
            let b = g.param(store, b);
            h = g.matmul(h, w)?;
            h = g.add_bias(h, b)?;
            h = g.relu(h)?;
        }
        let out = g.param(store, self.out);
        let s = g.matmul(h, out)?;
        let n = g.shape(s)[0];
        g.reshape(s, vec![n])
    }
}

pub const N_DISTANCE_BUCKETS: usize = 9;

/// Buckets {1, 2, 3, 4, [5,8), [8,16), [16,32), [32,64), 64+} of a positive gap.
pub fn distance_bucket(gap: usize) -> usize {
    match gap {
        0 | 1 => 0,
        2..=4 => gap - 1,
        5..=7 => 4,
        8..=15 => 5,
        16..=31 => 6,
        32..=63 => 7,
        _ => 8,
    }
}

/// Embedding-table indices of `φ(i,j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairFeatures {
    pub same_speaker: usize,
    pub genre: usize,
    pub distance: usize,
}

/// `j < i` index the retained spans; the gap is measured in retained order.
/// Speakers are compared at each span's first token.
pub fn pair_features(doc: &Document, retained: &[Span], i: usize, j: usize) -> PairFeatures {
    assert!(j < i, "antecedent must precede the anaphor");
    let sp = doc.speakers();
    PairFeatures {
        same_speaker: usize::from(sp[retained[i].start] == sp[retained[j].start]),
        genre: genre_id(doc.genre()),
        distance: distance_bucket(i - j),
    }
}

#[derive(Debug, Clone)]
pub struct ScorerParams {
    pub mention: Ffnn,
    pub antecedent: Ffnn,
    pub sibling: Ffnn,
    pub speaker: ParamId,
    pub genre: ParamId,
    pub distance: ParamId,
    /// Coarse bilinear factor used only to select `Y_i`.
    pub coarse: ParamId,
    pub d_span: usize,
    pub d_feature: usize,
}

impl ScorerParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        d_span: usize,
        hidden: usize,
        d_feature: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        Ok(ScorerParams {
            mention: Ffnn::new(store, "scorer.mention", d_span, hidden, 2, rng)?,
            antecedent: Ffnn::new(store, "scorer.antecedent", 3 * d_span + 3 * d_feature, hidden, 2, rng)?,
            sibling: Ffnn::new(store, "scorer.sibling", 3 * d_span, hidden, 2, rng)?,
            speaker: store.insert_uniform("scorer.phi.speaker", &[2, d_feature], rng)?,
            genre: store.insert_uniform("scorer.phi.genre", &[N_GENRES, d_feature], rng)?,
            distance: store.insert_uniform("scorer.phi.distance", &[N_DISTANCE_BUCKETS, d_feature], rng)?,
            coarse: store.insert("scorer.coarse", Tensor::zeros(&[d_span, d_span]))?,
            d_span,
            d_feature,
        })
    }
}

/// `s_m` for every row of `reps`, shape `[S]`.
pub fn mention_scores(g: &mut Graph, store: &ParamStore, p: &ScorerParams, reps: NodeId) -> Result<NodeId, AutodiffError> {
    p.mention.apply(g, store, reps)
}

/// `[P, d_feature * 3]` embedded features.
fn embed_features(g: &mut Graph, store: &ParamStore, p: &ScorerParams, feats: &[PairFeatures]) -> Result<NodeId, AutodiffError> {
    let sp: Vec<usize> = feats.iter().map(|f| f.same_speaker).collect();
    let ge: Vec<usize> = feats.iter().map(|f| f.genre).collect();
    let di: Vec<usize> = feats.iter().map(|f| f.distance).collect();
    let t = g.param(store, p.speaker);
    let a = g.gather_rows(t, &sp)?;
    let t = g.param(store, p.genre);
    let b = g.gather_rows(t, &ge)?;
    let t = g.param(store, p.distance);
    let c = g.gather_rows(t, &di)?;
    g.concat_cols(&[a, b, c])
}

/// `s_a(i,j)` for each `(i, j)` in `pairs`, shape `[P]`.
pub fn antecedent_scores(
    g: &mut Graph,
    store: &ParamStore,
    p: &ScorerParams,
    reps: NodeId,
    pairs: &[(usize, usize)],
    feats: &[PairFeatures],
) -> Result<NodeId, AutodiffError> {
    assert_eq!(pairs.len(), feats.len());
    let is: Vec<usize> = pairs.iter().map(|&(i, _)| i).collect();
    let js: Vec<usize> = pairs.iter().map(|&(_, j)| j).collect();
    let gi = g.gather_rows(reps, &is)?;
    let gj = g.gather_rows(reps, &js)?;
    let prod = g.mul(gi, gj)?;
    let phi = embed_features(g, store, p, feats)?;
    let x = g.concat_cols(&[gi, gj, prod, phi])?;
    p.antecedent.apply(g, store, x)
}

/// `s(i,j) = s_m(i) + s_m(j) + s_a(i,j)` for each pair, shape `[P]`.
pub fn pair_scores(
    g: &mut Graph,
    store: &ParamStore,
    p: &ScorerParams,
    reps: NodeId,
    mention: NodeId,
    pairs: &[(usize, usize)],
    feats: &[PairFeatures],
) -> Result<NodeId, AutodiffError> {
    let is: Vec<usize> = pairs.iter().map(|&(i, _)| i).collect();
    let js: Vec<usize> = pairs.iter().map(|&(_, j)| j).collect();
    let mi = g.gather_rows(mention, &is)?;
    let mj = g.gather_rows(mention, &js)?;
    let sa = antecedent_scores(g, store, p, reps, pairs, feats)?;
    let m = g.add(mi, mj)?;
    g.add(m, sa)
}

/// `s_p(i,j,k)` for each triple with a real sibling `k`, shape `[Q]`.
pub fn sibling_scores(
    g: &mut Graph,
    store: &ParamStore,
    p: &ScorerParams,
    reps: NodeId,
    triples: &[(usize, usize, usize)],
) -> Result<NodeId, AutodiffError> {
    let is: Vec<usize> = triples.iter().map(|t| t.0).collect();
    let js: Vec<usize> = triples.iter().map(|t| t.1).collect();
    let ks: Vec<usize> = triples.iter().map(|t| t.2).collect();
    let gi = g.gather_rows(reps, &is)?;
    let gj = g.gather_rows(reps, &js)?;
    let gk = g.gather_rows(reps, &ks)?;
    let x = g.concat_cols(&[gi, gj, gk])?;
    p.sibling.apply(g, store, x)
}

/// `s_c(i,j) = s_m(i) + s_m(j) + g_iᵀ W_c g_j` for all `j < i`, from values.
pub fn coarse_scores(reps: &Tensor, mention: &[f64], w_c: &Tensor) -> Vec<Vec<f64>> {
    let (n, d) = reps.dims2();
    let wc = w_c.data();
    let projected: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let gi = reps.row(i);
            (0..d).map(|c| (0..d).map(|r| gi[r] * wc[r * d + c]).sum()).collect()
        })
        .collect();
    (0..n)
        .map(|i| {
            (0..i)
                .map(|j| {
                    let bil: f64 = projected[i].iter().zip(reps.row(j)).map(|(a, b)| a * b).sum();
                    mention[i] + mention[j] + bil
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distance_buckets() {
        let cases = [(1, 0), (2, 1), (4, 3), (5, 4), (7, 4), (8, 5), (15, 5), (16, 6), (40, 7), (63, 7), (64, 8), (500, 8)];
        for (gap, b) in cases {
            assert_eq!(distance_bucket(gap), b, "gap {gap}");
        }
    }

    #[test]
    fn speaker_match_uses_first_tokens() {
        let d = Document::new(
            "d",
            vec!["a".into(), "b".into(), "c".into()],
            vec![0],
            vec!["x".into(), "y".into(), "x".into()],
            "nw",
            vec![],
        )
        .unwrap();
        let spans = [Span::new(0, 1), Span::new(1, 1), Span::new(2, 2)];
        assert_eq!(pair_features(&d, &spans, 2, 0).same_speaker, 1);
        assert_eq!(pair_features(&d, &spans, 2, 1).same_speaker, 0);
        assert_eq!(pair_features(&d, &spans, 1, 0).distance, 0);
        assert_eq!(pair_features(&d, &spans, 1, 0).genre, 3);
    }

    #[test]
    fn zero_projection_zeroes_scores() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ScorerParams::new(&mut store, 4, 5, 2, &mut rng).unwrap();
        store.value_mut(p.mention.out).data_mut().fill(0.0);
        let mut g = Graph::new();
        let reps = g.input(Tensor::matrix(2, 4, (0..8).map(|v| v as f64 * 0.1).collect()).unwrap()).unwrap();
        let m = mention_scores(&mut g, &store, &p, reps).unwrap();
        assert_eq!(g.value(m).data(), &[0.0, 0.0]);
    }

    #[test]
    fn coarse_with_zero_bilinear_is_mention_sum() {
        let reps = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = coarse_scores(&reps, &[1.0, 2.0, 4.0], &Tensor::zeros(&[2, 2]));
        assert_eq!(c, vec![vec![], vec![3.0], vec![5.0, 6.0]]);
        let c = coarse_scores(&reps, &[0.0; 3], &Tensor::eye(2));
        assert_eq!(c[2], vec![1.0 * 5.0 + 2.0 * 6.0, 3.0 * 5.0 + 4.0 * 6.0]);
    }
}
