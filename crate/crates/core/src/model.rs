//! Parameters and the per-document forward pass.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::checkpoint::{self, CheckpointError};
use crate::autodiff::{AutodiffError, Graph, NodeId, ParamStore, PAD};
use crate::candidates::{enumerate_spans, prune_mentions, retained_budget, select_candidate_antecedents};
use crate::config::{Config, DecodeMode};
use crate::decoder::{
    clusters_from_tree, decode_second_order, greedy_decode, AntecedentTree, ArcPairMode, ScoreTable,
};
use crate::document::{Document, Span};
use crate::encoder::{bilstm_encode, embed_tokens, span_representations, EmbeddingTable, EncoderParams};
use crate::gnn::{candidate_pairs, refine, GnnParams, GnnTrace};
use crate::scorer::{coarse_scores, mention_scores, pair_features, pair_scores, sibling_scores, ScorerParams};

#[derive(Debug, Clone)]
pub struct Model {
    config: Config,
    store: ParamStore,
    pub encoder: EncoderParams,
    pub scorer: ScorerParams,
    pub gnn: GnnParams,
}

/// Intermediate results of [`Model::forward`] for one document.
#[derive(Debug, Clone)]
pub struct Forward {
    pub retained: Vec<Span>,
    /// Pruning-time `s_m` of each retained span.
    pub mention_scores: Vec<f64>,
    pub candidates: Vec<Vec<usize>>,
    /// Pairs with a first-order score: `Y_i` pairs, or every `j < i` when
    /// the arc-pair mode needs them.
    pub pairs: Vec<(usize, usize)>,
    pair_index: Vec<usize>,
    /// `[P]` final `s(i,j)` aligned with `pairs`; `None` without pairs.
    pub first: Option<NodeId>,
    pub g0: NodeId,
    pub trace: GnnTrace,
}

impl Forward {
    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    /// Position of `(i, j)` in `pairs`.
    pub fn pair(&self, i: usize, j: usize) -> Option<usize> {
        let p = self.pair_index[i * self.retained.len() + j];
        (j < i && p != PAD).then_some(p)
    }

    /// Final span representations `v^l`.
    pub fn reps(&self) -> NodeId {
        self.trace.output()
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub retained: Vec<Span>,
    pub tree: AntecedentTree,
    pub clusters: Vec<Vec<Span>>,
    pub table: ScoreTable,
}

impl Model {
    pub fn new(config: &Config) -> Result<Self, AutodiffError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(&mut store, config.embedding_dim, config.lstm_hidden, config.width_dim, &mut rng)?;
        let d = encoder.span_dim();
        let scorer = ScorerParams::new(&mut store, d, config.ffnn_hidden, config.feature_dim, &mut rng)?;
        let gnn = GnnParams::new(&mut store, d, &mut rng)?;
        Ok(Model { config: config.clone(), store, encoder, scorer, gnn })
    }

    /// Builds the architecture from `config` and fills it from a checkpoint.
    pub fn load<R: Read>(config: &Config, r: R) -> Result<Self, CheckpointError> {
        let mut m = Model::new(config).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let entries = checkpoint::read_entries(r)?;
        checkpoint::load_into_store(&mut m.store, entries)?;
        Ok(m)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<(), CheckpointError> {
        checkpoint::save_store(&self.store, w)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    /// Changes settings that do not affect parameter shapes.
    pub fn config_mut(&mut self) -> &mut Config {
        &mut self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn embeddings(&self) -> EmbeddingTable {
        EmbeddingTable::synthetic(self.config.embedding_dim, self.config.seed)
    }

    /// Encodes, prunes, refines and scores. `None` when the document has no
    /// tokens or no retained spans.
    pub fn forward(&self, g: &mut Graph, doc: &Document, emb: &EmbeddingTable) -> Result<Option<Forward>, AutodiffError> {
        let cfg = &self.config;
        let Some(tokens) = embed_tokens(doc, emb) else { return Ok(None) };
        if tokens.dims2().1 != self.encoder.d_token {
            return Err(AutodiffError::Shape(format!(
                "embedding dimension {} does not match model dimension {}",
                tokens.dims2().1,
                self.encoder.d_token
            )));
        }
        let x = g.input(tokens)?;
        let states = bilstm_encode(g, &self.store, &self.encoder, x, &doc.sentences())?;
        let spans = enumerate_spans(doc, cfg.max_width);
        let (reps_all, _) = span_representations(g, &self.store, &self.encoder, states, x, &spans)?;
        let m_all = mention_scores(g, &self.store, &self.scorer, reps_all)?;
        let m_vals = g.value(m_all).data().to_vec();
        let keep = prune_mentions(&spans, &m_vals, retained_budget(doc.len(), cfg.spans_ratio));
        if keep.is_empty() {
            return Ok(None);
        }
        let retained: Vec<Span> = keep.iter().map(|&k| spans[k]).collect();
        let mention: Vec<f64> = keep.iter().map(|&k| m_vals[k]).collect();
        let g0 = g.gather_rows(reps_all, &keep)?;
        let coarse = coarse_scores(g.value(g0), &mention, self.store.value(self.scorer.coarse));
        let candidates = select_candidate_antecedents(&coarse, cfg.max_antecedents);

        let y_pairs = candidate_pairs(&candidates);
        let y_feats: Vec<_> = y_pairs.iter().map(|&(i, j)| pair_features(doc, &retained, i, j)).collect();
        let trace = refine(g, &self.store, &self.scorer, &self.gnn, &cfg.gnn(), g0, &candidates, &y_feats)?;
        let reps = trace.output();

        let n = retained.len();
        let pairs = if cfg.arc_pair == ArcPairMode::LinearCombination {
            (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect()
        } else {
            y_pairs
        };
        let mut pair_index = vec![PAD; n * n];
        for (p, &(i, j)) in pairs.iter().enumerate() {
            pair_index[i * n + j] = p;
        }
        let first = if pairs.is_empty() {
            None
        } else {
            let feats: Vec<_> = pairs.iter().map(|&(i, j)| pair_features(doc, &retained, i, j)).collect();
            let m = mention_scores(g, &self.store, &self.scorer, reps)?;
            Some(pair_scores(g, &self.store, &self.scorer, reps, m, &pairs, &feats)?)
        };
        Ok(Some(Forward { retained, mention_scores: mention, candidates, pairs, pair_index, first, g0, trace }))
    }

    /// `[Q]` sibling scores `s_p(i,j,k)` on `v^l`; `None` for no triples.
    pub fn sibling_scores(
        &self,
        g: &mut Graph,
        fwd: &Forward,
        triples: &[(usize, usize, usize)],
    ) -> Result<Option<NodeId>, AutodiffError> {
        if triples.is_empty() {
            return Ok(None);
        }
        sibling_scores(g, &self.store, &self.scorer, fwd.reps(), triples).map(Some)
    }

    /// Decoder table with every admissible sibling score filled in.
    pub fn score_table(&self, g: &mut Graph, fwd: &Forward) -> Result<ScoreTable, AutodiffError> {
        let n = fwd.len();
        let vals = fwd.first.map(|f| g.value(f).data().to_vec()).unwrap_or_default();
        let first: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..i).map(|j| fwd.pair(i, j).map_or(0.0, |p| vals[p])).collect())
            .collect();
        let mut table = ScoreTable::new(first, &fwd.candidates, self.config.gamma, self.config.arc_pair);
        if self.config.arc_pair == ArcPairMode::Learned && self.config.gamma < 1.0 {
            let triples = table.triples();
            if let Some(sp) = self.sibling_scores(g, fwd, &triples)? {
                for (t, &(i, j, k)) in triples.iter().enumerate() {
                    table.set_second(i, j, k, g.value(sp).data()[t]);
                }
            }
        }
        Ok(table)
    }

    pub fn predict(&self, doc: &Document, emb: &EmbeddingTable) -> Result<Prediction, AutodiffError> {
        self.predict_with(doc, emb, self.config.decode_mode)
    }

    pub fn predict_with(&self, doc: &Document, emb: &EmbeddingTable, mode: DecodeMode) -> Result<Prediction, AutodiffError> {
        let mut g = Graph::new();
        let Some(fwd) = self.forward(&mut g, doc, emb)? else {
            return Ok(Prediction {
                retained: vec![],
                tree: AntecedentTree::all_dummy(0),
                clusters: vec![],
                table: ScoreTable::new(vec![], &[], self.config.gamma, self.config.arc_pair),
            });
        };
        let table = if mode == DecodeMode::Greedy {
            let n = fwd.len();
            let vals = fwd.first.map(|f| g.value(f).data().to_vec()).unwrap_or_default();
            let first = (0..n)
                .map(|i| (0..i).map(|j| fwd.pair(i, j).map_or(0.0, |p| vals[p])).collect())
                .collect();
            ScoreTable::new(first, &fwd.candidates, self.config.gamma, self.config.arc_pair)
        } else {
            self.score_table(&mut g, &fwd)?
        };
        let tree = match mode {
            DecodeMode::Greedy => greedy_decode(&table),
            DecodeMode::SecondOrder => {
                let iters = (self.config.max_iters > 0).then_some(self.config.max_iters);
                decode_second_order(&table, iters)
            }
        };
        let clusters = clusters_from_tree(&tree)
            .into_iter()
            .map(|c| c.into_iter().map(|i| fwd.retained[i]).collect())
            .collect();
        Ok(Prediction { retained: fwd.retained, tree, clusters, table })
    }
}
