//! Per-document losses and the training loop.

pub mod loss;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{AutodiffError, Gradients, Graph, NodeId};
use crate::candidates::Reachability;
use crate::decoder::ArcPairMode;
use crate::document::{gold_antecedent_sets, Document};
use crate::encoder::EmbeddingTable;
use crate::metrics::{ClusterPartition, Report, ScoreCounts};
use crate::model::Model;

pub use loss::{
    loss_base, loss_sibling, sibling_supervision, sibling_triples, total_loss, total_loss_value, PairLookup,
    SiblingCandidate, SiblingSupervision,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged on document {doc_id} in epoch {epoch}: {detail}")]
    Divergence { doc_id: String, epoch: usize, detail: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("training corpus is empty")]
    EmptyCorpus,
}

/// Loss of one document, built on a graph.
#[derive(Debug, Clone)]
pub struct DocLoss {
    pub total: NodeId,
    pub base: f64,
    pub sibling: f64,
    pub reachability: Reachability,
}

/// `None` when the document has no retained spans.
pub fn document_loss(model: &Model, g: &mut Graph, doc: &Document, emb: &EmbeddingTable) -> Result<Option<DocLoss>, AutodiffError> {
    let Some(fwd) = model.forward(g, doc, emb)? else { return Ok(None) };
    let cfg = model.config();
    let gold = gold_antecedent_sets(doc, &fwd.retained, &fwd.candidates);
    let lookup = PairLookup::from_pairs(fwd.len(), &fwd.pairs);
    let base = loss_base(g, fwd.first, &lookup, &fwd.candidates, &gold)?;
    let sib = if cfg.lambda > 0.0 {
        let sup = sibling_supervision(&fwd.candidates, &gold, cfg.sibling_cap());
        let second = if cfg.arc_pair == ArcPairMode::Learned {
            model.sibling_scores(g, &fwd, &sibling_triples(&sup))?
        } else {
            None
        };
        Some(loss_sibling(g, fwd.first, second, &lookup, &sup, cfg.gamma, cfg.arc_pair)?)
    } else {
        None
    };
    let total = total_loss(g, base, sib, cfg.lambda)?;
    Ok(Some(DocLoss {
        total,
        base: g.value(base).item(),
        sibling: sib.map_or(0.0, |s| g.value(s).item()),
        reachability: Reachability::measure(doc, &fwd.retained, &fwd.candidates),
    }))
}

/// Loss value, gradients and reachability for one document.
pub fn document_gradients(
    model: &Model,
    doc: &Document,
    emb: &EmbeddingTable,
) -> Result<Option<(f64, Gradients, Reachability)>, AutodiffError> {
    let mut g = Graph::new();
    let Some(l) = document_loss(model, &mut g, doc, emb)? else { return Ok(None) };
    let grads = g.backward(l.total, model.store().len())?;
    Ok(Some((g.value(l.total).item(), grads, l.reachability)))
}

/// Corpus-level metrics of the model's predictions.
pub fn evaluate(model: &Model, docs: &[Document], emb: &EmbeddingTable) -> Result<Report, AutodiffError> {
    let per_doc: Result<Vec<ScoreCounts>, AutodiffError> = docs
        .par_iter()
        .map(|d| {
            let p = model.predict(d, emb)?;
            let key = ClusterPartition::new(d.clusters().to_vec()).expect("validated document");
            let resp = ClusterPartition::new(p.clusters).expect("tree components are disjoint");
            Ok(ScoreCounts::for_document(&key, &resp))
        })
        .collect();
    let mut total = ScoreCounts::default();
    for c in per_doc? {
        total.add(&c);
    }
    Ok(total.report())
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub documents: usize,
    pub skipped: usize,
    pub learning_rate: f64,
    pub gold_reachability: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_avg_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_avg_f1: Option<f64>,
}

impl EpochLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data")
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Evaluate on the training corpus every this many epochs.
    pub train_eval_every: Option<usize>,
    /// Stop once a training evaluation reaches this Avg F1.
    pub stop_at_train_f1: Option<f64>,
}

/// Runs `config.epochs` epochs of shuffled mini-batch Adam. Documents of
/// one batch are differentiated in parallel against the same parameters and
/// their gradients summed in batch order, so results do not depend on the
/// thread count.
pub fn train(
    model: &mut Model,
    corpus: &[Document],
    dev: Option<&[Document]>,
    emb: &EmbeddingTable,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let cfg = model.config().clone();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9));
        order.shuffle(&mut rng);
        let mut adam = cfg.adam();
        adam.learning_rate *= cfg.decay.powi(epoch as i32 - 1);
        let (mut loss_sum, mut documents, mut skipped) = (0.0, 0, 0);
        let mut reach = Reachability::default();
        for batch in order.chunks(cfg.batch) {
            let results: Vec<_> = batch
                .par_iter()
                .map(|&d| (d, document_gradients(model, &corpus[d], emb)))
                .collect();
            let mut sum: Option<Gradients> = None;
            for (d, r) in results {
                let doc_id = corpus[d].doc_id().to_string();
                let diverged = |detail: String| TrainError::Divergence { doc_id: doc_id.clone(), epoch, detail };
                match r {
                    Err(AutodiffError::NonFinite(what)) => return Err(diverged(format!("non-finite {what}"))),
                    Err(e) => return Err(e.into()),
                    Ok(None) => skipped += 1,
                    Ok(Some((loss, grads, rc))) => {
                        if !loss.is_finite() || !grads.is_finite() {
                            return Err(diverged(format!("loss {loss}")));
                        }
                        loss_sum += loss;
                        documents += 1;
                        reach.add(rc);
                        match sum.as_mut() {
                            None => sum = Some(grads),
                            Some(s) => s.accumulate(&grads),
                        }
                    }
                }
            }
            if let Some(mut grads) = sum {
                let norm = grads.global_norm();
                if cfg.clip > 0.0 && norm > cfg.clip {
                    grads.scale(cfg.clip / norm);
                }
                model.store_mut().adam_step(&grads, &adam).map_err(|e| TrainError::Divergence {
                    doc_id: batch.iter().map(|&d| corpus[d].doc_id()).collect::<Vec<_>>().join(","),
                    epoch,
                    detail: e.to_string(),
                })?;
            }
        }
        let train_avg_f1 = match opts.train_eval_every {
            Some(k) if k > 0 && (epoch % k == 0 || epoch == cfg.epochs) => Some(evaluate(model, corpus, emb)?.avg_f1),
            _ => None,
        };
        let dev_avg_f1 = dev.map(|d| evaluate(model, d, emb)).transpose()?.map(|r| r.avg_f1);
        let log = EpochLog {
            epoch,
            loss: loss_sum,
            documents,
            skipped,
            learning_rate: adam.learning_rate,
            gold_reachability: reach.ratio(),
            train_avg_f1,
            dev_avg_f1,
        };
        log::info!("{}", log.to_json());
        on_epoch(&log);
        logs.push(log);
        if let (Some(target), Some(f)) = (opts.stop_at_train_f1, train_avg_f1) {
            if f >= target {
                break;
            }
        }
    }
    Ok(logs)
}
