//! File-level operations shared by the command line and the C interface.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::checkpoint::CheckpointError;
use crate::config::{Config, ConfigError};
use crate::document::conll::parse_conll_skeleton;
use crate::document::jsonl::{gold_record, parse_cluster_jsonl, parse_jsonl_corpus, ClusterRecord};
use crate::document::Document;
use crate::encoder::EmbeddingTable;
use crate::metrics::{ClusterPartition, Report, ScoreCounts};
use crate::model::Model;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {msg}")]
    Input { path: String, msg: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("oracle check failed: {0}")]
    Oracle(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: String, source: CheckpointError },
    #[error("document ids differ: {0}")]
    DocMismatch(String),
    #[error("{0}")]
    Internal(String),
}

impl AppError {
    /// 0 ok, 1 oracle mismatch, 2 bad input or usage, 3 divergence,
    /// 4 checkpoint mismatch, 5 document id mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Oracle(_) => 1,
            AppError::Usage(_) | AppError::Input { .. } | AppError::Config(_) | AppError::Internal(_) => 2,
            AppError::Train(TrainError::Divergence { .. }) => 3,
            AppError::Train(_) => 2,
            AppError::Checkpoint { .. } => 4,
            AppError::DocMismatch(_) => 5,
        }
    }
}

fn input_err(path: &Path, msg: impl ToString) -> AppError {
    AppError::Input { path: path.display().to_string(), msg: msg.to_string() }
}

pub fn read_text(path: &Path) -> Result<String, AppError> {
    fs::read_to_string(path).map_err(|e| input_err(path, e))
}

fn is_jsonl(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"))
}

/// `.jsonl` documents, anything else is read as CoNLL columns.
pub fn parse_corpus(text: &str, jsonl: bool) -> Result<Vec<Document>, String> {
    let r = if jsonl { parse_jsonl_corpus(text) } else { parse_conll_skeleton(text) };
    r.map_err(|e| e.to_string())
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>, AppError> {
    parse_corpus(&read_text(path)?, is_jsonl(path)).map_err(|e| input_err(path, e))
}

/// Cluster records from cluster JSONL, document JSONL or CoNLL.
pub fn parse_clusters(text: &str, jsonl: bool) -> Result<Vec<ClusterRecord>, String> {
    if jsonl {
        parse_cluster_jsonl(text).map_err(|e| e.to_string())
    } else {
        Ok(parse_conll_skeleton(text).map_err(|e| e.to_string())?.iter().map(gold_record).collect())
    }
}

pub fn load_clusters(path: &Path) -> Result<Vec<ClusterRecord>, AppError> {
    parse_clusters(&read_text(path)?, is_jsonl(path)).map_err(|e| input_err(path, e))
}

pub fn load_embeddings(path: Option<&Path>, config: &Config) -> Result<EmbeddingTable, AppError> {
    let Some(path) = path else {
        return Ok(EmbeddingTable::synthetic(config.embedding_dim, config.seed));
    };
    let t = EmbeddingTable::parse(&read_text(path)?).map_err(|e| input_err(path, e))?;
    if t.dim() != config.embedding_dim {
        return Err(input_err(
            path,
            format!("vectors have dimension {}, model.embedding_dim is {}", t.dim(), config.embedding_dim),
        ));
    }
    Ok(t)
}

/// Settings saved next to a checkpoint.
pub fn config_sidecar(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), AppError> {
    let ck = |source| AppError::Checkpoint { path: path.display().to_string(), source };
    let f = fs::File::create(path).map_err(|e| ck(e.into()))?;
    model.save(std::io::BufWriter::new(f)).map_err(ck)?;
    fs::write(config_sidecar(path), model.config().to_text()).map_err(|e| ck(e.into()))
}

/// Defaults, then the sidecar settings (if present), then `config_text`,
/// then `overrides`.
pub fn load_model<'a>(
    path: &Path,
    config_text: Option<&str>,
    overrides: impl IntoIterator<Item = &'a str>,
) -> Result<Model, AppError> {
    let mut config = Config::default();
    let side = config_sidecar(path);
    if side.exists() {
        config.apply_text(&read_text(&side)?)?;
    }
    if let Some(t) = config_text {
        config.apply_text(t)?;
    }
    config.apply_overrides(overrides)?;
    let bytes = fs::read(path).map_err(|e| input_err(path, e))?;
    Model::load(&config, &bytes[..]).map_err(|source| AppError::Checkpoint { path: path.display().to_string(), source })
}

/// One cluster JSONL line per document, in input order.
pub fn predict_records(model: &Model, docs: &[Document], emb: &EmbeddingTable) -> Result<Vec<ClusterRecord>, AppError> {
    use rayon::prelude::*;
    docs.par_iter()
        .map(|d| {
            let p = model.predict(d, emb).map_err(|e| AppError::Internal(format!("{}: {e}", d.doc_id())))?;
            Ok(ClusterRecord::new(d.doc_id(), &p.clusters))
        })
        .collect()
}

pub fn records_to_jsonl(records: &[ClusterRecord]) -> String {
    records.iter().map(|r| r.to_line() + "\n").collect()
}

/// Per-document and corpus counts of `response` against `key`. Both must
/// cover exactly the same document ids.
pub fn score_records(key: &[ClusterRecord], response: &[ClusterRecord]) -> Result<(Vec<(String, ScoreCounts)>, Report), AppError> {
    let index = |rs: &[ClusterRecord], what: &str| -> Result<BTreeMap<String, ClusterPartition>, AppError> {
        let mut m = BTreeMap::new();
        for r in rs {
            let p = ClusterPartition::new(r.spans()).map_err(|e| AppError::Usage(format!("{what} {}: {e}", r.doc_id)))?;
            if m.insert(r.doc_id.clone(), p).is_some() {
                return Err(AppError::DocMismatch(format!("{what} lists {} twice", r.doc_id)));
            }
        }
        Ok(m)
    };
    let k = index(key, "key")?;
    let r = index(response, "response")?;
    let missing: Vec<&String> = k.keys().filter(|d| !r.contains_key(*d)).collect();
    let extra: Vec<&String> = r.keys().filter(|d| !k.contains_key(*d)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(AppError::DocMismatch(format!("missing from response {missing:?}, not in key {extra:?}")));
    }
    let mut total = ScoreCounts::default();
    let mut per_doc = Vec::with_capacity(k.len());
    for (id, kp) in &k {
        let c = ScoreCounts::for_document(kp, &r[id]);
        total.add(&c);
        per_doc.push((id.clone(), c));
    }
    Ok((per_doc, total.report()))
}
