//! Token embeddings, a sentence-level BiLSTM and span representations
//! `g = [state_start ∥ state_end ∥ attended head ∥ width embedding]`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Graph, NodeId, ParamId, ParamStore, Tensor, PAD};
use crate::document::{Document, Span};

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("embedding file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("embedding file has no vectors")]
    Empty,
}

/// Word vectors with an `unk` fallback for unseen words.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: HashMap<String, usize>,
    vectors: Vec<Vec<f64>>,
    unk: Vec<f64>,
    /// When set, unseen words get a deterministic hashed vector instead of `unk`.
    synthetic_seed: Option<u64>,
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn hashed_vector(word: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(word.as_bytes(), seed));
    let r = (3.0 / dim as f64).sqrt();
    (0..dim).map(|_| rng.gen_range(-r..=r)).collect()
}

impl EmbeddingTable {
    /// `word v1 v2 ...` per line; the first line fixes the dimension.
    pub fn parse(text: &str) -> Result<Self, EmbeddingError> {
        let mut dim = None;
        let mut vocab = HashMap::new();
        let mut vectors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let word = parts.next().unwrap_or_default();
            let vals: Result<Vec<f64>, _> = parts.filter(|p| !p.is_empty()).map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| EmbeddingError::Parse { line: i + 1, msg: e.to_string() })?;
            let d = *dim.get_or_insert(vals.len());
            if d == 0 || vals.len() != d {
                return Err(EmbeddingError::Parse {
                    line: i + 1,
                    msg: format!("expected {d} values, found {}", vals.len()),
                });
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::Parse { line: i + 1, msg: "non-finite value".into() });
            }
            if vocab.insert(word.to_string(), vectors.len()).is_some() {
                return Err(EmbeddingError::Parse { line: i + 1, msg: format!("duplicate word {word:?}") });
            }
            vectors.push(vals);
        }
        let dim = dim.ok_or(EmbeddingError::Empty)?;
        Ok(EmbeddingTable { dim, vocab, vectors, unk: vec![0.0; dim], synthetic_seed: None })
    }

    /// Every word maps to a fixed pseudo-random vector determined by
    /// `(word, seed)`; identical strings always share a vector.
    pub fn synthetic(dim: usize, seed: u64) -> Self {
        assert!(dim > 0);
        EmbeddingTable {
            dim,
            vocab: HashMap::new(),
            vectors: Vec::new(),
            unk: vec![0.0; dim],
            synthetic_seed: Some(seed),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lookup(&self, word: &str) -> Vec<f64> {
        match (self.vocab.get(word), self.synthetic_seed) {
            (Some(&r), _) => self.vectors[r].clone(),
            (None, Some(seed)) => hashed_vector(word, self.dim, seed),
            (None, None) => self.unk.clone(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vocab.contains_key(word)
    }
}

/// `[T, d]` matrix of token vectors; `None` for an empty document.
pub fn embed_tokens(doc: &Document, table: &EmbeddingTable) -> Option<Tensor> {
    if doc.tokens().is_empty() {
        return None;
    }
    let data: Vec<f64> = doc.tokens().iter().flat_map(|w| table.lookup(w)).collect();
    Some(Tensor::matrix(doc.tokens().len(), table.dim(), data).expect("consistent dimensions"))
}

/// Width buckets {1, 2, 3, 4, 5-7, 8+}.
pub const N_WIDTH_BUCKETS: usize = 6;

pub fn width_bucket(width: usize) -> usize {
    match width {
        0 | 1 => 0,
        2..=4 => width - 1,
        5..=7 => 4,
        _ => 5,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    /// `[d_in + h, 4h]`, gate order input, forget, output, candidate.
    pub w: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut R) -> Result<Self, AutodiffError> {
        let w = store.insert_uniform(&format!("{name}.w"), &[d_in + hidden, 4 * hidden], rng)?;
        let b = store.insert(&format!("{name}.b"), Tensor::zeros(&[4 * hidden]))?;
        Ok(LstmParams { w, b, hidden })
    }

    /// One direction over the given token order; returns one `[1, h]` state per step.
    fn run(&self, g: &mut Graph, store: &ParamStore, x: NodeId, order: &[usize]) -> Result<Vec<NodeId>, AutodiffError> {
        let h = self.hidden;
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let mut hs = g.input(Tensor::zeros(&[1, h]))?;
        let mut cs = hs;
        let mut out = Vec::with_capacity(order.len());
        for &t in order {
            let xt = g.slice_rows(x, t, 1)?;
            let z = g.concat_cols(&[xt, hs])?;
            let pre = g.matmul(z, w)?;
            let pre = g.add_bias(pre, b)?;
            let i = g.slice_cols(pre, 0, h)?;
            let i = g.sigmoid(i)?;
            let f = g.slice_cols(pre, h, h)?;
            let f = g.sigmoid(f)?;
            let o = g.slice_cols(pre, 2 * h, h)?;
            let o = g.sigmoid(o)?;
            let c_in = g.slice_cols(pre, 3 * h, h)?;
            let c_in = g.tanh(c_in)?;
            let keep = g.mul(f, cs)?;
            let write = g.mul(i, c_in)?;
            cs = g.add(keep, write)?;
            let squashed = g.tanh(cs)?;
            hs = g.mul(o, squashed)?;
            out.push(hs);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
    /// `[2h, 1]` per-token attention logit projection.
    pub attention: ParamId,
    pub attention_bias: ParamId,
    /// `[N_WIDTH_BUCKETS, d_width]`.
    pub width: ParamId,
    pub d_token: usize,
    pub d_width: usize,
}

impl EncoderParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        d_token: usize,
        hidden: usize,
        d_width: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        Ok(EncoderParams {
            forward: LstmParams::new(store, "encoder.lstm_fw", d_token, hidden, rng)?,
            backward: LstmParams::new(store, "encoder.lstm_bw", d_token, hidden, rng)?,
            attention: store.insert_uniform("encoder.attention.w", &[2 * hidden, 1], rng)?,
            attention_bias: store.insert("encoder.attention.b", Tensor::zeros(&[1]))?,
            width: store.insert_uniform("encoder.width", &[N_WIDTH_BUCKETS, d_width], rng)?,
            d_token,
            d_width,
        })
    }

    pub fn state_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    /// Dimension of `g`.
    pub fn span_dim(&self) -> usize {
        2 * self.state_dim() + self.d_token + self.d_width
    }
}

/// `[T, 2h]` contextual states; both directions restart at every sentence.
pub fn bilstm_encode(
    g: &mut Graph,
    store: &ParamStore,
    p: &EncoderParams,
    x: NodeId,
    sentences: &[std::ops::Range<usize>],
) -> Result<NodeId, AutodiffError> {
    let mut rows = Vec::new();
    for s in sentences {
        let fwd_order: Vec<usize> = s.clone().collect();
        let bwd_order: Vec<usize> = s.clone().rev().collect();
        let fw = p.forward.run(g, store, x, &fwd_order)?;
        let mut bw = p.backward.run(g, store, x, &bwd_order)?;
        bw.reverse();
        for (f, b) in fw.into_iter().zip(bw) {
            rows.push(g.concat_cols(&[f, b])?);
        }
    }
    g.concat_rows(&rows)
}

/// `[S, span_dim]` representations of `spans` given states `[T, 2h]` and
/// token vectors `[T, d]`. Also returns the `[S, max_width]` attention
/// weights, padded with zeros beyond each span's width.
pub fn span_representations(
    g: &mut Graph,
    store: &ParamStore,
    p: &EncoderParams,
    states: NodeId,
    x: NodeId,
    spans: &[Span],
) -> Result<(NodeId, NodeId), AutodiffError> {
    let n_tokens = g.shape(x)[0];
    let max_w = spans.iter().map(|s| s.width()).max().unwrap_or(1);
    let starts: Vec<usize> = spans.iter().map(|s| s.start).collect();
    let ends: Vec<usize> = spans.iter().map(|s| s.end).collect();
    let start_states = g.gather_rows(states, &starts)?;
    let end_states = g.gather_rows(states, &ends)?;

    let w = g.param(store, p.attention);
    let b = g.param(store, p.attention_bias);
    let logits = g.matmul(states, w)?;
    let logits = g.add_bias(logits, b)?;
    let mut index = Vec::with_capacity(spans.len() * max_w);
    for s in spans {
        for k in 0..max_w {
            index.push(if k < s.width() { s.start + k } else { PAD });
        }
    }
    let padded = g.gather(logits, index, -1e30, vec![spans.len(), max_w])?;
    let attn = g.softmax(padded)?;

    // Scatter attention into a dense [S, T] matrix and weight the tokens.
    let mut dense = vec![PAD; spans.len() * n_tokens];
    for (r, s) in spans.iter().enumerate() {
        for k in 0..s.width() {
            dense[r * n_tokens + s.start + k] = r * max_w + k;
        }
    }
    let weights = g.gather(attn, dense, 0.0, vec![spans.len(), n_tokens])?;
    let head = g.matmul(weights, x)?;

    let buckets: Vec<usize> = spans.iter().map(|s| width_bucket(s.width())).collect();
    let table = g.param(store, p.width);
    let width = g.gather_rows(table, &buckets)?;
    let rep = g.concat_cols(&[start_states, end_states, head, width])?;

    let mut pad_index = Vec::with_capacity(spans.len() * max_w);
    for (r, s) in spans.iter().enumerate() {
        for k in 0..max_w {
            pad_index.push(if k < s.width() { r * max_w + k } else { PAD });
        }
    }
    let attn_clean = g.gather(attn, pad_index, 0.0, vec![spans.len(), max_w])?;
    Ok((rep, attn_clean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_and_params(d: usize, h: usize) -> (ParamStore, EncoderParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EncoderParams::new(&mut store, d, h, 4, &mut rng).unwrap();
        (store, p)
    }

    #[test]
    fn embedding_file_lookup_and_unk() {
        let t = EmbeddingTable::parse("the 1 2\ncat 3 4\n").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.lookup("cat"), vec![3.0, 4.0]);
        assert_eq!(t.lookup("dog"), vec![0.0, 0.0]);
    }

    #[test]
    fn ragged_embedding_file_rejected() {
        assert!(matches!(
            EmbeddingTable::parse("a 1 2\nb 1 2 3\n"),
            Err(EmbeddingError::Parse { line: 2, .. })
        ));
        assert!(matches!(EmbeddingTable::parse(""), Err(EmbeddingError::Empty)));
    }

    #[test]
    fn synthetic_vectors_depend_only_on_string_and_seed() {
        let a = EmbeddingTable::synthetic(8, 1);
        let b = EmbeddingTable::synthetic(8, 1);
        assert_eq!(a.lookup("Mary"), b.lookup("Mary"));
        assert_ne!(a.lookup("Mary"), a.lookup("John"));
        assert_ne!(a.lookup("Mary"), EmbeddingTable::synthetic(8, 2).lookup("Mary"));
    }

    #[test]
    fn width_buckets() {
        let got: Vec<usize> = (1..=9).map(width_bucket).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 4, 4, 4, 5, 5]);
    }

    #[test]
    fn zero_lstm_gives_zero_states() {
        let (mut store, p) = store_and_params(3, 2);
        for id in [p.forward.w, p.backward.w] {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(3, 3, (0..9).map(|v| v as f64).collect()).unwrap()).unwrap();
        let s = bilstm_encode(&mut g, &store, &p, x, &[0..2, 2..3]).unwrap();
        assert_eq!(g.shape(s), &[3, 4]);
        assert!(g.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sentence_reset_isolates_sentences() {
        let (store, p) = store_and_params(2, 3);
        let run = |data: Vec<f64>| {
            let mut g = Graph::new();
            let x = g.input(Tensor::matrix(4, 2, data).unwrap()).unwrap();
            let s = bilstm_encode(&mut g, &store, &p, x, &[0..2, 2..4]).unwrap();
            g.value(s).clone()
        };
        let a = run(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
        let b = run(vec![9.0, -9.0, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
        assert_eq!(a.row(2), b.row(2));
        assert_eq!(a.row(3), b.row(3));
        assert_ne!(a.row(1), b.row(1));
    }

    #[test]
    fn width_one_head_is_token_vector() {
        let (store, p) = store_and_params(2, 2);
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()).unwrap();
        let st = bilstm_encode(&mut g, &store, &p, x, &[0..3]).unwrap();
        let (rep, attn) = span_representations(&mut g, &store, &p, st, x, &[Span::new(1, 1), Span::new(0, 2)]).unwrap();
        assert_eq!(g.shape(rep), &[2, p.span_dim()]);
        let row = g.value(rep).row(0);
        assert_eq!(&row[8..10], &[3.0, 4.0]);
        let a = g.value(attn);
        assert_eq!(a.row(0), &[1.0, 0.0, 0.0]);
        assert!((a.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
