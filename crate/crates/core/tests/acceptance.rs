//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.
//! `cargo test --test acceptance -- <substring>` runs a subset.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coref::autodiff::{Gradients, Graph, NodeId, ParamId, ParamStore, Tensor};
use coref::candidates::{enumerate_spans, prune_mentions, retained_budget, select_candidate_antecedents};
use coref::config::{Config, DecodeMode};
use coref::decoder::{decode_second_order, eisner_second_order, ArcPairMode, ScoreTable};
use coref::document::conll::parse_conll_skeleton;
use coref::document::jsonl::{parse_jsonl_document, serialize_document};
use coref::document::{gold_antecedent_sets, Document, GoldAnnotation, Span};
use coref::encoder::{bilstm_encode, embed_tokens, span_representations, EncoderParams};
use coref::gnn::{
    aggregate, candidate_pairs, edge_weights, gated_update, refine, refine_layer, GnnConfig, GnnParams, Neighborhood,
    WeightMode,
};
use coref::metrics::{b_cubed, ceaf_phi4, max_weight_assignment, muc, phi4, ClusterPartition};
use coref::model::Model;
use coref::scorer::{coarse_scores, mention_scores, pair_features, pair_scores, Ffnn};
use coref::synthetic::{exact_match_corpus, SyntheticSpec};
use coref::trainer::{
    document_gradients, evaluate, loss_base, loss_sibling, sibling_supervision, sibling_triples,
    total_loss, train, PairLookup, TrainOptions,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || format!("{what} took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()))
}

// ---------------------------------------------------------------------------
// 1. Gradients against central finite differences
// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-6;
const FD_FLOOR: f64 = 1e-4;
const FD_TOL: f64 = 1e-4;

type LossFn<'a> = dyn Fn(&ParamStore) -> (f64, Gradients) + 'a;

/// Max over every coordinate of every parameter of
/// `|a - n| / max(|a|, |n|, FD_FLOOR)`.
fn fd_max_rel_err(store: &ParamStore, f: &LossFn) -> (f64, String) {
    let (_, grads) = f(store);
    let mut work = store.clone();
    let mut worst = (0.0, String::new());
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for k in 0..store.value(id).len() {
            let orig = work.value(id).data()[k];
            work.value_mut(id).data_mut()[k] = orig + FD_STEP;
            let up = f(&work).0;
            work.value_mut(id).data_mut()[k] = orig - FD_STEP;
            let down = f(&work).0;
            work.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
            let e = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
            if e > worst.0 {
                worst = (e, format!("{}[{k}] analytic {analytic:e} numeric {numeric:e}", store.name(id)));
            }
        }
    }
    worst
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Every parameter redrawn, so no ReLU input or score tie sits exactly on a
/// boundary.
fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for x in store.value_mut(id).data_mut() {
            *x = rng.gen_range(-0.8..0.8);
        }
    }
}

fn dot_loss(g: &mut Graph, x: NodeId, c: &Tensor) -> NodeId {
    let c = g.input(c.clone()).unwrap();
    let p = g.mul(x, c).unwrap();
    g.sum(p).unwrap()
}

fn run_loss(store: &ParamStore, build: &dyn Fn(&mut Graph, &ParamStore) -> NodeId) -> (f64, Gradients) {
    let mut g = Graph::new();
    let l = build(&mut g, store);
    (g.value(l).item(), g.backward(l, store.len()).unwrap())
}

fn random_candidates(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<Vec<usize>> {
    (0..n).map(|i| (0..i).filter(|_| rng.gen_bool(p)).collect()).collect()
}

fn random_gold(rng: &mut ChaCha8Rng, candidates: &[Vec<usize>]) -> GoldAnnotation {
    let cluster_of: Vec<Option<usize>> =
        (0..candidates.len()).map(|_| if rng.gen_bool(0.7) { Some(rng.gen_range(0..3)) } else { None }).collect();
    let antecedents = candidates
        .iter()
        .enumerate()
        .map(|(i, ys)| ys.iter().copied().filter(|&j| cluster_of[i].is_some() && cluster_of[j] == cluster_of[i]).collect())
        .collect();
    GoldAnnotation { antecedents, cluster_of }
}

fn gradient_instance(kind: &str, seed: u64) -> (ParamStore, Box<dyn Fn(&mut Graph, &ParamStore) -> NodeId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    match kind {
        "ffnn" => {
            let (n, d) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let f = Ffnn::new(&mut store, "f", d, rng.gen_range(1..5), rng.gen_range(1..3), &mut rng).unwrap();
            let x = store.insert("x", random_tensor(&mut rng, &[n, d], 1.0)).unwrap();
            let c = random_tensor(&mut rng, &[n], 1.0);
            randomize(&mut store, &mut rng);
            (store, Box::new(move |g, s| {
                let xn = g.param(s, x);
                let y = f.apply(g, s, xn).unwrap();
                dot_loss(g, y, &c)
            }))
        }
        "bilstm+span-attention" => {
            let (t, d) = (rng.gen_range(2..7), rng.gen_range(1..4));
            let p = EncoderParams::new(&mut store, d, rng.gen_range(1..4), 2, &mut rng).unwrap();
            let x = store.insert("x", random_tensor(&mut rng, &[t, d], 1.0)).unwrap();
            let cut = rng.gen_range(1..t);
            let sentences = vec![0..cut, cut..t];
            let doc = Document::plain("g", &vec!["w"; t]);
            let spans = enumerate_spans(&doc, 3);
            let c_states = random_tensor(&mut rng, &[t, p.state_dim()], 1.0);
            let c_reps = random_tensor(&mut rng, &[spans.len(), p.span_dim()], 1.0);
            randomize(&mut store, &mut rng);
            (store, Box::new(move |g, s| {
                let xn = g.param(s, x);
                let h = bilstm_encode(g, s, &p, xn, &sentences).unwrap();
                let (rep, _) = span_representations(g, s, &p, h, xn, &spans).unwrap();
                let a = dot_loss(g, h, &c_states);
                let b = dot_loss(g, rep, &c_reps);
                g.add(a, b).unwrap()
            }))
        }
        "gnn-gate+aggregation" => {
            let (n, d) = (rng.gen_range(2..6), rng.gen_range(1..4));
            let cands = random_candidates(&mut rng, n, 0.7);
            let n_pairs = candidate_pairs(&cands).len();
            let gp = GnnParams::new(&mut store, d, &mut rng).unwrap();
            let v = store.insert("v", random_tensor(&mut rng, &[n, d], 1.0)).unwrap();
            let sc = store.insert("scores", random_tensor(&mut rng, &[n_pairs.max(1)], 2.0)).unwrap();
            let hood = if rng.gen_bool(0.5) { Neighborhood::Antecedents } else { Neighborhood::Bidirectional };
            let c = random_tensor(&mut rng, &[n, d], 1.0);
            randomize(&mut store, &mut rng);
            (store, Box::new(move |g, s| {
                let vn = g.param(s, v);
                let scores = (n_pairs > 0).then(|| {
                    let all = g.param(s, sc);
                    prefix(g, all, n_pairs)
                });
                let w = edge_weights(g, scores, &cands, WeightMode::Soft).unwrap();
                let a = aggregate(g, vn, w, &cands, hood).unwrap();
                let (next, _) = gated_update(g, s, &gp, vn, a).unwrap();
                dot_loss(g, next, &c)
            }))
        }
        "soft-weights" | "topk-weights" => {
            let n = rng.gen_range(2..8);
            let cands = random_candidates(&mut rng, n, 0.8);
            let n_pairs = candidate_pairs(&cands).len().max(1);
            let mode = if kind == "soft-weights" { WeightMode::Soft } else { WeightMode::TopK(rng.gen_range(1..4)) };
            let sc = store.insert("scores", random_tensor(&mut rng, &[n_pairs], 2.0)).unwrap();
            let c = random_tensor(&mut rng, &[n_pairs], 1.0);
            (store, Box::new(move |g, s| {
                let scores = g.param(s, sc);
                if candidate_pairs(&cands).is_empty() {
                    return g.sum(scores).unwrap();
                }
                let w = edge_weights(g, Some(scores), &cands, mode).unwrap().unwrap();
                dot_loss(g, w, &c)
            }))
        }
        "base-loss" => {
            let n = rng.gen_range(1..8);
            let cands = random_candidates(&mut rng, n, 0.7);
            let gold = random_gold(&mut rng, &cands);
            let pairs = candidate_pairs(&cands);
            let lookup = PairLookup::from_pairs(n, &pairs);
            let first = store.insert("first", random_tensor(&mut rng, &[pairs.len().max(1)], 3.0)).unwrap();
            (store, Box::new(move |g, s| {
                let f = g.param(s, first);
                let f = (!pairs.is_empty()).then(|| prefix(g, f, pairs.len()));
                let base = loss_base(g, f, &lookup, &cands, &gold).unwrap();
                let all = g_sum_param(g, s, first);
                let zero = g.scale(all, 0.0).unwrap();
                let l = total_loss(g, base, None, 0.0).unwrap();
                g.add(l, zero).unwrap()
            }))
        }
        "sibling-loss-learned" | "sibling-loss-linear" => {
            let n = rng.gen_range(2..8);
            let cands = random_candidates(&mut rng, n, 0.8);
            let gold = random_gold(&mut rng, &cands);
            let linear = kind == "sibling-loss-linear";
            let pairs: Vec<(usize, usize)> = if linear {
                (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect()
            } else {
                candidate_pairs(&cands)
            };
            let lookup = PairLookup::from_pairs(n, &pairs);
            let sup = sibling_supervision(&cands, &gold, None);
            let triples = sibling_triples(&sup);
            let gamma = [0.0, 0.5, 0.8][rng.gen_range(0..3)];
            let lambda = rng.gen_range(0.1..1.0);
            let first = store.insert("first", random_tensor(&mut rng, &[pairs.len().max(1)], 3.0)).unwrap();
            let second = store.insert("second", random_tensor(&mut rng, &[triples.len().max(1)], 3.0)).unwrap();
            let mode = if linear { ArcPairMode::LinearCombination } else { ArcPairMode::Learned };
            (store, Box::new(move |g, s| {
                let f = g.param(s, first);
                let f = (!pairs.is_empty()).then(|| prefix(g, f, pairs.len()));
                let sp = g.param(s, second);
                let sp = (!triples.is_empty() && !linear).then(|| prefix(g, sp, triples.len()));
                let base = loss_base(g, f, &lookup, &cands, &gold).unwrap();
                let sib = loss_sibling(g, f, sp, &lookup, &sup, gamma, mode).unwrap();
                let all_a = g_sum_param(g, s, first);
                let zero_a = g.scale(all_a, 0.0).unwrap();
                let all_b = g_sum_param(g, s, second);
                let zero_b = g.scale(all_b, 0.0).unwrap();
                let l = total_loss(g, base, Some(sib), lambda).unwrap();
                let l = g.add(l, zero_a).unwrap();
                g.add(l, zero_b).unwrap()
            }))
        }
        _ => unreachable!(),
    }
}

/// First `len` entries of a vector node.
fn prefix(g: &mut Graph, v: NodeId, len: usize) -> NodeId {
    let n = g.shape(v).iter().product();
    let col = g.reshape(v, vec![n, 1]).unwrap();
    let head = g.slice_rows(col, 0, len).unwrap();
    g.reshape(head, vec![len]).unwrap()
}

/// Keeps every parameter on the graph so unused ones get a zero gradient.
fn g_sum_param(g: &mut Graph, s: &ParamStore, id: ParamId) -> NodeId {
    let p = g.param(s, id);
    g.sum(p).unwrap()
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let kinds = [
        "ffnn",
        "bilstm+span-attention",
        "gnn-gate+aggregation",
        "soft-weights",
        "topk-weights",
        "base-loss",
        "sibling-loss-learned",
        "sibling-loss-linear",
    ];
    let per_kind = 100;
    let mut summary = Vec::new();
    for kind in kinds {
        let mut worst = (0.0, String::new());
        for i in 0..per_kind {
            let (store, build) = gradient_instance(kind, 1000 + i);
            let f = |s: &ParamStore| run_loss(s, &*build);
            let r = fd_max_rel_err(&store, &f);
            if r.0 > worst.0 {
                worst = (r.0, format!("instance {i}: {}", r.1));
            }
        }
        ensure(worst.0 < FD_TOL, || format!("{kind}: relative error {:.2e} at {}", worst.0, worst.1))?;
        summary.push(format!("{kind} {:.1e}", worst.0));
    }
    within(start.elapsed(), Duration::from_secs(120), "gradient suite")?;
    Ok(format!("{} instances, max rel err per op: {}", kinds.len() * per_kind as usize, summary.join(", ")))
}

// ---------------------------------------------------------------------------
// 2. Decoders against enumeration
// ---------------------------------------------------------------------------

/// Tree score straight from the definition: each arc scores
/// `γ s(i,j) + (1-γ) s_p(i,j,k)` with `k` the nearest earlier co-child of
/// `j` (`s_p = 0` without one); arcs to the dummy score 0.
fn score_of(heads: &[Option<usize>], s: &[Vec<f64>], sp: &HashMap<(usize, usize, usize), f64>, gamma: f64) -> f64 {
    let mut total = 0.0;
    for (i, h) in heads.iter().enumerate() {
        let Some(j) = *h else { continue };
        let sib = (0..i).rev().find(|&k| heads[k] == Some(j));
        let second = sib.map_or(0.0, |k| sp[&(i, j, k)]);
        total += gamma * s[i][j] + (1.0 - gamma) * second;
    }
    total
}

/// Rightward arcs only: the arc into span `i` spans positions
/// `(head + 1, i + 1)` with the dummy at position 0.
fn projective(heads: &[Option<usize>]) -> bool {
    let arcs: Vec<(usize, usize)> = heads.iter().enumerate().map(|(i, h)| (h.map_or(0, |j| j + 1), i + 1)).collect();
    !arcs.iter().any(|&(a, b)| arcs.iter().any(|&(c, d)| a < c && c < b && b < d))
}

fn all_trees(cands: &[Vec<usize>]) -> Vec<Vec<Option<usize>>> {
    let mut out = vec![vec![]];
    for ys in cands {
        let mut next = Vec::new();
        for t in &out {
            for h in std::iter::once(None).chain(ys.iter().map(|&j| Some(j))) {
                let mut t2 = t.clone();
                t2.push(h);
                next.push(t2);
            }
        }
        out = next;
    }
    out
}

fn criterion_decoder() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut projective_optima) = (0, 0);
    for inst in 0..200 {
        let n = rng.gen_range(1..=7);
        let p = rng.gen_range(0.3..1.0);
        let cands = random_candidates(&mut rng, n, p);
        let s: Vec<Vec<f64>> = (0..n).map(|i| (0..i).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let mut sp = HashMap::new();
        for i in 0..n {
            for &j in &cands[i] {
                for k in j + 1..i {
                    sp.insert((i, j, k), rng.gen_range(-3.0..3.0));
                }
            }
        }
        let trees = all_trees(&cands);
        for gamma in [0.0, 0.5, 0.8, 1.0] {
            let mut table = ScoreTable::new(s.clone(), &cands, gamma, ArcPairMode::Learned);
            for (&(i, j, k), &v) in &sp {
                table.set_second(i, j, k, v);
            }
            let eisner = eisner_second_order(&table);
            let pipeline = decode_second_order(&table, None);
            let se = score_of(eisner.heads(), &s, &sp, gamma);
            let sh = score_of(pipeline.heads(), &s, &sp, gamma);
            let ctx = || format!("instance {inst} n={n} gamma={gamma} cands={cands:?}");
            ensure(projective(eisner.heads()), || format!("{}: projective decoder tree crosses", ctx()))?;
            ensure(sh >= se - 1e-9, || format!("{}: hill climb {sh} < projective {se}", ctx()))?;
            let mut best = (f64::NEG_INFINITY, false);
            for t in &trees {
                let v = score_of(t, &s, &sp, gamma);
                if projective(t) {
                    ensure(se >= v - 1e-9, || format!("{}: projective tree {t:?} scores {v} > decoder {se}", ctx()))?;
                }
                if v > best.0 + 1e-12 {
                    best = (v, projective(t));
                }
            }
            if best.1 {
                projective_optima += 1;
                ensure((sh - best.0).abs() <= 1e-9, || format!("{}: optimum {} is projective, pipeline {sh}", ctx(), best.0))?;
            }
            if gamma == 1.0 {
                let want: f64 = (0..n).map(|i| cands[i].iter().map(|&j| s[i][j]).fold(0.0, f64::max)).sum();
                ensure((sh - want).abs() <= 1e-9, || format!("{}: first-order optimum {want}, pipeline {sh}", ctx()))?;
            }
            checked += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(180), "decoder suite")?;
    Ok(format!("{checked} decodes over 200 instances, {projective_optima} with a projective optimum"))
}

// ---------------------------------------------------------------------------
// 3. Reduction to the first-order span-ranking model
// ---------------------------------------------------------------------------

fn reduction_config() -> Config {
    let mut c = Config::default();
    c.apply_overrides([
        "model.embedding_dim=8",
        "encoder.lstm_hidden=5",
        "encoder.width_dim=3",
        "scorer.ffnn_hidden=10",
        "scorer.feature_dim=3",
        "span.max_width=3",
        "gnn.layers=0",
        "train.lambda=0",
        "seed=77",
    ])
    .unwrap();
    c
}

struct Direct {
    loss: f64,
    grads: Gradients,
    clusters: Vec<Vec<Span>>,
}

/// Encoder, pruning, `s(i,j) = s_m(i) + s_m(j) + s_a(i,j)` and the
/// marginal log-likelihood, assembled from the building blocks alone.
fn direct_path(m: &Model, doc: &Document) -> Option<Direct> {
    let cfg = m.config();
    let store = m.store();
    let emb = m.embeddings();
    let mut g = Graph::new();
    let x = g.input(embed_tokens(doc, &emb)?).unwrap();
    let states = bilstm_encode(&mut g, store, &m.encoder, x, &doc.sentences()).unwrap();
    let spans = enumerate_spans(doc, cfg.max_width);
    let (reps, _) = span_representations(&mut g, store, &m.encoder, states, x, &spans).unwrap();
    let sm = mention_scores(&mut g, store, &m.scorer, reps).unwrap();
    let sm_vals = g.value(sm).data().to_vec();
    let keep = prune_mentions(&spans, &sm_vals, retained_budget(doc.len(), cfg.spans_ratio));
    if keep.is_empty() {
        return None;
    }
    let retained: Vec<Span> = keep.iter().map(|&k| spans[k]).collect();
    let kept_scores: Vec<f64> = keep.iter().map(|&k| sm_vals[k]).collect();
    let gi = g.gather_rows(reps, &keep).unwrap();
    let coarse = coarse_scores(g.value(gi), &kept_scores, store.value(m.scorer.coarse));
    let cands = select_candidate_antecedents(&coarse, cfg.max_antecedents);
    let pairs = candidate_pairs(&cands);
    let n = retained.len();
    let lookup = PairLookup::from_pairs(n, &pairs);
    let first = if pairs.is_empty() {
        None
    } else {
        let feats: Vec<_> = pairs.iter().map(|&(i, j)| pair_features(doc, &retained, i, j)).collect();
        let smi = mention_scores(&mut g, store, &m.scorer, gi).unwrap();
        Some(pair_scores(&mut g, store, &m.scorer, gi, smi, &pairs, &feats).unwrap())
    };
    let gold = gold_antecedent_sets(doc, &retained, &cands);
    let base = loss_base(&mut g, first, &lookup, &cands, &gold).unwrap();
    let loss = g.scale(base, -1.0).unwrap();
    let grads = g.backward(loss, store.len()).unwrap();

    // Greedy: best of ε (score 0) and Y_i; ties prefer ε, then the nearer span.
    let vals = first.map(|f| g.value(f).data().to_vec()).unwrap_or_default();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], i: usize) -> usize {
        if p[i] == i { i } else { let r = root(p, p[i]); p[i] = r; r }
    }
    for i in 0..n {
        let mut best: (f64, Option<usize>) = (0.0, None);
        for &j in cands[i].iter().rev() {
            let v = vals[lookup.get(i, j).unwrap()];
            if v > best.0 {
                best = (v, Some(j));
            }
        }
        if let Some(j) = best.1 {
            let (a, b) = (root(&mut parent, i), root(&mut parent, j));
            parent[a] = b;
        }
    }
    let mut groups: BTreeMap<usize, Vec<Span>> = BTreeMap::new();
    for i in 0..n {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(retained[i]);
    }
    let clusters = groups.into_values().filter(|c| c.len() > 1).collect();
    Some(Direct { loss: g.value(loss).item(), grads, clusters })
}

fn normalized(mut c: Vec<Vec<Span>>) -> Vec<Vec<Span>> {
    for x in &mut c {
        x.sort();
    }
    c.sort();
    c
}

fn criterion_reduction() -> Outcome {
    let docs = exact_match_corpus(&SyntheticSpec { documents: 10, sentences: 2, sentence_len: 8, ..Default::default() }, 31, "r");
    let mut m = Model::new(&reduction_config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    randomize(m.store_mut(), &mut rng);
    let emb = m.embeddings();
    let mut nonempty_clusters = 0;
    for doc in &docs {
        let d = direct_path(&m, doc).ok_or("fixture document has no retained spans")?;
        let (loss, grads, _) = document_gradients(&m, doc, &emb).unwrap().ok_or("model skipped a document")?;
        ensure(loss.to_bits() == d.loss.to_bits(), || format!("{}: loss {loss:e} vs direct {:e}", doc.doc_id(), d.loss))?;
        for id in m.store().ids() {
            let a = grads.get(id).map(|t| t.data().to_vec());
            let b = d.grads.get(id).map(|t| t.data().to_vec());
            let bits = |v: Option<Vec<f64>>| v.map(|v| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            let zero = |v: &Option<Vec<f64>>| v.as_ref().is_none_or(|v| v.iter().all(|&x| x == 0.0));
            let same = bits(a.clone()) == bits(b.clone()) || (zero(&a) && zero(&b));
            ensure(same, || format!("{}: gradient of {} differs", doc.doc_id(), m.store().name(id)))?;
        }
        let p = m.predict_with(doc, &emb, DecodeMode::Greedy).unwrap();
        ensure(normalized(p.clusters.clone()) == normalized(d.clusters.clone()), || {
            format!("{}: greedy clusters {:?} vs direct {:?}", doc.doc_id(), p.clusters, d.clusters)
        })?;
        nonempty_clusters += usize::from(!d.clusters.is_empty());
    }
    Ok(format!("10 documents bit-identical in loss, gradients and greedy clusters ({nonempty_clusters} with clusters)"))
}

// ---------------------------------------------------------------------------
// 4. Refinement layer algebra
// ---------------------------------------------------------------------------

fn weights_of(scores: &[f64], cands: &[Vec<usize>], mode: WeightMode) -> Vec<f64> {
    let mut g = Graph::new();
    let s = g.input(Tensor::vector(scores.to_vec()).unwrap()).unwrap();
    let w = edge_weights(&mut g, Some(s), cands, mode).unwrap().unwrap();
    g.value(w).data().to_vec()
}

fn criterion_gnn() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut cfg = Config::default();
    cfg.apply_overrides(["model.embedding_dim=4", "encoder.lstm_hidden=2", "encoder.width_dim=2", "scorer.ffnn_hidden=6"]).unwrap();
    let mut m = Model::new(&cfg).unwrap();
    randomize(m.store_mut(), &mut rng);
    let d = m.encoder.span_dim();
    for inst in 0..200 {
        let n = rng.gen_range(1..8);
        let cands = random_candidates(&mut rng, n, 0.7);
        let pairs = candidate_pairs(&cands);
        let doc = Document::plain("g", &vec!["w"; n]);
        let retained: Vec<Span> = (0..n).map(|t| Span::new(t, t)).collect();
        let feats: Vec<_> = pairs.iter().map(|&(i, j)| pair_features(&doc, &retained, i, j)).collect();
        let v0 = random_tensor(&mut rng, &[n, d], 1.0);
        let ctx = || format!("instance {inst} n={n}");

        let mut g = Graph::new();
        let g0 = g.input(v0.clone()).unwrap();
        let zero = GnnConfig { layers: 0, ..GnnConfig::default() };
        let t0 = refine(&mut g, m.store(), &m.scorer, &m.gnn, &zero, g0, &cands, &feats).unwrap();
        ensure(g.value(t0.output()) == &v0, || format!("{}: zero layers changed the input", ctx()))?;

        if !pairs.is_empty() {
            // Ties are frequent so the nearest-candidate rule gets exercised.
            let scores: Vec<f64> = pairs.iter().map(|_| rng.gen_range(-2..3) as f64 * 0.5).collect();
            let soft = weights_of(&scores, &cands, WeightMode::Soft);
            let hard = weights_of(&scores, &cands, WeightMode::Hard1);
            let uni = weights_of(&scores, &cands, WeightMode::Uniform);
            let mut off = 0;
            for ys in &cands {
                let r = off..off + ys.len();
                off += ys.len();
                if ys.is_empty() {
                    continue;
                }
                let total: f64 = soft[r.clone()].iter().sum();
                ensure((total - 1.0).abs() <= 1e-9, || format!("{}: soft weights sum to {total}", ctx()))?;
                let ones: Vec<usize> = r.clone().filter(|&p| hard[p] == 1.0).collect();
                let zeros = r.clone().filter(|&p| hard[p] == 0.0).count();
                let max = scores[r.clone()].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let nearest_best = r.clone().filter(|&p| scores[p] == max).last().unwrap();
                ensure(ones == vec![nearest_best] && zeros == ys.len() - 1, || {
                    format!("{}: hard weights {:?} for scores {:?}", ctx(), &hard[r.clone()], &scores[r.clone()])
                })?;
                let u = 1.0 / ys.len() as f64;
                ensure(uni[r.clone()].iter().all(|&w| w == u), || format!("{}: uniform weights {:?}", ctx(), &uni[r.clone()]))?;
            }
        }

        for mode in [WeightMode::Soft, WeightMode::Hard1, WeightMode::TopK(2), WeightMode::Uniform] {
            let one = GnnConfig { layers: 1, weight_mode: mode, neighborhood: Neighborhood::Antecedents };
            let two = GnnConfig { layers: 2, ..one };
            let mut g = Graph::new();
            let g0 = g.input(v0.clone()).unwrap();
            let (v1, _, a1, b1) = refine_layer(&mut g, m.store(), &m.scorer, &m.gnn, &one, g0, &cands, &feats).unwrap();
            let (v1_, a1_) = (g.value(v1).clone(), g.value(a1).clone());
            let beta = g.value(b1).clone();
            for k in 0..v0.len() {
                let (old, agg, new) = (v0.data()[k], a1_.data()[k], v1_.data()[k]);
                let b = beta.data()[k];
                ensure(b > 0.0 && b < 1.0, || format!("{}: gate {b} outside (0,1)", ctx()))?;
                ensure(new >= old.min(agg) - 1e-12 && new <= old.max(agg) + 1e-12, || {
                    format!("{}: coordinate {k} = {new} not between {old} and {agg}", ctx())
                })?;
            }
            let (v2, _, _, _) = refine_layer(&mut g, m.store(), &m.scorer, &m.gnn, &one, v1, &cands, &feats).unwrap();
            let composed = g.value(v2).clone();
            let mut h = Graph::new();
            let h0 = h.input(v0.clone()).unwrap();
            let t2 = refine(&mut h, m.store(), &m.scorer, &m.gnn, &two, h0, &cands, &feats).unwrap();
            ensure(h.value(t2.output()) == &composed, || format!("{}: two layers differ from composition ({mode:?})", ctx()))?;
        }
    }
    Ok("200 instances: identity, soft sums, hard one-hot, uniform, gate bounds, two-layer composition".into())
}

// ---------------------------------------------------------------------------
// 5. Metrics
// ---------------------------------------------------------------------------

fn sp(t: usize) -> Span {
    Span::new(t, t)
}

fn best_injection(w: &[Vec<f64>]) -> f64 {
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        let mut best = go(w, row + 1, used);
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.max(w[row][c] + go(w, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    let cols = w.first().map_or(0, |r| r.len());
    go(w, 0, &mut vec![false; cols])
}

fn random_partition(rng: &mut ChaCha8Rng, mentions: &[Span], k: usize) -> Vec<Vec<Span>> {
    let mut c = vec![Vec::new(); k];
    for &m in mentions {
        if rng.gen_bool(0.85) {
            c[rng.gen_range(0..k)].push(m);
        }
    }
    c.into_iter().filter(|x| !x.is_empty()).collect()
}

fn criterion_metrics() -> Outcome {
    let key = ClusterPartition::new(vec![vec![sp(0), sp(1), sp(2)]]).unwrap();
    let resp = ClusterPartition::new(vec![vec![sp(0), sp(1)], vec![sp(2)]]).unwrap();
    let (m, b, c) = (muc(&key, &resp).f1, b_cubed(&key, &resp).f1, ceaf_phi4(&key, &resp).f1);
    ensure((m - 2.0 / 3.0).abs() <= 1e-9, || format!("MUC F1 {m}"))?;
    ensure((b - 5.0 / 7.0).abs() <= 1e-9, || format!("B3 F1 {b}"))?;
    ensure((c - 0.5333).abs() <= 1e-4, || format!("CEAF F1 {c}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for case in 0..500 {
        let pool: Vec<Span> = (0..rng.gen_range(1..14)).map(sp).collect();
        let nk = rng.gen_range(1..=6);
        let k = random_partition(&mut rng, &pool, nk);
        let mut shuffled = pool.clone();
        shuffled.shuffle(&mut rng);
        let nr = rng.gen_range(1..=6);
        let r = random_partition(&mut rng, &shuffled, nr);
        let w: Vec<Vec<f64>> = k.iter().map(|a| r.iter().map(|b| phi4(a, b)).collect()).collect();
        let brute = if k.len() <= r.len() {
            best_injection(&w)
        } else {
            let t: Vec<Vec<f64>> = (0..r.len()).map(|j| (0..k.len()).map(|i| w[i][j]).collect()).collect();
            best_injection(&t)
        };
        let (total, assign) = max_weight_assignment(&w);
        ensure((total - brute).abs() <= 1e-9, || format!("case {case}: assignment {total} vs brute force {brute}"))?;
        let realized: f64 = assign.iter().enumerate().filter_map(|(i, a)| a.map(|j| w[i][j])).sum();
        ensure((realized - total).abs() <= 1e-9, || format!("case {case}: assignment weight {realized} vs reported {total}"))?;
        let cols: Vec<usize> = assign.iter().flatten().copied().collect();
        ensure(cols.iter().collect::<HashSet<_>>().len() == cols.len(), || format!("case {case}: columns reused"))?;
        let res = ceaf_phi4(&ClusterPartition::new(k.clone()).unwrap(), &ClusterPartition::new(r.clone()).unwrap());
        let (want_p, want_r) = (brute / r.len().max(1) as f64, brute / k.len().max(1) as f64);
        ensure((res.precision - want_p).abs() <= 1e-9 && (res.recall - want_r).abs() <= 1e-9, || {
            format!("case {case}: CEAF P/R {}/{} vs {want_p}/{want_r}", res.precision, res.recall)
        })?;
    }
    Ok(format!("MUC {m:.6} B3 {b:.6} CEAF {c:.6}; 500 assignments match brute force"))
}

// ---------------------------------------------------------------------------
// 6. Overfitting a string-match corpus
// ---------------------------------------------------------------------------

fn overfit_config(layers: usize, seed: u64, epochs: usize) -> Config {
    let mut c = Config::default();
    c.apply_overrides([
        "model.embedding_dim=16",
        "encoder.lstm_hidden=16",
        "encoder.width_dim=8",
        "scorer.ffnn_hidden=32",
        "scorer.feature_dim=8",
        "span.max_width=2",
        "train.lr=0.01",
    ])
    .unwrap();
    c.gnn_layers = layers;
    c.seed = seed;
    c.epochs = epochs;
    c
}

fn criterion_overfit() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let defaults = Config::default();
        ensure(
            defaults.gnn_layers == 1
                && defaults.weight_mode() == WeightMode::Soft
                && defaults.gamma == 0.8
                && defaults.lambda == 0.001,
            || "defaults are not l=1 soft gamma=0.8 lambda=0.001".into(),
        )?;
        let train_docs = exact_match_corpus(&SyntheticSpec::default(), 1, "t");
        let dev_docs = exact_match_corpus(&SyntheticSpec { documents: 10, ..Default::default() }, 2, "d");

        let start = Instant::now();
        let mut m = Model::new(&overfit_config(1, 0, 200)).unwrap();
        let emb = m.embeddings();
        let opts = TrainOptions { train_eval_every: Some(5), stop_at_train_f1: Some(0.95) };
        let logs = train(&mut m, &train_docs, None, &emb, &opts, |_| {}).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        let f1 = evaluate(&m, &train_docs, &emb).unwrap().avg_f1;
        ensure(f1 >= 0.95, || format!("train Avg F1 {f1:.4} after {} epochs", logs.len()))?;
        within(elapsed, Duration::from_secs(300), "overfit run")?;

        // Long enough for both variants to converge on this corpus.
        let epochs = 80;
        let mut dev = [0.0, 0.0];
        let mut per_seed = Vec::new();
        for seed in 0..5 {
            for (slot, layers) in [(0, 0), (1, 1)] {
                let mut m = Model::new(&overfit_config(layers, seed, epochs)).unwrap();
                let emb = m.embeddings();
                train(&mut m, &train_docs, None, &emb, &TrainOptions::default(), |_| {}).map_err(|e| e.to_string())?;
                let f = evaluate(&m, &dev_docs, &emb).unwrap().avg_f1;
                dev[slot] += f / 5.0;
                per_seed.push(format!("{f:.3}"));
            }
        }
        ensure(dev[1] >= dev[0], || format!("mean dev Avg F1 l=1 {:.4} < l=0 {:.4} (l=0,l=1 per seed {per_seed:?})", dev[1], dev[0]))?;
        Ok(format!(
            "train Avg F1 {f1:.4} after {} epochs in {:.1}s; mean dev Avg F1 over 5 seeds ({epochs} epochs) l=1 {:.4}, l=0 {:.4}",
            logs.len(),
            elapsed.as_secs_f64(),
            dev[1],
            dev[0]
        ))
    })
}

// ---------------------------------------------------------------------------
// 7. Round trips
// ---------------------------------------------------------------------------

fn random_word(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 10] = ["a", "Zoë", "\"q\"", "back\\slash", "tab\t", "日本", "x-y", "...", "'s", "{}"];
    (0..rng.gen_range(1..3)).map(|_| PIECES[rng.gen_range(0..PIECES.len())]).collect()
}

fn random_document(rng: &mut ChaCha8Rng, id: usize) -> Document {
    let n = rng.gen_range(0..15);
    let tokens: Vec<String> = (0..n).map(|_| random_word(rng)).collect();
    let mut starts = if n == 0 { vec![] } else { vec![0] };
    for t in 1..n {
        if rng.gen_bool(0.25) {
            starts.push(t);
        }
    }
    let speakers = (0..n).map(|_| ["A", "B", "spk 3"][rng.gen_range(0..3)].to_string()).collect();
    let mut used = HashSet::new();
    let mut clusters = Vec::new();
    for _ in 0..rng.gen_range(0..4) {
        let mut c = Vec::new();
        for _ in 0..rng.gen_range(1..4) {
            if n == 0 {
                break;
            }
            let s = rng.gen_range(0..n);
            let e = (s + rng.gen_range(0..3)).min(n - 1);
            if used.insert((s, e)) {
                c.push(Span::new(s, e));
            }
        }
        if c.len() >= 2 {
            clusters.push(c);
        }
    }
    Document::new(format!("doc/{id}"), tokens, starts, speakers, ["nw", "bc", ""][rng.gen_range(0..3)], clusters).unwrap()
}

/// Reference reading of a coreference column: cells are split on `|` and
/// processed left to right; `(k` pushes, `k)` pops the latest open `k`.
fn stack_oracle(cells: &[String]) -> Result<Vec<(u32, Span)>, ()> {
    let mut stacks: HashMap<u32, Vec<usize>> = HashMap::new();
    let mut out = Vec::new();
    for (t, cell) in cells.iter().enumerate() {
        if cell == "-" {
            continue;
        }
        for item in cell.split('|') {
            let open = item.starts_with('(');
            let close = item.ends_with(')');
            let id: u32 = item.trim_matches(|c| c == '(' || c == ')').parse().map_err(|_| ())?;
            match (open, close) {
                (true, true) => out.push((id, Span::new(t, t))),
                (true, false) => stacks.entry(id).or_default().push(t),
                (false, true) => {
                    let s = stacks.get_mut(&id).and_then(|v| v.pop()).ok_or(())?;
                    out.push((id, Span::new(s, t)));
                }
                (false, false) => return Err(()),
            }
        }
    }
    if stacks.values().any(|v| !v.is_empty()) {
        return Err(());
    }
    Ok(out)
}

fn random_coref_column(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut open: Vec<u32> = Vec::new();
    let mut cells = Vec::with_capacity(n);
    for t in 0..n {
        let mut items = Vec::new();
        for _ in 0..rng.gen_range(0..3) {
            match rng.gen_range(0..4) {
                0 | 1 => {
                    let id = rng.gen_range(0..4);
                    open.push(id);
                    items.push(format!("({id}"));
                }
                2 if !open.is_empty() => {
                    let id = open.remove(rng.gen_range(0..open.len()));
                    items.push(format!("{id})"));
                }
                _ => items.push(format!("({})", rng.gen_range(0..4))),
            }
        }
        if t == n - 1 && rng.gen_bool(0.9) {
            items.extend(open.drain(..).map(|id| format!("{id})")));
        }
        if rng.gen_bool(0.03) {
            items.push(format!("{})", rng.gen_range(0..4)));
        }
        cells.push(if items.is_empty() { "-".into() } else { items.join("|") });
    }
    cells
}

fn criterion_round_trips() -> Outcome {
    // Checkpoints: save, load, save again after some training.
    let docs = exact_match_corpus(&SyntheticSpec { documents: 4, ..Default::default() }, 8, "k");
    let mut cfg = overfit_config(1, 3, 2);
    cfg.epochs = 2;
    let mut m = Model::new(&cfg).unwrap();
    let emb = m.embeddings();
    train(&mut m, &docs, None, &emb, &TrainOptions::default(), |_| {}).map_err(|e| e.to_string())?;
    let mut a = Vec::new();
    m.save(&mut a).unwrap();
    let loaded = Model::load(&cfg, &a[..]).map_err(|e| e.to_string())?;
    let mut b = Vec::new();
    loaded.save(&mut b).unwrap();
    ensure(a == b, || "re-saved checkpoint differs".into())?;
    for id in m.store().ids() {
        let bits = |s: &ParamStore| s.value(id).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure(bits(m.store()) == bits(loaded.store()), || format!("parameter {} changed", m.store().name(id)))?;
    }
    for d in &docs {
        let (p, q) = (m.predict(d, &emb).unwrap(), loaded.predict(d, &emb).unwrap());
        ensure(p.clusters == q.clusters, || format!("{}: predictions differ after reload", d.doc_id()))?;
    }

    // JSONL canonical identity.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..500 {
        let d = random_document(&mut rng, i);
        let line = serialize_document(&d);
        let back = parse_jsonl_document(&line).map_err(|e| format!("doc {i}: {e}"))?;
        ensure(back == d, || format!("doc {i}: parse(serialize(d)) != d"))?;
        ensure(serialize_document(&back) == line, || format!("doc {i}: serialization not canonical"))?;
    }

    // CoNLL brackets against the stack oracle.
    let (mut ok, mut rejected) = (0, 0);
    for case in 0..1000 {
        let n = rng.gen_range(1..12);
        let cells = random_coref_column(&mut rng, n);
        let words: Vec<String> = (0..n).map(|t| format!("w{t}")).collect();
        let mut text = String::from("#begin document (fz/doc); part 000\n");
        for t in 0..n {
            text.push_str(&format!("fz/doc 0 {t} {} - spk {}\n", words[t], cells[t]));
            if t % 4 == 3 {
                text.push('\n');
            }
        }
        text.push_str("#end document\n");
        let parsed = parse_conll_skeleton(&text);
        match stack_oracle(&cells) {
            Err(()) => {
                ensure(parsed.is_err(), || format!("case {case}: {cells:?} should be rejected"))?;
                rejected += 1;
            }
            Ok(mentions) => {
                let mut by_id: BTreeMap<u32, Vec<Span>> = BTreeMap::new();
                for (id, s) in mentions {
                    let c = by_id.entry(id).or_default();
                    if !c.contains(&s) {
                        c.push(s);
                    }
                }
                let want: Vec<Vec<Span>> = by_id.into_values().filter(|c| c.len() >= 2).collect();
                let mut seen = HashSet::new();
                let shared = want.iter().flatten().any(|s| !seen.insert(*s));
                if shared {
                    ensure(parsed.is_err(), || format!("case {case}: span in two clusters accepted"))?;
                    rejected += 1;
                    continue;
                }
                let docs = parsed.map_err(|e| format!("case {case}: {cells:?}: {e}"))?;
                ensure(docs.len() == 1, || format!("case {case}: {} documents", docs.len()))?;
                ensure(normalized(docs[0].clusters().to_vec()) == normalized(want.clone()), || {
                    format!("case {case}: {cells:?} gave {:?}, oracle {want:?}", docs[0].clusters())
                })?;
                ok += 1;
            }
        }
    }
    Ok(format!("checkpoint bit-exact; 500 JSONL documents canonical; CoNLL {ok} matched and {rejected} rejected as the oracle"))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 gradient-check", criterion_gradients),
        ("2 decoder-oracle", criterion_decoder),
        ("3 first-order-reduction", criterion_reduction),
        ("4 gnn-algebra", criterion_gnn),
        ("5 metrics-golden", criterion_metrics),
        ("6 overfit", criterion_overfit),
        ("7 round-trips", criterion_round_trips),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let start = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("PASS criterion {name} ({secs:.1}s): {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.1}s): {e}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
