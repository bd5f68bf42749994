//! Randomized self-checks: decoders against exhaustive search and
//! gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Gradients, Graph, ParamId, ParamStore};
use crate::config::Config;
use crate::decoder::{
    brute_force_decode, decode_second_order, eisner_second_order, for_each_assignment, tree_score, AntecedentTree,
    ArcPairMode, ScoreTable,
};
use crate::document::Document;
use crate::model::Model;
use crate::trainer::document_loss;

const TOL: f64 = 1e-9;

/// Central-difference step and the gradient magnitude below which errors
/// are measured absolutely; roundoff in the difference quotient is about
/// 1e-9 at this step.
pub const FD_STEP: f64 = 1e-6;
pub const FD_FLOOR: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub instances: usize,
    pub failures: Vec<String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn line(&self) -> String {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        format!("{status} {} ({} instances, {} failures)", self.name, self.instances, self.failures.len())
    }
}

/// Random scores, candidate sets and sibling scores for `n` spans.
pub fn random_table<R: Rng>(rng: &mut R, n: usize, gamma: f64) -> ScoreTable {
    let candidates: Vec<Vec<usize>> = (0..n).map(|i| (0..i).filter(|_| rng.gen_bool(0.7)).collect()).collect();
    let first = (0..n).map(|i| (0..i).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    let mut t = ScoreTable::new(first, &candidates, gamma, ArcPairMode::Learned);
    for (i, j, k) in t.triples() {
        t.set_second(i, j, k, rng.gen_range(-3.0..3.0));
    }
    t
}

fn options(table: &ScoreTable) -> Vec<Vec<Option<usize>>> {
    (0..table.len()).map(|i| std::iter::once(None).chain(table.candidates(i).map(Some)).collect()).collect()
}

/// Decoders checked against enumeration; a test double can stand in for
/// either one.
pub struct Decoders<'a> {
    pub projective: &'a dyn Fn(&ScoreTable) -> AntecedentTree,
    pub pipeline: &'a dyn Fn(&ScoreTable) -> AntecedentTree,
}

impl Default for Decoders<'_> {
    fn default() -> Self {
        Decoders { projective: &eisner_second_order, pipeline: &|t| decode_second_order(t, None) }
    }
}

/// Checks one table; returns a description of every violated property.
pub fn check_decoders(table: &ScoreTable, dec: &Decoders) -> Vec<String> {
    let mut bad = Vec::new();
    let eisner = (dec.projective)(table);
    let pipeline = (dec.pipeline)(table);
    let (se, sp) = (tree_score(&eisner, table), tree_score(&pipeline, table));
    let mut best_proj = f64::NEG_INFINITY;
    for_each_assignment(&options(table), |h| {
        let t = AntecedentTree::from_heads_unchecked(h.to_vec());
        if t.is_projective() {
            best_proj = best_proj.max(tree_score(&t, table));
        }
    });
    if !eisner.is_projective() {
        bad.push(format!("projective decoder returned a crossing tree {:?}", eisner.heads()));
    }
    if sp < se - TOL {
        bad.push(format!("hill climbing lost score: {sp} < {se}"));
    }
    if (se - best_proj).abs() > TOL {
        bad.push(format!("projective optimum {best_proj}, decoder found {se}"));
    }
    let global = brute_force_decode(table, 8).expect("small instance");
    let sg = tree_score(&global, table);
    if global.is_projective() && (sp - sg).abs() > TOL {
        bad.push(format!("projective global optimum {sg}, pipeline found {sp}"));
    }
    if table.gamma() == 1.0 {
        let want: f64 = (0..table.len())
            .map(|i| table.candidates(i).map(|j| table.first(i, Some(j))).fold(0.0, f64::max))
            .sum();
        if (sp - want).abs() > TOL {
            bad.push(format!("first-order optimum {want}, pipeline found {sp}"));
        }
    }
    bad
}

pub fn decoder_suite(seed: u64, instances: usize, max_n: usize) -> SuiteResult {
    decoder_suite_with(seed, instances, max_n, &Decoders::default())
}

/// Failures carry the offending score table and both decoded trees.
pub fn decoder_suite_with(seed: u64, instances: usize, max_n: usize, dec: &Decoders) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for inst in 0..instances {
        let n = rng.gen_range(1..=max_n);
        for gamma in [0.0, 0.5, 0.8, 1.0] {
            let t = random_table(&mut rng, n, gamma);
            let bad = check_decoders(&t, dec);
            if !bad.is_empty() {
                failures.push(format!(
                    "instance {inst}: {}\n{}projective tree:\n{}pipeline tree:\n{}",
                    bad.join("; "),
                    t.dump(),
                    (dec.projective)(&t).dump(),
                    (dec.pipeline)(&t).dump()
                ));
            }
        }
    }
    SuiteResult { name: "decoder-vs-enumeration", instances, failures }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// Parameter name, flat index, analytic and numeric derivative at the
    /// worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares analytic gradients with central differences over the given
/// coordinates.
pub fn finite_difference_error(
    store: &ParamStore,
    loss: impl Fn(&ParamStore) -> Result<(f64, Gradients), AutodiffError>,
    coords: &[(ParamId, usize)],
    h: f64,
) -> Result<FdReport, AutodiffError> {
    let (_, grads) = loss(store)?;
    let mut work = store.clone();
    let mut report = FdReport { max_rel_err: 0.0, worst: None };
    for &(id, k) in coords {
        let orig = work.value(id).data()[k];
        work.value_mut(id).data_mut()[k] = orig + h;
        let plus = loss(&work)?.0;
        work.value_mut(id).data_mut()[k] = orig - h;
        let minus = loss(&work)?.0;
        work.value_mut(id).data_mut()[k] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
        let e = relative_error(analytic, numeric, FD_FLOOR);
        if report.worst.is_none() || e > report.max_rel_err {
            report = FdReport { max_rel_err: e, worst: Some((store.name(id).to_string(), k, analytic, numeric)) };
        }
    }
    Ok(report)
}

fn oracle_config(seed: u64, layers: usize, mode: &str) -> Config {
    let mut c = Config::default();
    c.apply_overrides([
        "model.embedding_dim=4",
        "encoder.lstm_hidden=3",
        "encoder.width_dim=3",
        "scorer.ffnn_hidden=6",
        "scorer.feature_dim=2",
        "span.max_width=2",
        "prune.spans_ratio=0.8",
        "train.lambda=0.5",
        "train.sibling_cap=0",
    ])
    .expect("valid overrides");
    c.gnn_layers = layers;
    c.gnn_weight_mode = mode.to_string();
    c.seed = seed;
    c
}

fn oracle_document(rng: &mut ChaCha8Rng) -> Document {
    let words = ["Ann", "Bo", "it", "she", "the", "cat", "saw", "ran"];
    let n = rng.gen_range(5..9);
    let tokens: Vec<String> = (0..n).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect();
    let mut by_word: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (t, w) in tokens.iter().enumerate() {
        by_word.entry(w.as_str()).or_default().push(t);
    }
    let clusters = by_word
        .values()
        .filter(|ts| ts.len() >= 2)
        .map(|ts| ts.iter().map(|&t| crate::document::Span::new(t, t)).collect())
        .collect();
    let split = n / 2;
    Document::new("oracle", tokens, vec![0, split], vec!["a".into(); n], "nw", clusters).expect("valid document")
}

/// Moves every parameter off its initial value. Zero-initialized biases
/// otherwise leave ReLU inputs exactly at the kink whenever a previous
/// layer's activations are all zero.
pub fn jitter<R: Rng>(store: &mut ParamStore, rng: &mut R) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for x in store.value_mut(id).data_mut() {
            *x += rng.gen_range(-0.1..0.1);
        }
    }
}

/// Whole-model gradient checks on tiny random documents, over GNN modes.
pub fn gradient_suite(seed: u64, instances: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let modes = [(0, "soft"), (1, "soft"), (1, "topk"), (2, "soft"), (1, "uniform"), (1, "hard1")];
    for inst in 0..instances {
        let (layers, mode) = modes[inst % modes.len()];
        let mut model = Model::new(&oracle_config(seed.wrapping_add(inst as u64), layers, mode)).expect("model");
        jitter(model.store_mut(), &mut rng);
        let doc = oracle_document(&mut rng);
        let emb = model.embeddings();
        let loss = |store: &ParamStore| -> Result<(f64, Gradients), AutodiffError> {
            let mut m = model.clone();
            *m.store_mut() = store.clone();
            let mut g = Graph::new();
            match document_loss(&m, &mut g, &doc, &emb)? {
                Some(l) => Ok((g.value(l.total).item(), g.backward(l.total, store.len())?)),
                None => Ok((0.0, Gradients::empty(store.len()))),
            }
        };
        let ids: Vec<ParamId> = model.store().ids().collect();
        let coords: Vec<(ParamId, usize)> = (0..12)
            .map(|_| {
                let id = ids[rng.gen_range(0..ids.len())];
                (id, rng.gen_range(0..model.store().value(id).len()))
            })
            .collect();
        match finite_difference_error(model.store(), loss, &coords, FD_STEP) {
            Ok(r) if r.max_rel_err < FD_TOL => {}
            Ok(r) => failures.push(format!(
                "instance {inst} ({layers} layers, {mode}): relative error {:.3e} at {:?}\n{}",
                r.max_rel_err,
                r.worst,
                crate::document::jsonl::serialize_document(&doc)
            )),
            Err(e) => failures.push(format!("instance {inst}: {e}")),
        }
    }
    SuiteResult { name: "gradient-vs-finite-difference", instances, failures }
}
