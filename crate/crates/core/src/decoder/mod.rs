//! Antecedent-tree decoding.
//!
//! A tree assigns every retained span a head from `Y_i ∪ {ε}`. Because heads
//! always precede their dependents, any such assignment is a tree rooted at
//! ε and no cycle checks are needed.

mod eisner;
mod hill_climb;
mod table;

use std::fmt::Write as _;

pub use eisner::eisner_second_order;
pub use hill_climb::{hill_climb_nonprojective, HillClimbResult};
pub use table::{arc_pair_value, ArcPairMode, ScoreTable};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DecodeError {
    #[error("span {span}: head {head:?} is not a candidate antecedent")]
    InvalidHead { span: usize, head: Option<usize> },
    #[error("{n} spans exceed the exhaustive-search bound of {bound}")]
    TooLarge { n: usize, bound: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AntecedentTree {
    heads: Vec<Option<usize>>,
}

impl AntecedentTree {
    /// Every span attached to the dummy.
    pub fn all_dummy(n: usize) -> Self {
        AntecedentTree { heads: vec![None; n] }
    }

    /// Checks `head(i) < i` and candidate membership.
    pub fn new(heads: Vec<Option<usize>>, table: &ScoreTable) -> Result<Self, DecodeError> {
        for (i, h) in heads.iter().enumerate() {
            if let Some(j) = *h {
                if !table.allowed(i, j) {
                    return Err(DecodeError::InvalidHead { span: i, head: *h });
                }
            }
        }
        Ok(AntecedentTree { heads })
    }

    pub(crate) fn from_heads_unchecked(heads: Vec<Option<usize>>) -> Self {
        AntecedentTree { heads }
    }

    pub fn heads(&self) -> &[Option<usize>] {
        &self.heads
    }

    pub fn head(&self, i: usize) -> Option<usize> {
        self.heads[i]
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Children of each head; index 0 holds the children of ε, index `j+1`
    /// those of span `j`. Children are in ascending order.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.heads.len() + 1];
        for (i, h) in self.heads.iter().enumerate() {
            out[h.map_or(0, |j| j + 1)].push(i);
        }
        out
    }

    /// Nearest earlier co-child of span `i`, `None` (ζ) if it is the first
    /// child of its head. Children of ε always get ζ.
    pub fn sibling(&self, i: usize) -> Option<usize> {
        let h = self.heads[i]?;
        (h + 1..i).rev().find(|&k| self.heads[k] == Some(h))
    }

    pub fn siblings(&self) -> Vec<Option<usize>> {
        let mut last: Vec<Option<usize>> = vec![None; self.heads.len()];
        self.heads
            .iter()
            .enumerate()
            .map(|(i, h)| match h {
                None => None,
                Some(j) => last[*j].replace(i),
            })
            .collect()
    }

    /// Projective over the linear order (ε, 0, 1, ..., n-1) with ε first.
    pub fn is_projective(&self) -> bool {
        let arcs: Vec<(usize, usize)> = self
            .heads
            .iter()
            .enumerate()
            .map(|(i, h)| (h.map_or(0, |j| j + 1), i + 1))
            .collect();
        for &(a, b) in &arcs {
            for &(c, d) in &arcs {
                if a < c && c < b && b < d {
                    return false;
                }
            }
        }
        true
    }

    /// One line per span: index, head, sibling (`-` for ε/ζ).
    pub fn dump(&self) -> String {
        let opt = |o: Option<usize>| o.map_or("-".to_string(), |v| v.to_string());
        let mut s = String::new();
        for (i, sib) in self.siblings().into_iter().enumerate() {
            let _ = writeln!(s, "{i}\t{}\t{}", opt(self.heads[i]), opt(sib));
        }
        s
    }
}

/// Σ_i s(i, head(i), sib(i)).
pub fn tree_score(tree: &AntecedentTree, table: &ScoreTable) -> f64 {
    tree.siblings()
        .into_iter()
        .enumerate()
        .map(|(i, sib)| table.arc_pair(i, tree.head(i), sib))
        .sum()
}

/// First-order argmax per span; ties go to ε, then to the nearest candidate.
pub fn greedy_decode(table: &ScoreTable) -> AntecedentTree {
    let heads = (0..table.len())
        .map(|i| {
            let mut best = None;
            let mut best_score = 0.0;
            for j in table.candidates(i).collect::<Vec<_>>().into_iter().rev() {
                let s = table.first(i, Some(j));
                if s > best_score {
                    best_score = s;
                    best = Some(j);
                }
            }
            best
        })
        .collect();
    AntecedentTree { heads }
}

pub const DEFAULT_BRUTE_FORCE_BOUND: usize = 8;

/// Exact maximizer of [`tree_score`] by enumeration of all head vectors.
/// Among equal scores the lexicographically smallest head vector wins (ε
/// sorts before every span).
pub fn brute_force_decode(table: &ScoreTable, bound: usize) -> Result<AntecedentTree, DecodeError> {
    let n = table.len();
    if n > bound {
        return Err(DecodeError::TooLarge { n, bound });
    }
    let options: Vec<Vec<Option<usize>>> = (0..n)
        .map(|i| std::iter::once(None).chain(table.candidates(i).map(Some)).collect())
        .collect();
    let mut best: Option<(f64, Vec<Option<usize>>)> = None;
    for_each_assignment(&options, |heads| {
        let score = tree_score(&AntecedentTree::from_heads_unchecked(heads.to_vec()), table);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, heads.to_vec()));
        }
    });
    Ok(AntecedentTree {
        heads: best.map(|(_, h)| h).unwrap_or_default(),
    })
}

/// Visits every element of the Cartesian product in lexicographic order.
pub fn for_each_assignment<T: Copy>(options: &[Vec<T>], mut f: impl FnMut(&[T])) {
    if options.iter().any(|o| o.is_empty()) {
        return;
    }
    let mut idx = vec![0usize; options.len()];
    let mut cur: Vec<T> = options.iter().map(|o| o[0]).collect();
    loop {
        f(&cur);
        let mut pos = options.len();
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < options[pos].len() {
                cur[pos] = options[pos][idx[pos]];
                break;
            }
            idx[pos] = 0;
            cur[pos] = options[pos][0];
        }
    }
}

/// Connected components of the non-ε arcs, as sorted lists of span indices;
/// singletons are dropped.
pub fn clusters_from_tree(tree: &AntecedentTree) -> Vec<Vec<usize>> {
    let n = tree.len();
    let mut root: Vec<usize> = (0..n).collect();
    // Heads precede dependents, so one forward pass resolves every root.
    for i in 0..n {
        if let Some(j) = tree.head(i) {
            root[i] = root[j];
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, r) in root.into_iter().enumerate() {
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().filter(|g| g.len() >= 2).collect()
}

/// Projective second-order optimum refined by hill climbing.
pub fn decode_second_order(table: &ScoreTable, max_iters: Option<usize>) -> AntecedentTree {
    let projective = eisner_second_order(table);
    let iters = max_iters.unwrap_or(2 * table.len());
    hill_climb_nonprojective(&projective, table, iters).tree
}
