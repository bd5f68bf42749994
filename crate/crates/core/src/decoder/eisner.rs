//! Second-order projective decoding over the order (ε, 0, 1, ..., n-1).
//!
//! Positions: 0 is ε, position `p ≥ 1` is span `p-1`. All arcs point right.
//! With rightward arcs only, a head's first child must be adjacent to it,
//! so the usual sibling-factored chart reduces to two tables:
//!
//! * `I[h][m]`: arc `h → m` plus `h`'s earlier children and their subtrees,
//!   `m` itself still without descendants;
//! * `C[h][t]`: `h` heading everything in `h..=t`.

use super::{AntecedentTree, ScoreTable};

const NEG: f64 = f64::NEG_INFINITY;

#[derive(Clone, Copy)]
enum IBack {
    First,
    After(usize),
}

pub fn eisner_second_order(table: &ScoreTable) -> AntecedentTree {
    let n = table.len();
    let p = n + 1;
    let mut c = vec![NEG; p * p];
    let mut c_back = vec![usize::MAX; p * p];
    let mut inc = vec![NEG; p * p];
    let mut i_back = vec![IBack::First; p * p];

    let head_of = |h: usize| if h == 0 { None } else { Some(h - 1) };
    let score = |h: usize, m: usize, k: Option<usize>| table.arc_pair(m - 1, head_of(h), k.map(|k| k - 1));

    for s in 0..p {
        c[s * p + s] = 0.0;
    }
    for width in 1..p {
        for h in 0..p - width {
            let t = h + width;
            // Incomplete item with last child m = t.
            let m = t;
            let mut best = NEG;
            let mut back = IBack::First;
            if m == h + 1 {
                best = score(h, m, None);
            } else {
                for k in h + 1..m {
                    let left = inc[h * p + k];
                    let mid = c[k * p + (m - 1)];
                    if left == NEG || mid == NEG {
                        continue;
                    }
                    let v = left + mid + score(h, m, Some(k));
                    if v > best {
                        best = v;
                        back = IBack::After(k);
                    }
                }
            }
            inc[h * p + m] = best;
            i_back[h * p + m] = back;

            let mut best_c = NEG;
            let mut arg = usize::MAX;
            for m in h + 1..=t {
                let v = inc[h * p + m] + c[m * p + t];
                if v > best_c {
                    best_c = v;
                    arg = m;
                }
            }
            c[h * p + t] = best_c;
            c_back[h * p + t] = arg;
        }
    }

    let mut heads = vec![None; n];
    let mut stack = vec![(false, 0usize, n)];
    while let Some((incomplete, h, t)) = stack.pop() {
        if incomplete {
            heads[t - 1] = head_of(h);
            if let IBack::After(k) = i_back[h * p + t] {
                stack.push((true, h, k));
                stack.push((false, k, t - 1));
            }
        } else if h < t {
            let m = c_back[h * p + t];
            stack.push((true, h, m));
            stack.push((false, m, t));
        }
    }
    AntecedentTree::from_heads_unchecked(heads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{tree_score, ArcPairMode};

    #[test]
    fn single_span_attaches_to_dummy() {
        let t = ScoreTable::new(vec![vec![]], &[vec![]], 0.8, ArcPairMode::Learned);
        assert_eq!(eisner_second_order(&t).heads(), &[None]);
    }

    #[test]
    fn sibling_bonus_prefers_shared_head() {
        let cands: Vec<Vec<usize>> = (0..3).map(|i| (0..i).collect()).collect();
        let mut t = ScoreTable::new(vec![vec![], vec![1.0], vec![1.0, 1.2]], &cands, 0.5, ArcPairMode::Learned);
        t.set_second(2, 0, 1, 3.0);
        let tree = eisner_second_order(&t);
        assert_eq!(tree.heads(), &[None, Some(0), Some(0)]);
        assert!((tree_score(&tree, &t) - (0.5 + 0.5 + 1.5)).abs() < 1e-12);
    }

    #[test]
    fn output_is_projective_and_admissible() {
        let cands = vec![vec![], vec![0], vec![], vec![1, 2]];
        let first = vec![vec![], vec![2.0], vec![5.0, 5.0], vec![1.0, 3.0, -1.0]];
        let t = ScoreTable::new(first, &cands, 0.8, ArcPairMode::Learned);
        let tree = eisner_second_order(&t);
        assert!(tree.is_projective());
        assert!(AntecedentTree::new(tree.heads().to_vec(), &t).is_ok());
        assert!(tree_score(&tree, &t).is_finite());
    }
}
