use super::{tree_score, AntecedentTree, ScoreTable};

/// Moves whose gain is below this are treated as ties and rejected.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct HillClimbResult {
    pub tree: AntecedentTree,
    /// Tree score before the first move and after every accepted move.
    pub trace: Vec<f64>,
}

fn sibling_in(heads: &[Option<usize>], i: usize) -> Option<usize> {
    let h = heads[i]?;
    (h + 1..i).rev().find(|&k| heads[k] == Some(h))
}

fn next_co_child(heads: &[Option<usize>], head: Option<usize>, i: usize) -> Option<usize> {
    head?;
    (i + 1..heads.len()).find(|&k| heads[k] == head)
}

fn term(heads: &[Option<usize>], table: &ScoreTable, i: usize) -> f64 {
    table.arc_pair(i, heads[i], sibling_in(heads, i))
}

/// Only span `i`, the co-child following `i` under its old head, and the one
/// following it under the new head change their arc-pair score.
fn move_gain(heads: &mut [Option<usize>], table: &ScoreTable, i: usize, new_head: Option<usize>) -> f64 {
    let old_head = heads[i];
    let mut affected = vec![i];
    affected.extend(next_co_child(heads, old_head, i));
    affected.extend(next_co_child(heads, new_head, i));
    affected.dedup();
    let before: f64 = affected.iter().map(|&x| term(heads, table, x)).sum();
    heads[i] = new_head;
    let after: f64 = affected.iter().map(|&x| term(heads, table, x)).sum();
    heads[i] = old_head;
    after - before
}

/// Greedy single-head reassignment until no move improves the score or
/// `max_iters` moves have been made.
pub fn hill_climb_nonprojective(start: &AntecedentTree, table: &ScoreTable, max_iters: usize) -> HillClimbResult {
    let mut heads = start.heads().to_vec();
    let mut trace = vec![tree_score(start, table)];
    for _ in 0..max_iters {
        let mut best: Option<(f64, usize, Option<usize>)> = None;
        for i in 0..heads.len() {
            let options: Vec<Option<usize>> = std::iter::once(None).chain(table.candidates(i).map(Some)).collect();
            for h in options {
                if h == heads[i] {
                    continue;
                }
                let gain = move_gain(&mut heads, table, i, h);
                if gain > MIN_GAIN && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, i, h));
                }
            }
        }
        let Some((_, i, h)) = best else { break };
        heads[i] = h;
        trace.push(tree_score(&AntecedentTree::from_heads_unchecked(heads.clone()), table));
    }
    HillClimbResult {
        tree: AntecedentTree::from_heads_unchecked(heads),
        trace,
    }
}
