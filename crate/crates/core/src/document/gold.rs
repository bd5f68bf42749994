use super::{Document, Span};

/// Gold antecedents of every retained span, restricted to its candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldAnnotation {
    /// Retained indices `j` in `Y_i` sharing `i`'s gold cluster. Empty means
    /// the dummy antecedent is the only correct choice.
    pub antecedents: Vec<Vec<usize>>,
    /// Gold cluster of each retained span, if any.
    pub cluster_of: Vec<Option<usize>>,
}

impl GoldAnnotation {
    pub fn is_dummy(&self, i: usize) -> bool {
        self.antecedents[i].is_empty()
    }

    pub fn len(&self) -> usize {
        self.antecedents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.antecedents.is_empty()
    }
}

/// `retained` are spans in retained order, `candidates[i]` is `Y_i` as
/// indices into `retained`.
pub fn gold_antecedent_sets(doc: &Document, retained: &[Span], candidates: &[Vec<usize>]) -> GoldAnnotation {
    let index = doc.cluster_index();
    let cluster_of: Vec<Option<usize>> = retained.iter().map(|s| index.get(s).copied()).collect();
    let antecedents = candidates
        .iter()
        .enumerate()
        .map(|(i, ys)| match cluster_of[i] {
            None => vec![],
            Some(c) => ys.iter().copied().filter(|&j| cluster_of[j] == Some(c)).collect(),
        })
        .collect();
    GoldAnnotation { antecedents, cluster_of }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> Document {
        Document::new(
            "d",
            (0..6).map(|i| format!("t{i}")).collect(),
            vec![0],
            vec!["-".into(); 6],
            "",
            vec![vec![Span::new(0, 0), Span::new(2, 2), Span::new(4, 4)]],
        )
        .unwrap()
    }

    #[test]
    fn non_gold_span_gets_dummy() {
        let retained = [Span::new(0, 0), Span::new(1, 1)];
        let g = gold_antecedent_sets(&doc(), &retained, &[vec![], vec![0]]);
        assert!(g.is_dummy(1));
        assert_eq!(g.cluster_of, vec![Some(0), None]);
    }

    #[test]
    fn coreferent_candidate_is_gold() {
        let retained = [Span::new(0, 0), Span::new(1, 1), Span::new(2, 2), Span::new(4, 4)];
        let g = gold_antecedent_sets(&doc(), &retained, &[vec![], vec![0], vec![0, 1], vec![1, 2]]);
        assert_eq!(g.antecedents[2], vec![0]);
        // Span 0 is not a candidate of span 3, so only span 2 remains.
        assert_eq!(g.antecedents[3], vec![2]);
        assert!(g.is_dummy(0));
    }
}
