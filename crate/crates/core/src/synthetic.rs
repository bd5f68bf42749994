//! Generated corpora in which coreference is exact string match.
//!
//! Names come from a fixed list and every name used in a document occurs at
//! least twice, so all its occurrences form one gold cluster. Filler words
//! are never mentions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::document::{Document, Span};

const NAMES: [&str; 24] = [
    "Alice", "Bruno", "Chen", "Dana", "Emeka", "Fatima", "Goran", "Hana", "Ivan", "Jorge", "Kiri", "Lena", "Mateo",
    "Nadia", "Omar", "Priya", "Quinn", "Rosa", "Sven", "Tariq", "Uma", "Viktor", "Wen", "Yusuf",
];

const FILLER: [&str; 24] = [
    "the", "met", "saw", "and", "later", "with", "a", "friend", "at", "market", "then", "left", "because", "rain",
    "was", "near", "house", "talked", "quietly", "about", "music", "again", "today", "soon",
];

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub documents: usize,
    pub sentences: usize,
    pub sentence_len: usize,
    /// Distinct names per document.
    pub entities: usize,
    /// Occurrences per name, at least 2.
    pub mentions: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { documents: 20, sentences: 3, sentence_len: 7, entities: 3, mentions: 2 }
    }
}

pub fn exact_match_corpus(spec: &SyntheticSpec, seed: u64, prefix: &str) -> Vec<Document> {
    assert!(spec.mentions >= 2, "every entity needs two mentions");
    let n_tokens = spec.sentences * spec.sentence_len;
    assert!(spec.entities * spec.mentions <= n_tokens, "too many mentions for the document length");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..spec.documents)
        .map(|d| {
            let names: Vec<&str> = NAMES.choose_multiple(&mut rng, spec.entities).copied().collect();
            let mut slots: Vec<usize> = (0..n_tokens).collect();
            slots.shuffle(&mut rng);
            let mut tokens: Vec<String> = (0..n_tokens).map(|_| FILLER[rng.gen_range(0..FILLER.len())].to_string()).collect();
            let mut clusters = vec![Vec::new(); names.len()];
            for (e, name) in names.iter().enumerate() {
                for m in 0..spec.mentions {
                    let t = slots[e * spec.mentions + m];
                    tokens[t] = name.to_string();
                    clusters[e].push(Span::new(t, t));
                }
            }
            let starts = (0..spec.sentences).map(|s| s * spec.sentence_len).collect();
            let speakers = (0..n_tokens).map(|t| format!("spk{}", t / spec.sentence_len % 2)).collect();
            Document::new(format!("{prefix}{d:03}"), tokens, starts, speakers, "nw", clusters).expect("generated document is valid")
        })
        .collect()
}
