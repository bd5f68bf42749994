use std::fmt;
use std::str::FromStr;

/// How an arc-pair score combines first- and second-order terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArcPairMode {
    /// `γ s(i,j) + (1-γ) s_p(i,j,k)`.
    #[default]
    Learned,
    /// `s(i,j) + s(k,j) + s(i,k)`, no learned sibling term.
    LinearCombination,
}

impl FromStr for ArcPairMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "learned" => Ok(ArcPairMode::Learned),
            "linear" | "linear-combination" => Ok(ArcPairMode::LinearCombination),
            _ => Err(format!("unknown arc-pair mode {s:?} (expected learned or linear)")),
        }
    }
}

impl fmt::Display for ArcPairMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArcPairMode::Learned => "learned",
            ArcPairMode::LinearCombination => "linear",
        })
    }
}

/// `γ s + (1-γ) s_p`, or the linear-combination sum, for a non-dummy head.
///
/// `first_ij`, `first_kj` and `first_ik` are first-order scores; the last two
/// and `second` are ignored when the sibling is the dummy.
pub fn arc_pair_value(
    mode: ArcPairMode,
    gamma: f64,
    first_ij: f64,
    sibling: Option<(f64, f64, f64)>,
) -> f64 {
    match (mode, sibling) {
        (ArcPairMode::Learned, None) => gamma * first_ij,
        (ArcPairMode::Learned, Some((second, _, _))) => gamma * first_ij + (1.0 - gamma) * second,
        (ArcPairMode::LinearCombination, None) => first_ij,
        (ArcPairMode::LinearCombination, Some((_, first_kj, first_ik))) => first_ij + first_kj + first_ik,
    }
}

/// First-order scores `s(i,j)` for all `j < i`, candidate masks `j ∈ Y_i`,
/// and second-order scores `s_p(i,j,k)` for `j < k < i` with `j ∈ Y_i`.
///
/// Spans are indexed `0..n` in retained order. The dummy antecedent is
/// `None`; `s(i, ε) = 0` and `s_p(i, j, ζ) = 0`.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    n: usize,
    first: Vec<f64>,
    allowed: Vec<bool>,
    pair_offset: Vec<usize>,
    second: Vec<f64>,
    gamma: f64,
    mode: ArcPairMode,
}

impl ScoreTable {
    /// `first[i][j]` must have length `i`; `candidates[i]` lists `Y_i`.
    pub fn new(first: Vec<Vec<f64>>, candidates: &[Vec<usize>], gamma: f64, mode: ArcPairMode) -> Self {
        let n = first.len();
        assert_eq!(candidates.len(), n, "one candidate set per span");
        assert!((0.0..=1.0).contains(&gamma), "gamma must lie in [0, 1]");
        let mut flat = vec![0.0; n * n];
        let mut allowed = vec![false; n * n];
        for (i, row) in first.iter().enumerate() {
            assert_eq!(row.len(), i, "row {i} must score the {i} earlier spans");
            flat[i * n..i * n + i].copy_from_slice(row);
            for &j in &candidates[i] {
                assert!(j < i, "candidate {j} does not precede span {i}");
                allowed[i * n + j] = true;
            }
        }
        let mut pair_offset = vec![usize::MAX; n * n];
        let mut total = 0;
        for i in 0..n {
            for j in 0..i {
                if allowed[i * n + j] {
                    pair_offset[i * n + j] = total;
                    total += i - j - 1;
                }
            }
        }
        ScoreTable {
            n,
            first: flat,
            allowed,
            pair_offset,
            second: vec![0.0; total],
            gamma,
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mode(&self) -> ArcPairMode {
        self.mode
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        assert!((0.0..=1.0).contains(&gamma));
        self.gamma = gamma;
        self
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        j < i && self.allowed[i * self.n + j]
    }

    /// `Y_i` in ascending order.
    pub fn candidates(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..i).filter(move |&j| self.allowed[i * self.n + j])
    }

    /// Raw first-order score, whether or not `j ∈ Y_i`.
    pub fn raw_first(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j < i);
        self.first[i * self.n + j]
    }

    /// `s(i, head)`: 0 for the dummy, −∞ outside `Y_i`.
    pub fn first(&self, i: usize, head: Option<usize>) -> f64 {
        match head {
            None => 0.0,
            Some(j) if self.allowed(i, j) => self.first[i * self.n + j],
            Some(_) => f64::NEG_INFINITY,
        }
    }

    pub fn second(&self, i: usize, j: usize, k: usize) -> f64 {
        assert!(j < k && k < i && self.allowed(i, j), "({i},{j},{k}) is not an admissible triple");
        self.second[self.pair_offset[i * self.n + j] + (k - j - 1)]
    }

    pub fn set_second(&mut self, i: usize, j: usize, k: usize, value: f64) {
        assert!(j < k && k < i && self.allowed(i, j), "({i},{j},{k}) is not an admissible triple");
        let off = self.pair_offset[i * self.n + j] + (k - j - 1);
        self.second[off] = value;
    }

    /// Every admissible `(i, j, k)`.
    pub fn triples(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in self.candidates(i) {
                for k in j + 1..i {
                    out.push((i, j, k));
                }
            }
        }
        out
    }

    /// Score of span `i` taking `head` with nearest left sibling `sibling`.
    ///
    /// Children of the dummy are scored first-order only (their sibling is
    /// treated as ζ), so the arc contributes exactly 0.
    pub fn arc_pair(&self, i: usize, head: Option<usize>, sibling: Option<usize>) -> f64 {
        let Some(j) = head else { return 0.0 };
        if !self.allowed(i, j) {
            return f64::NEG_INFINITY;
        }
        let s_ij = self.first[i * self.n + j];
        let sib = sibling.map(|k| (self.second(i, j, k), self.raw_first(k, j), self.raw_first(i, k)));
        arc_pair_value(self.mode, self.gamma, s_ij, sib)
    }

    /// Tab-separated `i j s(i,j)` lines for allowed arcs, then
    /// `i j k s_p(i,j,k)` lines.
    pub fn dump(&self) -> String {
        use fmt::Write;
        let mut s = format!("n={} gamma={} mode={}\n", self.n, self.gamma, self.mode);
        for i in 0..self.n {
            for j in self.candidates(i) {
                let _ = writeln!(s, "{i}\t{j}\t{:?}", self.raw_first(i, j));
            }
        }
        for (i, j, k) in self.triples() {
            let _ = writeln!(s, "{i}\t{j}\t{k}\t{:?}", self.second(i, j, k));
        }
        s
    }
}
