use super::hash::{multiset, Token, TokenHasher};
use std::collections::BTreeMap;
use std::fmt;

/// Colors of all `k`-tuples (row-major over `[n]^k`) after refinement.
///
/// `colors` are compact ids from [`lex_relabel`] of the current tokens, so
/// they are only meaningful within this coloring; `tokens` carry the full
/// refinement history and are comparable across graphs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coloring {
    pub k: usize,
    pub n: usize,
    pub colors: Vec<u32>,
    pub tokens: Vec<Token>,
    /// Number of refinement rounds that split at least one class.
    pub round: usize,
    pub stable: bool,
    /// Class count after each round, starting with the initial coloring.
    pub class_history: Vec<usize>,
}

impl Coloring {
    pub(crate) fn from_tokens(k: usize, n: usize, tokens: Vec<Token>) -> Self {
        let colors = lex_relabel(&tokens);
        let classes = class_count(&colors);
        Coloring {
            k,
            n,
            colors,
            tokens,
            round: 0,
            stable: false,
            class_history: vec![classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        *self.class_history.last().unwrap_or(&0)
    }

    /// Canonical digest of the multiset of history tokens over all tuples.
    pub fn invariant_sig(&self) -> Signature {
        let mut ts = self.tokens.clone();
        let body = multiset("wl.inv", &mut ts);
        let mut h = TokenHasher::new("wl.sig");
        h.u64(self.k as u64).u64(self.n as u64).token(body);
        Signature(h.finish())
    }

    /// Per-vertex digest over tuples whose first index is that vertex.
    pub fn equivariant_sig(&self) -> Vec<Signature> {
        let block = self.n.pow(self.k as u32 - 1);
        self.tokens
            .chunks(block)
            .map(|chunk| {
                let mut ts = chunk.to_vec();
                let body = multiset("wl.eq", &mut ts);
                let mut h = TokenHasher::new("wl.sig.node");
                h.u64(self.k as u64).u64(self.n as u64).token(body);
                Signature(h.finish())
            })
            .collect()
    }
}

/// Replace each token by its rank among the distinct tokens.
pub fn lex_relabel<T: Ord + Clone>(raw: &[T]) -> Vec<u32> {
    let mut distinct: Vec<T> = raw.to_vec();
    distinct.sort();
    distinct.dedup();
    let rank: BTreeMap<&T, u32> = distinct.iter().enumerate().map(|(i, t)| (t, i as u32)).collect();
    raw.iter().map(|t| rank[t]).collect()
}

pub(crate) fn class_count(colors: &[u32]) -> usize {
    colors.iter().max().map_or(0, |&m| m as usize + 1)
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Signature(pub u128);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({:032x})", self.0)
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}
