use super::hash::{Token, TokenHasher};
use crate::error::{Error, Result};
use crate::graph::GraphTensor;

/// Isomorphism type of a k-tuple: its equality pattern plus the induced
/// `k x k` sub-tensor over every channel.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeId {
    /// `pattern[w]` is the first position holding the same node as `w`.
    pub pattern: Vec<u8>,
    /// `G[i_w, i_w', c]` as bit patterns, row-major over `(w, w', c)`.
    pub values: Vec<u64>,
}

impl TypeId {
    pub fn token(&self) -> Token {
        let mut h = TokenHasher::new("wl.iso");
        h.u64(self.pattern.len() as u64);
        for &p in &self.pattern {
            h.u64(p as u64);
        }
        h.u64(self.values.len() as u64);
        for &v in &self.values {
            h.f64(f64::from_bits(v));
        }
        h.finish()
    }
}

pub fn iso_type(g: &GraphTensor, tuple: &[usize]) -> Result<TypeId> {
    if let Some(&bad) = tuple.iter().find(|&&i| i >= g.n()) {
        return Err(Error::input(format!("tuple index {bad} out of range for n={}", g.n())));
    }
    Ok(iso_type_unchecked(g, tuple))
}

pub(crate) fn iso_type_unchecked(g: &GraphTensor, tuple: &[usize]) -> TypeId {
    let k = tuple.len();
    let pattern = (0..k)
        .map(|w| (0..k).find(|&v| tuple[v] == tuple[w]).unwrap() as u8)
        .collect();
    let mut values = Vec::with_capacity(k * k * g.channels());
    for &a in tuple {
        for &b in tuple {
            for c in 0..g.channels() {
                let v = g.get(a, b, c);
                values.push(if v == 0.0 { 0.0f64 } else { v }.to_bits());
            }
        }
    }
    TypeId { pattern, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::gen_erdos_renyi;
    use crate::rng::RngSeed;
    use std::collections::BTreeSet;

    #[test]
    fn diagonal_pairs_share_a_type() {
        let g = gen_erdos_renyi(6, 0.5, RngSeed(2)).unwrap();
        assert_eq!(iso_type(&g, &[1, 1]).unwrap(), iso_type(&g, &[4, 4]).unwrap());
    }

    #[test]
    fn three_types_for_pairs() {
        let mut all = BTreeSet::new();
        for s in 0..5 {
            let g = gen_erdos_renyi(7, 0.4, RngSeed(s)).unwrap();
            for i in 0..7 {
                for j in 0..7 {
                    all.insert(iso_type(&g, &[i, j]).unwrap());
                }
            }
        }
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn edge_and_non_edge_differ() {
        let g = GraphTensor::encode_dense(3, &[(0, 1)], None).unwrap();
        assert_ne!(iso_type(&g, &[0, 1]).unwrap(), iso_type(&g, &[0, 2]).unwrap());
        assert!(iso_type(&g, &[0, 3]).is_err());
    }

    #[test]
    fn type_equality_matches_partial_isomorphism() {
        // brute-force the two defining conditions on random triples
        let g = gen_erdos_renyi(6, 0.5, RngSeed(8)).unwrap();
        let h = gen_erdos_renyi(6, 0.5, RngSeed(9)).unwrap();
        let mut rng = RngSeed(10).stream();
        for _ in 0..500 {
            let s: Vec<usize> = (0..3).map(|_| rng.below(6)).collect();
            let t: Vec<usize> = (0..3).map(|_| rng.below(6)).collect();
            let eq_pattern = (0..3).all(|a| (0..3).all(|b| (s[a] == s[b]) == (t[a] == t[b])));
            let eq_values = (0..3).all(|a| (0..3).all(|b| g.get(s[a], s[b], 0) == h.get(t[a], t[b], 0)));
            let same = iso_type(&g, &s).unwrap() == iso_type(&h, &t).unwrap();
            assert_eq!(same, eq_pattern && eq_values);
        }
    }
}
