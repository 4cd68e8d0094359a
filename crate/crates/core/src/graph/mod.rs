//! Dense graph tensors and the permutation action.
//!
//! A [`GraphTensor`] stores an `n x n x (e + 1)` array in row-major order.
//! Channels `0..e` hold node features on the diagonal and are zero
//! elsewhere; channel `e` is the symmetric 0/1 adjacency matrix.

mod batch;
mod generate;
mod io;
mod noise;

pub use batch::MaskedBatch;
pub use generate::{gen_erdos_renyi, gen_random_regular, REGULAR_RETRY_BUDGET};
pub use io::GraphFile;
pub use noise::{apply_noise, companion_noise};

use crate::error::{Error, Result};
use crate::rng::Stream;
use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq)]
pub struct GraphTensor {
    n: usize,
    e: usize,
    data: Vec<f64>,
}

impl GraphTensor {
    /// Build from an edge list and optional `n x e` node features.
    pub fn encode_dense(
        n: usize,
        edges: &[(usize, usize)],
        node_features: Option<&[Vec<f64>]>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("graph must have at least one node"));
        }
        let e = match node_features {
            None => 0,
            Some(rows) => {
                if rows.len() != n {
                    return Err(Error::input(format!(
                        "expected {n} feature rows, got {}",
                        rows.len()
                    )));
                }
                let e = rows.first().map_or(0, |r| r.len());
                if rows.iter().any(|r| r.len() != e) {
                    return Err(Error::input("ragged node feature rows"));
                }
                e
            }
        };
        let mut g = GraphTensor::empty(n, e);
        if let Some(rows) = node_features {
            for (i, row) in rows.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    let idx = g.index(i, i, c);
                    g.data[idx] = v;
                }
            }
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::input(format!("edge ({a},{b}) out of range for n={n}")));
            }
            if a == b {
                return Err(Error::input(format!("self-loop at node {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::input(format!("duplicate edge ({a},{b})")));
            }
            g.set_edge(a, b, true);
        }
        Ok(g)
    }

    /// `n` isolated nodes with `e` zero feature channels.
    pub fn empty(n: usize, e: usize) -> Self {
        GraphTensor {
            n,
            e,
            data: vec![0.0; n * n * (e + 1)],
        }
    }

    /// Wrap raw data; checks the layout invariants.
    pub fn from_raw(n: usize, e: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n * (e + 1) {
            return Err(Error::input("data length does not match n*n*(e+1)"));
        }
        let g = GraphTensor { n, e, data };
        for i in 0..n {
            for j in 0..n {
                if i != j && (0..e).any(|c| g.get(i, j, c) != 0.0) {
                    return Err(Error::input("feature channel nonzero off the diagonal"));
                }
                if g.get(i, j, e) != g.get(j, i, e) {
                    return Err(Error::input("adjacency channel is not symmetric"));
                }
            }
            if g.get(i, i, e) != 0.0 {
                return Err(Error::input("adjacency channel has a nonzero diagonal"));
            }
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of node-feature channels (adjacency excluded).
    pub fn e(&self) -> usize {
        self.e
    }

    pub fn channels(&self) -> usize {
        self.e + 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.n + j) * (self.e + 1) + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.index(i, j, c)]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.get(i, j, self.e) != 0.0
    }

    pub(crate) fn set_edge(&mut self, a: usize, b: usize, on: bool) {
        let v = if on { 1.0 } else { 0.0 };
        let (ia, ib) = (self.index(a, b, self.e), self.index(b, a, self.e));
        self.data[ia] = v;
        self.data[ib] = v;
    }

    /// Features of node `i` (diagonal of channels `0..e`).
    pub fn node_features(&self, i: usize) -> Vec<f64> {
        (0..self.e).map(|c| self.get(i, i, c)).collect()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.has_edge(i, j)).count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.has_edge(i, j)).collect()
    }

    /// `out[σ(i), σ(j), c] = self[i, j, c]`.
    pub fn permute(&self, sigma: &Permutation) -> Result<GraphTensor> {
        if sigma.len() != self.n {
            return Err(Error::input(format!(
                "permutation of length {} applied to graph with n={}",
                sigma.len(),
                self.n
            )));
        }
        let ch = self.channels();
        let mut out = GraphTensor::empty(self.n, self.e);
        for i in 0..self.n {
            let si = sigma.apply(i);
            for j in 0..self.n {
                let sj = sigma.apply(j);
                let src = self.index(i, j, 0);
                let dst = out.index(si, sj, 0);
                out.data[dst..dst + ch].copy_from_slice(&self.data[src..src + ch]);
            }
        }
        Ok(out)
    }

    /// Disjoint union, `other` relabeled to `self.n()..`.
    pub fn disjoint_union(&self, other: &GraphTensor) -> Result<GraphTensor> {
        if self.e != other.e {
            return Err(Error::input("feature channel mismatch in disjoint union"));
        }
        let n = self.n + other.n;
        let mut out = GraphTensor::empty(n, self.e);
        for (off, g) in [(0, self), (self.n, other)] {
            for i in 0..g.n {
                for j in 0..g.n {
                    for c in 0..g.channels() {
                        let idx = out.index(i + off, j + off, c);
                        out.data[idx] = g.get(i, j, c);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A bijection on `0..n`, `σ(i) = map[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &v in &map {
            if v >= map.len() || seen[v] {
                return Err(Error::input("map is not a bijection on 0..n"));
            }
            seen[v] = true;
        }
        Ok(Permutation { map })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            map: (0..n).collect(),
        }
    }

    pub fn random(n: usize, rng: &mut Stream) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut map);
        Permutation { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.map.len()];
        for (i, &v) in self.map.iter().enumerate() {
            inv[v] = i;
        }
        Permutation { map: inv }
    }

    /// `self ∘ other`, i.e. `i ↦ self(other(i))`.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation> {
        if self.len() != other.len() {
            return Err(Error::input("composing permutations of different lengths"));
        }
        Ok(Permutation {
            map: other.map.iter().map(|&i| self.map[i]).collect(),
        })
    }
}
