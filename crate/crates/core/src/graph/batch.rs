use super::GraphTensor;
use crate::error::{Error, Result};

/// Variable-size graphs zero-padded to a common `n_max`.
///
/// `data` is `b x n_max x n_max x c`; `mask[g * n_max + i]` is true when node
/// `i` of graph `g` is real. Every entry with a padded row or column is 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    b: usize,
    n_max: usize,
    c: usize,
    data: Vec<f64>,
    mask: Vec<bool>,
    sizes: Vec<usize>,
}

impl MaskedBatch {
    pub fn new(graphs: &[GraphTensor]) -> Result<Self> {
        Self::from_refs(&graphs.iter().collect::<Vec<_>>())
    }

    pub fn from_refs(graphs: &[&GraphTensor]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::input("cannot batch an empty list of graphs"))?;
        let c = first.channels();
        if graphs.iter().any(|g| g.channels() != c) {
            return Err(Error::input("graphs in a batch must share the channel count"));
        }
        let b = graphs.len();
        let n_max = graphs.iter().map(|g| g.n()).max().unwrap_or(0);
        let mut data = vec![0.0; b * n_max * n_max * c];
        let mut mask = vec![false; b * n_max];
        for (k, g) in graphs.iter().enumerate() {
            let n = g.n();
            for i in 0..n {
                mask[k * n_max + i] = true;
                let dst = ((k * n_max + i) * n_max) * c;
                let src = g.index(i, 0, 0);
                data[dst..dst + n * c].copy_from_slice(&g.data()[src..src + n * c]);
            }
        }
        Ok(MaskedBatch {
            b,
            n_max,
            c,
            data,
            mask,
            sizes: graphs.iter().map(|g| g.n()).collect(),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.b
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.b, self.n_max, self.n_max, self.c]
    }

    /// Unpadded copy of graph `k`.
    pub fn extract(&self, k: usize) -> Result<GraphTensor> {
        if k >= self.b {
            return Err(Error::input(format!("batch index {k} out of range")));
        }
        let n = self.sizes[k];
        let c = self.c;
        let mut out = Vec::with_capacity(n * n * c);
        for i in 0..n {
            let src = ((k * self.n_max + i) * self.n_max) * c;
            out.extend_from_slice(&self.data[src..src + n * c]);
        }
        GraphTensor::from_raw(n, c - 1, out)
    }

    pub fn extract_all(&self) -> Result<Vec<GraphTensor>> {
        (0..self.b).map(|k| self.extract(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::gen_erdos_renyi;
    use crate::rng::RngSeed;
    use proptest::prelude::*;

    #[test]
    fn single_graph_batch() {
        let g = gen_erdos_renyi(5, 0.5, RngSeed(0)).unwrap();
        let b = MaskedBatch::new(std::slice::from_ref(&g)).unwrap();
        assert_eq!(b.n_max(), 5);
        assert!(b.mask().iter().all(|&m| m));
    }

    #[test]
    fn padding_shape() {
        let a = gen_erdos_renyi(3, 0.5, RngSeed(0)).unwrap();
        let c = gen_erdos_renyi(5, 0.5, RngSeed(1)).unwrap();
        let b = MaskedBatch::new(&[a, c]).unwrap();
        assert_eq!(b.shape(), [2, 5, 5, 1]);
        assert_eq!(b.mask()[..5].iter().filter(|&&m| !m).count(), 2);
        assert_eq!(b.sizes(), &[3, 5]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let a = GraphTensor::empty(3, 0);
        let c = GraphTensor::empty(3, 1);
        assert!(MaskedBatch::new(&[a, c]).is_err());
        assert!(MaskedBatch::new(&[]).is_err());
    }

    proptest! {
        #[test]
        fn extraction_round_trips(seed in any::<u64>(), sizes in prop::collection::vec(1usize..9, 1..6)) {
            let gs: Vec<_> = sizes.iter().enumerate()
                .map(|(k, &n)| gen_erdos_renyi(n, 0.4, RngSeed(seed).derive(k as u64)).unwrap())
                .collect();
            let batch = MaskedBatch::new(&gs).unwrap();
            prop_assert_eq!(batch.extract_all().unwrap(), gs);
            let n_max = batch.n_max();
            for (k, &n) in sizes.iter().enumerate() {
                for i in 0..n_max {
                    for j in 0..n_max {
                        if i >= n || j >= n {
                            let off = ((k * n_max + i) * n_max + j) * batch.channels();
                            prop_assert_eq!(batch.data()[off], 0.0);
                        }
                    }
                }
            }
        }
    }
}
