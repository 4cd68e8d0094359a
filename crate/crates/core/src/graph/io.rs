use super::GraphTensor;
use crate::error::Result;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// On-disk graph: `{"n": 3, "edges": [[0,1],[1,2]], "features": [[..],..]}`
/// with 0-based indices; `features` is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<f64>>>,
}

impl GraphFile {
    pub fn to_graph(&self) -> Result<GraphTensor> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        GraphTensor::encode_dense(self.n, &edges, self.features.as_deref())
    }

    pub fn from_graph(g: &GraphTensor) -> Self {
        GraphFile {
            n: g.n(),
            edges: g.edges().into_iter().map(|(a, b)| [a, b]).collect(),
            features: (g.e() > 0).then(|| (0..g.n()).map(|i| g.node_features(i)).collect()),
        }
    }
}

impl GraphTensor {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<GraphFile>(text)?.to_graph()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GraphFile::from_graph(self)).expect("graph file serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}
