use serde::{Deserialize, Serialize};

use super::op::OperationKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellType {
    /// Streaming cell; all its ops use left-only time padding and it
    /// contributes no algorithmic latency.
    Causal,
    /// Stride-2 cell; ops on edges from the two cell inputs run at stride 2.
    Reduction,
}

impl std::fmt::Display for CellType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellType::Causal => f.write_str("causal"),
            CellType::Reduction => f.write_str("reduction"),
        }
    }
}

/// One retained edge of a discrete cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub op: OperationKind,
}

/// A discrete cell: a DAG over 2 input nodes, intermediate nodes each fed by
/// retained edges, and an implicit concat output over the intermediates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub cell_type: CellType,
    pub edges: Vec<Edge>,
}

impl CellSpec {
    pub fn new(cell_type: CellType, edges: Vec<Edge>) -> Self {
        CellSpec { cell_type, edges }
    }

    /// Edges sorted by (to, from); the codec and latency analysis rely on a
    /// deterministic order.
    pub fn sorted_edges(&self) -> Vec<Edge> {
        let mut edges = self.edges.clone();
        edges.sort_by_key(|e| (e.to, e.from));
        edges
    }

    pub fn incoming(&self, node: usize) -> Vec<&Edge> {
        self.edges.iter().filter(|e| e.to == node).collect()
    }
}
