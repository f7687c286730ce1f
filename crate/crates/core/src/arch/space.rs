use serde::{Deserialize, Serialize};

use super::op::OperationKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceName {
    MediumLatency,
    LowLatency,
}

impl SpaceName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpaceName::MediumLatency => "medium_latency",
            SpaceName::LowLatency => "low_latency",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "medium_latency" => Some(SpaceName::MediumLatency),
            "low_latency" => Some(SpaceName::LowLatency),
            _ => None,
        }
    }
}

impl std::fmt::Display for SpaceName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A candidate operation set plus the fixed cell topology parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpaceSpec {
    pub name: SpaceName,
    /// Centered base variants; cells instantiate causal copies as needed.
    /// Index 0 is always the zero op.
    pub operations: Vec<OperationKind>,
    /// Total nodes per cell: 2 inputs, `intermediate_count` intermediates,
    /// one concatenation output.
    pub nodes: u32,
    pub intermediate_count: u32,
    /// Incoming edges kept per intermediate node at discretization.
    pub retain_k: u32,
}

impl SearchSpaceSpec {
    fn with_ops(name: SpaceName, operations: Vec<OperationKind>) -> Self {
        SearchSpaceSpec { name, operations, nodes: 7, intermediate_count: 4, retain_k: 2 }
    }

    pub fn low_latency() -> Self {
        Self::with_ops(
            SpaceName::LowLatency,
            vec![
                OperationKind::zero(),
                OperationKind::max_pool(3),
                OperationKind::avg_pool(3),
                OperationKind::sep_conv(3, 1),
                OperationKind::sep_conv(5, 1),
                OperationKind::dil_sep_conv(3, 2),
                OperationKind::factorized_pair(3),
                OperationKind::factorized_pair(5),
            ],
        )
    }

    pub fn medium_latency() -> Self {
        Self::with_ops(
            SpaceName::MediumLatency,
            vec![
                OperationKind::zero(),
                OperationKind::max_pool(3),
                OperationKind::avg_pool(3),
                OperationKind::sep_conv(3, 2),
                OperationKind::sep_conv(5, 2),
                OperationKind::dil_sep_conv(3, 2),
                OperationKind::dil_sep_conv(5, 2),
                OperationKind::factorized_pair(7),
            ],
        )
    }

    pub fn preset(name: SpaceName) -> Self {
        match name {
            SpaceName::MediumLatency => Self::medium_latency(),
            SpaceName::LowLatency => Self::low_latency(),
        }
    }

    /// Edges of the full cell DAG: node 2+i has 2+i candidate predecessors.
    pub fn edge_count(&self) -> usize {
        (0..self.intermediate_count as usize).map(|i| 2 + i).sum()
    }

    pub fn output_node(&self) -> usize {
        2 + self.intermediate_count as usize
    }

    /// Look up an op by canonical name, ignoring the causal flag.
    pub fn find_op(&self, name: &str) -> Option<OperationKind> {
        match name {
            "zero" => return Some(OperationKind::zero()),
            "skip_connect" => return Some(OperationKind::identity()),
            _ => {}
        }
        self.operations.iter().copied().find(|op| op.name() == name)
    }

    /// Index of an op in the candidate list, ignoring the causal flag.
    pub fn op_index(&self, op: &OperationKind) -> Option<usize> {
        self.operations.iter().position(|o| *o == op.centered())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_eight_ops_with_leading_zero() {
        for space in [SearchSpaceSpec::low_latency(), SearchSpaceSpec::medium_latency()] {
            assert_eq!(space.operations.len(), 8);
            assert_eq!(space.operations[0], OperationKind::zero());
            assert_eq!(space.nodes, 7);
            assert_eq!(space.intermediate_count, 4);
            assert_eq!(space.retain_k, 2);
            assert_eq!(space.edge_count(), 14);
            for op in &space.operations {
                op.check().unwrap();
                assert!(!op.causal);
            }
            // Identity is not offered in either preset.
            assert!(space.op_index(&OperationKind::identity()).is_none());
        }
    }

    #[test]
    fn medium_space_differs_as_documented() {
        let low = SearchSpaceSpec::low_latency();
        let med = SearchSpaceSpec::medium_latency();
        assert_eq!(med.find_op("dil_sep_conv_5x5"), Some(OperationKind::dil_sep_conv(5, 2)));
        assert_eq!(med.find_op("conv_7x1_1x7"), Some(OperationKind::factorized_pair(7)));
        assert!(low.find_op("conv_7x1_1x7").is_none());
        assert_eq!(med.find_op("sep_conv_5x5").unwrap().conv_stack_count, 2);
        assert_eq!(low.find_op("sep_conv_5x5").unwrap().conv_stack_count, 1);
    }
}
