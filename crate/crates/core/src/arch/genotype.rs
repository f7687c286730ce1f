use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cell::{CellSpec, CellType, Edge};
use super::codec::encode_genotype;
use super::op::OpFamily;
use super::space::{SearchSpaceSpec, SpaceName};
use super::validate::AVG_POOL_CAP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: u32,
    pub depth: u32,
    pub ops_kept: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenotypeMetadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage_history: Vec<StageRecord>,
}

/// A discrete architecture: one causal cell pattern, one reduction cell
/// pattern, and the space they were drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genotype {
    pub space: SpaceName,
    pub causal_cell: CellSpec,
    pub reduction_cell: CellSpec,
    #[serde(default)]
    pub metadata: GenotypeMetadata,
}

impl Genotype {
    pub fn new(space: SpaceName, causal_cell: CellSpec, reduction_cell: CellSpec) -> Self {
        Genotype { space, causal_cell, reduction_cell, metadata: GenotypeMetadata::default() }
    }

    /// Hex SHA-256 of the canonical JSON encoding. Stable across runs; used
    /// to tie verification reports to the network they probed.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(encode_genotype(self).as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Uniform random valid genotype: two distinct predecessors per node, a
/// uniform non-zero op on each edge, causal cells redrawn until the average
/// pooling cap holds.
pub fn sample_genotype(space: &SearchSpaceSpec, rng: &mut impl Rng) -> Genotype {
    fn sample_cell(space: &SearchSpaceSpec, ct: CellType, rng: &mut impl Rng) -> CellSpec {
        let causal = ct == CellType::Causal;
        loop {
            let mut edges = Vec::new();
            for node in 0..space.intermediate_count as usize {
                let to = node + 2;
                let a = rng.random_range(0..to);
                let b = {
                    let mut b = rng.random_range(0..to - 1);
                    if b >= a {
                        b += 1;
                    }
                    b
                };
                for from in [a.min(b), a.max(b)] {
                    let oi = rng.random_range(1..space.operations.len());
                    edges.push(Edge { from, to, op: space.operations[oi].with_causal(causal) });
                }
            }
            let cell = CellSpec { cell_type: ct, edges };
            let pools = cell.edges.iter().filter(|e| e.op.family == OpFamily::AvgPool).count();
            if !causal || pools <= AVG_POOL_CAP {
                return cell;
            }
        }
    }
    Genotype {
        space: space.name,
        causal_cell: sample_cell(space, CellType::Causal, rng),
        reduction_cell: sample_cell(space, CellType::Reduction, rng),
        metadata: GenotypeMetadata::default(),
    }
}
