//! Algorithmic latency analysis.
//!
//! Latency here means dependency on future input frames, nothing else. Causal
//! ops contribute zero. A centered op with time kernel k and dilation d needs
//! ((k-1)/2)*d future frames at the rate of its own input, per sequential
//! block. Inside a stride-2 cell, an edge from a cell input runs its first
//! block at the incoming rate and any further blocks at the halved rate; edges
//! between intermediate nodes run entirely at the halved rate, so their frame
//! counts double when expressed in cell-input frames. Cell latency is the
//! longest path over the cell DAG under these costs.
//!
//! The network total is the longest dependency chain through the chained
//! cells, where a chain may enter each cell through either ancestor stream.
//! With the two reduction cells apart, both streams carry the same inherited
//! dependency everywhere and the total equals the stem plus the first
//! reduction cell plus twice the second. With adjacent reduction cells the
//! skip stream into the second one bypasses the first, so a chain starting
//! there inherits less and the total can fall short of that sum. Everything is exact integer frame counting;
//! milliseconds only appear at the edges of the API.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{
    validate_genotype, ArchError, CellSpec, CellType, Genotype, MacroPlan, OpFamily,
    OperationKind, SearchSpaceSpec, ValidationReport,
};

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("genotype failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error("malformed cell: {0}")]
    Cell(String),
}

/// Future frames needed by one op at its input rate, stride 1. Zero for
/// causal ops and for ops with no time extent.
pub fn op_right_context(op: &OperationKind) -> u32 {
    op.right_context_frames()
}

/// Cost of an edge in frames at the cell's input rate.
///
/// `strided` marks edges leaving a reduction cell's input nodes; `halved`
/// marks edges that run after the rate change (all non-input edges of a
/// reduction cell).
fn edge_frames(op: &OperationKind, strided: bool, halved: bool) -> u64 {
    if op.causal {
        return 0;
    }
    let blocks = op.time_blocks();
    if strided {
        // First block consumes the incoming stream; later blocks already see
        // the halved rate, so each of their frames spans two input frames.
        blocks
            .iter()
            .enumerate()
            .map(|(i, &b)| if i == 0 { b as u64 } else { 2 * b as u64 })
            .sum()
    } else if halved {
        blocks.iter().map(|&b| 2 * b as u64).sum()
    } else {
        blocks.iter().map(|&b| b as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub from: usize,
    pub to: usize,
    pub op: String,
    /// Cost of this step in frames at the cell's input rate.
    pub frames: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLatency {
    pub index: usize,
    pub cell_type: CellType,
    /// Frame period of this cell's input stream, ms.
    pub input_period_ms: f64,
    /// Longest-path latency in frames at this cell's input rate.
    pub frames: u64,
    pub ms: f64,
    pub critical_path: Vec<PathStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Frame period at the network input, ms.
    pub frame_period_ms: f64,
    pub stem_frames: u64,
    pub stem_ms: f64,
    pub cells: Vec<CellLatency>,
    /// Total future dependency in frames at the network input rate.
    pub total_input_frames: u64,
    pub total_ms: f64,
    pub genotype_hash: String,
}

struct CellAnalysis {
    frames: u64,
    critical_path: Vec<PathStep>,
    /// Longest path that starts at input 0 or input 1, in cell-input frames.
    /// None when no intermediate node is reachable from that input.
    from_input: [Option<u64>; 2],
}

fn analyze_cell(cell: &CellSpec, strided: bool) -> Result<CellAnalysis, LatencyError> {
    let mut max_node = 1usize;
    for e in &cell.edges {
        if e.from >= e.to {
            return Err(LatencyError::Cell(format!("edge {} -> {} is not forward", e.from, e.to)));
        }
        max_node = max_node.max(e.to);
    }
    let n = max_node + 1;
    // Longest path to each node from the cell inputs. Edges are scanned in
    // (to, from) order so ties resolve to the first such edge.
    let edges = cell.sorted_edges();
    let mut best = vec![0u64; n];
    let mut back: Vec<Option<usize>> = vec![None; n];
    let mut from = [vec![None::<u64>; n], vec![None::<u64>; n]];
    from[0][0] = Some(0);
    from[1][1] = Some(0);
    for (idx, e) in edges.iter().enumerate() {
        // A zero edge transmits nothing and never carries a dependency.
        if e.op.family == OpFamily::Zero {
            continue;
        }
        let cost = edge_frames(&e.op, strided && e.from < 2, strided && e.from >= 2);
        let cand = best[e.from] + cost;
        if cand > best[e.to] {
            best[e.to] = cand;
            back[e.to] = Some(idx);
        } else if back[e.to].is_none() && e.to >= 2 {
            back[e.to] = Some(idx);
        }
        for side in &mut from {
            if let Some(d) = side[e.from] {
                let cand = d + cost;
                if side[e.to].is_none_or(|cur| cand > cur) {
                    side[e.to] = Some(cand);
                }
            }
        }
    }
    let from_input =
        [(2..n).filter_map(|i| from[0][i]).max(), (2..n).filter_map(|i| from[1][i]).max()];
    let (frames, mut node) = (2..n).map(|i| (best[i], i)).max_by_key(|&(b, i)| (b, std::cmp::Reverse(i))).unwrap_or((0, 0));
    let mut critical_path = Vec::new();
    if frames > 0 {
        while node >= 2 {
            let Some(idx) = back[node] else { break };
            let e = &edges[idx];
            let cost = edge_frames(&e.op, strided && e.from < 2, strided && e.from >= 2);
            critical_path.push(PathStep { from: e.from, to: e.to, op: e.op.name(), frames: cost });
            node = e.from;
        }
        critical_path.reverse();
    }
    Ok(CellAnalysis { frames, critical_path, from_input })
}

/// Longest-path latency of a single cell, in ms given its input frame period.
pub fn cell_latency(
    cell: &CellSpec,
    input_period_ms: f64,
    strided: bool,
) -> Result<(f64, Vec<PathStep>), LatencyError> {
    let analysis = analyze_cell(cell, strided)?;
    Ok((analysis.frames as f64 * input_period_ms, analysis.critical_path))
}

/// Full latency report for a genotype laid out by `plan`.
///
/// The genotype is validated against its declared space first; rule
/// violations abort the analysis.
pub fn network_latency(plan: &MacroPlan, g: &Genotype) -> Result<LatencyReport, LatencyError> {
    let space = SearchSpaceSpec::preset(g.space);
    let report = validate_genotype(g, &space)?;
    if !report.is_valid() {
        return Err(LatencyError::Invalid(report));
    }
    let stem_frames = op_right_context(&plan.stem) as u64;
    let mut cells = Vec::with_capacity(plan.total_cells);
    // Future dependency carried by the two ancestor streams of the next cell,
    // in network-input frames. The stem stands in for both ancestors of cell
    // 0; carry[1] is the direct parent, carry[0] the skip.
    let mut carry = [stem_frames, stem_frames];
    for i in 0..plan.total_cells {
        let kind = plan.cell_kind(i);
        let spec = match kind {
            CellType::Causal => &g.causal_cell,
            CellType::Reduction => &g.reduction_cell,
        };
        let analysis = analyze_cell(spec, kind == CellType::Reduction)?;
        let period = plan.input_period_ms(i);
        // Convert this cell's frames to network-input frames via the rate
        // ratio, which is exact because periods only double.
        let rate = (period / plan.frame_period_ms).round() as u64;
        let via_skip = analysis.from_input[0].map(|f| carry[0] + f * rate);
        let via_parent = analysis.from_input[1].map(|f| carry[1] + f * rate);
        let out = via_skip.max(via_parent).unwrap_or(0);
        carry = [carry[1], out];
        cells.push(CellLatency {
            index: i,
            cell_type: kind,
            input_period_ms: period,
            frames: analysis.frames,
            ms: analysis.frames as f64 * period,
            critical_path: analysis.critical_path,
        });
    }
    let total = carry[1];
    Ok(LatencyReport {
        frame_period_ms: plan.frame_period_ms,
        stem_frames,
        stem_ms: stem_frames as f64 * plan.frame_period_ms,
        cells,
        total_input_frames: total,
        total_ms: total as f64 * plan.frame_period_ms,
        genotype_hash: g.hash(),
    })
}

/// Worst-case latency of any valid genotype in the space under `plan`, in ms.
///
/// The deepest chain through a reduction cell has one strided edge followed by
/// intermediate-to-intermediate edges at the halved rate; the bound maximizes
/// each position independently, which a chain-shaped cell attains whenever the
/// plan keeps the reduction cells apart.
pub fn space_latency_bound(space: &SearchSpaceSpec, plan: &MacroPlan) -> f64 {
    let strided_max =
        space.operations.iter().map(|op| edge_frames(op, true, false)).max().unwrap_or(0);
    let downstream_max =
        space.operations.iter().map(|op| edge_frames(op, false, true)).max().unwrap_or(0);
    let chain = strided_max + (space.intermediate_count as u64 - 1) * downstream_max;
    let total = op_right_context(&plan.stem) as u64 + 3 * chain;
    total as f64 * plan.frame_period_ms
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_macro_plan, CellSpec, CellType, Edge, Genotype, OperationKind, SpaceName};

    fn edge(from: usize, to: usize, op: OperationKind) -> Edge {
        Edge { from, to, op }
    }

    #[test]
    fn strided_edge_accounting() {
        // Stacked separable conv: first block at the incoming rate, second at
        // the halved rate.
        let op = OperationKind::sep_conv(5, 2);
        assert_eq!(edge_frames(&op, true, false), 6);
        assert_eq!(edge_frames(&op, false, true), 8);
        assert_eq!(edge_frames(&op, false, false), 4);
        let op = OperationKind::factorized_pair(7);
        assert_eq!(edge_frames(&op, true, false), 3);
        assert_eq!(edge_frames(&op, false, true), 6);
        assert_eq!(edge_frames(&OperationKind::max_pool(3), true, false), 1);
        let causal = OperationKind::sep_conv(5, 2).with_causal(true);
        assert_eq!(edge_frames(&causal, true, false), 0);
    }

    #[test]
    fn causal_cell_has_zero_latency() {
        let cell = CellSpec::new(
            CellType::Causal,
            vec![
                edge(0, 2, OperationKind::sep_conv(5, 1).with_causal(true)),
                edge(1, 2, OperationKind::max_pool(3).with_causal(true)),
                edge(2, 3, OperationKind::dil_sep_conv(3, 2).with_causal(true)),
                edge(0, 3, OperationKind::avg_pool(3).with_causal(true)),
            ],
        );
        let (ms, path) = cell_latency(&cell, 10.0, false).unwrap();
        assert_eq!(ms, 0.0);
        assert!(path.is_empty());
    }

    #[test]
    fn chain_cell_latency_matches_hand_count() {
        // input -(sep5 strided: 2)- n2 -(dil3 halved: 4)- n3: 6 frames.
        let cell = CellSpec::new(
            CellType::Reduction,
            vec![
                edge(0, 2, OperationKind::sep_conv(5, 1)),
                edge(1, 2, OperationKind::max_pool(3)),
                edge(2, 3, OperationKind::dil_sep_conv(3, 2)),
                edge(0, 3, OperationKind::max_pool(3)),
            ],
        );
        let (ms, path) = cell_latency(&cell, 10.0, true).unwrap();
        assert_eq!(ms, 60.0);
        let ops: Vec<&str> = path.iter().map(|s| s.op.as_str()).collect();
        assert_eq!(ops, vec!["sep_conv_5x5", "dil_sep_conv_3x3"]);
        // The same cell without the stride runs at one rate throughout.
        let (ms, _) = cell_latency(&cell, 10.0, false).unwrap();
        assert_eq!(ms, 40.0);
    }

    #[test]
    fn adjacent_reduction_cells_shorten_the_total() {
        let causal = CellSpec::new(
            CellType::Causal,
            (2..6)
                .flat_map(|to| {
                    vec![
                        edge(0, to, OperationKind::sep_conv(3, 1).with_causal(true)),
                        edge(1, to, OperationKind::max_pool(3).with_causal(true)),
                    ]
                })
                .collect(),
        );
        // Deepest chain (sep5 then factorized5, 6 frames) starts at input 0;
        // the deepest chain from input 1 is one frame shorter.
        let reduction = CellSpec::new(
            CellType::Reduction,
            vec![
                edge(0, 2, OperationKind::sep_conv(5, 1)),
                edge(1, 2, OperationKind::max_pool(3)),
                edge(0, 3, OperationKind::max_pool(3)),
                edge(2, 3, OperationKind::factorized_pair(5)),
                edge(0, 4, OperationKind::max_pool(3)),
                edge(1, 4, OperationKind::max_pool(3)),
                edge(0, 5, OperationKind::max_pool(3)),
                edge(1, 5, OperationKind::max_pool(3)),
            ],
        );
        let g = Genotype::new(SpaceName::LowLatency, causal, reduction);

        // Reductions sit at cells 1 and 3; both ancestor streams of the
        // second inherit the first, so the total is the per-cell sum.
        let mut apart = build_macro_plan(5, 4).unwrap();
        apart.stem = apart.stem.with_causal(true);
        let report = network_latency(&apart, &g).unwrap();
        assert_eq!(report.cells[1].frames, 6);
        assert_eq!(report.cells[3].frames, 6);
        assert_eq!(report.total_input_frames, 18);

        // Reductions sit at cells 1 and 2; the skip stream into cell 2
        // bypasses cell 1 and the deepest chain starts exactly there, so the
        // total lands at max(0 + 12, 6 + 10) instead of 18.
        let mut adjacent = build_macro_plan(3, 4).unwrap();
        adjacent.stem = adjacent.stem.with_causal(true);
        let report = network_latency(&adjacent, &g).unwrap();
        assert_eq!(report.cells[1].frames, 6);
        assert_eq!(report.cells[2].frames, 6);
        assert_eq!(report.total_input_frames, 16);
    }

    #[test]
    fn preset_bounds() {
        let plan = build_macro_plan(8, 16).unwrap();
        let low = SearchSpaceSpec::low_latency();
        let med = SearchSpaceSpec::medium_latency();
        assert_eq!(space_latency_bound(&low, &plan), 430.0);
        assert_eq!(space_latency_bound(&med, &plan), 910.0);
        // Depth never changes the bound, only the frame period does.
        let deep = build_macro_plan(17, 25).unwrap();
        assert_eq!(space_latency_bound(&low, &deep), 430.0);
    }
}
