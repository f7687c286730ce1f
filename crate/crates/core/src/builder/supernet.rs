use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{build_macro_plan, CellType, OpFamily, SearchSpaceSpec};
use crate::tensor::{OpDesc, ParamId, Scalar, Tensor, WeightedSumSpec};

use super::assemble::{assemble_network, NetBuilder};
use super::{BuildError, NetCore, NetOpts};

/// Surviving candidate op indices per edge, one list per edge in (to, from)
/// order, separately for the two cell roles. Progressive stages shrink these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveOps {
    pub causal: Vec<Vec<usize>>,
    pub reduce: Vec<Vec<usize>>,
}

impl ActiveOps {
    pub fn full(space: &SearchSpaceSpec) -> Self {
        let all: Vec<usize> = (0..space.operations.len()).collect();
        let per = vec![all; space.edge_count()];
        ActiveOps { causal: per.clone(), reduce: per }
    }

    fn check(&self, space: &SearchSpaceSpec) -> Result<(), BuildError> {
        for (role, lists) in [("causal", &self.causal), ("reduction", &self.reduce)] {
            if lists.len() != space.edge_count() {
                return Err(BuildError::Request(format!(
                    "{role} active set covers {} edges, space has {}",
                    lists.len(),
                    space.edge_count()
                )));
            }
            for (e, list) in lists.iter().enumerate() {
                if list.is_empty() {
                    return Err(BuildError::Request(format!("{role} edge {e} has no candidate ops")));
                }
                if !list.windows(2).all(|w| w[0] < w[1]) || *list.last().unwrap() >= space.operations.len() {
                    return Err(BuildError::Request(format!(
                        "{role} edge {e} candidate list must be sorted unique op indices, got {list:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Alpha logits in plain f64, full rows even when only a subset of ops is
/// active; inactive entries are dead weight kept for stable indexing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaParams {
    pub causal: Vec<Vec<f64>>,
    pub reduce: Vec<Vec<f64>>,
}

impl AlphaParams {
    pub fn zeros(edges: usize, ops: usize) -> Self {
        AlphaParams { causal: vec![vec![0.0; ops]; edges], reduce: vec![vec![0.0; ops]; edges] }
    }
}

/// Which cell role(s) candidate dropout masking applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutCells {
    Both,
    CausalOnly,
    ReductionOnly,
}

impl DropoutCells {
    pub fn covers(self, ct: CellType) -> bool {
        match self {
            DropoutCells::Both => true,
            DropoutCells::CausalOnly => ct == CellType::Causal,
            DropoutCells::ReductionOnly => ct == CellType::Reduction,
        }
    }
}

/// One mixed edge instance inside the assembled supernet.
#[derive(Debug, Clone, Copy)]
pub struct EdgeSlot {
    pub cell_index: usize,
    pub cell_type: CellType,
    pub edge_index: usize,
    pub node: crate::tensor::NodeId,
}

pub struct SuperNet<S: Scalar> {
    pub net: NetCore<S>,
    pub space: SearchSpaceSpec,
    pub active: ActiveOps,
    pub alpha_causal: Vec<ParamId>,
    pub alpha_reduce: Vec<ParamId>,
    pub slots: Vec<EdgeSlot>,
    pub depth: usize,
    pub channels: usize,
    weight_ids: Vec<ParamId>,
}

/// Weight-sharing search network. Alphas live in two banks of rows shared by
/// every cell of the same role; each candidate branch keeps its own weights
/// per cell.
pub fn build_supernet<S: Scalar>(
    space: &SearchSpaceSpec,
    active: &ActiveOps,
    depth: usize,
    channels: usize,
    classes: usize,
    opts: &NetOpts,
) -> Result<SuperNet<S>, BuildError> {
    active.check(space)?;
    let plan = build_macro_plan(depth, channels)?;
    let mut b = NetBuilder::<S>::new(opts.seed, opts.bn_affine);
    let n_ops = space.operations.len();
    let alpha_causal: Vec<ParamId> = (0..space.edge_count())
        .map(|e| b.graph.params.add(format!("alpha.causal.e{e}"), Tensor::zeros([n_ops, 1, 1, 1]), true))
        .collect();
    let alpha_reduce: Vec<ParamId> = (0..space.edge_count())
        .map(|e| b.graph.params.add(format!("alpha.reduce.e{e}"), Tensor::zeros([n_ops, 1, 1, 1]), true))
        .collect();

    let mut slots: Vec<EdgeSlot> = Vec::new();
    let ic = space.intermediate_count as usize;
    let parts = assemble_network(&mut b, &plan, opts, classes, ic, |b, site| {
        let (lists, rows) = match site.cell_type {
            CellType::Causal => (&active.causal, &alpha_causal),
            CellType::Reduction => (&active.reduce, &alpha_reduce),
        };
        let list = &lists[site.edge_index];
        let causal = site.cell_type == CellType::Causal;
        let mut inputs = Vec::new();
        let mut branch_of = Vec::new();
        for &oi in list {
            let op = space.operations[oi].with_causal(causal);
            if op.family == OpFamily::Zero {
                branch_of.push(None);
                continue;
            }
            let name = format!("c{}.e{}.o{}", site.cell_index, site.edge_index, oi);
            let out = b.op_output(&name, &op, site.raw, site.relu, site.ch, site.stride)?;
            branch_of.push(Some(inputs.len()));
            inputs.push(out);
        }
        if inputs.is_empty() {
            return Err(BuildError::Request(format!(
                "edge {} of the {} cell has no computing candidate left",
                site.edge_index, site.cell_type
            )));
        }
        let ws = WeightedSumSpec { active: list.clone(), branch_of };
        let node = b.graph.add_node(OpDesc::WeightedSum(ws), inputs, vec![rows[site.edge_index]]);
        slots.push(EdgeSlot {
            cell_index: site.cell_index,
            cell_type: site.cell_type,
            edge_index: site.edge_index,
            node,
        });
        Ok(Some(node))
    })?;

    let alpha_set: HashSet<ParamId> = alpha_causal.iter().chain(&alpha_reduce).copied().collect();
    let weight_ids: Vec<ParamId> =
        b.graph.params.trainable_ids().into_iter().filter(|id| !alpha_set.contains(id)).collect();
    let net = NetCore {
        graph: b.graph,
        input: parts.input,
        logits: parts.logits,
        posteriors: parts.posteriors,
        classes,
        in_channels: opts.in_channels,
        n_freq: opts.n_freq,
        time_stride: plan.time_stride(),
    };
    Ok(SuperNet {
        net,
        space: space.clone(),
        active: active.clone(),
        alpha_causal,
        alpha_reduce,
        slots,
        depth,
        channels,
        weight_ids,
    })
}

impl<S: Scalar> SuperNet<S> {
    pub fn alphas(&self) -> AlphaParams {
        let n = self.space.operations.len();
        let mut out = AlphaParams::zeros(self.space.edge_count(), n);
        for (rows, ids) in [(&mut out.causal, &self.alpha_causal), (&mut out.reduce, &self.alpha_reduce)] {
            for (e, &pid) in ids.iter().enumerate() {
                for (k, v) in self.net.graph.params.value(pid).as_slice().iter().enumerate() {
                    rows[e][k] = v.as_f64();
                }
            }
        }
        out
    }

    pub fn set_alphas(&mut self, a: &AlphaParams) -> Result<(), BuildError> {
        let n = self.space.operations.len();
        let e = self.space.edge_count();
        if a.causal.len() != e || a.reduce.len() != e {
            return Err(BuildError::Request("alpha row count does not match the space".into()));
        }
        for (rows, ids) in [(&a.causal, &self.alpha_causal), (&a.reduce, &self.alpha_reduce)] {
            for (row, &pid) in rows.iter().zip(ids.iter()) {
                if row.len() != n {
                    return Err(BuildError::Request("alpha row length does not match the op count".into()));
                }
                let dst = self.net.graph.params.value_mut(pid).as_mut_slice();
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d = S::of(v);
                }
            }
        }
        Ok(())
    }

    pub fn alpha_ids(&self) -> Vec<ParamId> {
        self.alpha_causal.iter().chain(&self.alpha_reduce).copied().collect()
    }

    pub fn weight_ids(&self) -> &[ParamId] {
        &self.weight_ids
    }

    pub fn set_alphas_trainable(&mut self, on: bool) {
        for id in self.alpha_ids() {
            self.net.graph.params.set_trainable(id, on);
        }
    }

    pub fn set_weights_trainable(&mut self, on: bool) {
        for i in 0..self.weight_ids.len() {
            let id = self.weight_ids[i];
            self.net.graph.params.set_trainable(id, on);
        }
    }

    /// Bernoulli-drop the dilated separable conv and average pooling
    /// candidates on every mixed edge of the selected cell role(s). A
    /// dropped branch keeps its softmax share but contributes zero output
    /// for the step.
    pub fn sample_dropout(&mut self, p: f64, cells: DropoutCells, rng: &mut ChaCha20Rng) {
        for si in 0..self.slots.len() {
            let slot = self.slots[si];
            if p <= 0.0 || !cells.covers(slot.cell_type) {
                self.net.graph.set_dropout(slot.node, None);
                continue;
            }
            let list = match slot.cell_type {
                CellType::Causal => &self.active.causal[slot.edge_index],
                CellType::Reduction => &self.active.reduce[slot.edge_index],
            };
            let mask: Vec<bool> = list
                .iter()
                .map(|&oi| {
                    let fam = self.space.operations[oi].family;
                    let targeted = matches!(fam, OpFamily::DilatedSeparableConv | OpFamily::AvgPool);
                    targeted && rng.random_bool(p)
                })
                .collect();
            self.net.graph.set_dropout(slot.node, Some(mask));
        }
    }

    pub fn clear_dropout(&mut self) {
        for si in 0..self.slots.len() {
            let node = self.slots[si].node;
            self.net.graph.set_dropout(node, None);
        }
    }

    pub fn param_count(&self) -> usize {
        self.net.graph.params.trainable_len()
    }
}
