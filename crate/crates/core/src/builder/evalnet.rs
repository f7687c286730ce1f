use crate::arch::{build_macro_plan, validate_genotype, CellType, Genotype, SearchSpaceSpec};

use super::assemble::{assemble_network, NetBuilder};
use super::{BuildError, NetCore, NetOpts};

pub struct EvalNet<S: crate::tensor::Scalar> {
    pub net: NetCore<S>,
    pub genotype_hash: String,
    pub depth: usize,
    pub channels: usize,
}

impl<S: crate::tensor::Scalar> EvalNet<S> {
    pub fn param_count(&self) -> usize {
        self.net.graph.params.trainable_len()
    }
}

/// Discrete network for a genotype. The genotype is validated against its
/// declared space first; edge causality comes from the recorded ops.
pub fn build_eval_net<S: crate::tensor::Scalar>(
    g: &Genotype,
    depth: usize,
    channels: usize,
    classes: usize,
    opts: &NetOpts,
) -> Result<EvalNet<S>, BuildError> {
    let space = SearchSpaceSpec::preset(g.space);
    let report = validate_genotype(g, &space)?;
    if !report.is_valid() {
        return Err(BuildError::Invalid(report));
    }
    let plan = build_macro_plan(depth, channels)?;
    let mut b = NetBuilder::<S>::new(opts.seed, opts.bn_affine);
    let ic = space.intermediate_count as usize;
    let parts = assemble_network(&mut b, &plan, opts, classes, ic, |b, site| {
        let cell = match site.cell_type {
            CellType::Causal => &g.causal_cell,
            CellType::Reduction => &g.reduction_cell,
        };
        let Some(edge) = cell.edges.iter().find(|e| e.from == site.from && e.to == site.to) else {
            return Ok(None);
        };
        let name = format!("c{}.e{}", site.cell_index, site.edge_index);
        let out = b.op_output(&name, &edge.op, site.raw, site.relu, site.ch, site.stride)?;
        Ok(Some(out))
    })?;
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
    Ok(EvalNet { net, genotype_hash: g.hash(), depth, channels })
}
