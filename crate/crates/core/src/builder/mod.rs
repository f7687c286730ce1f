//! Network assembly: weight-sharing supernets for search and discrete
//! evaluation networks from genotypes, over the shared macro layout.

mod assemble;
mod evalnet;
mod mixed;
mod net;
mod supernet;

pub use evalnet::{build_eval_net, EvalNet};
pub use mixed::mixed_op;
pub use net::{accuracy, ce_loss_and_seed, NetCore, NetOpts};
pub use supernet::{build_supernet, ActiveOps, AlphaParams, DropoutCells, EdgeSlot, SuperNet};

use thiserror::Error;

use crate::arch::{OperationKind, ValidationReport};
use crate::tensor::{axis_same_padding, TensorError};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("bad build request: {0}")]
    Request(String),
    #[error("genotype failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Arch(#[from] crate::arch::ArchError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Stride-1 padding of an op as (time_left, time_right, freq_top,
/// freq_bottom). Causal padding is entirely left of the current frame; the
/// frequency axis is always symmetric.
pub fn padding_for(op: &OperationKind, causal: bool) -> (usize, usize, usize, usize) {
    let blocks = op.time_blocks();
    if blocks.is_empty() {
        return (0, 0, 0, 0);
    }
    let (tl, tr) = axis_same_padding(op.kernel_time as usize, op.dilation as usize, 1, causal);
    let (ft, fb) = axis_same_padding(op.kernel_freq as usize, op.dilation as usize, 1, false);
    (tl, tr, ft, fb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{CellSpec, CellType, Edge, Genotype, GenotypeMetadata, SearchSpaceSpec, SpaceName};

    fn two_tap_genotype() -> Genotype {
        let mk_cell = |ct: CellType| {
            let causal = ct == CellType::Causal;
            let mut edges = Vec::new();
            for to in 2..6 {
                edges.push(Edge { from: 0, to, op: OperationKind::sep_conv(3, 1).with_causal(causal) });
                edges.push(Edge { from: 1, to, op: OperationKind::max_pool(3).with_causal(causal) });
            }
            CellSpec { cell_type: ct, edges }
        };
        Genotype {
            space: SpaceName::LowLatency,
            causal_cell: mk_cell(CellType::Causal),
            reduction_cell: mk_cell(CellType::Reduction),
            metadata: GenotypeMetadata::default(),
        }
    }

    fn small_opts() -> NetOpts {
        NetOpts { bn_affine: false, causal_stem: false, n_freq: 8, in_channels: 3, seed: 7 }
    }

    #[test]
    fn supernet_decimates_time_by_four() {
        let space = SearchSpaceSpec::low_latency();
        let active = ActiveOps::full(&space);
        let mut sn = build_supernet::<f32>(&space, &active, 4, 4, 3, &small_opts()).unwrap();
        let x = crate::tensor::Tensor::zeros([1, 3, 8, 8]);
        let y = sn.net.forward_infer(x).unwrap();
        assert_eq!(y.shape(), [1, 3, 2, 1]);
        for j in 0..2 {
            let s: f64 = (0..3).map(|c| y.at(0, c, j, 0) as f64).sum();
            assert!((s - 1.0).abs() < 1e-5, "posteriors sum to 1, got {s}");
        }
        assert_eq!(sn.slots.len(), 4 * 14);
        assert!(build_supernet::<f32>(&space, &active, 4, 4, 1, &small_opts()).is_err());
        assert!(build_supernet::<f32>(&space, &active, 2, 4, 3, &small_opts()).is_err());
    }

    #[test]
    fn supernet_alpha_gradients_flow() {
        let space = SearchSpaceSpec::low_latency();
        let active = ActiveOps::full(&space);
        let mut sn = build_supernet::<f32>(&space, &active, 3, 4, 2, &small_opts()).unwrap();
        let n = 3 * 8 * 8;
        let x = crate::tensor::Tensor::from_vec(
            [1, 3, 8, 8],
            (0..n).map(|i| ((i * 37 % 11) as f32 - 5.0) / 5.0).collect(),
        );
        sn.net.forward_train(x).unwrap();
        let labels: Vec<u32> = vec![1, 0, 1, 0, 1, 0, 1, 0];
        let (loss, seed) = {
            let p = sn.net.posteriors_ref().unwrap();
            ce_loss_and_seed(p, &[&labels], 2, 4).unwrap()
        };
        assert!(loss.is_finite() && loss > 0.0);
        sn.net.backward_from_logits(seed).unwrap();
        let any_alpha = sn
            .alpha_ids()
            .iter()
            .any(|&id| sn.net.graph.params.grad(id).as_slice().iter().any(|g| g.abs() > 0.0));
        assert!(any_alpha, "some alpha received gradient");
    }

    #[test]
    fn eval_net_matches_genotype_and_scales_with_width() {
        let g = two_tap_genotype();
        let mut small = build_eval_net::<f32>(&g, 8, 8, 5, &small_opts()).unwrap();
        let x = crate::tensor::Tensor::zeros([2, 3, 16, 8]);
        let y = small.net.forward_infer(x).unwrap();
        assert_eq!(y.shape(), [2, 5, 4, 1]);
        let big = build_eval_net::<f32>(&g, 8, 16, 5, &small_opts()).unwrap();
        let ratio = big.param_count() as f64 / small.param_count() as f64;
        assert!(ratio > 3.0 && ratio < 4.8, "width doubling multiplies params by {ratio}");
        assert_eq!(small.genotype_hash, g.hash());
    }

    #[test]
    fn eval_net_rejects_invalid_genotypes() {
        let mut g = two_tap_genotype();
        g.causal_cell.edges[0].op = OperationKind::sep_conv(3, 1);
        let err = build_eval_net::<f32>(&g, 4, 4, 3, &small_opts());
        assert!(matches!(err, Err(BuildError::Invalid(_))));
    }

    #[test]
    fn padding_examples() {
        assert_eq!(padding_for(&OperationKind::sep_conv(5, 1), true), (4, 0, 2, 2));
        assert_eq!(padding_for(&OperationKind::sep_conv(3, 1), false), (1, 1, 1, 1));
        assert_eq!(padding_for(&OperationKind::dil_sep_conv(3, 2), true), (4, 0, 2, 2));
        assert_eq!(padding_for(&OperationKind::zero(), true), (0, 0, 0, 0));
        assert_eq!(padding_for(&OperationKind::identity(), false), (0, 0, 0, 0));
    }
}
