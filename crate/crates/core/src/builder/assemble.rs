use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::arch::{CellType, MacroPlan, OpFamily, OperationKind};
use crate::tensor::{
    same_padding, BnSpec, ConvSpec, Graph, NodeId, OpDesc, Pad, PoolSpec, Scalar, Tensor,
};

use super::{BuildError, NetOpts};

/// Graph-under-construction plus the weight init stream.
pub(super) struct NetBuilder<S: Scalar> {
    pub graph: Graph<S>,
    rng: ChaCha20Rng,
    bn_affine: bool,
}

impl<S: Scalar> NetBuilder<S> {
    pub fn new(seed: u64, bn_affine: bool) -> Self {
        NetBuilder { graph: Graph::new(), rng: ChaCha20Rng::seed_from_u64(seed), bn_affine }
    }

    fn he_tensor(&mut self, shape: [usize; 4], fan_in: usize) -> Tensor<S> {
        let std = (2.0 / fan_in as f64).sqrt();
        let len = shape.iter().product();
        let data: Vec<S> = (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                S::of(z * std)
            })
            .collect();
        Tensor::from_vec(shape, data)
    }

    pub fn conv(&mut self, name: &str, spec: ConvSpec, input: NodeId) -> NodeId {
        let fan = spec.in_ch * spec.kernel.0 * spec.kernel.1;
        let w = self.he_tensor([spec.out_ch, spec.in_ch, spec.kernel.0, spec.kernel.1], fan);
        let wid = self.graph.params.add(format!("{name}.weight"), w, true);
        self.graph.add_node(OpDesc::Conv2d(spec), vec![input], vec![wid])
    }

    pub fn depthwise(&mut self, name: &str, spec: ConvSpec, input: NodeId) -> NodeId {
        let fan = spec.kernel.0 * spec.kernel.1;
        let w = self.he_tensor([spec.in_ch, 1, spec.kernel.0, spec.kernel.1], fan);
        let wid = self.graph.params.add(format!("{name}.weight"), w, true);
        self.graph.add_node(OpDesc::DepthwiseConv2d(spec), vec![input], vec![wid])
    }

    pub fn bn(&mut self, name: &str, ch: usize, input: NodeId) -> NodeId {
        let spec = BnSpec::new(ch, self.bn_affine);
        let mut pids = Vec::new();
        if self.bn_affine {
            pids.push(self.graph.params.add(format!("{name}.gamma"), Tensor::full([1, ch, 1, 1], S::one()), true));
            pids.push(self.graph.params.add(format!("{name}.beta"), Tensor::zeros([1, ch, 1, 1]), true));
        }
        pids.push(self.graph.params.add_buffer(format!("{name}.running_mean"), Tensor::zeros([1, ch, 1, 1])));
        pids.push(self.graph.params.add_buffer(format!("{name}.running_var"), Tensor::full([1, ch, 1, 1], S::one())));
        self.graph.add_node(OpDesc::BatchNorm(spec), vec![input], pids)
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        self.graph.add_node(OpDesc::Relu, vec![input], vec![])
    }

    pub fn linear(&mut self, name: &str, fin: usize, fout: usize, input: NodeId) -> NodeId {
        let w = self.he_tensor([fout, fin, 1, 1], fin);
        let wid = self.graph.params.add(format!("{name}.weight"), w, true);
        let bid = self.graph.params.add(format!("{name}.bias"), Tensor::zeros([fout, 1, 1, 1]), true);
        self.graph.add_node(
            OpDesc::Linear { in_features: fin, out_features: fout },
            vec![input],
            vec![wid, bid],
        )
    }

    /// ReLU, pointwise conv, batch norm. The stride-2 variant matches rates
    /// after a reduction by sampling phase 1 on both axes.
    pub fn preprocess(&mut self, name: &str, input: NodeId, in_ch: usize, out_ch: usize, strided: bool) -> NodeId {
        let stride = if strided { (2, 2) } else { (1, 1) };
        let r = self.relu(input);
        let spec = ConvSpec {
            in_ch,
            out_ch,
            kernel: (1, 1),
            stride,
            dilation: (1, 1),
            pad: same_padding((1, 1), (1, 1), stride, false),
        };
        let c = self.conv(&format!("{name}.conv"), spec, r);
        self.bn(&format!("{name}.bn"), out_ch, c)
    }

    pub fn stem(&mut self, opts: &NetOpts, out_ch: usize, input: NodeId) -> NodeId {
        let spec = ConvSpec {
            in_ch: opts.in_channels,
            out_ch,
            kernel: (3, 3),
            stride: (1, 1),
            dilation: (1, 1),
            pad: same_padding((3, 3), (1, 1), (1, 1), opts.causal_stem),
        };
        let c = self.conv("stem.conv", spec, input);
        self.bn("stem.bn", out_ch, c)
    }

    /// One candidate or fixed edge operation. `relu` is the shared rectified
    /// view of `raw`; convolutional families start from it, pools and
    /// identity read `raw` directly.
    pub fn op_output(
        &mut self,
        name: &str,
        op: &OperationKind,
        raw: NodeId,
        relu: NodeId,
        ch: usize,
        stride: usize,
    ) -> Result<NodeId, BuildError> {
        let s = (stride, stride);
        let d = op.dilation as usize;
        let k = (op.kernel_time as usize, op.kernel_freq as usize);
        Ok(match op.family {
            OpFamily::Zero => self.graph.add_node(OpDesc::Zero { stride: s }, vec![raw], vec![]),
            OpFamily::Identity => {
                if stride == 1 {
                    self.graph.add_node(OpDesc::Identity, vec![raw], vec![])
                } else {
                    let spec = PoolSpec { kernel: (1, 1), stride: s, pad: same_padding((1, 1), (1, 1), s, op.causal) };
                    self.graph.add_node(OpDesc::MaxPool2d(spec), vec![raw], vec![])
                }
            }
            OpFamily::MaxPool => {
                let spec = PoolSpec { kernel: k, stride: s, pad: same_padding(k, (1, 1), s, op.causal) };
                self.graph.add_node(OpDesc::MaxPool2d(spec), vec![raw], vec![])
            }
            OpFamily::AvgPool => {
                let spec = PoolSpec { kernel: k, stride: s, pad: same_padding(k, (1, 1), s, op.causal) };
                self.graph.add_node(OpDesc::AvgPool2d(spec), vec![raw], vec![])
            }
            OpFamily::SeparableConv | OpFamily::DilatedSeparableConv => {
                let blocks = op.conv_stack_count as usize;
                let mut cur = relu;
                for bi in 0..blocks {
                    if bi > 0 {
                        cur = self.relu(cur);
                    }
                    let bs = if bi == 0 { s } else { (1, 1) };
                    let dw = ConvSpec {
                        in_ch: ch,
                        out_ch: ch,
                        kernel: k,
                        stride: bs,
                        dilation: (d, d),
                        pad: same_padding(k, (d, d), bs, op.causal),
                    };
                    cur = self.depthwise(&format!("{name}.b{bi}.dw"), dw, cur);
                    let pw = ConvSpec {
                        in_ch: ch,
                        out_ch: ch,
                        kernel: (1, 1),
                        stride: (1, 1),
                        dilation: (1, 1),
                        pad: Pad::none(),
                    };
                    cur = self.conv(&format!("{name}.b{bi}.pw"), pw, cur);
                    cur = self.bn(&format!("{name}.b{bi}.bn"), ch, cur);
                }
                cur
            }
            OpFamily::FactorizedConvPair => {
                let kt = k.0;
                let (tb, ta) = crate::tensor::axis_same_padding(kt, 1, s.0, op.causal);
                let tconv = ConvSpec {
                    in_ch: ch,
                    out_ch: ch,
                    kernel: (kt, 1),
                    stride: (s.0, 1),
                    dilation: (1, 1),
                    pad: Pad { t_before: tb, t_after: ta, f_before: 0, f_after: 0 },
                };
                let t = self.conv(&format!("{name}.tconv"), tconv, relu);
                let (fb, fa) = crate::tensor::axis_same_padding(kt, 1, s.1, false);
                let fconv = ConvSpec {
                    in_ch: ch,
                    out_ch: ch,
                    kernel: (1, kt),
                    stride: (1, s.1),
                    dilation: (1, 1),
                    pad: Pad { t_before: 0, t_after: 0, f_before: fb, f_after: fa },
                };
                let f = self.conv(&format!("{name}.fconv"), fconv, t);
                self.bn(&format!("{name}.bn"), ch, f)
            }
            OpFamily::Conv => {
                let spec = ConvSpec {
                    in_ch: ch,
                    out_ch: ch,
                    kernel: k,
                    stride: s,
                    dilation: (d, d),
                    pad: same_padding(k, (d, d), s, op.causal),
                };
                let c = self.conv(&format!("{name}.conv"), spec, relu);
                self.bn(&format!("{name}.bn"), ch, c)
            }
        })
    }
}

/// Where an edge op sits inside the network.
pub(super) struct EdgeSite {
    pub cell_index: usize,
    pub cell_type: CellType,
    /// Position in the cell's (to, from) edge enumeration, 0 based.
    pub edge_index: usize,
    pub from: usize,
    pub to: usize,
    pub ch: usize,
    pub stride: usize,
    pub raw: NodeId,
    pub relu: NodeId,
}

pub(super) struct AssembledNet {
    pub input: NodeId,
    pub logits: NodeId,
    pub posteriors: NodeId,
}

/// Walk the macro layout and let `edge_out` realise each of the 14 edge
/// sites per cell, either as a weighted candidate mix or a single op.
pub(super) fn assemble_network<S: Scalar, F>(
    b: &mut NetBuilder<S>,
    plan: &MacroPlan,
    opts: &NetOpts,
    classes: usize,
    intermediate_count: usize,
    mut edge_out: F,
) -> Result<AssembledNet, BuildError>
where
    F: FnMut(&mut NetBuilder<S>, &EdgeSite) -> Result<Option<NodeId>, BuildError>,
{
    if classes < 2 {
        return Err(BuildError::Request(format!("need at least 2 classes, got {classes}")));
    }
    if opts.n_freq == 0 || opts.in_channels == 0 {
        return Err(BuildError::Request("input planes must be non-empty".into()));
    }
    let input = b.graph.add_node(OpDesc::Input { slot: 0 }, vec![], vec![]);
    let stem_ch = plan.initial_channels;
    let stem = b.stem(opts, stem_ch, input);

    // (node, channels) per finished cell; slot -1 and -2 fall back to the stem.
    let mut outs: Vec<(NodeId, usize)> = Vec::new();
    let mut f_cur = opts.n_freq;
    for i in 0..plan.total_cells {
        let kind = plan.cell_kind(i);
        let ch = plan.channels_at(i);
        let (s1, s1_ch) = if i >= 1 { outs[i - 1] } else { (stem, stem_ch) };
        let (s0, s0_ch) = if i >= 2 { outs[i - 2] } else { (stem, stem_ch) };
        let pp0_strided = i >= 1 && plan.cell_kind(i - 1) == CellType::Reduction;
        let prefix = format!("c{i}");
        let pp0 = b.preprocess(&format!("{prefix}.pp0"), s0, s0_ch, ch, pp0_strided);
        let pp1 = b.preprocess(&format!("{prefix}.pp1"), s1, s1_ch, ch, false);

        let mut states = vec![pp0, pp1];
        let mut relus = vec![b.relu(pp0), b.relu(pp1)];
        let mut edge_index = 0usize;
        for node in 0..intermediate_count {
            let to = node + 2;
            let mut parts = Vec::new();
            for from in 0..to {
                let stride = if kind == CellType::Reduction && from < 2 { 2 } else { 1 };
                let site = EdgeSite {
                    cell_index: i,
                    cell_type: kind,
                    edge_index,
                    from,
                    to,
                    ch,
                    stride,
                    raw: states[from],
                    relu: relus[from],
                };
                if let Some(out) = edge_out(b, &site)? {
                    parts.push(out);
                }
                edge_index += 1;
            }
            if parts.is_empty() {
                return Err(BuildError::Request(format!(
                    "cell {i} node {to} ends up with no incoming edges"
                )));
            }
            let sum = b.graph.add_node(OpDesc::Add, parts, vec![]);
            states.push(sum);
            relus.push(b.relu(sum));
        }
        let cell_out = b.graph.add_node(
            OpDesc::ConcatChannels,
            states[2..2 + intermediate_count].to_vec(),
            vec![],
        );
        outs.push((cell_out, ch * intermediate_count));
        if kind == CellType::Reduction {
            f_cur = f_cur.div_ceil(2);
        }
    }

    let (last, last_ch) = *outs.last().expect("at least one cell");
    let pool = b.graph.add_node(
        OpDesc::AvgPool2d(PoolSpec { kernel: (1, f_cur), stride: (1, 1), pad: Pad::none() }),
        vec![last],
        vec![],
    );
    let mut cur = pool;
    let mut cur_ch = last_ch;
    for (hi, &width) in plan.head.hidden_widths.iter().enumerate() {
        cur = b.linear(&format!("head.fc{hi}"), cur_ch, width as usize, cur);
        cur = b.relu(cur);
        cur_ch = width as usize;
    }
    let logits = b.linear("head.out", cur_ch, classes, cur);
    let posteriors = b.graph.add_node(OpDesc::SoftmaxChannels, vec![logits], vec![]);
    Ok(AssembledNet { input, logits, posteriors })
}
