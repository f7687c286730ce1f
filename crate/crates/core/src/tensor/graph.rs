//! Static compute graph with reverse-mode gradients.
//!
//! Nodes are appended in topological order (inputs must already exist), so
//! forward is a single scan and backward the reverse scan. Activations are
//! retained in training mode for the backward pass and freed eagerly in
//! inference mode once every consumer has run; backward frees both the
//! activation and the incoming gradient of a node as soon as it is processed.

use serde::{Deserialize, Serialize};

use super::kernels as k;
use super::pad::Pad;
use super::{Scalar, Tensor, TensorError};

pub type NodeId = usize;
pub type ParamId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub pad: Pad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: Pad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnSpec {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub affine: bool,
}

impl BnSpec {
    pub fn new(channels: usize, affine: bool) -> Self {
        BnSpec { channels, eps: 1e-5, momentum: 0.1, affine }
    }
}

/// Softmax-weighted sum over candidate branches sharing one logit row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedSumSpec {
    /// Indices into the alpha row that participate in the softmax.
    pub active: Vec<usize>,
    /// Per active slot: position in the node's input list, or None for
    /// branches with no computation (the zero op).
    pub branch_of: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpDesc {
    Input { slot: usize },
    Conv2d(ConvSpec),
    DepthwiseConv2d(ConvSpec),
    MaxPool2d(PoolSpec),
    AvgPool2d(PoolSpec),
    Relu,
    BatchNorm(BnSpec),
    ConcatChannels,
    Add,
    Linear { in_features: usize, out_features: usize },
    SoftmaxChannels,
    WeightedSum(WeightedSumSpec),
    Zero { stride: (usize, usize) },
    Identity,
}

pub struct Node {
    pub op: OpDesc,
    pub inputs: Vec<NodeId>,
    pub params: Vec<ParamId>,
}

pub struct ParamEntry<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub trainable: bool,
    pub buffer: bool,
}

#[derive(Default)]
pub struct ParamStore<S> {
    pub entries: Vec<ParamEntry<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.entries.push(ParamEntry { name: name.into(), value, grad, trainable, buffer: false });
        self.entries.len() - 1
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let grad = Tensor::zeros([0, 0, 0, 0]);
        self.entries.push(ParamEntry { name: name.into(), value, grad, trainable: false, buffer: true });
        self.entries.len() - 1
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id].grad
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            if !e.buffer {
                e.grad.fill(S::zero());
            }
        }
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        assert!(!self.entries[id].buffer, "buffers are never trainable");
        self.entries[id].trainable = trainable;
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.entries.len()).filter(|&i| self.entries[i].trainable).collect()
    }

    /// Number of scalar values held by trainable parameters.
    pub fn trainable_len(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }
}

enum Scratch<S> {
    None,
    MaxArg { in_shape: [usize; 4], arg: Vec<u32> },
    InShape([usize; 4]),
    BnStats { mean: Vec<S>, var: Vec<S> },
    WsWeights(Vec<S>),
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node>,
    pub params: ParamStore<S>,
    mode: Mode,
    acts: Vec<Option<Tensor<S>>>,
    scratch: Vec<Scratch<S>>,
    dropout: Vec<Option<Vec<bool>>>,
    consumers: Vec<u32>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: ParamStore::new(),
            mode: Mode::Infer,
            acts: Vec::new(),
            scratch: Vec::new(),
            dropout: Vec::new(),
            consumers: Vec::new(),
        }
    }

    pub fn add_node(&mut self, op: OpDesc, inputs: Vec<NodeId>, params: Vec<ParamId>) -> NodeId {
        let id = self.nodes.len();
        for &i in &inputs {
            assert!(i < id, "graph nodes must be appended in topological order");
        }
        for &p in &params {
            assert!(p < self.params.entries.len(), "unknown param {p}");
        }
        self.nodes.push(Node { op, inputs, params });
        self.acts.push(None);
        self.scratch.push(Scratch::None);
        self.dropout.push(None);
        id
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Per-branch dropout mask for a weighted-sum node, applied in training
    /// mode only. Masked branches contribute nothing to the sum while their
    /// logits stay inside the softmax.
    pub fn set_dropout(&mut self, node: NodeId, mask: Option<Vec<bool>>) {
        if let Some(m) = &mask {
            match &self.nodes[node].op {
                OpDesc::WeightedSum(ws) => assert_eq!(m.len(), ws.active.len()),
                _ => panic!("dropout only applies to weighted-sum nodes"),
            }
        }
        self.dropout[node] = mask;
    }

    pub fn activation(&self, id: NodeId) -> Result<&Tensor<S>, TensorError> {
        self.acts[id]
            .as_ref()
            .ok_or_else(|| TensorError::Graph(format!("activation of node {id} not available")))
    }

    pub fn take_activation(&mut self, id: NodeId) -> Result<Tensor<S>, TensorError> {
        self.acts[id]
            .take()
            .ok_or_else(|| TensorError::Graph(format!("activation of node {id} not available")))
    }

    pub fn zero_grads(&mut self) {
        self.params.zero_grads();
    }

    fn refresh_consumers(&mut self) {
        if self.consumers.len() == self.nodes.len() {
            return;
        }
        let mut counts = vec![0u32; self.nodes.len()];
        for n in &self.nodes {
            for &i in &n.inputs {
                counts[i] += 1;
            }
        }
        self.consumers = counts;
    }

    /// Run the graph. `feeds` supplies one tensor per input node; `keep`
    /// lists nodes whose activations must survive the pass. Training mode
    /// retains every activation for the backward pass.
    pub fn forward(&mut self, feeds: Vec<(NodeId, Tensor<S>)>, keep: &[NodeId]) -> Result<(), TensorError> {
        self.refresh_consumers();
        for a in &mut self.acts {
            *a = None;
        }
        for (id, t) in feeds {
            match self.nodes[id].op {
                OpDesc::Input { .. } => self.acts[id] = Some(t),
                _ => return Err(TensorError::Graph(format!("node {id} is not an input"))),
            }
        }
        let free = self.mode == Mode::Infer;
        let mut remaining = self.consumers.clone();
        for id in 0..self.nodes.len() {
            self.eval_node(id)?;
            if free {
                for i in 0..self.nodes[id].inputs.len() {
                    let src = self.nodes[id].inputs[i];
                    remaining[src] -= 1;
                    if remaining[src] == 0 && !keep.contains(&src) {
                        self.acts[src] = None;
                    }
                }
            }
        }
        Ok(())
    }

    fn input_act(&self, id: NodeId, pos: usize) -> Result<&Tensor<S>, TensorError> {
        let src = self.nodes[id].inputs[pos];
        self.acts[src]
            .as_ref()
            .ok_or_else(|| TensorError::Graph(format!("node {id} input {src} has no activation")))
    }

    fn eval_node(&mut self, id: NodeId) -> Result<(), TensorError> {
        let (out, scratch) = match &self.nodes[id].op {
            OpDesc::Input { slot } => {
                if self.acts[id].is_none() {
                    return Err(TensorError::Graph(format!("input slot {slot} (node {id}) not fed")));
                }
                return Ok(());
            }
            OpDesc::Conv2d(spec) => {
                let spec = *spec;
                let x = self.input_act(id, 0)?;
                let w = self.params.value(self.nodes[id].params[0]);
                (k::conv2d_forward(x, w, &spec)?, Scratch::None)
            }
            OpDesc::DepthwiseConv2d(spec) => {
                let spec = *spec;
                let x = self.input_act(id, 0)?;
                let w = self.params.value(self.nodes[id].params[0]);
                (k::depthwise_forward(x, w, &spec)?, Scratch::None)
            }
            OpDesc::MaxPool2d(spec) => {
                let spec = *spec;
                let x = self.input_act(id, 0)?;
                let in_shape = x.shape();
                let (y, arg) = k::max_pool_forward(x, &spec);
                (y, Scratch::MaxArg { in_shape, arg })
            }
            OpDesc::AvgPool2d(spec) => {
                let spec = *spec;
                let x = self.input_act(id, 0)?;
                let in_shape = x.shape();
                (k::avg_pool_forward(x, &spec), Scratch::InShape(in_shape))
            }
            OpDesc::Relu => {
                let x = self.input_act(id, 0)?;
                (x.map(|v| if v > S::zero() { v } else { S::zero() }), Scratch::None)
            }
            OpDesc::BatchNorm(spec) => {
                let spec = *spec;
                self.eval_batchnorm(id, &spec)?;
                return Ok(());
            }
            OpDesc::ConcatChannels => {
                let n_in = self.nodes[id].inputs.len();
                let first = self.input_act(id, 0)?.shape();
                let mut ch = 0;
                for pos in 0..n_in {
                    let s = self.input_act(id, pos)?.shape();
                    if [s[0], s[2], s[3]] != [first[0], first[2], first[3]] {
                        return Err(k::shape_err("concat inputs", first.to_vec(), s.to_vec()));
                    }
                    ch += s[1];
                }
                let mut y = Tensor::zeros([first[0], ch, first[2], first[3]]);
                let tf = first[2] * first[3];
                let mut c_off = 0;
                for pos in 0..n_in {
                    let x = self.input_act(id, pos)?;
                    let cx = x.shape()[1];
                    for b in 0..first[0] {
                        let src = &x.as_slice()[b * cx * tf..(b + 1) * cx * tf];
                        let dst_start = (b * ch + c_off) * tf;
                        y.as_mut_slice()[dst_start..dst_start + cx * tf].copy_from_slice(src);
                    }
                    c_off += cx;
                }
                (y, Scratch::None)
            }
            OpDesc::Add => {
                let n_in = self.nodes[id].inputs.len();
                let first = self.input_act(id, 0)?.shape();
                let mut y = Tensor::zeros(first);
                for pos in 0..n_in {
                    let x = self.input_act(id, pos)?;
                    if x.shape() != first {
                        return Err(k::shape_err("add inputs", first.to_vec(), x.shape().to_vec()));
                    }
                    let ys = y.as_mut_slice();
                    for (yi, xi) in ys.iter_mut().zip(x.as_slice()) {
                        *yi = *yi + *xi;
                    }
                }
                (y, Scratch::None)
            }
            OpDesc::Linear { in_features, out_features } => {
                let (fin, fout) = (*in_features, *out_features);
                let x = self.input_act(id, 0)?;
                let xs = x.shape();
                if xs[1] != fin {
                    return Err(k::shape_err("linear input features", vec![fin], vec![xs[1]]));
                }
                let w = self.params.value(self.nodes[id].params[0]);
                let bias = self.params.value(self.nodes[id].params[1]);
                let tf = xs[2] * xs[3];
                let mut y = Tensor::zeros([xs[0], fout, xs[2], xs[3]]);
                for b in 0..xs[0] {
                    let xin = &x.as_slice()[b * fin * tf..(b + 1) * fin * tf];
                    let yout = &mut y.as_mut_slice()[b * fout * tf..(b + 1) * fout * tf];
                    S::gemm(fout, fin, tf, S::one(), w.as_slice(), xin, S::zero(), yout);
                }
                for b in 0..xs[0] {
                    for c in 0..fout {
                        let bv = bias.as_slice()[c];
                        let start = (b * fout + c) * tf;
                        for v in &mut y.as_mut_slice()[start..start + tf] {
                            *v = *v + bv;
                        }
                    }
                }
                (y, Scratch::None)
            }
            OpDesc::SoftmaxChannels => {
                let x = self.input_act(id, 0)?;
                let [bs, ch, t_len, f_len] = x.shape();
                let mut y = Tensor::zeros(x.shape());
                for b in 0..bs {
                    for t in 0..t_len {
                        for f in 0..f_len {
                            let mut mx = S::neg_infinity();
                            for c in 0..ch {
                                mx = mx.max(x.at(b, c, t, f));
                            }
                            let mut z = S::zero();
                            for c in 0..ch {
                                let e = (x.at(b, c, t, f) - mx).exp();
                                y.set(b, c, t, f, e);
                                z = z + e;
                            }
                            for c in 0..ch {
                                let v = y.at(b, c, t, f) / z;
                                y.set(b, c, t, f, v);
                            }
                        }
                    }
                }
                (y, Scratch::None)
            }
            OpDesc::WeightedSum(ws) => {
                let ws = ws.clone();
                let alpha = self.params.value(self.nodes[id].params[0]).clone();
                let weights = softmax_slots(alpha.as_slice(), &ws.active);
                let drop = if self.mode == Mode::Train { self.dropout[id].clone() } else { None };
                let mut y: Option<Tensor<S>> = None;
                for (slot, branch) in ws.branch_of.iter().enumerate() {
                    let Some(pos) = branch else { continue };
                    if drop.as_ref().is_some_and(|m| m[slot]) {
                        continue;
                    }
                    let x = self.input_act(id, *pos)?;
                    let w = weights[slot];
                    match &mut y {
                        None => y = Some(x.map(|v| v * w)),
                        Some(acc) => {
                            if acc.shape() != x.shape() {
                                return Err(k::shape_err(
                                    "weighted sum branches",
                                    acc.shape().to_vec(),
                                    x.shape().to_vec(),
                                ));
                            }
                            for (a, b) in acc.as_mut_slice().iter_mut().zip(x.as_slice()) {
                                *a = *a + *b * w;
                            }
                        }
                    }
                }
                let y = match y {
                    Some(t) => t,
                    // All branches zero or dropped: shape follows input 0.
                    None => Tensor::zeros(self.input_act(id, 0)?.shape()),
                };
                (y, Scratch::WsWeights(weights))
            }
            OpDesc::Zero { stride } => {
                let stride = *stride;
                let x = self.input_act(id, 0)?;
                let s = x.shape();
                (
                    Tensor::zeros([s[0], s[1], s[2].div_ceil(stride.0), s[3].div_ceil(stride.1)]),
                    Scratch::InShape(s),
                )
            }
            OpDesc::Identity => {
                let x = self.input_act(id, 0)?;
                (x.clone(), Scratch::None)
            }
        };
        self.acts[id] = Some(out);
        self.scratch[id] = scratch;
        Ok(())
    }

    fn eval_batchnorm(&mut self, id: NodeId, spec: &BnSpec) -> Result<(), TensorError> {
        let pids = self.nodes[id].params.clone();
        let (gamma_id, beta_id, rm_id, rv_id) = if spec.affine {
            (Some(pids[0]), Some(pids[1]), pids[2], pids[3])
        } else {
            (None, None, pids[0], pids[1])
        };
        let x = self.input_act(id, 0)?.clone();
        let [bs, ch, t_len, f_len] = x.shape();
        if ch != spec.channels {
            return Err(k::shape_err("batchnorm channels", vec![spec.channels], vec![ch]));
        }
        let n = bs * t_len * f_len;
        let mut y = Tensor::zeros(x.shape());
        let tf = t_len * f_len;
        let train = self.mode == Mode::Train;
        let (mean, var) = if train {
            if n < 2 {
                return Err(TensorError::Graph("batchnorm needs more than one position".into()));
            }
            let mut mean = vec![S::zero(); ch];
            let mut var = vec![S::zero(); ch];
            for c in 0..ch {
                let mut acc = S::zero();
                for b in 0..bs {
                    let start = (b * ch + c) * tf;
                    for &v in &x.as_slice()[start..start + tf] {
                        acc = acc + v;
                    }
                }
                let m = acc / S::of(n as f64);
                let mut sq = S::zero();
                for b in 0..bs {
                    let start = (b * ch + c) * tf;
                    for &v in &x.as_slice()[start..start + tf] {
                        let d = v - m;
                        sq = sq + d * d;
                    }
                }
                mean[c] = m;
                var[c] = sq / S::of(n as f64);
            }
            // Running stats keep the biased batch variance; inference uses
            // them as-is, so the convention only needs to be consistent.
            let mom = S::of(spec.momentum);
            let one_m = S::one() - mom;
            for c in 0..ch {
                let rm = self.params.value(rm_id).as_slice()[c];
                let rv = self.params.value(rv_id).as_slice()[c];
                self.params.value_mut(rm_id).as_mut_slice()[c] = one_m * rm + mom * mean[c];
                self.params.value_mut(rv_id).as_mut_slice()[c] = one_m * rv + mom * var[c];
            }
            (mean, var)
        } else {
            (
                self.params.value(rm_id).as_slice().to_vec(),
                self.params.value(rv_id).as_slice().to_vec(),
            )
        };
        let eps = S::of(spec.eps);
        for c in 0..ch {
            let inv = (var[c] + eps).sqrt().recip();
            let (g, bta) = match (gamma_id, beta_id) {
                (Some(gi), Some(bi)) => {
                    (self.params.value(gi).as_slice()[c], self.params.value(bi).as_slice()[c])
                }
                _ => (S::one(), S::zero()),
            };
            for b in 0..bs {
                let start = (b * ch + c) * tf;
                for i in start..start + tf {
                    y.as_mut_slice()[i] = (x.as_slice()[i] - mean[c]) * inv * g + bta;
                }
            }
        }
        self.acts[id] = Some(y);
        self.scratch[id] = if train { Scratch::BnStats { mean, var } } else { Scratch::None };
        Ok(())
    }

    /// Reverse pass from explicit seed gradients. Training mode only; frees
    /// activations and upstream gradients as it goes.
    pub fn backward(&mut self, seeds: Vec<(NodeId, Tensor<S>)>) -> Result<(), TensorError> {
        if self.mode != Mode::Train {
            return Err(TensorError::Graph("backward requires training mode".into()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            let expected = self
                .acts[id]
                .as_ref()
                .ok_or_else(|| TensorError::Graph(format!("seed node {id} was not evaluated")))?
                .shape();
            if g.shape() != expected {
                return Err(k::shape_err("backward seed", expected.to_vec(), g.shape().to_vec()));
            }
            accumulate(&mut grads[id], g);
        }
        for id in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[id].take() else {
                self.acts[id] = None;
                continue;
            };
            self.backprop_node(id, gy, &mut grads)?;
            self.acts[id] = None;
            self.scratch[id] = Scratch::None;
        }
        Ok(())
    }

    fn backprop_node(
        &mut self,
        id: NodeId,
        gy: Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
    ) -> Result<(), TensorError> {
        let inputs = self.nodes[id].inputs.clone();
        match &self.nodes[id].op {
            OpDesc::Input { .. } => {}
            OpDesc::Conv2d(spec) => {
                let spec = *spec;
                let wid = self.nodes[id].params[0];
                let mut gw = std::mem::replace(&mut self.params.entries[wid].grad, Tensor::zeros([0, 0, 0, 0]));
                let x = self.acts[inputs[0]]
                    .as_ref()
                    .ok_or_else(|| TensorError::Graph(format!("conv input {} freed early", inputs[0])))?;
                let gx = k::conv2d_backward(x, self.params.value(wid), &spec, &gy, &mut gw)?;
                self.params.entries[wid].grad = gw;
                accumulate(&mut grads[inputs[0]], gx);
            }
            OpDesc::DepthwiseConv2d(spec) => {
                let spec = *spec;
                let wid = self.nodes[id].params[0];
                let mut gw = std::mem::replace(&mut self.params.entries[wid].grad, Tensor::zeros([0, 0, 0, 0]));
                let x = self.acts[inputs[0]]
                    .as_ref()
                    .ok_or_else(|| TensorError::Graph(format!("conv input {} freed early", inputs[0])))?;
                let gx = k::depthwise_backward(x, self.params.value(wid), &spec, &gy, &mut gw)?;
                self.params.entries[wid].grad = gw;
                accumulate(&mut grads[inputs[0]], gx);
            }
            OpDesc::MaxPool2d(_) => {
                let Scratch::MaxArg { in_shape, arg } = &self.scratch[id] else {
                    return Err(TensorError::Graph("max pool scratch missing".into()));
                };
                let gx = k::max_pool_backward(*in_shape, arg, &gy);
                accumulate(&mut grads[inputs[0]], gx);
            }
            OpDesc::AvgPool2d(spec) => {
                let spec = *spec;
                let Scratch::InShape(in_shape) = self.scratch[id] else {
                    return Err(TensorError::Graph("avg pool scratch missing".into()));
                };
                let gx = k::avg_pool_backward(in_shape, &spec, &gy);
                accumulate(&mut grads[inputs[0]], gx);
            }
            OpDesc::Relu => {
                let x = self.acts[inputs[0]]
                    .as_ref()
                    .ok_or_else(|| TensorError::Graph("relu input freed early".into()))?;
                let mut gx = gy;
                for (g, &v) in gx.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    if v <= S::zero() {
                        *g = S::zero();
                    }
                }
                accumulate(&mut grads[inputs[0]], gx);
            }
            OpDesc::BatchNorm(spec) => {
                let spec = *spec;
                self.backprop_batchnorm(id, &spec, gy, grads)?;
            }
            OpDesc::ConcatChannels => {
                let [bs, _, t_len, f_len] = gy.shape();
                let tf = t_len * f_len;
                let total_ch = gy.shape()[1];
                let mut c_off = 0;
                for &src in &inputs {
                    let cx = self
                        .acts[src]
                        .as_ref()
                        .ok_or_else(|| TensorError::Graph("concat input freed early".into()))?
                        .shape()[1];
                    let mut gx = Tensor::zeros([bs, cx, t_len, f_len]);
                    for b in 0..bs {
                        let src_start = (b * total_ch + c_off) * tf;
                        gx.as_mut_slice()[b * cx * tf..(b + 1) * cx * tf]
                            .copy_from_slice(&gy.as_slice()[src_start..src_start + cx * tf]);
                    }
                    accumulate(&mut grads[src], gx);
                    c_off += cx;
                }
            }
            OpDesc::Add => {
                for (pos, &src) in inputs.iter().enumerate() {
                    if pos + 1 == inputs.len() {
                        accumulate(&mut grads[src], gy);
                        break;
                    }
                    accumulate(&mut grads[src], gy.clone());
                }
            }
            OpDesc::Linear { in_features, out_features } => {
                let (fin, fout) = (*in_features, *out_features);
                let wid = self.nodes[id].params[0];
                let bid = self.nodes[id].params[1];
                let x = self.acts[inputs[0]]
                    .as_ref()
                    .ok_or_else(|| TensorError::Graph("linear input freed early".into()))?;
                let xs = x.shape();
                let tf = xs[2] * xs[3];
                let mut gx = Tensor::zeros(xs);
                {
                    let w = self.params.value(wid).as_slice().to_vec();
                    let mut gw = std::mem::replace(&mut self.params.entries[wid].grad, Tensor::zeros([0, 0, 0, 0]));
                    for b in 0..xs[0] {
                        let gyb = &gy.as_slice()[b * fout * tf..(b + 1) * fout * tf];
                        let xb = &x.as_slice()[b * fin * tf..(b + 1) * fin * tf];
                        S::gemm_strided(fout, tf, fin, S::one(), gyb, tf as isize, 1, xb, 1, tf as isize, S::one(), gw.as_mut_slice());
                        let gxb = &mut gx.as_mut_slice()[b * fin * tf..(b + 1) * fin * tf];
                        S::gemm_strided(fin, fout, tf, S::one(), &w, 1, fin as isize, gyb, tf as isize, 1, S::zero(), gxb);
                    }
                    self.params.entries[wid].grad = gw;
                }
                {
                    let gb = &mut self.params.entries[bid].grad;
                    for b in 0..xs[0] {
                        for c in 0..fout {
                            let start = (b * fout + c) * tf;
                            let mut acc = S::zero();
                            for &g in &gy.as_slice()[start..start + tf] {
                                acc = acc + g;
                            }
                            gb.as_mut_slice()[c] = gb.as_mut_slice()[c] + acc;
                        }
                    }
                }
                accumulate(&mut grads[inputs[0]], gx);
            }
            OpDesc::SoftmaxChannels => {
                let y = self.acts[id]
                    .as_ref()
                    .ok_or_else(|| TensorError::Graph("softmax output freed early".into()))?;
                let [bs, ch, t_len, f_len] = y.shape();
                let mut gx = Tensor::zeros(y.shape());
                for b in 0..bs {
                    for t in 0..t_len {
                        for f in 0..f_len {
                            let mut dot = S::zero();
                            for c in 0..ch {
                                dot = dot + gy.at(b, c, t, f) * y.at(b, c, t, f);
                            }
                            for c in 0..ch {
                                let v = y.at(b, c, t, f) * (gy.at(b, c, t, f) - dot);
                                gx.set(b, c, t, f, v);
                            }
                        }
                    }
                }
                accumulate(&mut grads[inputs[0]], gx);
            }
            OpDesc::WeightedSum(ws) => {
                let ws = ws.clone();
                let aid = self.nodes[id].params[0];
                let Scratch::WsWeights(weights) = &self.scratch[id] else {
                    return Err(TensorError::Graph("weighted sum scratch missing".into()));
                };
                let weights = weights.clone();
                let drop = if self.mode == Mode::Train { self.dropout[id].clone() } else { None };
                // Branch-output dot products drive the softmax jacobian.
                let mut dots = vec![S::zero(); ws.active.len()];
                for (slot, branch) in ws.branch_of.iter().enumerate() {
                    let Some(pos) = branch else { continue };
                    if drop.as_ref().is_some_and(|m| m[slot]) {
                        continue;
                    }
                    let x = self.acts[inputs[*pos]]
                        .as_ref()
                        .ok_or_else(|| TensorError::Graph("weighted sum branch freed early".into()))?;
                    let mut acc = S::zero();
                    for (&a, &b) in x.as_slice().iter().zip(gy.as_slice()) {
                        acc = acc + a * b;
                    }
                    dots[slot] = acc;
                    let gx = gy.map(|v| v * weights[slot]);
                    accumulate(&mut grads[inputs[*pos]], gx);
                }
                let mut inner = S::zero();
                for slot in 0..ws.active.len() {
                    inner = inner + weights[slot] * dots[slot];
                }
                // Frozen score rows accumulate nothing, so a warmup phase
                // leaves them bit-identical with exactly zero gradient.
                if self.params.entries[aid].trainable {
                    let ga = &mut self.params.entries[aid].grad;
                    for (slot, &ai) in ws.active.iter().enumerate() {
                        let g = weights[slot] * (dots[slot] - inner);
                        ga.as_mut_slice()[ai] = ga.as_mut_slice()[ai] + g;
                    }
                }
            }
            OpDesc::Zero { .. } => {}
            OpDesc::Identity => {
                accumulate(&mut grads[inputs[0]], gy);
            }
        }
        Ok(())
    }

    fn backprop_batchnorm(
        &mut self,
        id: NodeId,
        spec: &BnSpec,
        gy: Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
    ) -> Result<(), TensorError> {
        let inputs = self.nodes[id].inputs.clone();
        let pids = self.nodes[id].params.clone();
        let x = self.acts[inputs[0]]
            .as_ref()
            .ok_or_else(|| TensorError::Graph("batchnorm input freed early".into()))?
            .clone();
        let [bs, ch, t_len, f_len] = x.shape();
        let tf = t_len * f_len;
        let n = bs * tf;
        let eps = S::of(spec.eps);
        let Scratch::BnStats { mean, var } = &self.scratch[id] else {
            return Err(TensorError::Graph("batchnorm scratch missing (inference backward unsupported)".into()));
        };
        let (mean, var) = (mean.clone(), var.clone());
        let mut gx = Tensor::zeros(x.shape());
        let n_s = S::of(n as f64);
        for c in 0..ch {
            let inv = (var[c] + eps).sqrt().recip();
            let gamma = if spec.affine { self.params.value(pids[0]).as_slice()[c] } else { S::one() };
            // Accumulate the two reductions, then form gx in a second sweep.
            let mut sum_g = S::zero();
            let mut sum_gx = S::zero();
            for b in 0..bs {
                let start = (b * ch + c) * tf;
                for i in start..start + tf {
                    let g = gy.as_slice()[i];
                    sum_g = sum_g + g;
                    sum_gx = sum_gx + g * (x.as_slice()[i] - mean[c]) * inv;
                }
            }
            if spec.affine {
                let gg = self.params.entries[pids[0]].grad.as_mut_slice();
                gg[c] = gg[c] + sum_gx;
                let gb = self.params.entries[pids[1]].grad.as_mut_slice();
                gb[c] = gb[c] + sum_g;
            }
            for b in 0..bs {
                let start = (b * ch + c) * tf;
                for i in start..start + tf {
                    let g = gy.as_slice()[i];
                    let xc = (x.as_slice()[i] - mean[c]) * inv;
                    let v = gamma * inv * (g - sum_g / n_s - xc * sum_gx / n_s);
                    gx.as_mut_slice()[i] = v;
                }
            }
        }
        accumulate(&mut grads[inputs[0]], gx);
        Ok(())
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, g: Tensor<S>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            assert_eq!(acc.shape(), g.shape(), "gradient shapes agree");
            for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a = *a + *b;
            }
        }
    }
}

/// Softmax over the selected slots of a logit row, returned per slot.
pub fn softmax_slots<S: Scalar>(row: &[S], active: &[usize]) -> Vec<S> {
    let mut mx = S::neg_infinity();
    for &i in active {
        mx = mx.max(row[i]);
    }
    let mut w: Vec<S> = active.iter().map(|&i| (row[i] - mx).exp()).collect();
    let z = w.iter().fold(S::zero(), |a, &b| a + b);
    for v in &mut w {
        *v = *v / z;
    }
    w
}
