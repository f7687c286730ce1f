use crate::tensor::{Graph, Mode, NodeId, Scalar, Tensor};

use super::BuildError;

/// Build-time knobs shared by supernet and eval net construction.
#[derive(Debug, Clone)]
pub struct NetOpts {
    /// Batch norm layers carry learnable scale and shift.
    pub bn_affine: bool,
    /// Stem convolution pads causally instead of centered.
    pub causal_stem: bool,
    pub n_freq: usize,
    pub in_channels: usize,
    /// Weight initialisation seed.
    pub seed: u64,
}

impl Default for NetOpts {
    fn default() -> Self {
        NetOpts { bn_affine: true, causal_stem: false, n_freq: 40, in_channels: 3, seed: 0 }
    }
}

/// An assembled network: the compute graph plus the node ids a caller needs
/// to feed inputs and read predictions.
pub struct NetCore<S: Scalar> {
    pub graph: Graph<S>,
    pub input: NodeId,
    pub logits: NodeId,
    pub posteriors: NodeId,
    pub classes: usize,
    pub in_channels: usize,
    pub n_freq: usize,
    /// Net input-to-output decimation along time.
    pub time_stride: usize,
}

impl<S: Scalar> NetCore<S> {
    pub fn check_input(&self, x: &Tensor<S>) -> Result<(), BuildError> {
        let [_, c, t, f] = x.shape();
        if c != self.in_channels || f != self.n_freq {
            return Err(BuildError::Request(format!(
                "net input wants {} channels by {} bins, got {c} by {f}",
                self.in_channels, self.n_freq
            )));
        }
        if t == 0 || t % self.time_stride != 0 {
            return Err(BuildError::Request(format!(
                "input length {t} is not a positive multiple of the net stride {}",
                self.time_stride
            )));
        }
        Ok(())
    }

    /// Inference forward. Intermediate activations are freed as they die;
    /// only the class posteriors come back.
    pub fn forward_infer(&mut self, x: Tensor<S>) -> Result<Tensor<S>, BuildError> {
        self.check_input(&x)?;
        self.graph.set_mode(Mode::Infer);
        self.graph.forward(vec![(self.input, x)], &[self.posteriors])?;
        Ok(self.graph.take_activation(self.posteriors)?)
    }

    /// Training forward. Keeps every activation alive for `backward`.
    pub fn forward_train(&mut self, x: Tensor<S>) -> Result<(), BuildError> {
        self.check_input(&x)?;
        self.graph.set_mode(Mode::Train);
        self.graph.forward(vec![(self.input, x)], &[])?;
        Ok(())
    }

    pub fn posteriors_ref(&self) -> Result<&Tensor<S>, BuildError> {
        Ok(self.graph.activation(self.posteriors)?)
    }

    /// Backward from a gradient seeded at the logits.
    pub fn backward_from_logits(&mut self, seed: Tensor<S>) -> Result<(), BuildError> {
        self.graph.backward(vec![(self.logits, seed)])?;
        Ok(())
    }
}

/// Cross entropy against per-input-frame labels, decimated to the output
/// rate. Returns the mean loss and the gradient seed at the logits.
///
/// `labels[b]` holds one label per input frame; output frame `j` is scored
/// against `labels[b][stride * j]`.
pub fn ce_loss_and_seed<S: Scalar>(
    posteriors: &Tensor<S>,
    labels: &[&[u32]],
    classes: usize,
    time_stride: usize,
) -> Result<(f64, Tensor<S>), BuildError> {
    let [b, k, to, f] = posteriors.shape();
    if f != 1 || k != classes || b != labels.len() {
        return Err(BuildError::Request(format!(
            "posterior shape [{b}, {k}, {to}, {f}] does not fit {} utterances with {classes} classes",
            labels.len()
        )));
    }
    let mut seed = Tensor::zeros([b, k, to, 1]);
    let mut loss = 0.0f64;
    let n = (b * to) as f64;
    for bi in 0..b {
        let lab = labels[bi];
        for j in 0..to {
            let y = lab[j * time_stride] as usize;
            if y >= classes {
                return Err(BuildError::Request(format!("label {y} out of range for {classes} classes")));
            }
            for c in 0..k {
                let p = posteriors.at(bi, c, j, 0).as_f64();
                let target = if c == y { 1.0 } else { 0.0 };
                seed.set(bi, c, j, 0, S::of((p - target) / n));
                if c == y {
                    loss -= (p.max(1e-12)).ln();
                }
            }
        }
    }
    Ok((loss / n, seed))
}

/// Fraction of output frames whose argmax posterior matches the decimated
/// label. Ties resolve to the lowest class index.
pub fn accuracy<S: Scalar>(posteriors: &Tensor<S>, labels: &[&[u32]], time_stride: usize) -> f64 {
    let [b, k, to, _] = posteriors.shape();
    let mut hit = 0usize;
    let mut total = 0usize;
    for bi in 0..b {
        for j in 0..to {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for c in 0..k {
                let v = posteriors.at(bi, c, j, 0).as_f64();
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            if best as u32 == labels[bi][j * time_stride] {
                hit += 1;
            }
            total += 1;
        }
    }
    hit as f64 / total as f64
}
