//! Empirical lookahead measurement by future-frame perturbation, and
//! certification of a network against its static latency report.
//!
//! Output frame j of a net with time decimation S is certified once input
//! frames through S*j + S-1 are stable. The measured lookahead is the
//! smallest k such that perturbing every input frame past t+k never changes
//! a certified output, for anchors t on the S*j + S-1 grid; those anchors
//! are the binding instances, off-grid anchors follow from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{BuildError, EvalNet, NetCore};
use crate::latency::LatencyReport;
use crate::tensor::{Mode, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("network is in training mode; probing needs frozen normalization statistics")]
    TrainingMode,
    #[error("bad probe request: {0}")]
    Probe(String),
    #[error("lookahead exceeds the probe bound of {max_frames} frames (in-horizon deviation {deviation:.3e})")]
    ExceedsBound { max_frames: usize, deviation: f64 },
    #[error("latency report is for genotype {report} but the network hashes to {net}")]
    HashMismatch { report: String, net: String },
    #[error(transparent)]
    Build(#[from] BuildError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub claimed_frames: u64,
    pub measured_frames: u64,
    pub trials: usize,
    pub max_deviation: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy)]
pub struct Measurement {
    pub frames: usize,
    pub max_deviation: f64,
    pub trials_per_step: usize,
}

/// Anything probeable: a deterministic inference forward plus the stream
/// geometry needed to build inputs and map output frames to input frames.
pub trait ProbeNet<S: Scalar> {
    fn time_stride(&self) -> usize;
    fn in_channels(&self) -> usize;
    fn n_freq(&self) -> usize;
    fn inference_ready(&self) -> bool;
    fn forward(&mut self, x: Tensor<S>) -> Result<Tensor<S>, BuildError>;
}

impl<S: Scalar> ProbeNet<S> for NetCore<S> {
    fn time_stride(&self) -> usize {
        self.time_stride
    }
    fn in_channels(&self) -> usize {
        self.in_channels
    }
    fn n_freq(&self) -> usize {
        self.n_freq
    }
    fn inference_ready(&self) -> bool {
        self.graph.mode() == Mode::Infer
    }
    fn forward(&mut self, x: Tensor<S>) -> Result<Tensor<S>, BuildError> {
        self.forward_infer(x)
    }
}

/// Amplitude for re-randomized frames. Weak single-tap dependencies can
/// hide behind saturated activations (dead ReLU regions, unchanged max-pool
/// selections) when the redraw matches the baseline scale; a large swing
/// flips those selections whenever a dependency exists at all.
const PROBE_GAIN: f64 = 32.0;

struct Probe<'a, S: Scalar> {
    net: &'a mut dyn ProbeNet<S>,
    len: usize,
    stride: usize,
    tolerance: f64,
}

impl<'a, S: Scalar> Probe<'a, S> {
    fn random_input(&self, rng: &mut ChaCha20Rng) -> Tensor<S> {
        let shape = [1, self.net.in_channels(), self.len, self.net.n_freq()];
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                S::of(z)
            })
            .collect();
        Tensor::from_vec(shape, data)
    }

    /// Re-randomize frames [from, until) of a copy of x0, run the net, and
    /// return the worst deviation among outputs certified at anchor t.
    fn perturbed_deviation(
        &mut self,
        x0: &Tensor<S>,
        y0: &Tensor<S>,
        t: usize,
        from: usize,
        until: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<f64, VerifyError> {
        let mut x1 = x0.clone();
        let [_, cs, _, fs] = x1.shape();
        for frame in from..until.min(self.len) {
            for c in 0..cs {
                for f in 0..fs {
                    let z: f64 = StandardNormal.sample(rng);
                    x1.set(0, c, frame, f, S::of(PROBE_GAIN * z));
                }
            }
        }
        let y1 = self.net.forward(x1)?;
        if y1.shape() != y0.shape() {
            return Err(VerifyError::Probe("output shape changed between probes".into()));
        }
        let [_, ks, _, fs_out] = y0.shape();
        let j_hi = (t + 1 - self.stride) / self.stride;
        let mut worst = 0.0f64;
        for j in 0..=j_hi {
            for k in 0..ks {
                for f in 0..fs_out {
                    let d = (y1.at(0, k, j, f).as_f64() - y0.at(0, k, j, f).as_f64()).abs();
                    worst = worst.max(d);
                }
            }
        }
        Ok(worst)
    }

    /// One batch of randomized trials for candidate lookahead k. Anchors sit
    /// on the certification grid; everything past t+k is re-randomized.
    fn holds(
        &mut self,
        k: usize,
        j0_max: usize,
        trials: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<(bool, f64), VerifyError> {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let j0 = rng.random_range(0..=j0_max);
            let t = self.stride * j0 + self.stride - 1;
            let x0 = self.random_input(rng);
            let y0 = self.net.forward(x0.clone())?;
            let dev = self.perturbed_deviation(&x0, &y0, t, t + k + 1, self.len, rng)?;
            worst = worst.max(dev);
            if dev > self.tolerance {
                return Ok((false, worst));
            }
        }
        Ok((true, worst))
    }
}

/// Smallest k (in input frames) such that perturbing every input frame past
/// t+k leaves all Certified outputs bit-identical (or within `tolerance`),
/// found by binary search with `trials` randomized probes per step.
pub fn measure_lookahead<S: Scalar>(
    net: &mut dyn ProbeNet<S>,
    max_frames: usize,
    trials: usize,
    tolerance: f64,
    seed: u64,
) -> Result<Measurement, VerifyError> {
    if !net.inference_ready() {
        return Err(VerifyError::TrainingMode);
    }
    if trials == 0 {
        return Err(VerifyError::Probe("at least one trial per step".into()));
    }
    let stride = net.time_stride();
    let len = (4 * (max_frames + 8)).div_ceil(stride) * stride;
    // Anchor ceiling keeps the perturbed region non-empty for every k probed.
    let j0_max = (len - 2 - max_frames)
        .checked_sub(stride - 1)
        .map(|v| v / stride)
        .ok_or_else(|| VerifyError::Probe("probe input too short for the anchor grid".into()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut probe = Probe { net, len, stride, tolerance };

    let (top_ok, top_dev) = probe.holds(max_frames, j0_max, trials, &mut rng)?;
    if !top_ok {
        return Err(VerifyError::ExceedsBound { max_frames, deviation: top_dev });
    }
    let (mut lo, mut hi) = (0usize, max_frames);
    while lo < hi {
        let mid = (lo + hi) / 2;
        let (ok, _) = probe.holds(mid, j0_max, trials, &mut rng)?;
        if ok {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    // Confirmation pass; a miss means the search got lucky below the true
    // value, so walk upward until the level genuinely holds.
    let mut measured = lo;
    loop {
        let (ok, dev) = probe.holds(measured, j0_max, trials, &mut rng)?;
        if ok {
            return Ok(Measurement { frames: measured, max_deviation: dev, trials_per_step: trials });
        }
        measured += 1;
        if measured > max_frames {
            return Err(VerifyError::ExceedsBound { max_frames, deviation: dev });
        }
    }
}

/// True if re-randomizing the single frame t+claimed moves at least one
/// certified output in at least one trial. With claimed = 0 the perturbed
/// frame is the anchor itself.
pub fn sensitivity_witness<S: Scalar>(
    net: &mut dyn ProbeNet<S>,
    claimed: usize,
    trials: usize,
    tolerance: f64,
    seed: u64,
) -> Result<bool, VerifyError> {
    if !net.inference_ready() {
        return Err(VerifyError::TrainingMode);
    }
    let stride = net.time_stride();
    let len = (4 * (claimed + 8)).div_ceil(stride) * stride;
    let j0_max = (len - 1 - claimed)
        .checked_sub(stride - 1)
        .map(|v| v / stride)
        .ok_or_else(|| VerifyError::Probe("probe input too short for the witness".into()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut probe = Probe { net, len, stride, tolerance };
    for _ in 0..trials {
        let j0 = rng.random_range(0..=j0_max);
        let t = probe.stride * j0 + probe.stride - 1;
        let x0 = probe.random_input(&mut rng);
        let y0 = probe.net.forward(x0.clone())?;
        let dev = probe.perturbed_deviation(&x0, &y0, t, t + claimed, t + claimed + 1, &mut rng)?;
        if dev > tolerance {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Measure the network and weigh it against the static report. Pass needs a
/// measurement at or below the claim, plus a live sensitivity witness at the
/// claimed horizon, which together pin measured = claimed.
pub fn certify<S: Scalar>(
    net: &mut EvalNet<S>,
    report: &LatencyReport,
    trials: usize,
    tolerance: f64,
    seed: u64,
) -> Result<ProbeReport, VerifyError> {
    if report.genotype_hash != net.genotype_hash {
        return Err(VerifyError::HashMismatch {
            report: report.genotype_hash.clone(),
            net: net.genotype_hash.clone(),
        });
    }
    let claimed = report.total_input_frames as usize;
    let max_frames = claimed + 16;
    let (measured, deviation) = match measure_lookahead(&mut net.net, max_frames, trials, tolerance, seed) {
        Ok(m) => (m.frames as u64, m.max_deviation),
        Err(VerifyError::ExceedsBound { deviation, .. }) => ((max_frames + 1) as u64, deviation),
        Err(e) => return Err(e),
    };
    let witness = sensitivity_witness(&mut net.net, claimed, trials, tolerance, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let verdict = if measured <= claimed as u64 && witness { Verdict::Pass } else { Verdict::Fail };
    Ok(ProbeReport {
        claimed_frames: claimed as u64,
        measured_frames: measured,
        trials,
        max_deviation: deviation,
        verdict,
    })
}
