use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::features::{build_utterance, DeltaMode};
use super::{DataError, Dataset, Utterance, N_BINS};

/// Synthetic streaming task. Each utterance carries a smoothed scalar
/// process broadcast across frequency through a fixed gain curve, plus
/// white noise; the label at frame t quantizes the mean level over the
/// clamped window [t-W, t+F], so F controls how far into the future the
/// ideal classifier must look.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTaskConfig {
    pub classes: usize,
    pub past_window: usize,
    pub future_window: usize,
    pub utterances: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub noise_level: f64,
    pub delta_mode: DeltaMode,
    pub seed: u64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        SyntheticTaskConfig {
            classes: 8,
            past_window: 8,
            future_window: 0,
            utterances: 100,
            len_min: 96,
            len_max: 160,
            noise_level: 0.1,
            delta_mode: DeltaMode::Causal,
            seed: 0,
        }
    }
}

impl SyntheticTaskConfig {
    fn check(&self) -> Result<(), DataError> {
        if self.classes < 2 {
            return Err(DataError::Request(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.utterances == 0 {
            return Err(DataError::Request("utterance count must be positive".into()));
        }
        if self.len_min < 4 || self.len_min > self.len_max {
            return Err(DataError::Request(format!(
                "bad length range [{}, {}]",
                self.len_min, self.len_max
            )));
        }
        if !(self.noise_level >= 0.0) {
            return Err(DataError::Request(format!("bad noise level {}", self.noise_level)));
        }
        Ok(())
    }
}

fn gain(f: usize) -> f64 {
    1.0 + 0.5 * (2.0 * std::f64::consts::PI * f as f64 / N_BINS as f64).sin()
}

/// Standard deviation of the windowed mean m[t] away from the edges.
///
/// The scalar process is an order-3 moving average of unit normals, so the
/// window sum over n = W+F+1 frames has variance n/3 + 2(n-1)(2/9) +
/// 2(n-2)(1/9); the white noise contributes noise^2/(40 n) after the
/// frequency average.
fn level_sigma(cfg: &SyntheticTaskConfig) -> f64 {
    let n = (cfg.past_window + cfg.future_window + 1) as f64;
    let var_sum = n / 3.0
        + 2.0 * (n - 1.0).max(0.0) * (2.0 / 9.0)
        + 2.0 * (n - 2.0).max(0.0) * (1.0 / 9.0);
    let var_m = var_sum / (n * n) + cfg.noise_level * cfg.noise_level / (N_BINS as f64 * n);
    var_m.sqrt()
}

/// Class boundaries: equal-probability cuts of the level distribution.
/// Frame t gets class = number of thresholds strictly below its level.
pub fn label_thresholds(cfg: &SyntheticTaskConfig) -> Vec<f64> {
    let sigma = level_sigma(cfg);
    let unit = Normal::new(0.0, 1.0).expect("standard normal");
    (1..cfg.classes)
        .map(|i| sigma * unit.inverse_cdf(i as f64 / cfg.classes as f64))
        .collect()
}

/// The published label rule, applied to stored (f32-rounded) channel 0.
/// Generation and reconstruction both go through here, so an oracle that
/// reads the same window recovers labels bit-exactly.
fn labels_from_ch0(
    ch0: &[f32],
    frames: usize,
    past: usize,
    future: usize,
    thresholds: &[f64],
) -> Vec<u32> {
    let s: Vec<f64> = (0..frames)
        .map(|t| {
            let row = &ch0[t * N_BINS..(t + 1) * N_BINS];
            row.iter().map(|&v| v as f64).sum::<f64>() / N_BINS as f64
        })
        .collect();
    let n = (past + future + 1) as f64;
    (0..frames as isize)
        .map(|t| {
            let mut acc = 0.0;
            for d in -(past as isize)..=(future as isize) {
                acc += s[(t + d).clamp(0, frames as isize - 1) as usize];
            }
            let m = acc / n;
            thresholds.iter().filter(|&&tau| tau < m).count() as u32
        })
        .collect()
}

pub fn gen_synthetic(cfg: &SyntheticTaskConfig) -> Result<Dataset, DataError> {
    cfg.check()?;
    let thresholds = label_thresholds(cfg);
    let mut master = ChaCha20Rng::seed_from_u64(cfg.seed);
    let subseeds: Vec<u64> = (0..cfg.utterances).map(|_| master.random()).collect();
    let mut utterances = Vec::with_capacity(cfg.utterances);
    for (ui, &sub) in subseeds.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(sub);
        let lo = cfg.len_min.div_ceil(4);
        let hi = (cfg.len_max / 4).max(lo);
        let frames = 4 * rng.random_range(lo..=hi);
        // Order-3 moving average of unit normals, then per-bin gain + noise.
        let raw: Vec<f64> = (0..frames + 2).map(|_| rng.sample(StandardNormal)).collect();
        let z: Vec<f64> = (0..frames).map(|t| (raw[t] + raw[t + 1] + raw[t + 2]) / 3.0).collect();
        let mut ch0 = vec![0f32; frames * N_BINS];
        for t in 0..frames {
            for f in 0..N_BINS {
                let e: f64 = rng.sample(StandardNormal);
                ch0[t * N_BINS + f] = (gain(f) * z[t] + cfg.noise_level * e) as f32;
            }
        }
        let labels =
            labels_from_ch0(&ch0, frames, cfg.past_window, cfg.future_window, &thresholds);
        utterances.push(build_utterance(
            format!("synth-{ui:05}"),
            ch0,
            frames,
            labels,
            cfg.delta_mode,
        ));
    }
    Ok(Dataset { utterances, classes: cfg.classes, delta_mode: cfg.delta_mode })
}

/// Recompute labels from an utterance's stored channel 0 using only the
/// clamped window [t-W, t+F]. With F = 0 this is a fully causal oracle.
pub fn reconstruct_labels(u: &Utterance, cfg: &SyntheticTaskConfig) -> Vec<u32> {
    let frames = u.frames();
    let mut ch0 = vec![0f32; frames * N_BINS];
    for t in 0..frames {
        for f in 0..N_BINS {
            ch0[t * N_BINS + f] = u.features.at(0, 0, t, f);
        }
    }
    labels_from_ch0(&ch0, frames, cfg.past_window, cfg.future_window, &label_thresholds(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_reproduces_identical_datasets() {
        let cfg = SyntheticTaskConfig { utterances: 5, ..Default::default() };
        let a = gen_synthetic(&cfg).unwrap();
        let b = gen_synthetic(&cfg).unwrap();
        assert_eq!(a.utterances.len(), b.utterances.len());
        for (ua, ub) in a.utterances.iter().zip(&b.utterances) {
            assert_eq!(ua.id, ub.id);
            assert_eq!(ua.labels, ub.labels);
            let [_, c, t, f] = ua.features.shape();
            for ci in 0..c {
                for ti in 0..t {
                    for fi in 0..f {
                        assert_eq!(
                            ua.features.at(0, ci, ti, fi).to_bits(),
                            ub.features.at(0, ci, ti, fi).to_bits()
                        );
                    }
                }
            }
        }
        let c = gen_synthetic(&SyntheticTaskConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.utterances[0].labels, c.utterances[0].labels);
    }

    #[test]
    fn causal_oracle_reconstructs_every_label() {
        let cfg = SyntheticTaskConfig { utterances: 12, future_window: 0, ..Default::default() };
        let ds = gen_synthetic(&cfg).unwrap();
        for u in &ds.utterances {
            assert_eq!(reconstruct_labels(u, &cfg), u.labels);
        }
    }

    #[test]
    fn lookahead_task_needs_future_frames() {
        // With F > 0, a causal reading of the same rule must disagree
        // somewhere, otherwise the lookahead knob would be inert.
        let cfg = SyntheticTaskConfig { utterances: 6, future_window: 4, ..Default::default() };
        let ds = gen_synthetic(&cfg).unwrap();
        let causal = SyntheticTaskConfig { future_window: 0, ..cfg.clone() };
        let mut disagreements = 0usize;
        for u in &ds.utterances {
            assert_eq!(reconstruct_labels(u, &cfg), u.labels);
            disagreements += reconstruct_labels(u, &causal)
                .iter()
                .zip(&u.labels)
                .filter(|(a, b)| a != b)
                .count();
        }
        assert!(disagreements > 0);
    }

    #[test]
    fn class_priors_are_near_uniform() {
        let cfg = SyntheticTaskConfig { utterances: 250, ..Default::default() };
        let ds = gen_synthetic(&cfg).unwrap();
        let mut counts = vec![0usize; cfg.classes];
        let mut total = 0usize;
        for u in &ds.utterances {
            for &l in &u.labels {
                counts[l as usize] += 1;
                total += 1;
            }
        }
        let expected = total as f64 / cfg.classes as f64;
        for (k, &c) in counts.iter().enumerate() {
            let rel = (c as f64 - expected).abs() / expected;
            assert!(rel < 0.10, "class {k}: count {c} vs expected {expected:.1} (rel {rel:.3})");
        }
    }

    #[test]
    fn config_validation_rejects_degenerate_requests() {
        assert!(gen_synthetic(&SyntheticTaskConfig { classes: 1, ..Default::default() }).is_err());
        assert!(gen_synthetic(&SyntheticTaskConfig { utterances: 0, ..Default::default() }).is_err());
        assert!(
            gen_synthetic(&SyntheticTaskConfig { len_min: 64, len_max: 32, ..Default::default() })
                .is_err()
        );
        assert!(
            gen_synthetic(&SyntheticTaskConfig { noise_level: -1.0, ..Default::default() }).is_err()
        );
    }

    #[test]
    fn thresholds_are_sorted_and_symmetric() {
        let cfg = SyntheticTaskConfig::default();
        let taus = label_thresholds(&cfg);
        assert_eq!(taus.len(), cfg.classes - 1);
        for w in taus.windows(2) {
            assert!(w[0] < w[1]);
        }
        // Even class count: middle threshold at the median, i.e. zero.
        assert!(taus[cfg.classes / 2 - 1].abs() < 1e-12);
        for i in 0..taus.len() / 2 {
            assert!((taus[i] + taus[taus.len() - 1 - i]).abs() < 1e-12);
        }
    }
}
