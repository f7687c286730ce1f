//! Desk-scale streaming datasets: a synthetic generator with controllable
//! label context, a binary feature file format, and the search split.

mod features;
mod synth;

pub use features::{load_features, write_features, DeltaMode, FEATURE_MAGIC, FEATURE_VERSION};
pub use synth::{gen_synthetic, label_thresholds, reconstruct_labels, SyntheticTaskConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub const N_BINS: usize = 40;
pub const N_CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad dataset request: {0}")]
    Request(String),
    #[error("malformed feature file at byte {offset}: {detail}")]
    Malformed { offset: u64, detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One utterance: 3 x T x 40 features as a [1, 3, T, 40] tensor and a label
/// per input frame. Channels 1 and 2 are temporal difference features of
/// channel 0; T is always a multiple of 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: Tensor<f32>,
    pub labels: Vec<u32>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.shape()[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub classes: usize,
    pub delta_mode: DeltaMode,
}

impl Dataset {
    /// Lookahead the feature pipeline itself introduces, in input frames.
    pub fn feature_lookahead_frames(&self) -> u32 {
        match self.delta_mode {
            DeltaMode::Symmetric => 2,
            DeltaMode::Causal => 0,
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

/// Deterministic three-way split: shuffle by seed, hold out ~10% for
/// validation, halve the rest into weight and alpha subsets (sizes within
/// one of each other).
pub fn split_for_search(
    dataset: Dataset,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let n = dataset.utterances.len();
    if n < 4 {
        return Err(DataError::Request(format!("split needs at least 4 utterances, got {n}")));
    }
    let holdout = (n / 10).max(1);
    let rest = n - holdout;
    let w = rest.div_ceil(2);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut slots: Vec<Option<Utterance>> = dataset.utterances.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| -> Vec<Utterance> {
        ids.iter().map(|&i| slots[i].take().expect("each index taken once")).collect()
    };
    let weight = take(&order[..w]);
    let alpha = take(&order[w..rest]);
    let val = take(&order[rest..]);
    let wrap = |utterances: Vec<Utterance>| Dataset {
        utterances,
        classes: dataset.classes,
        delta_mode: dataset.delta_mode,
    };
    Ok((wrap(weight), wrap(alpha), wrap(val)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Weight,
    Alpha,
    Validation,
}
