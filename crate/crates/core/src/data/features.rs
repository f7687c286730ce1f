use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

use super::{DataError, Dataset, Utterance, N_BINS, N_CHANNELS};

pub const FEATURE_MAGIC: [u8; 4] = *b"LCNF";
pub const FEATURE_VERSION: u32 = 1;

/// How the two difference channels are derived from channel 0.
///
/// The symmetric stencils span two future frames, so they add 2 frames of
/// lookahead to anything consuming the features; the causal stencils add
/// none and are the default for certification runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    Symmetric,
    Causal,
}

impl DeltaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DeltaMode::Symmetric => "symmetric",
            DeltaMode::Causal => "causal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "symmetric" => Some(DeltaMode::Symmetric),
            "causal" => Some(DeltaMode::Causal),
            _ => None,
        }
    }
}

impl std::fmt::Display for DeltaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn clamp(t: isize, len: usize) -> usize {
    t.clamp(0, len as isize - 1) as usize
}

/// First difference of one bin track. Symmetric mode is the five-point
/// regression slope [-2,-1,0,1,2]/10; causal mode is a backward difference.
fn delta_at(ch0: &[f32], len: usize, bins: usize, t: usize, f: usize, mode: DeltaMode) -> f64 {
    let x = |tt: isize| ch0[clamp(tt, len) * bins + f] as f64;
    let t = t as isize;
    match mode {
        DeltaMode::Symmetric => (2.0 * (x(t + 2) - x(t - 2)) + (x(t + 1) - x(t - 1))) / 10.0,
        DeltaMode::Causal => x(t) - x(t - 1),
    }
}

/// Second difference. Symmetric mode fits a parabola over the same window,
/// [2,-1,-2,-1,2]/7; causal mode differences the backward differences.
fn delta2_at(ch0: &[f32], len: usize, bins: usize, t: usize, f: usize, mode: DeltaMode) -> f64 {
    let x = |tt: isize| ch0[clamp(tt, len) * bins + f] as f64;
    let t = t as isize;
    match mode {
        DeltaMode::Symmetric => {
            (2.0 * (x(t + 2) + x(t - 2)) - (x(t + 1) + x(t - 1)) - 2.0 * x(t)) / 7.0
        }
        DeltaMode::Causal => x(t) - 2.0 * x(t - 1) + x(t - 2),
    }
}

/// Pad to a multiple of 4 by repeating the final frame (final label for the
/// label track), derive the difference channels, and pack the tensor.
pub(super) fn build_utterance(
    id: String,
    mut ch0: Vec<f32>,
    frames: usize,
    mut labels: Vec<u32>,
    mode: DeltaMode,
) -> Utterance {
    assert_eq!(ch0.len(), frames * N_BINS);
    assert_eq!(labels.len(), frames);
    assert!(frames > 0, "empty utterance");
    let padded = frames.div_ceil(4) * 4;
    let last = ch0[(frames - 1) * N_BINS..frames * N_BINS].to_vec();
    for _ in frames..padded {
        ch0.extend_from_slice(&last);
        labels.push(*labels.last().expect("non-empty labels"));
    }
    let mut features = Tensor::zeros([1, N_CHANNELS, padded, N_BINS]);
    for t in 0..padded {
        for f in 0..N_BINS {
            features.set(0, 0, t, f, ch0[t * N_BINS + f]);
            features.set(0, 1, t, f, delta_at(&ch0, padded, N_BINS, t, f, mode) as f32);
            features.set(0, 2, t, f, delta2_at(&ch0, padded, N_BINS, t, f, mode) as f32);
        }
    }
    Utterance { id, features, labels }
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<(), DataError> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| DataError::Malformed {
            offset: at,
            detail: format!("{what}: {e}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

/// Binary feature file: `LCNF`, version, utterance count, class count, then
/// per utterance an id, frame count, bin count, the channel-0 frames as
/// little-endian f32, and one u32 label per frame.
pub fn write_features(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(dataset.utterances.len() as u32).to_le_bytes())?;
    w.write_all(&(dataset.classes as u32).to_le_bytes())?;
    for u in &dataset.utterances {
        let frames = u.frames();
        w.write_all(&(u.id.len() as u32).to_le_bytes())?;
        w.write_all(u.id.as_bytes())?;
        w.write_all(&(frames as u32).to_le_bytes())?;
        w.write_all(&(N_BINS as u32).to_le_bytes())?;
        for t in 0..frames {
            for f in 0..N_BINS {
                w.write_all(&u.features.at(0, 0, t, f).to_le_bytes())?;
            }
        }
        for &l in &u.labels {
            w.write_all(&l.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_features(path: &Path, mode: DeltaMode) -> Result<Dataset, DataError> {
    let mut r = CountingReader { inner: BufReader::new(File::open(path)?), offset: 0 };
    let mut magic = [0u8; 4];
    r.take(&mut magic, "magic")?;
    if magic != FEATURE_MAGIC {
        return Err(DataError::Malformed { offset: 0, detail: format!("bad magic {magic:?}") });
    }
    let version = r.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(DataError::Malformed {
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("utterance count")? as usize;
    let classes = r.u32("class count")? as usize;
    if classes < 2 {
        return Err(DataError::Malformed {
            offset: 12,
            detail: format!("class count {classes} below 2"),
        });
    }
    let mut utterances = Vec::with_capacity(count);
    for ui in 0..count {
        let id_at = r.offset;
        let id_len = r.u32("id length")? as usize;
        if id_len > 4096 {
            return Err(DataError::Malformed {
                offset: id_at,
                detail: format!("implausible id length {id_len}"),
            });
        }
        let mut id_bytes = vec![0u8; id_len];
        r.take(&mut id_bytes, "id")?;
        let id = String::from_utf8(id_bytes).map_err(|e| DataError::Malformed {
            offset: id_at + 4,
            detail: format!("id is not utf-8: {e}"),
        })?;
        let frames_at = r.offset;
        let frames = r.u32("frame count")? as usize;
        let bins = r.u32("bin count")? as usize;
        if frames == 0 {
            return Err(DataError::Malformed { offset: frames_at, detail: "empty utterance".into() });
        }
        if bins != N_BINS {
            return Err(DataError::Malformed {
                offset: frames_at + 4,
                detail: format!("expected {N_BINS} bins, got {bins}"),
            });
        }
        let mut raw = vec![0u8; frames * bins * 4];
        r.take(&mut raw, "channel 0 data")?;
        let ch0: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let labels_at = r.offset;
        let mut raw = vec![0u8; frames * 4];
        r.take(&mut raw, "labels")?;
        let labels: Vec<u32> =
            raw.chunks_exact(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        if let Some(bad) = labels.iter().position(|&l| l as usize >= classes) {
            return Err(DataError::Malformed {
                offset: labels_at + 4 * bad as u64,
                detail: format!("label {} out of range for {classes} classes", labels[bad]),
            });
        }
        utterances.push(build_utterance(id, ch0, frames, labels, mode));
        let _ = ui;
    }
    Ok(Dataset { utterances, classes, delta_mode: mode })
}
