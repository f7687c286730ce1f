use serde::{Deserialize, Serialize};

use crate::arch::{SearchSpaceSpec, SpaceName};
use crate::builder::DropoutCells;

use super::SearchError;

/// The dropout schedules a search run may use, one probability per stage.
pub const DEFAULT_DROPOUT_TRIPLES: [[f64; 3]; 3] =
    [[0.0, 0.0, 0.0], [0.0, 0.05, 0.10], [0.0, 0.10, 0.20]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    /// Cells in this stage's supernet.
    pub depth: usize,
    /// Candidate ops surviving into this stage, per edge.
    pub ops_kept: usize,
    /// Epochs updating only network weights at the start of the stage.
    pub warmup_epochs: usize,
    /// Epochs alternating score and weight updates.
    pub joint_epochs: usize,
    /// Drop probability for the regularized op families.
    pub dropout: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig { depth: 4, ops_kept: 8, warmup_epochs: 6, joint_epochs: 9, dropout: 0.0 }
    }
}

pub fn default_stages() -> Vec<StageConfig> {
    let shapes = [(4, 8), (6, 5), (8, 3)];
    let triple = DEFAULT_DROPOUT_TRIPLES[1];
    shapes
        .iter()
        .zip(triple)
        .map(|(&(depth, ops_kept), dropout)| StageConfig {
            depth,
            ops_kept,
            dropout,
            ..StageConfig::default()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub space: SpaceName,
    /// Stem output channels; doubled at each reduction cell.
    pub channels: usize,
    pub stages: Vec<StageConfig>,
    /// Per-stage dropout vectors a run is allowed to use.
    pub dropout_triples: Vec<[f64; 3]>,
    pub dropout_cells: DropoutCells,
    pub seeds: Vec<u64>,
    /// Selection filter; `None` falls back to the space's worst-case bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_budget_ms: Option<f64>,
    /// Utterances per gradient step.
    pub batch_size: usize,
    pub w_lr_max: f64,
    pub w_lr_min: f64,
    pub w_momentum: f64,
    pub alpha_lr: f64,
    pub causal_stem: bool,
    /// Reserved; the bilevel step is first-order only.
    pub second_order: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            space: SpaceName::LowLatency,
            channels: 8,
            stages: default_stages(),
            dropout_triples: DEFAULT_DROPOUT_TRIPLES.to_vec(),
            dropout_cells: DropoutCells::Both,
            seeds: vec![1, 2, 3],
            latency_budget_ms: None,
            batch_size: 2,
            w_lr_max: 0.025,
            w_lr_min: 0.001,
            w_momentum: 0.9,
            alpha_lr: 3e-4,
            causal_stem: true,
            second_order: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let fail = |msg: String| Err(SearchError::Config(msg));
        if self.stages.len() != 3 {
            return fail(format!("expected 3 stages, got {}", self.stages.len()));
        }
        let n_ops = SearchSpaceSpec::preset(self.space).operations.len();
        if self.stages[0].ops_kept != n_ops {
            return fail(format!(
                "first stage must keep all {n_ops} ops of the {} space, got {}",
                self.space, self.stages[0].ops_kept
            ));
        }
        for (i, st) in self.stages.iter().enumerate() {
            if st.depth < 3 {
                return fail(format!("stage {} depth {} below 3", i + 1, st.depth));
            }
            if st.ops_kept < 2 {
                return fail(format!("stage {} keeps {} ops, need at least 2", i + 1, st.ops_kept));
            }
            if st.warmup_epochs + st.joint_epochs == 0 {
                return fail(format!("stage {} has no epochs", i + 1));
            }
            if !(0.0..1.0).contains(&st.dropout) {
                return fail(format!("stage {} dropout {} outside [0, 1)", i + 1, st.dropout));
            }
            if i > 0 {
                if st.depth <= self.stages[i - 1].depth {
                    return fail(format!("stage depths must strictly increase, stage {} stalls", i + 1));
                }
                if st.ops_kept >= self.stages[i - 1].ops_kept {
                    return fail(format!("kept ops must strictly decrease, stage {} stalls", i + 1));
                }
            }
        }
        let triple = [self.stages[0].dropout, self.stages[1].dropout, self.stages[2].dropout];
        let known = self
            .dropout_triples
            .iter()
            .any(|t| t.iter().zip(triple).all(|(a, b)| (a - b).abs() < 1e-12));
        if !known {
            return fail(format!("stage dropouts {triple:?} match none of the configured triples"));
        }
        if self.seeds.is_empty() {
            return fail("need at least one seed".into());
        }
        if self.channels == 0 {
            return fail("channel count must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        for (name, v) in [
            ("w_lr_max", self.w_lr_max),
            ("w_lr_min", self.w_lr_min),
            ("alpha_lr", self.alpha_lr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be a positive finite number, got {v}"));
            }
        }
        if self.w_lr_min > self.w_lr_max {
            return fail(format!("w_lr_min {} above w_lr_max {}", self.w_lr_min, self.w_lr_max));
        }
        if !(0.0..1.0).contains(&self.w_momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.w_momentum));
        }
        if let Some(b) = self.latency_budget_ms {
            if !(b.is_finite() && b > 0.0) {
                return fail(format!("latency budget {b} must be positive"));
            }
        }
        if self.second_order {
            return fail("second-order bilevel updates are reserved and not implemented".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        SearchConfig::default().validate().unwrap();
    }

    #[test]
    fn stage_shape_rules_are_enforced() {
        let base = SearchConfig::default();

        let mut c = base.clone();
        c.stages.pop();
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.stages[1].depth = 4;
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.stages[2].ops_kept = 5;
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.stages[0].ops_kept = 7;
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.stages[1].dropout = 0.07;
        assert!(c.validate().is_err());
        c.dropout_triples.push([0.0, 0.07, 0.10]);
        c.stages[2].dropout = 0.10;
        c.validate().unwrap();

        let mut c = base.clone();
        c.second_order = true;
        assert!(c.validate().is_err());
    }
}
