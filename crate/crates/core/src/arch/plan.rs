use serde::{Deserialize, Serialize};

use super::cell::CellType;
use super::op::OperationKind;
use super::ArchError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    /// Hidden fully connected widths between the frequency average and the
    /// classifier layer.
    pub hidden_widths: Vec<u32>,
}

impl Default for HeadSpec {
    fn default() -> Self {
        HeadSpec { hidden_widths: vec![128] }
    }
}

/// Macro layout: a stem, `total_cells` cells in a bi-chain (each cell sees the
/// outputs of the previous two), reduction cells at the third points, and a
/// per-frame classification head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroPlan {
    pub total_cells: usize,
    pub initial_channels: usize,
    pub reduction_positions: (usize, usize),
    pub stem: OperationKind,
    pub head: HeadSpec,
    /// Hop between input feature frames, in milliseconds.
    pub frame_period_ms: f64,
}

pub fn build_macro_plan(total_cells: usize, initial_channels: usize) -> Result<MacroPlan, ArchError> {
    if total_cells < 3 {
        return Err(ArchError::Plan(format!(
            "need at least 3 cells to place two reductions, got {total_cells}"
        )));
    }
    if initial_channels == 0 {
        return Err(ArchError::Plan("initial channel count must be positive".into()));
    }
    Ok(MacroPlan {
        total_cells,
        initial_channels,
        reduction_positions: (total_cells / 3, 2 * total_cells / 3),
        stem: OperationKind::conv(3, 3),
        head: HeadSpec::default(),
        frame_period_ms: 10.0,
    })
}

impl MacroPlan {
    pub fn cell_kind(&self, index: usize) -> CellType {
        if index == self.reduction_positions.0 || index == self.reduction_positions.1 {
            CellType::Reduction
        } else {
            CellType::Causal
        }
    }

    /// Cell operating width: doubles at each reduction, starting at the
    /// reduction cell itself.
    pub fn channels_at(&self, index: usize) -> usize {
        let mut c = self.initial_channels;
        if index >= self.reduction_positions.0 {
            c *= 2;
        }
        if index >= self.reduction_positions.1 {
            c *= 2;
        }
        c
    }

    /// Frame period of a cell's input stream, in ms.
    pub fn input_period_ms(&self, index: usize) -> f64 {
        let mut p = self.frame_period_ms;
        if index > self.reduction_positions.0 {
            p *= 2.0;
        }
        if index > self.reduction_positions.1 {
            p *= 2.0;
        }
        p
    }

    /// Overall time downsampling factor of the network.
    pub fn time_stride(&self) -> usize {
        4
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reductions_sit_at_third_points() {
        let plan = build_macro_plan(8, 16).unwrap();
        assert_eq!(plan.reduction_positions, (2, 5));
        assert_eq!(plan.cell_kind(2), CellType::Reduction);
        assert_eq!(plan.cell_kind(5), CellType::Reduction);
        assert_eq!(plan.cell_kind(0), CellType::Causal);
        let plan = build_macro_plan(17, 25).unwrap();
        assert_eq!(plan.reduction_positions, (5, 11));
    }

    #[test]
    fn interior_positions_for_reasonable_depths() {
        for l in 4..=32 {
            let plan = build_macro_plan(l, 8).unwrap();
            let (r1, r2) = plan.reduction_positions;
            assert!(r1 >= 1, "depth {l}");
            assert!(r2 <= l - 2, "depth {l}");
            assert!(r1 < r2, "depth {l}");
        }
        assert!(build_macro_plan(2, 8).is_err());
        assert!(build_macro_plan(8, 0).is_err());
    }

    #[test]
    fn channel_and_period_segments() {
        let plan = build_macro_plan(8, 30).unwrap();
        let widths: Vec<usize> = (0..8).map(|i| plan.channels_at(i)).collect();
        assert_eq!(widths, vec![30, 30, 60, 60, 60, 120, 120, 120]);
        assert_eq!(plan.input_period_ms(2), 10.0);
        assert_eq!(plan.input_period_ms(3), 20.0);
        assert_eq!(plan.input_period_ms(5), 20.0);
        assert_eq!(plan.input_period_ms(6), 40.0);
        assert_eq!(plan.time_stride(), 4);
    }
}
