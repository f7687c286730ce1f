use serde::{Deserialize, Serialize};

use super::ArchError;

/// Structural family of a candidate operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpFamily {
    Zero,
    Identity,
    MaxPool,
    AvgPool,
    /// Dense 2-D convolution. Used for the network stem, not offered inside cells.
    Conv,
    SeparableConv,
    DilatedSeparableConv,
    /// A time-axis convolution (k x 1) followed by a frequency-axis convolution (1 x k).
    FactorizedConvPair,
}

/// One candidate operation, fully determined by its static shape parameters.
///
/// `causal` selects left-only padding on the time axis; the frequency axis is
/// always padded symmetrically and never contributes latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperationKind {
    pub family: OpFamily,
    pub kernel_time: u32,
    pub kernel_freq: u32,
    pub dilation: u32,
    /// Number of sequential depthwise-separable blocks. Only separable convs
    /// use values above 1.
    pub conv_stack_count: u32,
    pub causal: bool,
}

impl OperationKind {
    fn base(family: OpFamily, kt: u32, kf: u32, dilation: u32, stack: u32) -> Self {
        OperationKind {
            family,
            kernel_time: kt,
            kernel_freq: kf,
            dilation,
            conv_stack_count: stack,
            causal: false,
        }
    }

    pub fn zero() -> Self {
        Self::base(OpFamily::Zero, 1, 1, 1, 1)
    }

    pub fn identity() -> Self {
        Self::base(OpFamily::Identity, 1, 1, 1, 1)
    }

    pub fn max_pool(k: u32) -> Self {
        Self::base(OpFamily::MaxPool, k, k, 1, 1)
    }

    pub fn avg_pool(k: u32) -> Self {
        Self::base(OpFamily::AvgPool, k, k, 1, 1)
    }

    pub fn conv(kt: u32, kf: u32) -> Self {
        Self::base(OpFamily::Conv, kt, kf, 1, 1)
    }

    pub fn sep_conv(k: u32, stack: u32) -> Self {
        Self::base(OpFamily::SeparableConv, k, k, 1, stack)
    }

    pub fn dil_sep_conv(k: u32, dilation: u32) -> Self {
        Self::base(OpFamily::DilatedSeparableConv, k, k, dilation, 1)
    }

    pub fn factorized_pair(k: u32) -> Self {
        Self::base(OpFamily::FactorizedConvPair, k, k, 1, 1)
    }

    pub fn with_causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    /// Same operation with the causal flag cleared, for identity checks that
    /// should not distinguish padding variants.
    pub fn centered(self) -> Self {
        self.with_causal(false)
    }

    pub fn check(&self) -> Result<(), ArchError> {
        let err = |d: String| Err(ArchError::Op(d));
        if self.kernel_time == 0 || self.kernel_freq == 0 {
            return err(format!("{self:?}: zero kernel extent"));
        }
        if self.kernel_time % 2 == 0 || self.kernel_freq % 2 == 0 {
            return err(format!("{self:?}: kernel extents must be odd"));
        }
        if self.dilation == 0 {
            return err(format!("{self:?}: dilation must be at least 1"));
        }
        if !(1..=2).contains(&self.conv_stack_count) {
            return err(format!("{self:?}: conv_stack_count must be 1 or 2"));
        }
        let structural = matches!(self.family, OpFamily::Zero | OpFamily::Identity);
        if structural && (self.kernel_time != 1 || self.kernel_freq != 1) {
            return err(format!("{self:?}: structural ops have no kernel"));
        }
        if self.dilation > 1 && !matches!(self.family, OpFamily::DilatedSeparableConv) {
            return err(format!("{self:?}: only dilated separable convs may dilate"));
        }
        if self.conv_stack_count > 1 && self.family != OpFamily::SeparableConv {
            return err(format!("{self:?}: only separable convs stack"));
        }
        Ok(())
    }

    /// Per-block right context of the centered variant, in frames at the rate
    /// seen by each block's own input. Causality is applied by the caller.
    pub fn time_blocks(&self) -> Vec<u32> {
        let half = (self.kernel_time - 1) / 2 * self.dilation;
        match self.family {
            OpFamily::Zero | OpFamily::Identity => vec![],
            OpFamily::MaxPool | OpFamily::AvgPool | OpFamily::Conv => vec![half],
            OpFamily::SeparableConv => vec![half; self.conv_stack_count as usize],
            OpFamily::DilatedSeparableConv => vec![half],
            // The trailing frequency conv has no time extent.
            OpFamily::FactorizedConvPair => vec![half],
        }
    }

    /// Right context in frames at the op's input rate, assuming stride 1.
    pub fn right_context_frames(&self) -> u32 {
        if self.causal {
            0
        } else {
            self.time_blocks().iter().sum()
        }
    }

    /// Canonical name used by the JSON codec and reports.
    pub fn name(&self) -> String {
        let kt = self.kernel_time;
        let kf = self.kernel_freq;
        match self.family {
            OpFamily::Zero => "zero".into(),
            OpFamily::Identity => "skip_connect".into(),
            OpFamily::MaxPool => format!("max_pool_{kt}x{kf}"),
            OpFamily::AvgPool => format!("avg_pool_{kt}x{kf}"),
            OpFamily::Conv => format!("conv_{kt}x{kf}"),
            OpFamily::SeparableConv => format!("sep_conv_{kt}x{kf}"),
            OpFamily::DilatedSeparableConv => format!("dil_sep_conv_{kt}x{kf}"),
            OpFamily::FactorizedConvPair => format!("conv_{kt}x1_1x{kf}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_canonical() {
        assert_eq!(OperationKind::zero().name(), "zero");
        assert_eq!(OperationKind::identity().name(), "skip_connect");
        assert_eq!(OperationKind::max_pool(3).name(), "max_pool_3x3");
        assert_eq!(OperationKind::avg_pool(3).name(), "avg_pool_3x3");
        assert_eq!(OperationKind::sep_conv(3, 1).name(), "sep_conv_3x3");
        assert_eq!(OperationKind::sep_conv(5, 2).name(), "sep_conv_5x5");
        assert_eq!(OperationKind::dil_sep_conv(3, 2).name(), "dil_sep_conv_3x3");
        assert_eq!(OperationKind::dil_sep_conv(5, 2).name(), "dil_sep_conv_5x5");
        assert_eq!(OperationKind::factorized_pair(3).name(), "conv_3x1_1x3");
        assert_eq!(OperationKind::factorized_pair(7).name(), "conv_7x1_1x7");
        assert_eq!(OperationKind::conv(3, 3).name(), "conv_3x3");
    }

    #[test]
    fn right_context_examples() {
        // Centered 3x3: one future frame. Dilation scales the reach.
        assert_eq!(OperationKind::sep_conv(3, 1).right_context_frames(), 1);
        assert_eq!(OperationKind::sep_conv(5, 1).right_context_frames(), 2);
        assert_eq!(OperationKind::sep_conv(5, 2).right_context_frames(), 4);
        assert_eq!(OperationKind::dil_sep_conv(3, 2).right_context_frames(), 2);
        assert_eq!(OperationKind::dil_sep_conv(5, 2).right_context_frames(), 4);
        assert_eq!(OperationKind::factorized_pair(5).right_context_frames(), 2);
        assert_eq!(OperationKind::factorized_pair(7).right_context_frames(), 3);
        assert_eq!(OperationKind::max_pool(3).right_context_frames(), 1);
        assert_eq!(OperationKind::zero().right_context_frames(), 0);
        assert_eq!(OperationKind::identity().right_context_frames(), 0);
        // Causal variants never look ahead.
        for op in [
            OperationKind::sep_conv(5, 2),
            OperationKind::dil_sep_conv(5, 2),
            OperationKind::factorized_pair(7),
            OperationKind::max_pool(3),
        ] {
            assert_eq!(op.with_causal(true).right_context_frames(), 0);
        }
    }

    #[test]
    fn invariants_rejected() {
        assert!(OperationKind::sep_conv(4, 1).check().is_err());
        assert!(OperationKind::max_pool(3).with_causal(true).check().is_ok());
        let mut bad = OperationKind::max_pool(3);
        bad.dilation = 2;
        assert!(bad.check().is_err());
        let mut bad = OperationKind::factorized_pair(5);
        bad.conv_stack_count = 2;
        assert!(bad.check().is_err());
        let mut bad = OperationKind::zero();
        bad.kernel_time = 3;
        assert!(bad.check().is_err());
        let mut bad = OperationKind::sep_conv(3, 1);
        bad.conv_stack_count = 3;
        assert!(bad.check().is_err());
    }
}
