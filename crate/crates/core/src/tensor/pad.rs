use serde::{Deserialize, Serialize};

/// Explicit padding on both axes. Time is the third tensor axis, freq the
/// fourth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Pad {
    pub t_before: usize,
    pub t_after: usize,
    pub f_before: usize,
    pub f_after: usize,
}

impl Pad {
    pub fn none() -> Self {
        Pad::default()
    }
}

/// Length-preserving ("same") padding for one axis.
///
/// Strided windows sample at phase stride-1, so the output length is
/// ceil(len/stride) and outputs only ever depend on inputs at or before
/// index stride*u + stride-1 plus the op's own context. Causal padding is
/// entirely on the left except for the stride phase slack on the right,
/// which is constant zero fill and carries no signal.
pub fn axis_same_padding(kernel: usize, dilation: usize, stride: usize, causal: bool) -> (usize, usize) {
    let span = (kernel - 1) * dilation;
    if causal {
        (span, stride - 1)
    } else {
        (span / 2, span / 2 + stride - 1)
    }
}

/// Same padding for a 2-D op; the frequency axis is always centered.
pub fn same_padding(
    kernel: (usize, usize),
    dilation: (usize, usize),
    stride: (usize, usize),
    causal_time: bool,
) -> Pad {
    let (t_before, t_after) = axis_same_padding(kernel.0, dilation.0, stride.0, causal_time);
    let (f_before, f_after) = axis_same_padding(kernel.1, dilation.1, stride.1, false);
    Pad { t_before, t_after, f_before, f_after }
}

/// Output length of one axis for the phase stride-1 sampling convention.
pub fn out_len(len: usize, kernel: usize, dilation: usize, stride: usize, before: usize, after: usize) -> usize {
    let span = (kernel - 1) * dilation;
    let total = len + before + after;
    if total < span + stride {
        return 0;
    }
    // Highest u with stride*u + (stride-1) - before + span <= len + after - 1.
    (total - span - stride) / stride + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_preserves_length_at_stride_one() {
        for len in 1..40 {
            for kernel in [1, 3, 5, 7] {
                for dilation in [1, 2] {
                    let (b, a) = axis_same_padding(kernel, dilation, 1, false);
                    assert_eq!(out_len(len, kernel, dilation, 1, b, a), len);
                    let (b, a) = axis_same_padding(kernel, dilation, 1, true);
                    assert_eq!(out_len(len, kernel, dilation, 1, b, a), len);
                }
            }
        }
    }

    #[test]
    fn same_padding_halves_with_ceil_at_stride_two() {
        for len in 1..40 {
            for kernel in [1, 3, 5] {
                for causal in [false, true] {
                    let (b, a) = axis_same_padding(kernel, 1, 2, causal);
                    assert_eq!(out_len(len, kernel, 1, 2, b, a), len.div_ceil(2), "len {len} kernel {kernel}");
                }
            }
        }
    }

    #[test]
    fn causal_examples() {
        // 3x3 causal with dilation 2 on time: four frames of history, none of
        // future; frequency stays centered.
        let p = same_padding((3, 3), (2, 1), (1, 1), true);
        assert_eq!((p.t_before, p.t_after, p.f_before, p.f_after), (4, 0, 1, 1));
        let p = same_padding((3, 3), (1, 1), (1, 1), false);
        assert_eq!((p.t_before, p.t_after, p.f_before, p.f_after), (1, 1, 1, 1));
        let p = same_padding((5, 5), (1, 1), (1, 1), true);
        assert_eq!((p.t_before, p.t_after, p.f_before, p.f_after), (4, 0, 2, 2));
    }
}
