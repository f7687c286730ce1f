use crate::tensor::{softmax_slots, Scalar, Tensor};

use super::BuildError;

/// Softmax-weighted mix of candidate outputs on one edge.
///
/// `branches[i] = None` marks a zero op: it holds its share of the softmax
/// but contributes nothing. Dropped slots behave the same way for the one
/// call. Adding a constant to every alpha leaves the result unchanged.
pub fn mixed_op<S: Scalar>(
    branches: &[Option<&Tensor<S>>],
    alpha_row: &[S],
    dropped: Option<&[bool]>,
) -> Result<Tensor<S>, BuildError> {
    if branches.is_empty() {
        return Err(BuildError::Request("mixed op needs at least one candidate".into()));
    }
    if alpha_row.len() != branches.len() {
        return Err(BuildError::Request(format!(
            "{} alphas for {} candidates",
            alpha_row.len(),
            branches.len()
        )));
    }
    if let Some(d) = dropped {
        if d.len() != branches.len() {
            return Err(BuildError::Request(format!(
                "dropout mask covers {} of {} candidates",
                d.len(),
                branches.len()
            )));
        }
        if d.iter().all(|&x| x) {
            return Err(BuildError::Request("every candidate on the edge is dropped".into()));
        }
    }
    let active: Vec<usize> = (0..branches.len()).collect();
    let weights = softmax_slots(alpha_row, &active);
    let shape = branches
        .iter()
        .flatten()
        .next()
        .map(|t| t.shape())
        .ok_or_else(|| BuildError::Request("no candidate computes an output shape".into()))?;
    let mut y = Tensor::zeros(shape);
    for (i, branch) in branches.iter().enumerate() {
        if dropped.is_some_and(|d| d[i]) {
            continue;
        }
        let Some(t) = branch else { continue };
        if t.shape() != shape {
            return Err(BuildError::Request(format!(
                "candidate {i} shape {:?} disagrees with {:?}",
                t.shape(),
                shape
            )));
        }
        let w = weights[i];
        for (a, &v) in y.as_mut_slice().iter_mut().zip(t.as_slice()) {
            *a = *a + v * w;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(vals: &[f64]) -> Tensor<f64> {
        Tensor::from_vec([1, 1, vals.len(), 1], vals.to_vec())
    }

    #[test]
    fn uniform_alphas_average_branches() {
        let a = t(&[1.0, 2.0]);
        let b = t(&[3.0, 6.0]);
        let y = mixed_op(&[Some(&a), Some(&b)], &[0.7, 0.7], None).unwrap();
        assert!(y.max_abs_diff(&t(&[2.0, 4.0])) < 1e-12);
    }

    #[test]
    fn shifting_alphas_changes_nothing() {
        let a = t(&[1.0, -2.0]);
        let b = t(&[0.5, 4.0]);
        let y0 = mixed_op(&[Some(&a), Some(&b)], &[0.3, -1.1], None).unwrap();
        let y1 = mixed_op(&[Some(&a), Some(&b)], &[100.3, 98.9], None).unwrap();
        assert!(y0.max_abs_diff(&y1) < 1e-12);
    }

    #[test]
    fn zero_branches_dilute_the_mix() {
        let a = t(&[2.0]);
        let y = mixed_op(&[Some(&a), None], &[0.0, 0.0], None).unwrap();
        assert!((y.at(0, 0, 0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fully_dropped_edge_is_an_error() {
        let a = t(&[2.0]);
        assert!(mixed_op(&[Some(&a)], &[0.0], Some(&[true])).is_err());
        assert!(mixed_op::<f64>(&[], &[], None).is_err());
    }
}
